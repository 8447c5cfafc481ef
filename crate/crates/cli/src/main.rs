//! `switchfit` command-line front end.
//!
//! Exit codes: 0 ok, 2 input error, 3 fit stopped at `--max-iter` without
//! converging (report still written), 4 numerical degeneracy.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use switchfit::bench::run_bench;
use switchfit::em::{fit, Algorithm, FitConfig, FitReport};
use switchfit::io::{
    read_model_json, read_series_csv, read_values, truth_path, write_filter_trace, write_json, write_series_csv,
    TruthFile,
};
use switchfit::oracle::compare_esteps;
use switchfit::simulate::simulate;
use switchfit::{run_filter, Error, ObservationSeries};

#[derive(Parser)]
#[command(name = "switchfit", version, about = "Markov-switching autoregression estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgoArg {
    ForwardOnly,
    BaumWelch,
}

impl From<AlgoArg> for Algorithm {
    fn from(a: AlgoArg) -> Self {
        match a {
            AlgoArg::ForwardOnly => Algorithm::ForwardOnly,
            AlgoArg::BaumWelch => Algorithm::BaumWelch,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a series from a model; writes the CSV and a `.truth.json` sidecar.
    Simulate {
        #[arg(long)]
        model: PathBuf,
        /// Number of emissions (conditioning rows are added on top).
        #[arg(long)]
        length: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a model by EM and write the report as JSON.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        states: usize,
        #[arg(long)]
        order: usize,
        #[arg(long, value_enum, default_value = "forward-only")]
        algo: AlgoArg,
        #[arg(long, default_value_t = 500)]
        max_iter: usize,
        /// Relative log-likelihood change that stops the iteration.
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-6)]
        sigma_floor: f64,
        #[arg(long, default_value_t = 1e-8)]
        ridge_eps: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the log-likelihood and final filtered regime probabilities.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Also write the per-step filter trace as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Compare forward-only and forward-backward E-step statistics.
    Compare {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// Measure the cost of both E-steps over a grid of sizes.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "2,4,8")]
        states_grid: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "1")]
        order_grid: Vec<usize>,
        #[arg(long, default_value_t = 2000)]
        length: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

/// A failure with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self {
            code: if e.is_numerical() { 4 } else { 2 },
            message: e.to_string(),
        }
    }
}

fn context(path: &Path) -> impl Fn(Error) -> Failure + '_ {
    move |e| {
        let mut f = Failure::from(e);
        f.message = format!("{}: {}", path.display(), f.message);
        f
    }
}

#[derive(Serialize)]
struct FitOutput<'a> {
    config: &'a FitConfig,
    #[serde(flatten)]
    report: &'a FitReport,
}

#[derive(Serialize)]
struct EvalOutput {
    loglik: f64,
    final_filter_probs: Vec<f64>,
}

fn print_json<T: Serialize>(value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::input(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn load_pair(data: &Path, model: &Path) -> Result<(switchfit::SwitchingModel, ObservationSeries), Failure> {
    let model_value = read_model_json(model).map_err(context(model))?;
    let series = read_series_csv(data, model_value.ar_order()).map_err(context(data))?;
    Ok((model_value, series))
}

fn run(cli: Cli) -> Result<u8, Failure> {
    match cli.command {
        Command::Simulate {
            model,
            length,
            seed,
            out,
        } => {
            let m = read_model_json(&model).map_err(context(&model))?;
            let sim = simulate(&m, length, seed, None)?;
            write_series_csv(&out, sim.series.values()).map_err(context(&out))?;
            let truth = truth_path(&out);
            write_json(&truth, &TruthFile::new(&sim, &m)).map_err(context(&truth))?;
            log::info!("wrote {} rows to {}", sim.series.values().len(), out.display());
            Ok(0)
        }
        Command::Fit {
            data,
            states,
            order,
            algo,
            max_iter,
            tol,
            seed,
            sigma_floor,
            ridge_eps,
            out,
        } => {
            let config = FitConfig {
                max_iter,
                rel_tol: tol,
                seed,
                sigma_floor,
                ridge_eps,
                algo: algo.into(),
            };
            config.validate()?;
            if states == 0 {
                return Err(Failure::input("--states must be at least 1"));
            }
            let file = std::fs::File::open(&data).map_err(|e| context(&data)(e.into()))?;
            let values = read_values(file).map_err(context(&data))?;
            if values.len() < order + 2 {
                return Err(Failure::input(format!(
                    "{}: {} rows, but order {order} needs at least {}",
                    data.display(),
                    values.len(),
                    order + 2
                )));
            }
            let series = ObservationSeries::new(values, order).map_err(context(&data))?;
            match fit(&series, states, order, &config) {
                Ok(report) => {
                    write_json(
                        &out,
                        &FitOutput {
                            config: &config,
                            report: &report,
                        },
                    )
                    .map_err(context(&out))?;
                    log::info!(
                        "{} after {} iterations, loglik {}",
                        if report.converged { "converged" } else { "stopped" },
                        report.iterations,
                        report.final_loglik()
                    );
                    if report.converged {
                        Ok(0)
                    } else {
                        eprintln!("warning: no convergence within {max_iter} iterations");
                        Ok(3)
                    }
                }
                Err(failure) => Err(Failure {
                    code: if failure.source.is_numerical() { 4 } else { 2 },
                    message: failure.to_string(),
                }),
            }
        }
        Command::Eval { data, model, trace } => {
            let (m, series) = load_pair(&data, &model)?;
            let state = run_filter(&m, &series)?;
            let loglik = state.log_likelihood(&series)?;
            let q = state.q().as_slice();
            let total: f64 = q.iter().sum();
            if let Some(path) = trace {
                let file = std::fs::File::create(&path).map_err(|e| context(&path)(e.into()))?;
                write_filter_trace(std::io::BufWriter::new(file), &m, &series).map_err(context(&path))?;
            }
            print_json(&EvalOutput {
                loglik,
                final_filter_probs: q.iter().map(|v| v / total).collect(),
            })?;
            Ok(0)
        }
        Command::Compare { data, model } => {
            let (m, series) = load_pair(&data, &model)?;
            print_json(&compare_esteps(&m, &series)?)?;
            Ok(0)
        }
        Command::Bench {
            states_grid,
            order_grid,
            length,
            seed,
            json,
        } => {
            if states_grid.contains(&0) || length == 0 {
                return Err(Failure::input("grid sizes and --length must be positive"));
            }
            let report = run_bench(&states_grid, &order_grid, length, seed)?;
            print!("{}", report.to_table());
            println!("ratio increases with N: {}", report.ratio_increases_with_n);
            if let Some(path) = json {
                write_json(&path, &report).map_err(context(&path))?;
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SWITCHFIT_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
