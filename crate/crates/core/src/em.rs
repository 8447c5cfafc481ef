//! EM estimation. The E-step is a single forward pass of the statistic
//! filters (or, for comparison, a forward-backward pass); the M-step turns
//! the expected statistics into closed-form parameter updates.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::run_filter;
use crate::model::{ObservationSeries, RegimeParams, SwitchingModel, TransitionMatrix, SIGMA_FLOOR};
use crate::oracle::baum_welch_estep;
use crate::simulate::SimRng;
use crate::stats::SufficientStats;

/// Condition number above which the normal equations are ridged.
pub const RIDGE_CONDITION: f64 = 1e12;

/// Expected occupation below which a regime is treated as unvisited.
pub const STARVED_OCCUPATION: f64 = 1e-8;

/// Allowed per-iteration log-likelihood decrease before a fit is flagged.
pub const MONOTONE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Forward-only statistic filters.
    ForwardOnly,
    /// Scaled forward-backward smoothing.
    BaumWelch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub max_iter: usize,
    /// Stop when `|dL| / (1 + |L|)` falls below this.
    pub rel_tol: f64,
    pub seed: u64,
    pub sigma_floor: f64,
    /// Ridge strength relative to the mean diagonal of the normal equations.
    pub ridge_eps: f64,
    pub algo: Algorithm,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iter: 500,
            rel_tol: 1e-8,
            seed: 0,
            sigma_floor: SIGMA_FLOOR,
            ridge_eps: 1e-8,
            algo: Algorithm::ForwardOnly,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter < 1 {
            return Err(Error::ContractViolation("max_iter must be at least 1".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::ContractViolation("rel_tol must be positive".into()));
        }
        if !(self.sigma_floor > 0.0) {
            return Err(Error::ContractViolation("sigma_floor must be positive".into()));
        }
        if !(self.ridge_eps >= 0.0) {
            return Err(Error::ContractViolation("ridge_eps must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum WarningKind {
    RidgeApplied,
    SigmaFloored,
    ColumnRenormalized,
    RegimeStarved,
    SingularRegression,
    NonMonotone,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitWarning {
    pub iteration: usize,
    pub kind: WarningKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub regime: Option<usize>,
    pub message: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub model: SwitchingModel,
    /// Log-likelihood of each successive model, the last entry belonging to
    /// the returned model.
    pub loglik_trace: Vec<f64>,
    pub converged: bool,
    /// Number of M-steps applied.
    pub iterations: usize,
    pub warnings: Vec<FitWarning>,
}

impl FitReport {
    pub fn final_loglik(&self) -> f64 {
        *self.loglik_trace.last().expect("trace is never empty")
    }

    /// Largest decrease between consecutive trace entries (0 if none).
    pub fn worst_decrease(&self) -> f64 {
        self.loglik_trace.windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max)
    }
}

/// A fit aborted by a numerical failure, with whatever was computed.
#[derive(Debug, thiserror::Error)]
#[error("fit failed at iteration {iteration}: {source}")]
pub struct FitFailure {
    pub iteration: usize,
    pub loglik_trace: Vec<f64>,
    pub last_model: Option<SwitchingModel>,
    #[source]
    pub source: Error,
}

/// Forward-only E-step: expected statistics and the log-likelihood.
pub fn e_step(model: &SwitchingModel, series: &ObservationSeries) -> Result<(SufficientStats, f64)> {
    let state = run_filter(model, series)?;
    Ok((state.finalize()?, state.log_likelihood(series)?))
}

pub fn e_step_with(
    algo: Algorithm,
    model: &SwitchingModel,
    series: &ObservationSeries,
) -> Result<(SufficientStats, f64)> {
    match algo {
        Algorithm::ForwardOnly => e_step(model, series),
        Algorithm::BaumWelch => {
            let post = baum_welch_estep(model, series)?;
            Ok((post.stats, post.log_likelihood))
        }
    }
}

/// New transition matrix: expected transitions `r -> s` over expected
/// departures from `r`. Columns without departures keep their previous value.
pub fn m_step_transition(
    stats: &SufficientStats,
    previous: &TransitionMatrix,
    warnings: &mut Vec<(WarningKind, Option<usize>, String)>,
) -> Result<TransitionMatrix> {
    let n = stats.n_regimes();
    let total: f64 = stats.jump_hat.iter().flatten().sum();
    if !(total > 0.0) {
        return Err(Error::EstimationDegenerate("no expected transitions".into()));
    }
    let mut columns = Vec::with_capacity(n);
    for r in 0..n {
        let departures = stats.departures(r);
        if departures > 0.0 && departures.is_finite() {
            columns.push(stats.jump_hat[r].iter().map(|j| j / departures).collect());
        } else {
            warnings.push((
                WarningKind::ColumnRenormalized,
                Some(r),
                format!("no expected departures from regime {r}; column kept"),
            ));
            columns.push(previous.column(r).to_vec());
        }
    }
    TransitionMatrix::from_columns(columns)
}

/// Weighted normal equations `R theta = C` of regime `r`.
pub fn normal_equations(stats: &SufficientStats, r: usize) -> (DMatrix<f64>, DVector<f64>) {
    let p = stats.ar_order();
    let mut rm = DMatrix::zeros(p + 1, p + 1);
    let mut c = DVector::zeros(p + 1);
    rm[(0, 0)] = stats.occ_hat[r];
    c[0] = stats.tc_hat[r];
    for i in 0..p {
        rm[(0, i + 1)] = stats.td_hat[r][i];
        rm[(i + 1, 0)] = stats.td_hat[r][i];
        c[i + 1] = stats.ta(r, i as isize);
        for j in 0..p {
            rm[(i + 1, j + 1)] = stats.tb_hat[r][i][j];
        }
    }
    (rm, c)
}

/// Solution of a symmetric positive (semi)definite system, ridged when its
/// condition estimate exceeds [`RIDGE_CONDITION`].
#[derive(Debug, Clone, PartialEq)]
pub enum NormalSolution {
    Solved { theta: DVector<f64>, ridge: Option<f64> },
    Singular,
}

pub fn solve_normal_equations(r: &DMatrix<f64>, c: &DVector<f64>, ridge_eps: f64) -> NormalSolution {
    if r.iter().chain(c.iter()).any(|v| !v.is_finite()) {
        return NormalSolution::Singular;
    }
    let eig = r.clone().symmetric_eigenvalues();
    let max = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };

    let (system, ridge) = if condition > RIDGE_CONDITION {
        let lambda = ridge_eps * r.trace() / r.nrows() as f64;
        if !(lambda > 0.0) {
            return NormalSolution::Singular;
        }
        (r + DMatrix::identity(r.nrows(), r.ncols()) * lambda, Some(lambda))
    } else {
        (r.clone(), None)
    };
    match system.cholesky() {
        Some(chol) => {
            let theta = chol.solve(c);
            if theta.iter().all(|v| v.is_finite()) {
                NormalSolution::Solved { theta, ridge }
            } else {
                NormalSolution::Singular
            }
        }
        None => NormalSolution::Singular,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RegressionUpdate {
    Updated {
        theta: Vec<f64>,
        ridge: Option<f64>,
    },
    /// Regime is effectively unvisited.
    Starved,
    Singular,
}

/// Weighted least-squares coefficients of regime `r`.
pub fn m_step_regression(stats: &SufficientStats, r: usize, ridge_eps: f64) -> RegressionUpdate {
    if !(stats.occ_hat[r] > STARVED_OCCUPATION) {
        return RegressionUpdate::Starved;
    }
    let (rm, c) = normal_equations(stats, r);
    match solve_normal_equations(&rm, &c, ridge_eps) {
        NormalSolution::Solved { theta, ridge } => RegressionUpdate::Updated {
            theta: theta.iter().copied().collect(),
            ridge,
        },
        NormalSolution::Singular => RegressionUpdate::Singular,
    }
}

/// Unclamped expected mean squared residual of regime `r` under `theta`.
/// `None` when the regime has no expected occupation.
pub fn raw_variance(stats: &SufficientStats, r: usize, theta: &[f64]) -> Option<f64> {
    let occ = stats.occ_hat[r];
    if !(occ > 0.0) {
        return None;
    }
    let (rm, c) = normal_equations(stats, r);
    let th = DVector::from_column_slice(theta);
    let quad = th.dot(&(&rm * &th));
    let cross = th.dot(&c);
    Some((stats.ta(r, -1) + quad - 2.0 * cross) / occ)
}

/// Noise variance of regime `r`, clamped below at `sigma_floor^2`.
pub fn m_step_variance(stats: &SufficientStats, r: usize, theta: &[f64], sigma_floor: f64) -> Option<f64> {
    raw_variance(stats, r, theta).map(|v| v.max(sigma_floor * sigma_floor))
}

type PendingWarning = (WarningKind, Option<usize>, String);

/// Full M-step. Returns the new model plus any warnings raised.
pub fn m_step(
    stats: &SufficientStats,
    previous: &SwitchingModel,
    config: &FitConfig,
) -> Result<(SwitchingModel, Vec<PendingWarning>)> {
    let mut warnings = Vec::new();
    let transition = m_step_transition(stats, previous.transition(), &mut warnings)?;
    let floor2 = config.sigma_floor * config.sigma_floor;
    let regimes = (0..stats.n_regimes())
        .map(|r| {
            let old = previous.regime(r);
            let theta = match m_step_regression(stats, r, config.ridge_eps) {
                RegressionUpdate::Updated { theta, ridge } => {
                    if let Some(lambda) = ridge {
                        warnings.push((
                            WarningKind::RidgeApplied,
                            Some(r),
                            format!("normal equations ill-conditioned; ridge {lambda:e} added"),
                        ));
                    }
                    theta
                }
                RegressionUpdate::Starved => {
                    warnings.push((
                        WarningKind::RegimeStarved,
                        Some(r),
                        format!("expected occupation {:e}; parameters kept", stats.occ_hat[r]),
                    ));
                    return old.clone();
                }
                RegressionUpdate::Singular => {
                    warnings.push((
                        WarningKind::SingularRegression,
                        Some(r),
                        "normal equations singular after ridge; coefficients kept".into(),
                    ));
                    old.coeffs.clone()
                }
            };
            let sigma = match raw_variance(stats, r, &theta) {
                Some(v) if v >= floor2 => v.sqrt(),
                Some(v) => {
                    warnings.push((
                        WarningKind::SigmaFloored,
                        Some(r),
                        format!("variance {v:e} raised to the floor"),
                    ));
                    config.sigma_floor
                }
                None => old.sigma,
            };
            RegimeParams::new(theta, sigma)
        })
        .collect();
    let model = SwitchingModel::from_parts_unchecked(transition, regimes, previous.initial_dist().to_vec());
    Ok((model, warnings))
}

/// Ordinary least squares AR(p) on the emissions of `series`:
/// coefficients and mean squared residual.
pub fn ols_fit(series: &ObservationSeries, ridge_eps: f64) -> (Vec<f64>, f64) {
    let p = series.conditioning_len();
    let t = series.n_emissions();
    let mut rm = DMatrix::<f64>::zeros(p + 1, p + 1);
    let mut c = DVector::<f64>::zeros(p + 1);
    let mut psi = DVector::<f64>::zeros(p + 1);
    for k in 0..t {
        psi[0] = 1.0;
        for (j, lag) in series.window(k).as_slice().iter().enumerate() {
            psi[j + 1] = *lag;
        }
        rm += &psi * psi.transpose();
        c += &psi * series.emission(k);
    }
    let theta: Vec<f64> = match solve_normal_equations(&rm, &c, ridge_eps) {
        NormalSolution::Solved { theta, .. } => theta.iter().copied().collect(),
        NormalSolution::Singular => {
            let mut th = vec![0.0; p + 1];
            th[0] = series.emissions().iter().sum::<f64>() / t as f64;
            th
        }
    };
    let regime = RegimeParams::new(theta.clone(), 1.0);
    let mse = (0..t)
        .map(|k| {
            let e = series.emission(k) - regime.mean_unchecked(series.window(k).as_slice());
            e * e
        })
        .sum::<f64>()
        / t as f64;
    (theta, mse)
}

/// Starting model: the global OLS fit with seeded coefficient jitter per
/// regime, near-uniform transitions and a uniform initial distribution.
///
/// Draw order from [`SimRng`]: `N * N` uniforms for the transition
/// perturbations (column by column), then `N * (p + 1)` normals for the
/// coefficient jitter (regime by regime). `N = 1` draws nothing.
pub fn init_params(series: &ObservationSeries, n: usize, p: usize, seed: u64) -> Result<SwitchingModel> {
    init_params_with_floor(series, n, p, seed, SIGMA_FLOOR)
}

fn init_params_with_floor(
    series: &ObservationSeries,
    n: usize,
    p: usize,
    seed: u64,
    sigma_floor: f64,
) -> Result<SwitchingModel> {
    if n == 0 {
        return Err(Error::ContractViolation("at least one regime is required".into()));
    }
    if series.conditioning_len() != p {
        return Err(Error::DimensionMismatch {
            what: "series conditioning window vs order",
            expected: p,
            actual: series.conditioning_len(),
        });
    }
    let (theta, mse) = ols_fit(series, FitConfig::default().ridge_eps);
    let sigma = mse.sqrt().max(sigma_floor);
    let uniform = vec![1.0 / n as f64; n];
    if n == 1 {
        return SwitchingModel::with_sigma_floor(
            TransitionMatrix::uniform(1),
            vec![RegimeParams::new(theta, sigma)],
            uniform,
            sigma_floor,
        );
    }

    let mut rng = SimRng::new(seed);
    let columns: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let raw: Vec<f64> = (0..n)
                .map(|_| (1.0 + 0.05 * (2.0 * rng.uniform() - 1.0)) / n as f64)
                .collect();
            let total: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / total).collect()
        })
        .collect();
    let regimes = (0..n)
        .map(|_| {
            let coeffs = theta
                .iter()
                .map(|&c| c + 0.1 * (c.abs() + 0.1) * rng.standard_normal())
                .collect();
            RegimeParams::new(coeffs, sigma)
        })
        .collect();
    SwitchingModel::with_sigma_floor(TransitionMatrix::from_columns(columns)?, regimes, uniform, sigma_floor)
}

fn relative_change(prev: f64, cur: f64) -> f64 {
    (cur - prev).abs() / (1.0 + cur.abs())
}

/// Fits an `n`-regime AR(`p`) model by EM from [`init_params`].
pub fn fit(
    series: &ObservationSeries,
    n: usize,
    p: usize,
    config: &FitConfig,
) -> std::result::Result<FitReport, FitFailure> {
    let fail = |iteration, trace: &[f64], model: Option<&SwitchingModel>, source| FitFailure {
        iteration,
        loglik_trace: trace.to_vec(),
        last_model: model.cloned(),
        source,
    };
    config.validate().map_err(|e| fail(0, &[], None, e))?;
    let start =
        init_params_with_floor(series, n, p, config.seed, config.sigma_floor).map_err(|e| fail(0, &[], None, e))?;
    fit_from(series, start, config)
}

/// Runs EM from a given starting model.
pub fn fit_from(
    series: &ObservationSeries,
    start: SwitchingModel,
    config: &FitConfig,
) -> std::result::Result<FitReport, FitFailure> {
    let fail = |iteration, trace: &[f64], model: &SwitchingModel, source| FitFailure {
        iteration,
        loglik_trace: trace.to_vec(),
        last_model: Some(model.clone()),
        source,
    };
    config.validate().map_err(|e| fail(0, &[], &start, e))?;

    let mut model = start;
    let mut trace: Vec<f64> = Vec::new();
    let mut warnings = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for it in 1..=config.max_iter {
        let (stats, loglik) = e_step_with(config.algo, &model, series).map_err(|e| fail(it, &trace, &model, e))?;
        if !loglik.is_finite() {
            return Err(fail(
                it,
                &trace,
                &model,
                Error::NumericalDegeneracy {
                    step: series.n_emissions(),
                    scale: loglik,
                },
            ));
        }
        trace.push(loglik);
        if trace.len() >= 2 && relative_change(trace[trace.len() - 2], loglik) < config.rel_tol {
            converged = true;
            break;
        }
        let (next, pending) = m_step(&stats, &model, config).map_err(|e| fail(it, &trace, &model, e))?;
        for (kind, regime, message) in pending {
            log::debug!("iteration {it}: {message}");
            warnings.push(FitWarning {
                iteration: it,
                kind,
                regime,
                message,
            });
        }
        model = next;
        iterations = it;
    }

    if !converged {
        // Evaluate the model produced by the last M-step.
        let (_, loglik) =
            e_step_with(config.algo, &model, series).map_err(|e| fail(config.max_iter + 1, &trace, &model, e))?;
        trace.push(loglik);
    }

    for (k, w) in trace.windows(2).enumerate() {
        if w[1] < w[0] - MONOTONE_TOL {
            warnings.push(FitWarning {
                iteration: k + 1,
                kind: WarningKind::NonMonotone,
                regime: None,
                message: format!("log-likelihood decreased by {:e}", w[0] - w[1]),
            });
        }
    }

    let order = model.intercept_order();
    let mut relabel = vec![0; order.len()];
    for (new, &old) in order.iter().enumerate() {
        relabel[old] = new;
    }
    for w in warnings.iter_mut() {
        if let Some(r) = w.regime.as_mut() {
            *r = relabel[*r];
        }
    }

    Ok(FitReport {
        model: model.permuted(&order),
        loglik_trace: trace,
        converged,
        iterations,
        warnings,
    })
}
