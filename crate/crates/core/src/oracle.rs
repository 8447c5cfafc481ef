//! Independent computations of the E-step quantities: exhaustive path
//! enumeration and a classic scaled forward-backward pass.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::filter::{run_filter, AdaptedProcess};
use crate::model::{ObservationSeries, SwitchingModel};
use crate::stats::{FamilyDeviation, SufficientStats};

/// Largest `N^T` the path enumerator accepts.
pub const MAX_ENUMERATED_PATHS: u128 = 1 << 20;

/// Posterior statistics with the per-time regime probabilities.
#[derive(Debug, Clone)]
pub struct PosteriorStats {
    pub stats: SufficientStats,
    /// `smoothed[r][k]`: probability that regime `r` drove emission `k`
    /// given the whole series.
    pub smoothed: Vec<Vec<f64>>,
    pub log_likelihood: f64,
    /// Multiply-adds spent (forward-backward only; zero for enumeration).
    pub macs: u64,
}

/// `log_dens[k][i]`: log density of emission `k` under regime `i`.
fn log_emission_table(model: &SwitchingModel, series: &ObservationSeries) -> Result<Vec<Vec<f64>>> {
    if series.conditioning_len() != model.ar_order() {
        return Err(Error::DimensionMismatch {
            what: "series conditioning window vs model order",
            expected: model.ar_order(),
            actual: series.conditioning_len(),
        });
    }
    let n = model.n_regimes();
    Ok((0..series.n_emissions())
        .map(|k| {
            let mut row = vec![0.0; n];
            model.log_densities_into(series.emission(k), series.window(k).as_slice(), &mut row);
            row
        })
        .collect())
}

fn check_enumerable(n: usize, t: usize) -> Result<()> {
    let paths = (n as u128).checked_pow(t as u32).unwrap_or(u128::MAX);
    if paths > MAX_ENUMERATED_PATHS {
        return Err(Error::InstanceTooLarge {
            paths,
            limit: MAX_ENUMERATED_PATHS,
        });
    }
    Ok(())
}

/// Visits every hidden path `x_0..x_T` (the terminal regime included) with
/// its unnormalized log weight. Returns the log normalizer.
fn enumerate_paths<F>(model: &SwitchingModel, log_dens: &[Vec<f64>], mut visit: F) -> f64
where
    F: FnMut(&[usize], f64),
{
    let n = model.n_regimes();
    let t = log_dens.len();
    let a = model.transition();
    let pi = model.initial_dist();
    let total = n.pow(t as u32 + 1);

    let log_weight = |path: &[usize]| {
        let mut lw = pi[path[0]].ln();
        for k in 0..t {
            lw += log_dens[k][path[k]] + a.get(path[k + 1], path[k]).ln();
        }
        lw
    };

    let mut path = vec![0usize; t + 1];
    let mut weights = Vec::with_capacity(total);
    for _ in 0..total {
        weights.push(log_weight(&path));
        advance(&mut path, n);
    }
    let max = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let norm: f64 = weights.iter().map(|lw| (lw - max).exp()).sum();
    let log_norm = max + norm.ln();

    path.iter_mut().for_each(|x| *x = 0);
    for lw in weights {
        let w = (lw - log_norm).exp();
        if w > 0.0 {
            visit(&path, w);
        }
        advance(&mut path, n);
    }
    log_norm
}

/// Odometer increment over base-`n` digits.
fn advance(path: &mut [usize], n: usize) {
    for x in path.iter_mut() {
        *x += 1;
        if *x < n {
            return;
        }
        *x = 0;
    }
}

/// Exact posterior statistics by summing over every hidden path.
///
/// Refuses instances with more than [`MAX_ENUMERATED_PATHS`] driving paths
/// (`N^T`); the terminal regime adds another factor `N`.
pub fn brute_force_posterior(model: &SwitchingModel, series: &ObservationSeries) -> Result<PosteriorStats> {
    let n = model.n_regimes();
    let p = model.ar_order();
    let t = series.n_emissions();
    check_enumerable(n, t)?;
    let log_dens = log_emission_table(model, series)?;
    let windows: Vec<Vec<f64>> = (0..t).map(|k| series.window(k).as_slice().to_vec()).collect();

    let mut stats = SufficientStats::zeros(n, p, t);
    let mut smoothed = vec![vec![0.0; t]; n];
    let log_likelihood = enumerate_paths(model, &log_dens, |path, w| {
        for k in 0..t {
            let r = path[k];
            let y = series.emission(k);
            let lags = &windows[k];
            smoothed[r][k] += w;
            stats.occ_hat[r] += w;
            stats.jump_hat[r][path[k + 1]] += w;
            stats.tc_hat[r] += w * y;
            stats.ta_hat[r][0] += w * y * y;
            for i in 0..p {
                stats.ta_hat[r][i + 1] += w * lags[i] * y;
                stats.td_hat[r][i] += w * lags[i];
                for j in 0..p {
                    stats.tb_hat[r][i][j] += w * lags[i] * lags[j];
                }
            }
        }
    });

    Ok(PosteriorStats {
        stats,
        smoothed,
        log_likelihood,
        macs: 0,
    })
}

/// Exact `E[H_T | Y]` for a process driven by predictable terms, evaluating
/// `H_T` on every path with its martingale increments
/// `X_{k+1} - A X_k`.
pub fn brute_force_process<P: AdaptedProcess>(
    process: &P,
    model: &SwitchingModel,
    series: &ObservationSeries,
) -> Result<f64> {
    let n = model.n_regimes();
    let t = series.n_emissions();
    check_enumerable(n, t)?;
    let log_dens = log_emission_table(model, series)?;
    let windows: Vec<Vec<f64>> = (0..t).map(|k| series.window(k).as_slice().to_vec()).collect();
    let a = model.transition();

    let mut expectation = 0.0;
    enumerate_paths(model, &log_dens, |path, w| {
        let mut h = process.initial(path[0]);
        for k in 0..t {
            let (cur, next) = (path[k], path[k + 1]);
            let lags = &windows[k];
            let beta = process.beta(cur, lags);
            // <beta, e_next - a_cur>
            let increment: f64 = beta[next] - beta.iter().zip(a.column(cur)).map(|(b, a)| b * a).sum::<f64>();
            h += process.alpha(cur, lags) + increment + process.delta(cur, lags) * process.f(series.emission(k));
        }
        expectation += w * h;
    });
    Ok(expectation)
}

/// Scaled forward-backward pass producing smoothed regime probabilities and
/// the same sufficient statistics as the forward-only filters.
pub fn baum_welch_estep(model: &SwitchingModel, series: &ObservationSeries) -> Result<PosteriorStats> {
    let n = model.n_regimes();
    let p = model.ar_order();
    let t = series.n_emissions();
    let a = model.transition();
    let log_dens = log_emission_table(model, series)?;
    let mut macs = 0u64;

    // Emission densities relative to their per-time maximum.
    let mut offsets = Vec::with_capacity(t);
    let dens: Vec<Vec<f64>> = log_dens
        .iter()
        .map(|row| {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            offsets.push(max);
            row.iter().map(|v| (v - max).exp()).collect()
        })
        .collect();

    let mut alpha = vec![vec![0.0; n]; t];
    let mut scale = vec![0.0; t];
    for k in 0..t {
        let pred = if k == 0 {
            model.initial_dist().to_vec()
        } else {
            macs += (n * n) as u64;
            a.apply(&alpha[k - 1])
        };
        let mut c = 0.0;
        for i in 0..n {
            alpha[k][i] = pred[i] * dens[k][i];
            c += alpha[k][i];
        }
        macs += 2 * n as u64;
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::NumericalDegeneracy { step: k + 1, scale: c });
        }
        alpha[k].iter_mut().for_each(|v| *v /= c);
        scale[k] = c;
    }
    let log_likelihood: f64 = scale.iter().zip(&offsets).map(|(c, m)| c.ln() + m).sum();

    let mut beta = vec![vec![1.0; n]; t];
    for k in (0..t.saturating_sub(1)).rev() {
        let weighted: Vec<f64> = (0..n).map(|s| dens[k + 1][s] * beta[k + 1][s] / scale[k + 1]).collect();
        for i in 0..n {
            beta[k][i] = a.column(i).iter().zip(&weighted).map(|(a, w)| a * w).sum();
        }
        macs += (n * n + n) as u64;
    }

    let mut stats = SufficientStats::zeros(n, p, t);
    let mut smoothed = vec![vec![0.0; t]; n];
    for k in 0..t {
        let y = series.emission(k);
        let window = series.window(k);
        let lags = window.as_slice();
        let weighted_next: Option<Vec<f64>> =
            (k + 1 < t).then(|| (0..n).map(|s| dens[k + 1][s] * beta[k + 1][s] / scale[k + 1]).collect());
        for r in 0..n {
            let w = alpha[k][r] * beta[k][r];
            smoothed[r][k] = w;
            stats.occ_hat[r] += w;
            stats.tc_hat[r] += w * y;
            stats.ta_hat[r][0] += w * y * y;
            for i in 0..p {
                stats.ta_hat[r][i + 1] += w * lags[i] * y;
                stats.td_hat[r][i] += w * lags[i];
                for j in i..p {
                    stats.tb_hat[r][i][j] += w * lags[i] * lags[j];
                }
            }
            match &weighted_next {
                Some(wn) => {
                    for s in 0..n {
                        stats.jump_hat[r][s] += alpha[k][r] * a.get(s, r) * wn[s];
                    }
                }
                // The last driving regime's successor is unobserved.
                None => {
                    for s in 0..n {
                        stats.jump_hat[r][s] += w * a.get(s, r);
                    }
                }
            }
            macs += (4 + 3 * p + p * (p + 1) / 2 + n) as u64;
        }
    }
    for tb in stats.tb_hat.iter_mut() {
        for i in 0..p {
            for j in 0..i {
                tb[i][j] = tb[j][i];
            }
        }
    }

    Ok(PosteriorStats {
        stats,
        smoothed,
        log_likelihood,
        macs,
    })
}

/// Deviation between the forward-only and forward-backward E-steps.
#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub n_regimes: usize,
    pub ar_order: usize,
    pub t_emissions: usize,
    pub deviations: FamilyDeviation,
    pub max_deviation: f64,
    pub loglik_forward_only: f64,
    pub loglik_baum_welch: f64,
    pub loglik_abs_diff: f64,
}

pub fn compare_esteps(model: &SwitchingModel, series: &ObservationSeries) -> Result<CompareReport> {
    let state = run_filter(model, series)?;
    let forward = state.finalize()?;
    let loglik_forward_only = state.log_likelihood(series)?;
    let bw = baum_welch_estep(model, series)?;
    let deviations = forward.deviation_from(&bw.stats);
    Ok(CompareReport {
        n_regimes: model.n_regimes(),
        ar_order: model.ar_order(),
        t_emissions: series.n_emissions(),
        max_deviation: deviations.max(),
        deviations,
        loglik_forward_only,
        loglik_baum_welch: bw.log_likelihood,
        loglik_abs_diff: (loglik_forward_only - bw.log_likelihood).abs(),
    })
}
