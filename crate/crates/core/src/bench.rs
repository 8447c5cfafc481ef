//! Cost comparison of the forward-only filters and forward-backward.
//!
//! Multiply-add counts come from counters inside both E-step
//! implementations, so they are deterministic; wall times are not.

use std::time::Instant;

use serde::Serialize;

use crate::error::Result;
use crate::filter::run_filter;
use crate::model::{RegimeParams, SwitchingModel, TransitionMatrix};
use crate::oracle::baum_welch_estep;
use crate::simulate::simulate;

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub n_regimes: usize,
    pub ar_order: usize,
    pub t_emissions: usize,
    pub forward_only_macs_per_step: f64,
    pub forward_backward_macs_per_step: f64,
    /// forward-only / forward-backward
    pub macs_ratio: f64,
    /// `N / 2`, for reference.
    pub half_n: f64,
    pub forward_only_ms: f64,
    pub forward_backward_ms: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// For every order, the cost ratio increases strictly with `N`.
    pub ratio_increases_with_n: bool,
}

/// Deterministic benchmark model: sticky chain, spread intercepts, decaying
/// lag coefficients.
pub fn bench_model(n: usize, p: usize) -> SwitchingModel {
    let stay = if n == 1 { 1.0 } else { 0.8 };
    let columns = (0..n)
        .map(|j| {
            (0..n)
                .map(|i| if i == j { stay } else { (1.0 - stay) / (n - 1) as f64 })
                .collect()
        })
        .collect();
    let regimes = (0..n)
        .map(|r| {
            let mut coeffs = vec![2.0 * r as f64 - (n - 1) as f64];
            coeffs.extend((0..p).map(|k| 0.3 / (k + 2) as f64));
            RegimeParams::new(coeffs, 1.0)
        })
        .collect();
    SwitchingModel::new(
        TransitionMatrix::from_columns(columns).expect("valid bench chain"),
        regimes,
        vec![1.0 / n as f64; n],
    )
    .expect("valid bench model")
}

pub fn run_bench(states: &[usize], orders: &[usize], t_emissions: usize, seed: u64) -> Result<BenchReport> {
    let mut rows = Vec::new();
    for &p in orders {
        for &n in states {
            let model = bench_model(n, p);
            let sim = simulate(&model, t_emissions, seed, None)?;

            let start = Instant::now();
            let state = run_filter(&model, &sim.series)?;
            state.finalize()?;
            let fo_ms = start.elapsed().as_secs_f64() * 1e3;

            let start = Instant::now();
            let post = baum_welch_estep(&model, &sim.series)?;
            let fb_ms = start.elapsed().as_secs_f64() * 1e3;

            let t = t_emissions as f64;
            let fo = state.macs() as f64 / t;
            let fb = post.macs as f64 / t;
            rows.push(BenchRow {
                n_regimes: n,
                ar_order: p,
                t_emissions,
                forward_only_macs_per_step: fo,
                forward_backward_macs_per_step: fb,
                macs_ratio: fo / fb,
                half_n: n as f64 / 2.0,
                forward_only_ms: fo_ms,
                forward_backward_ms: fb_ms,
            });
        }
    }
    let ratio_increases_with_n = orders.iter().all(|&p| {
        let mut cells: Vec<&BenchRow> = rows.iter().filter(|r| r.ar_order == p).collect();
        cells.sort_by_key(|r| r.n_regimes);
        cells.windows(2).all(|w| w[1].macs_ratio > w[0].macs_ratio)
    });
    Ok(BenchReport {
        rows,
        ratio_increases_with_n,
    })
}

impl BenchReport {
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:>3} {:>3} {:>7} {:>14} {:>14} {:>9} {:>6} {:>10} {:>10}\n",
            "N", "p", "T", "fwd_only/step", "fwd_bwd/step", "ratio", "N/2", "fo_ms", "fb_ms"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:>3} {:>3} {:>7} {:>14.1} {:>14.1} {:>9.3} {:>6.1} {:>10.3} {:>10.3}\n",
                r.n_regimes,
                r.ar_order,
                r.t_emissions,
                r.forward_only_macs_per_step,
                r.forward_backward_macs_per_step,
                r.macs_ratio,
                r.half_n,
                r.forward_only_ms,
                r.forward_backward_ms
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_are_deterministic_and_grow_with_n() {
        let a = run_bench(&[1, 2, 4], &[1], 200, 3).unwrap();
        let b = run_bench(&[1, 2, 4], &[1], 200, 3).unwrap();
        for (x, y) in a.rows.iter().zip(&b.rows) {
            assert_eq!(x.forward_only_macs_per_step, y.forward_only_macs_per_step);
            assert_eq!(x.forward_backward_macs_per_step, y.forward_backward_macs_per_step);
        }
        for w in a.rows.windows(2) {
            assert!(w[1].forward_only_macs_per_step > w[0].forward_only_macs_per_step);
            assert!(w[1].forward_backward_macs_per_step > w[0].forward_backward_macs_per_step);
        }
        assert!(a.ratio_increases_with_n);
        // N = 1: both passes cost the same order of magnitude.
        assert!(a.rows[0].macs_ratio > 0.1 && a.rows[0].macs_ratio < 10.0);
        assert!(a.to_table().lines().count() == 4);
    }
}
