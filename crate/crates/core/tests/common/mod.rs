#![allow(dead_code)]

use switchfit::filter::AdaptedProcess;
use switchfit::simulate::{simulate, SimRng};
use switchfit::{ObservationSeries, RegimeParams, SwitchingModel, TransitionMatrix};

fn simplex(rng: &mut SimRng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| 0.1 + rng.uniform()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Random model with stationary-ish lag coefficients.
pub fn random_model(seed: u64, n: usize, p: usize) -> SwitchingModel {
    let mut rng = SimRng::new(seed);
    let columns = (0..n).map(|_| simplex(&mut rng, n)).collect();
    let bound = 0.8 / p.max(1) as f64;
    let regimes = (0..n)
        .map(|_| {
            let mut coeffs = vec![2.0 * rng.uniform() - 1.0];
            coeffs.extend((0..p).map(|_| bound * (2.0 * rng.uniform() - 1.0)));
            RegimeParams::new(coeffs, 0.4 + rng.uniform())
        })
        .collect();
    let pi = simplex(&mut rng, n);
    SwitchingModel::new(TransitionMatrix::from_columns(columns).unwrap(), regimes, pi).unwrap()
}

/// A model and a series simulated from a different random model, so the
/// evaluation model is misspecified.
pub fn random_instance(seed: u64, n: usize, p: usize, t: usize) -> (SwitchingModel, ObservationSeries) {
    let model = random_model(seed, n, p);
    let generator = random_model(seed ^ 0x9e37_79b9, n.max(2), p);
    let sim = simulate(&generator, t, seed.wrapping_add(17), None).unwrap();
    (model, sim.series)
}

/// Dense Gaussian elimination with partial pivoting.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// Weighted least squares of `y_{k+1}` on `(1, lags)` with weights `w[k]`,
/// summed directly from the raw series.
pub fn weighted_ls(series: &ObservationSeries, weights: &[f64]) -> Vec<f64> {
    let p = series.conditioning_len();
    let mut xtx = vec![vec![0.0; p + 1]; p + 1];
    let mut xty = vec![0.0; p + 1];
    for (k, &w) in weights.iter().enumerate() {
        let mut psi = vec![1.0];
        psi.extend_from_slice(series.window(k).as_slice());
        for i in 0..=p {
            xty[i] += w * psi[i] * series.emission(k);
            for j in 0..=p {
                xtx[i][j] += w * psi[i] * psi[j];
            }
        }
    }
    gauss_solve(xtx, xty)
}

pub fn residual_mse(series: &ObservationSeries, theta: &[f64]) -> f64 {
    let t = series.n_emissions();
    (0..t)
        .map(|k| {
            let pred = theta[0]
                + theta[1..]
                    .iter()
                    .zip(series.window(k).as_slice())
                    .map(|(a, y)| a * y)
                    .sum::<f64>();
            (series.emission(k) - pred).powi(2)
        })
        .sum::<f64>()
        / t as f64
}

/// A process with nonzero terms of every kind, including the martingale
/// increment `<beta, X_{t+1} - A X_t>`. Needs `p >= 1`.
#[derive(Debug, Clone)]
pub struct SyntheticProcess {
    pub h0: Vec<f64>,
    pub alpha: Vec<f64>,
    /// `beta[i]` is the vector used when the current regime is `i`.
    pub beta: Vec<Vec<f64>>,
    pub delta: Vec<f64>,
}

impl SyntheticProcess {
    pub fn random(seed: u64, n: usize) -> Self {
        let mut rng = SimRng::new(seed);
        let mut draw = || 2.0 * rng.uniform() - 1.0;
        Self {
            h0: (0..n).map(|_| draw()).collect(),
            alpha: (0..n).map(|_| draw()).collect(),
            beta: (0..n).map(|_| (0..n).map(|_| 3.0 * draw()).collect()).collect(),
            delta: (0..n).map(|_| draw()).collect(),
        }
    }
}

impl AdaptedProcess for SyntheticProcess {
    fn initial(&self, regime: usize) -> f64 {
        self.h0[regime]
    }
    fn alpha(&self, regime: usize, lags: &[f64]) -> f64 {
        self.alpha[regime] * (1.0 + lags[0])
    }
    fn beta(&self, regime: usize, lags: &[f64]) -> Vec<f64> {
        self.beta[regime].iter().map(|b| b * (0.5 + lags[0].cos())).collect()
    }
    fn delta(&self, regime: usize, lags: &[f64]) -> f64 {
        self.delta[regime] * lags[0]
    }
    fn f(&self, y: f64) -> f64 {
        y.sin() + y * y
    }
}

/// Same process with only the martingale-increment term.
#[derive(Debug, Clone)]
pub struct BetaOnly(pub SyntheticProcess);

impl AdaptedProcess for BetaOnly {
    fn initial(&self, _: usize) -> f64 {
        0.0
    }
    fn alpha(&self, _: usize, _: &[f64]) -> f64 {
        0.0
    }
    fn beta(&self, regime: usize, lags: &[f64]) -> Vec<f64> {
        self.0.beta(regime, lags)
    }
    fn delta(&self, _: usize, _: &[f64]) -> f64 {
        0.0
    }
    fn f(&self, _: f64) -> f64 {
        0.0
    }
}
