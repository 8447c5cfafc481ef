//! Model parameterization: regimes, the hidden chain, and the per-regime
//! likelihood ratio against a standard normal reference.
//!
//! Conventions used throughout the crate:
//!
//! * Regimes are plain indices `0..N`. The regime active at time `t` drives
//!   the emission `y_{t+1}`.
//! * The transition matrix is **column-stochastic**: entry `(i, j)` is
//!   `P(next = i | current = j)`, so column `j` is the distribution of the next
//!   regime when the chain currently sits in `j`. Most HMM code uses the
//!   row-stochastic transpose; this crate does not.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default lower bound applied to every regime noise scale.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// Tolerance on column and simplex sums.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// `ln(sqrt(2 pi))`
pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Log density of the standard normal distribution.
#[inline]
pub fn log_std_normal(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

/// Coefficients and noise scale of one autoregressive regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeParams {
    /// Intercept followed by the lag coefficients `a_1..a_p`.
    pub coeffs: Vec<f64>,
    pub sigma: f64,
}

impl RegimeParams {
    pub fn new(coeffs: Vec<f64>, sigma: f64) -> Self {
        Self { coeffs, sigma }
    }

    pub fn intercept(&self) -> f64 {
        self.coeffs[0]
    }

    pub fn ar_order(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    /// Conditional mean `a_0 + sum_k a_k * lags[k-1]`.
    pub fn predict_mean(&self, window: &LagWindow) -> Result<f64> {
        if self.coeffs.len() != window.len() + 1 {
            return Err(Error::DimensionMismatch {
                what: "predict_mean window",
                expected: self.coeffs.len().saturating_sub(1),
                actual: window.len(),
            });
        }
        Ok(self.mean_unchecked(window.as_slice()))
    }

    /// Same as [`predict_mean`](Self::predict_mean) without the length check.
    #[inline]
    pub(crate) fn mean_unchecked(&self, lags: &[f64]) -> f64 {
        self.coeffs[1..]
            .iter()
            .zip(lags)
            .fold(self.coeffs[0], |acc, (a, y)| acc + a * y)
    }

    #[inline]
    pub(crate) fn log_density_unchecked(&self, y: f64, lags: &[f64]) -> f64 {
        let z = (y - self.mean_unchecked(lags)) / self.sigma;
        log_std_normal(z) - self.sigma.ln()
    }
}

/// The `p` most recent observations, most recent first.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LagWindow(Vec<f64>);

impl LagWindow {
    pub fn new(lags: Vec<f64>) -> Self {
        Self(lags)
    }

    pub fn zeros(p: usize) -> Self {
        Self(vec![0.0; p])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Shifts `y` in as the most recent value and drops the oldest.
    pub fn push(&mut self, y: f64) {
        if self.0.is_empty() {
            return;
        }
        self.0.rotate_right(1);
        self.0[0] = y;
    }
}

/// Column-stochastic transition matrix, stored by columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TransitionMatrix {
    columns: Vec<Vec<f64>>,
}

impl TransitionMatrix {
    /// Builds from columns; `columns[j][i] = P(next = i | current = j)`.
    pub fn from_columns(columns: Vec<Vec<f64>>) -> Result<Self> {
        let n = columns.len();
        if n == 0 {
            return Err(Error::InvalidModel("transition matrix is empty".into()));
        }
        for (j, col) in columns.iter().enumerate() {
            if col.len() != n {
                return Err(Error::DimensionMismatch {
                    what: "transition column",
                    expected: n,
                    actual: col.len(),
                });
            }
            if let Some(v) = col.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::InvalidModel(format!(
                    "transition column {j} has entry {v} outside [0, 1]"
                )));
            }
            let sum: f64 = col.iter().sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::InvalidModel(format!(
                    "transition column {j} sums to {sum}, not 1"
                )));
            }
        }
        Ok(Self { columns })
    }

    /// Row-stochastic input (`rows[i][j] = P(next = j | current = i)`), transposed.
    pub fn from_row_stochastic(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let columns = (0..n)
            .map(|j| {
                (0..n)
                    .map(|i| rows.get(j).and_then(|r| r.get(i)).copied().unwrap_or(f64::NAN))
                    .collect()
            })
            .collect();
        Self::from_columns(columns)
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            columns: vec![vec![1.0 / n as f64; n]; n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let columns = (0..n)
            .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Self { columns }
    }

    pub fn n(&self) -> usize {
        self.columns.len()
    }

    /// `P(next = to | current = from)`
    #[inline]
    pub fn get(&self, to: usize, from: usize) -> f64 {
        self.columns[from][to]
    }

    /// Distribution of the next regime given current regime `from`.
    #[inline]
    pub fn column(&self, from: usize) -> &[f64] {
        &self.columns[from]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    /// `A v`
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n()];
        for (col, &vj) in self.columns.iter().zip(v) {
            for (o, a) in out.iter_mut().zip(col) {
                *o += a * vj;
            }
        }
        out
    }
}

/// Full parameter set of a Markov-switching AR(p) model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelRepr", into = "ModelRepr")]
pub struct SwitchingModel {
    ar_order: usize,
    transition: TransitionMatrix,
    regimes: Vec<RegimeParams>,
    initial_dist: Vec<f64>,
}

impl SwitchingModel {
    /// Validates the parameters and clamps every sigma to [`SIGMA_FLOOR`].
    pub fn new(transition: TransitionMatrix, regimes: Vec<RegimeParams>, initial_dist: Vec<f64>) -> Result<Self> {
        Self::with_sigma_floor(transition, regimes, initial_dist, SIGMA_FLOOR)
    }

    pub fn with_sigma_floor(
        transition: TransitionMatrix,
        mut regimes: Vec<RegimeParams>,
        initial_dist: Vec<f64>,
        sigma_floor: f64,
    ) -> Result<Self> {
        let n = transition.n();
        if regimes.len() != n {
            return Err(Error::DimensionMismatch {
                what: "regimes",
                expected: n,
                actual: regimes.len(),
            });
        }
        if initial_dist.len() != n {
            return Err(Error::DimensionMismatch {
                what: "initial_dist",
                expected: n,
                actual: initial_dist.len(),
            });
        }
        if initial_dist.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::InvalidModel("initial_dist has a negative or NaN entry".into()));
        }
        let pi_sum: f64 = initial_dist.iter().sum();
        if (pi_sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::InvalidModel(format!("initial_dist sums to {pi_sum}, not 1")));
        }
        let ar_order = regimes[0].ar_order();
        if regimes[0].coeffs.is_empty() {
            return Err(Error::InvalidModel("regime 0 has no intercept".into()));
        }
        for (r, regime) in regimes.iter_mut().enumerate() {
            if regime.coeffs.len() != ar_order + 1 {
                return Err(Error::DimensionMismatch {
                    what: "regime coefficients",
                    expected: ar_order + 1,
                    actual: regime.coeffs.len(),
                });
            }
            if regime.coeffs.iter().any(|c| !c.is_finite()) {
                return Err(Error::InvalidModel(format!("regime {r} has a non-finite coefficient")));
            }
            if !(regime.sigma > 0.0) || !regime.sigma.is_finite() {
                return Err(Error::InvalidModel(format!(
                    "regime {r} sigma must be positive and finite, got {}",
                    regime.sigma
                )));
            }
            regime.sigma = regime.sigma.max(sigma_floor);
        }
        Ok(Self {
            ar_order,
            transition,
            regimes,
            initial_dist,
        })
    }

    pub fn n_regimes(&self) -> usize {
        self.regimes.len()
    }

    pub fn ar_order(&self) -> usize {
        self.ar_order
    }

    pub fn transition(&self) -> &TransitionMatrix {
        &self.transition
    }

    pub fn regimes(&self) -> &[RegimeParams] {
        &self.regimes
    }

    pub fn regime(&self, r: usize) -> &RegimeParams {
        &self.regimes[r]
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.initial_dist
    }

    fn check_index(&self, regime: usize) -> Result<()> {
        if regime >= self.n_regimes() {
            return Err(Error::ContractViolation(format!(
                "regime index {regime} out of range for {} regimes",
                self.n_regimes()
            )));
        }
        Ok(())
    }

    /// Log of the Gaussian density of `y_next` under regime `regime`.
    pub fn log_emission_density(&self, regime: usize, y_next: f64, window: &LagWindow) -> Result<f64> {
        self.check_index(regime)?;
        let mean = self.regimes[regime].predict_mean(window)?;
        let sigma = self.regimes[regime].sigma;
        Ok(log_std_normal((y_next - mean) / sigma) - sigma.ln())
    }

    /// Log of the likelihood ratio between regime `regime` and the standard
    /// normal reference density at `y_next`.
    pub fn log_gamma_factor(&self, regime: usize, y_next: f64, window: &LagWindow) -> Result<f64> {
        Ok(self.log_emission_density(regime, y_next, window)? - log_std_normal(y_next))
    }

    /// Likelihood ratio `phi((y - mu_i) / sigma_i) / (sigma_i * phi(y))`.
    pub fn gamma_factor(&self, regime: usize, y_next: f64, window: &LagWindow) -> Result<f64> {
        Ok(self.log_gamma_factor(regime, y_next, window)?.exp())
    }

    /// Log likelihood ratios for every regime, written into `out`.
    pub(crate) fn log_gammas_into(&self, y_next: f64, lags: &[f64], out: &mut [f64]) {
        let reference = log_std_normal(y_next);
        for (o, regime) in out.iter_mut().zip(&self.regimes) {
            *o = regime.log_density_unchecked(y_next, lags) - reference;
        }
    }

    pub(crate) fn log_densities_into(&self, y_next: f64, lags: &[f64], out: &mut [f64]) {
        for (o, regime) in out.iter_mut().zip(&self.regimes) {
            *o = regime.log_density_unchecked(y_next, lags);
        }
    }

    /// Replaces parameters without re-validating the simplex constraints;
    /// used by the M-step, which preserves them by construction.
    pub(crate) fn from_parts_unchecked(
        transition: TransitionMatrix,
        regimes: Vec<RegimeParams>,
        initial_dist: Vec<f64>,
    ) -> Self {
        let ar_order = regimes[0].ar_order();
        Self {
            ar_order,
            transition,
            regimes,
            initial_dist,
        }
    }

    /// Permutation that orders regimes by intercept, ties broken by sigma.
    pub fn intercept_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.n_regimes()).collect();
        order.sort_by(|&a, &b| {
            let (ra, rb) = (&self.regimes[a], &self.regimes[b]);
            ra.intercept()
                .total_cmp(&rb.intercept())
                .then(ra.sigma.total_cmp(&rb.sigma))
        });
        order
    }

    /// Relabels regimes so that `new regime k = old regime order[k]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let columns = order
            .iter()
            .map(|&from| order.iter().map(|&to| self.transition.get(to, from)).collect())
            .collect();
        Self {
            ar_order: self.ar_order,
            transition: TransitionMatrix { columns },
            regimes: order.iter().map(|&r| self.regimes[r].clone()).collect(),
            initial_dist: order.iter().map(|&r| self.initial_dist[r]).collect(),
        }
    }

    /// The same model with regimes sorted by intercept (ties by sigma).
    pub fn sorted_by_intercept(&self) -> Self {
        self.permuted(&self.intercept_order())
    }
}

/// On-disk JSON layout of a model.
#[derive(Serialize, Deserialize)]
struct ModelRepr {
    n_regimes: usize,
    ar_order: usize,
    /// Array of columns; `transition[j][i] = P(next = i | current = j)`.
    transition: Vec<Vec<f64>>,
    regimes: Vec<RegimeParams>,
    initial_dist: Vec<f64>,
}

impl TryFrom<ModelRepr> for SwitchingModel {
    type Error = Error;

    fn try_from(repr: ModelRepr) -> Result<Self> {
        if repr.transition.len() != repr.n_regimes {
            return Err(Error::DimensionMismatch {
                what: "transition columns vs n_regimes",
                expected: repr.n_regimes,
                actual: repr.transition.len(),
            });
        }
        let model = SwitchingModel::new(
            TransitionMatrix::from_columns(repr.transition)?,
            repr.regimes,
            repr.initial_dist,
        )?;
        if model.ar_order != repr.ar_order {
            return Err(Error::DimensionMismatch {
                what: "ar_order vs regime coefficients",
                expected: repr.ar_order,
                actual: model.ar_order,
            });
        }
        Ok(model)
    }
}

impl From<SwitchingModel> for ModelRepr {
    fn from(m: SwitchingModel) -> Self {
        ModelRepr {
            n_regimes: m.n_regimes(),
            ar_order: m.ar_order,
            transition: m.transition.columns,
            regimes: m.regimes,
            initial_dist: m.initial_dist,
        }
    }
}

/// Observed scalar series. The first `p` values are the conditioning window;
/// the likelihood covers the remaining `T` emissions.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSeries {
    values: Vec<f64>,
    conditioning_len: usize,
}

impl ObservationSeries {
    pub fn new(values: Vec<f64>, ar_order: usize) -> Result<Self> {
        if values.len() < ar_order + 1 {
            return Err(Error::InvalidSeries(format!(
                "{} values cannot cover a conditioning window of {ar_order} plus one emission",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidSeries(format!("value at row {i} is not finite")));
        }
        Ok(Self {
            values,
            conditioning_len: ar_order,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn conditioning_len(&self) -> usize {
        self.conditioning_len
    }

    /// Number of emissions `T`.
    pub fn n_emissions(&self) -> usize {
        self.values.len() - self.conditioning_len
    }

    /// Emission `k` (0-based), i.e. `y_{k+1}`.
    pub fn emission(&self, k: usize) -> f64 {
        self.values[self.conditioning_len + k]
    }

    pub fn emissions(&self) -> &[f64] {
        &self.values[self.conditioning_len..]
    }

    /// Regressor window preceding emission `k`, most recent first.
    pub fn window(&self, k: usize) -> LagWindow {
        let p = self.conditioning_len;
        LagWindow((0..p).map(|j| self.values[p + k - 1 - j]).collect())
    }

    pub fn conditioning_window(&self) -> LagWindow {
        self.window(0)
    }
}
