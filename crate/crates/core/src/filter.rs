//! Forward-only recursive filters under the reference measure.
//!
//! Under the reference measure the observations are i.i.d. standard normal
//! and the hidden chain keeps its transition matrix `A`. Every tracked
//! statistic `H` is carried as an `N`-vector whose component `i` is the
//! unnormalized expectation of `H_t 1{X_t = i}` given the observations so far.
//! One emission updates every such vector with
//!
//! ```text
//! h' = sum_i [ (h_i + alpha_i + delta_i f(y)) G_i a_i + G_i (diag(a_i) - a_i a_i^T) beta_i ]
//! ```
//!
//! where `G_i` is the likelihood ratio of regime `i` against the reference
//! density and `a_i` is column `i` of `A`. The state filter is the `H = 1`
//! case. Conditional expectations are ratios `sum(h) / sum(q)`, so after each
//! step all vectors are divided by the component sum of the state filter and
//! the log of that constant is accumulated separately.
//!
//! No backward pass is needed: after the last emission the statistic vectors
//! already hold the smoothed expectations of the full-sample sums.

use crate::error::{Error, Result};
use crate::model::{log_std_normal, LagWindow, ObservationSeries, SwitchingModel, TransitionMatrix};
use crate::stats::SufficientStats;

/// Component `i` holds the (scaled) expectation of `H_t 1{X_t = i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct StatVector(Vec<f64>);

impl StatVector {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn from_vec(v: Vec<f64>) -> Self {
        Self(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Sum over regimes, i.e. the expectation of `H_t` itself.
    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    fn scale(&mut self, c: f64) {
        self.0.iter_mut().for_each(|v| *v *= c);
    }
}

/// One application of the general update to a single statistic vector.
///
/// * `state_vec` is the current vector for `H`.
/// * `gammas[i]` is the likelihood ratio of regime `i` for the incoming
///   observation (any common positive factor may be divided out).
/// * `alpha_hat[i]`, `delta_hat[i]` are the filtered expectations of
///   `alpha_{t+1} 1{X_t = i}` and `delta_{t+1} 1{X_t = i}`.
/// * `beta_hat[i]` is the filtered expectation of the vector
///   `beta_{t+1} 1{X_t = i}`, which multiplies the martingale increment
///   `X_{t+1} - A X_t`.
/// * `f_value` is `f(y_{t+1})`.
pub fn step_generic(
    state_vec: &[f64],
    gammas: &[f64],
    transition: &TransitionMatrix,
    alpha_hat: &[f64],
    beta_hat: &[Vec<f64>],
    delta_hat: &[f64],
    f_value: f64,
) -> Result<Vec<f64>> {
    let n = transition.n();
    for (what, len) in [
        ("state vector", state_vec.len()),
        ("gammas", gammas.len()),
        ("alpha_hat", alpha_hat.len()),
        ("beta_hat", beta_hat.len()),
        ("delta_hat", delta_hat.len()),
    ] {
        if len != n {
            return Err(Error::DimensionMismatch {
                what,
                expected: n,
                actual: len,
            });
        }
    }
    if let Some(b) = beta_hat.iter().find(|b| b.len() != n) {
        return Err(Error::DimensionMismatch {
            what: "beta_hat component",
            expected: n,
            actual: b.len(),
        });
    }

    let mut out = vec![0.0; n];
    for i in 0..n {
        let a_i = transition.column(i);
        let g = gammas[i];
        let weight = (state_vec[i] + alpha_hat[i] + delta_hat[i] * f_value) * g;
        let beta = &beta_hat[i];
        // (diag(a_i) - a_i a_i^T) beta
        let a_dot_beta: f64 = a_i.iter().zip(beta).map(|(a, b)| a * b).sum();
        for k in 0..n {
            out[k] += weight * a_i[k] + g * a_i[k] * (beta[k] - a_dot_beta);
        }
    }
    Ok(out)
}

/// Writes `sum_i v_i g_i a_i` into `out`. Returns the multiply-adds used.
#[inline]
fn propagate(v: &[f64], g: &[f64], transition: &TransitionMatrix, out: &mut [f64]) -> u64 {
    out.iter_mut().for_each(|o| *o = 0.0);
    let n = v.len();
    for i in 0..n {
        let w = v[i] * g[i];
        if w == 0.0 {
            continue;
        }
        for (o, a) in out.iter_mut().zip(transition.column(i)) {
            *o += w * a;
        }
    }
    (n + n * n) as u64
}

/// Likelihood ratios divided by their maximum, written into `g`.
/// Returns the log of the divided-out maximum.
fn relative_gammas(model: &SwitchingModel, y: f64, lags: &[f64], g: &mut [f64]) -> f64 {
    model.log_gammas_into(y, lags, g);
    let max = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    g.iter_mut().for_each(|v| *v = (*v - max).exp());
    max
}

/// Packed index of `(i, j)` with `i <= j` in a row-major upper triangle of
/// side `p`.
#[inline]
fn tri_index(i: usize, j: usize, p: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * p - i * (i + 1) / 2 + j
}

/// Filter state for the state filter and every statistic the M-step needs.
#[derive(Debug, Clone)]
pub struct FilterState {
    n: usize,
    p: usize,
    q: StatVector,
    /// `r * n + s`
    jump: Vec<StatVector>,
    occ: Vec<StatVector>,
    /// `r * (p + 1) + (j + 1)` for `j in -1..p`
    ta: Vec<StatVector>,
    /// `r * p(p+1)/2 + tri_index(i, j)`; the lower triangle mirrors the upper.
    tb: Vec<StatVector>,
    tc: Vec<StatVector>,
    /// `r * p + j`
    td: Vec<StatVector>,
    log_scale: f64,
    lag_buffer: LagWindow,
    steps: usize,
    macs: u64,
    scratch: Vec<f64>,
}

impl FilterState {
    /// State filter at the prior, every statistic at zero.
    pub fn new(model: &SwitchingModel, conditioning_window: LagWindow) -> Result<Self> {
        let n = model.n_regimes();
        let p = model.ar_order();
        if conditioning_window.len() != p {
            return Err(Error::DimensionMismatch {
                what: "conditioning window",
                expected: p,
                actual: conditioning_window.len(),
            });
        }
        let zeros = |count: usize| vec![StatVector::zeros(n); count];
        Ok(Self {
            n,
            p,
            q: StatVector::from_vec(model.initial_dist().to_vec()),
            jump: zeros(n * n),
            occ: zeros(n),
            ta: zeros(n * (p + 1)),
            tb: zeros(n * p * (p + 1) / 2),
            tc: zeros(n),
            td: zeros(n * p),
            log_scale: 0.0,
            lag_buffer: conditioning_window,
            steps: 0,
            macs: 0,
            scratch: vec![0.0; n],
        })
    }

    pub fn n_regimes(&self) -> usize {
        self.n
    }

    pub fn ar_order(&self) -> usize {
        self.p
    }

    /// Normalized state filter: the distribution of the current regime given
    /// the observations so far.
    pub fn q(&self) -> &StatVector {
        &self.q
    }

    pub fn jump(&self, r: usize, s: usize) -> &StatVector {
        &self.jump[r * self.n + s]
    }

    pub fn occ(&self, r: usize) -> &StatVector {
        &self.occ[r]
    }

    /// `j in -1..p`
    pub fn ta(&self, r: usize, j: isize) -> &StatVector {
        &self.ta[r * (self.p + 1) + (j + 1) as usize]
    }

    pub fn tb(&self, r: usize, i: usize, j: usize) -> &StatVector {
        &self.tb[r * self.p * (self.p + 1) / 2 + tri_index(i, j, self.p)]
    }

    pub fn tc(&self, r: usize) -> &StatVector {
        &self.tc[r]
    }

    pub fn td(&self, r: usize, j: usize) -> &StatVector {
        &self.td[r * self.p + j]
    }

    /// Sum of the logs of all normalization constants so far.
    pub fn log_scale(&self) -> f64 {
        self.log_scale
    }

    pub fn lag_buffer(&self) -> &LagWindow {
        &self.lag_buffer
    }

    /// Number of emissions processed.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Multiply-adds spent in the recursions so far.
    pub fn macs(&self) -> u64 {
        self.macs
    }

    fn all_vectors_mut(&mut self) -> impl Iterator<Item = &mut StatVector> {
        std::iter::once(&mut self.q)
            .chain(self.jump.iter_mut())
            .chain(self.occ.iter_mut())
            .chain(self.ta.iter_mut())
            .chain(self.tb.iter_mut())
            .chain(self.tc.iter_mut())
            .chain(self.td.iter_mut())
    }

    /// Multiplies the state filter and every statistic by `c` and removes
    /// `ln c` from the log scale, leaving every conditional expectation and
    /// the likelihood unchanged.
    pub fn rescale(&mut self, c: f64) {
        assert!(c > 0.0 && c.is_finite(), "rescale factor must be positive");
        self.all_vectors_mut().for_each(|v| v.scale(c));
        self.log_scale -= c.ln();
    }

    /// Processes one emission. Returns the log of the normalization constant
    /// (the one-step predictive density ratio against the reference).
    pub fn step(&mut self, model: &SwitchingModel, y_next: f64) -> Result<f64> {
        let n = self.n;
        let p = self.p;
        let transition = model.transition();
        let mut g = vec![0.0; n];
        let log_max = relative_gammas(model, y_next, self.lag_buffer.as_slice(), &mut g);

        // Injection weights use the pre-update state filter.
        let w: Vec<f64> = self.q.0.iter().zip(&g).map(|(q, g)| q * g).collect();

        let mut q_new = vec![0.0; n];
        self.macs += propagate(&self.q.0, &g, transition, &mut q_new);
        let scale: f64 = q_new.iter().sum();
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::NumericalDegeneracy {
                step: self.steps + 1,
                scale,
            });
        }

        let lags = self.lag_buffer.as_slice().to_vec();
        let mut scratch = std::mem::take(&mut self.scratch);
        let mut macs = 0u64;

        // Statistics with an injection proportional to column r.
        let mut update = |v: &mut StatVector, r: usize, coef: f64| {
            macs += propagate(&v.0, &g, transition, &mut scratch);
            let c = w[r] * coef;
            for ((dst, src), a) in v.0.iter_mut().zip(&scratch).zip(transition.column(r)) {
                *dst = src + c * a;
            }
            macs += n as u64;
        };

        for r in 0..n {
            update(&mut self.occ[r], r, 1.0);
            update(&mut self.tc[r], r, y_next);
            update(&mut self.ta[r * (p + 1)], r, y_next * y_next);
            for j in 0..p {
                update(&mut self.ta[r * (p + 1) + j + 1], r, lags[j] * y_next);
                update(&mut self.td[r * p + j], r, lags[j]);
            }
            let base = r * p * (p + 1) / 2;
            for i in 0..p {
                for j in i..p {
                    update(&mut self.tb[base + tri_index(i, j, p)], r, lags[i] * lags[j]);
                }
            }
        }

        // Jumps r -> s inject only into component s.
        for r in 0..n {
            for s in 0..n {
                let v = &mut self.jump[r * n + s];
                macs += propagate(&v.0, &g, transition, &mut scratch);
                v.0.copy_from_slice(&scratch);
                v.0[s] += w[r] * transition.get(s, r);
                macs += 1;
            }
        }

        self.scratch = scratch;
        self.macs += macs;
        self.q.0 = q_new;

        let inv = 1.0 / scale;
        let mut count = 0u64;
        self.all_vectors_mut().for_each(|v| {
            v.scale(inv);
            count += v.0.len() as u64;
        });
        self.macs += count;

        self.lag_buffer.push(y_next);
        self.steps += 1;
        let log_increment = scale.ln() + log_max;
        self.log_scale += log_increment;
        Ok(log_increment)
    }

    /// Conditional expectations of every statistic given all observations
    /// processed so far.
    pub fn finalize(&self) -> Result<SufficientStats> {
        if self.steps == 0 {
            return Err(Error::ContractViolation(
                "finalize requires at least one processed emission".into(),
            ));
        }
        let (n, p) = (self.n, self.p);
        let norm = self.q.total();
        let hat = |v: &StatVector| v.total() / norm;
        let mut stats = SufficientStats::zeros(n, p, self.steps);
        for r in 0..n {
            for s in 0..n {
                stats.jump_hat[r][s] = hat(self.jump(r, s));
            }
            stats.occ_hat[r] = hat(&self.occ[r]);
            stats.tc_hat[r] = hat(&self.tc[r]);
            for j in -1..p as isize {
                stats.ta_hat[r][(j + 1) as usize] = hat(self.ta(r, j));
            }
            for i in 0..p {
                stats.td_hat[r][i] = hat(self.td(r, i));
                for j in 0..p {
                    stats.tb_hat[r][i][j] = hat(self.tb(r, i, j));
                }
            }
        }
        Ok(stats)
    }

    /// Log-likelihood of the processed emissions, conditional on the
    /// conditioning window: the accumulated scale plus the reference
    /// log-density of each emission.
    pub fn log_likelihood(&self, series: &ObservationSeries) -> Result<f64> {
        if series.n_emissions() != self.steps {
            return Err(Error::ContractViolation(format!(
                "filter processed {} emissions but the series has {}",
                self.steps,
                series.n_emissions()
            )));
        }
        let reference: f64 = series.emissions().iter().map(|&y| log_std_normal(y)).sum();
        Ok(self.log_scale + reference + self.q.total().ln())
    }
}

/// Runs the filter over every emission of `series`, calling `on_step` after
/// each one with the state and the log normalization constant.
pub fn run_filter_with<F>(model: &SwitchingModel, series: &ObservationSeries, mut on_step: F) -> Result<FilterState>
where
    F: FnMut(&FilterState, f64),
{
    if series.conditioning_len() != model.ar_order() {
        return Err(Error::DimensionMismatch {
            what: "series conditioning window vs model order",
            expected: model.ar_order(),
            actual: series.conditioning_len(),
        });
    }
    let mut state = FilterState::new(model, series.conditioning_window())?;
    for &y in series.emissions() {
        let inc = state.step(model, y)?;
        on_step(&state, inc);
    }
    Ok(state)
}

pub fn run_filter(model: &SwitchingModel, series: &ObservationSeries) -> Result<FilterState> {
    run_filter_with(model, series, |_, _| {})
}

/// A scalar process `H` driven by predictable terms that depend on the
/// current regime and the lag window:
///
/// `H_{t+1} = H_t + alpha + <beta, X_{t+1} - A X_t> + delta f(y_{t+1})`,
/// with `H_0` a function of the initial regime.
pub trait AdaptedProcess {
    fn initial(&self, regime: usize) -> f64;
    fn alpha(&self, regime: usize, lags: &[f64]) -> f64;
    fn beta(&self, regime: usize, lags: &[f64]) -> Vec<f64>;
    fn delta(&self, regime: usize, lags: &[f64]) -> f64;
    fn f(&self, y: f64) -> f64;
}

/// Forward-only filter for a single [`AdaptedProcess`], using the general
/// update including the martingale-increment term.
#[derive(Debug, Clone)]
pub struct ProcessFilter<P> {
    process: P,
    q: Vec<f64>,
    h: Vec<f64>,
    lag_buffer: LagWindow,
    log_scale: f64,
    steps: usize,
}

impl<P: AdaptedProcess> ProcessFilter<P> {
    pub fn new(process: P, model: &SwitchingModel, conditioning_window: LagWindow) -> Result<Self> {
        if conditioning_window.len() != model.ar_order() {
            return Err(Error::DimensionMismatch {
                what: "conditioning window",
                expected: model.ar_order(),
                actual: conditioning_window.len(),
            });
        }
        let q = model.initial_dist().to_vec();
        let h = q.iter().enumerate().map(|(i, pi)| process.initial(i) * pi).collect();
        Ok(Self {
            process,
            q,
            h,
            lag_buffer: conditioning_window,
            log_scale: 0.0,
            steps: 0,
        })
    }

    pub fn step(&mut self, model: &SwitchingModel, y_next: f64) -> Result<()> {
        let n = model.n_regimes();
        let lags = self.lag_buffer.as_slice();
        let mut g = vec![0.0; n];
        let log_max = relative_gammas(model, y_next, lags, &mut g);

        let zeros = vec![0.0; n];
        let zero_beta = vec![zeros.clone(); n];
        let q_new = step_generic(&self.q, &g, model.transition(), &zeros, &zero_beta, &zeros, 0.0)?;

        let alpha_hat: Vec<f64> = (0..n).map(|i| self.process.alpha(i, lags) * self.q[i]).collect();
        let delta_hat: Vec<f64> = (0..n).map(|i| self.process.delta(i, lags) * self.q[i]).collect();
        let beta_hat: Vec<Vec<f64>> = (0..n)
            .map(|i| self.process.beta(i, lags).into_iter().map(|b| b * self.q[i]).collect())
            .collect();
        let h_new = step_generic(
            &self.h,
            &g,
            model.transition(),
            &alpha_hat,
            &beta_hat,
            &delta_hat,
            self.process.f(y_next),
        )?;

        let scale: f64 = q_new.iter().sum();
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::NumericalDegeneracy {
                step: self.steps + 1,
                scale,
            });
        }
        self.q = q_new.into_iter().map(|v| v / scale).collect();
        self.h = h_new.into_iter().map(|v| v / scale).collect();
        self.log_scale += scale.ln() + log_max;
        self.lag_buffer.push(y_next);
        self.steps += 1;
        Ok(())
    }

    /// `E[H_t | y_1..y_t]`
    pub fn expectation(&self) -> f64 {
        self.h.iter().sum::<f64>() / self.q.iter().sum::<f64>()
    }

    pub fn log_scale(&self) -> f64 {
        self.log_scale
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }
}

/// Runs a [`ProcessFilter`] over the whole series and returns `E[H_T | Y]`.
pub fn filter_process<P: AdaptedProcess>(
    process: P,
    model: &SwitchingModel,
    series: &ObservationSeries,
) -> Result<f64> {
    let mut filter = ProcessFilter::new(process, model, series.conditioning_window())?;
    for &y in series.emissions() {
        filter.step(model, y)?;
    }
    Ok(filter.expectation())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RegimeParams;
    use approx::assert_relative_eq;

    fn two_state(p: usize) -> SwitchingModel {
        let mut c1 = vec![0.3];
        let mut c2 = vec![-0.4];
        c1.extend((0..p).map(|k| 0.4 / (k + 1) as f64));
        c2.extend((0..p).map(|k| -0.2 / (k + 1) as f64));
        SwitchingModel::new(
            TransitionMatrix::from_columns(vec![vec![0.8, 0.2], vec![0.35, 0.65]]).unwrap(),
            vec![RegimeParams::new(c1, 0.7), RegimeParams::new(c2, 1.3)],
            vec![0.6, 0.4],
        )
        .unwrap()
    }

    fn series(p: usize) -> ObservationSeries {
        let values = vec![0.2, -0.5, 1.1, 0.4, -1.3, 0.9, 0.05, -0.7, 1.6, 0.3];
        ObservationSeries::new(values, p).unwrap()
    }

    #[test]
    fn init_examples() {
        let m = two_state(1);
        let s = FilterState::new(&m, LagWindow::zeros(1)).unwrap();
        assert_eq!(s.q().as_slice(), &[0.6, 0.4]);
        assert_eq!(s.occ(0).total(), 0.0);
        assert_eq!(s.log_scale(), 0.0);
        assert_eq!(s.steps(), 0);
        assert!(FilterState::new(&m, LagWindow::zeros(2)).is_err());

        let one = SwitchingModel::new(
            TransitionMatrix::uniform(1),
            vec![RegimeParams::new(vec![0.0], 1.0)],
            vec![1.0],
        )
        .unwrap();
        let s = FilterState::new(&one, LagWindow::zeros(0)).unwrap();
        assert_eq!(s.q().as_slice(), &[1.0]);

        let three = SwitchingModel::new(
            TransitionMatrix::uniform(3),
            vec![RegimeParams::new(vec![0.0], 1.0); 3],
            vec![1.0, 0.0, 0.0],
        )
        .unwrap();
        let s = FilterState::new(&three, LagWindow::zeros(0)).unwrap();
        assert_eq!(s.q().as_slice(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn finalize_before_any_step_is_rejected() {
        let m = two_state(0);
        let s = FilterState::new(&m, LagWindow::zeros(0)).unwrap();
        assert!(matches!(s.finalize(), Err(Error::ContractViolation(_))));
    }

    #[test]
    fn generic_step_with_unit_gammas_is_chain_prediction() {
        let a = TransitionMatrix::from_columns(vec![vec![0.8, 0.2], vec![0.35, 0.65]]).unwrap();
        let v = [0.3, 1.7];
        let z = [0.0, 0.0];
        let zb = vec![vec![0.0, 0.0]; 2];
        let out = step_generic(&v, &[1.0, 1.0], &a, &z, &zb, &z, 0.0).unwrap();
        let expected = a.apply(&v);
        assert_relative_eq!(out[0], expected[0], epsilon = 1e-15);
        assert_relative_eq!(out[1], expected[1], epsilon = 1e-15);
    }

    #[test]
    fn generic_step_delta_injection_only() {
        let a = TransitionMatrix::from_columns(vec![vec![0.8, 0.2], vec![0.35, 0.65]]).unwrap();
        let q = [0.25, 0.75];
        let g = [1.4, 0.3];
        let z = [0.0, 0.0];
        let zb = vec![vec![0.0, 0.0]; 2];
        let out = step_generic(&z, &g, &a, &z, &zb, &q, 1.0).unwrap();
        for k in 0..2 {
            let expected: f64 = (0..2).map(|i| q[i] * g[i] * a.get(k, i)).sum();
            assert_relative_eq!(out[k], expected, epsilon = 1e-15);
        }
        assert!(step_generic(&z, &g, &a, &z, &zb, &[1.0], 1.0).is_err());
    }

    #[test]
    fn beta_term_preserves_total_mass() {
        // (diag(a) - a a^T) b sums to zero for a column-stochastic a.
        let a = TransitionMatrix::from_columns(vec![vec![0.8, 0.2], vec![0.35, 0.65]]).unwrap();
        let z = [0.0, 0.0];
        let b = vec![vec![1.3, -0.4], vec![0.2, 2.0]];
        let out = step_generic(&z, &[0.9, 1.1], &a, &z, &b, &z, 0.0).unwrap();
        assert!(out.iter().sum::<f64>().abs() < 1e-15);
    }

    #[test]
    fn single_regime_occupation_counts_emissions() {
        let m = SwitchingModel::new(
            TransitionMatrix::uniform(1),
            vec![RegimeParams::new(vec![0.1, 0.5], 0.8)],
            vec![1.0],
        )
        .unwrap();
        let s = series(1);
        let mut scales = Vec::new();
        let state = run_filter_with(&m, &s, |st, inc| {
            assert_eq!(st.q().as_slice(), &[1.0]);
            scales.push(inc);
        })
        .unwrap();
        let stats = state.finalize().unwrap();
        assert_relative_eq!(stats.occ_hat[0], s.n_emissions() as f64, epsilon = 1e-12);
        assert_relative_eq!(stats.jump_hat[0][0], s.n_emissions() as f64, epsilon = 1e-12);
        for (k, inc) in scales.iter().enumerate() {
            let g = m.log_gamma_factor(0, s.emission(k), &s.window(k)).unwrap();
            assert_relative_eq!(*inc, g, epsilon = 1e-12);
        }
    }

    #[test]
    fn uninformative_observations_follow_the_chain() {
        let a = TransitionMatrix::from_columns(vec![vec![0.8, 0.2], vec![0.35, 0.65]]).unwrap();
        let m = SwitchingModel::new(a.clone(), vec![RegimeParams::new(vec![0.0], 1.0); 2], vec![0.6, 0.4]).unwrap();
        let s = series(0);
        let mut prior = vec![0.6, 0.4];
        let mut expected_jumps = vec![vec![0.0; 2]; 2];
        run_filter_with(&m, &s, |st, inc| {
            for r in 0..2 {
                for sdx in 0..2 {
                    expected_jumps[r][sdx] += prior[r] * a.get(sdx, r);
                }
            }
            prior = a.apply(&prior);
            assert_relative_eq!(st.q().as_slice()[0], prior[0], epsilon = 1e-14);
            assert!(inc.abs() < 1e-14);
        })
        .unwrap();
        let stats = run_filter(&m, &s).unwrap().finalize().unwrap();
        for r in 0..2 {
            for sdx in 0..2 {
                assert_relative_eq!(stats.jump_hat[r][sdx], expected_jumps[r][sdx], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn normalized_state_and_consistency_invariants() {
        for p in 0..3 {
            let m = two_state(p);
            let s = series(p);
            let mut seen = 0;
            let state = run_filter_with(&m, &s, |st, _| {
                seen += 1;
                assert!((st.q().total() - 1.0).abs() < 1e-12);
                assert!(st.q().as_slice().iter().all(|&v| v >= 0.0));
                let occ: f64 = (0..2).map(|r| st.occ(r).total()).sum();
                assert!((occ - seen as f64).abs() < 1e-9);
                let jumps: f64 = (0..2)
                    .flat_map(|r| (0..2).map(move |k| (r, k)))
                    .map(|(r, k)| st.jump(r, k).total())
                    .sum();
                assert!((jumps - seen as f64).abs() < 1e-9);
            })
            .unwrap();
            let stats = state.finalize().unwrap();
            stats.check_invariants(1e-9).unwrap();
            for r in 0..2 {
                assert!((stats.departures(r) - stats.occ_hat[r]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn degenerate_scale_names_the_step() {
        // All prior mass on a regime whose chain column forces a move to a
        // regime with zero prior weight is fine; an observation impossible
        // under every reachable regime after underflow is not.
        let m = SwitchingModel::with_sigma_floor(
            TransitionMatrix::identity(2),
            vec![RegimeParams::new(vec![0.0], 1e-3), RegimeParams::new(vec![1e6], 1e-3)],
            vec![1.0, 0.0],
            1e-12,
        )
        .unwrap();
        let s = ObservationSeries::new(vec![0.0, 1e6], 0).unwrap();
        let err = run_filter(&m, &s).unwrap_err();
        assert!(matches!(err, Error::NumericalDegeneracy { step: 2, .. }), "{err:?}");
    }

    #[test]
    fn large_observations_do_not_overflow() {
        let m = SwitchingModel::new(
            TransitionMatrix::from_columns(vec![vec![0.9, 0.1], vec![0.1, 0.9]]).unwrap(),
            vec![
                RegimeParams::new(vec![100.0], 1.0),
                RegimeParams::new(vec![-100.0], 2.0),
            ],
            vec![0.5, 0.5],
        )
        .unwrap();
        let s = ObservationSeries::new(vec![100.5, 99.0, -101.0, -98.0, 100.0], 0).unwrap();
        let state = run_filter(&m, &s).unwrap();
        let stats = state.finalize().unwrap();
        stats.check_invariants(1e-9).unwrap();
        assert!(state.log_likelihood(&s).unwrap().is_finite());
    }

    #[test]
    fn tb_is_stored_once() {
        let m = two_state(2);
        let state = run_filter(&m, &series(2)).unwrap();
        assert_eq!(state.tb(0, 0, 1), state.tb(0, 1, 0));
        assert_eq!(tri_index(0, 0, 3), 0);
        assert_eq!(tri_index(1, 1, 3), 3);
        assert_eq!(tri_index(2, 2, 3), 5);
        assert_eq!(tri_index(2, 1, 3), 4);
    }

    #[test]
    fn rescaling_mid_run_is_invisible() {
        let m = two_state(2);
        let s = series(2);
        let plain = run_filter(&m, &s).unwrap();
        let mut state = FilterState::new(&m, s.conditioning_window()).unwrap();
        for (k, &y) in s.emissions().iter().enumerate() {
            state.step(&m, y).unwrap();
            if k == 3 {
                state.rescale(1e3);
            }
        }
        let dev = state.finalize().unwrap().deviation_from(&plain.finalize().unwrap());
        assert!(dev.max() < 1e-12, "{dev:?}");
        assert_relative_eq!(
            state.log_likelihood(&s).unwrap(),
            plain.log_likelihood(&s).unwrap(),
            epsilon = 1e-10
        );
    }

    /// The statistics written as instances of the general process, used to
    /// check the specialized injections against the general update.
    struct Indicator {
        kind: Kind,
        r: usize,
        a: TransitionMatrix,
    }

    enum Kind {
        Jump(usize),
        Occ,
        Ta(isize),
        Tb(usize, usize),
        Tc,
        Td(usize),
    }

    impl AdaptedProcess for Indicator {
        fn initial(&self, _: usize) -> f64 {
            0.0
        }
        fn alpha(&self, regime: usize, _: &[f64]) -> f64 {
            match self.kind {
                Kind::Jump(s) if regime == self.r => self.a.get(s, self.r),
                _ => 0.0,
            }
        }
        fn beta(&self, regime: usize, _: &[f64]) -> Vec<f64> {
            let n = self.a.n();
            let mut b = vec![0.0; n];
            if let Kind::Jump(s) = self.kind {
                if regime == self.r {
                    b[s] = 1.0;
                }
            }
            b
        }
        fn delta(&self, regime: usize, lags: &[f64]) -> f64 {
            if regime != self.r {
                return 0.0;
            }
            match self.kind {
                Kind::Jump(_) => 0.0,
                Kind::Occ | Kind::Tc => 1.0,
                Kind::Ta(j) if j < 0 => 1.0,
                Kind::Ta(j) => lags[j as usize],
                Kind::Tb(i, j) => lags[i] * lags[j],
                Kind::Td(j) => lags[j],
            }
        }
        fn f(&self, y: f64) -> f64 {
            match self.kind {
                Kind::Ta(j) if j < 0 => y * y,
                Kind::Ta(_) | Kind::Tc => y,
                _ => 1.0,
            }
        }
    }

    #[test]
    fn specialized_updates_match_general_update() {
        let p = 2;
        let m = two_state(p);
        let s = series(p);
        let stats = run_filter(&m, &s).unwrap().finalize().unwrap();
        let a = m.transition().clone();
        let general = |kind: Kind, r: usize| filter_process(Indicator { kind, r, a: a.clone() }, &m, &s).unwrap();
        for r in 0..2 {
            for sdx in 0..2 {
                assert_relative_eq!(
                    general(Kind::Jump(sdx), r),
                    stats.jump_hat[r][sdx],
                    max_relative = 1e-12
                );
            }
            assert_relative_eq!(general(Kind::Occ, r), stats.occ_hat[r], max_relative = 1e-12);
            assert_relative_eq!(general(Kind::Tc, r), stats.tc_hat[r], max_relative = 1e-12);
            for j in -1..p as isize {
                assert_relative_eq!(general(Kind::Ta(j), r), stats.ta(r, j), max_relative = 1e-12);
            }
            for i in 0..p {
                assert_relative_eq!(general(Kind::Td(i), r), stats.td_hat[r][i], max_relative = 1e-12);
                for j in 0..p {
                    assert_relative_eq!(general(Kind::Tb(i, j), r), stats.tb_hat[r][i][j], max_relative = 1e-12);
                }
            }
        }
    }
}
