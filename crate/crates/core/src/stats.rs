//! Conditional expectations of the complete-data statistics consumed by the
//! M-step, and a deviation measure used to compare E-step implementations.

use serde::Serialize;

/// Expected jump counts, occupation times and regime-weighted cross moments
/// given the whole observed series.
///
/// Layout (`N` regimes, order `p`):
///
/// * `jump_hat[r][s]`: expected transitions from `r` to `s`.
/// * `occ_hat[r]`: expected number of emissions driven by `r`.
/// * `ta_hat[r][j + 1]` for `j in -1..p`: expected `sum 1{r} y_{t-j} y_{t+1}`,
///   the `j = -1` slot holding `sum 1{r} y_{t+1}^2`.
/// * `tb_hat[r][i][j]`: expected `sum 1{r} y_{t-i} y_{t-j}`, symmetric.
/// * `tc_hat[r]`: expected `sum 1{r} y_{t+1}`.
/// * `td_hat[r][j]`: expected `sum 1{r} y_{t-j}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SufficientStats {
    pub jump_hat: Vec<Vec<f64>>,
    pub occ_hat: Vec<f64>,
    pub ta_hat: Vec<Vec<f64>>,
    pub tb_hat: Vec<Vec<Vec<f64>>>,
    pub tc_hat: Vec<f64>,
    pub td_hat: Vec<Vec<f64>>,
    pub t_emissions: usize,
}

impl SufficientStats {
    pub fn zeros(n: usize, p: usize, t_emissions: usize) -> Self {
        Self {
            jump_hat: vec![vec![0.0; n]; n],
            occ_hat: vec![0.0; n],
            ta_hat: vec![vec![0.0; p + 1]; n],
            tb_hat: vec![vec![vec![0.0; p]; p]; n],
            tc_hat: vec![0.0; n],
            td_hat: vec![vec![0.0; p]; n],
            t_emissions,
        }
    }

    pub fn n_regimes(&self) -> usize {
        self.occ_hat.len()
    }

    pub fn ar_order(&self) -> usize {
        self.td_hat.first().map_or(0, Vec::len)
    }

    /// `TA(r, j)` for `j in -1..p`.
    pub fn ta(&self, r: usize, j: isize) -> f64 {
        self.ta_hat[r][(j + 1) as usize]
    }

    /// Every statistic multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let s1 = |v: &Vec<f64>| v.iter().map(|x| x * c).collect::<Vec<_>>();
        let s2 = |m: &Vec<Vec<f64>>| m.iter().map(s1).collect::<Vec<_>>();
        Self {
            jump_hat: s2(&self.jump_hat),
            occ_hat: s1(&self.occ_hat),
            ta_hat: s2(&self.ta_hat),
            tb_hat: self.tb_hat.iter().map(s2).collect(),
            tc_hat: s1(&self.tc_hat),
            td_hat: s2(&self.td_hat),
            t_emissions: self.t_emissions,
        }
    }

    /// Sum of `jump_hat[r][s]` over destinations `s`.
    pub fn departures(&self, r: usize) -> f64 {
        self.jump_hat[r].iter().sum()
    }

    /// Checks the structural invariants; returns a description of the first
    /// violation found.
    pub fn check_invariants(&self, tol: f64) -> Result<(), String> {
        if let Some(v) = self.occ_hat.iter().find(|v| !(**v >= -tol)) {
            return Err(format!("negative occupation {v}"));
        }
        let total: f64 = self.occ_hat.iter().sum();
        if (total - self.t_emissions as f64).abs() > tol {
            return Err(format!("occupations sum to {total}, expected {}", self.t_emissions));
        }
        if let Some(v) = self.jump_hat.iter().flatten().find(|v| !(**v >= -tol)) {
            return Err(format!("negative jump count {v}"));
        }
        for (r, tb) in self.tb_hat.iter().enumerate() {
            for i in 0..tb.len() {
                for j in 0..i {
                    if tb[i][j] != tb[j][i] {
                        return Err(format!("tb_hat[{r}] not symmetric at ({i}, {j})"));
                    }
                }
            }
        }
        let all_finite = self
            .families()
            .iter()
            .all(|(_, vals)| vals.iter().all(|v| v.is_finite()));
        if !all_finite {
            return Err("non-finite statistic".into());
        }
        Ok(())
    }

    /// Flattened values of each statistic family, in a fixed order.
    pub fn families(&self) -> [(&'static str, Vec<f64>); 6] {
        let flat2 = |m: &Vec<Vec<f64>>| m.iter().flatten().copied().collect::<Vec<_>>();
        [
            ("jump", flat2(&self.jump_hat)),
            ("occ", self.occ_hat.clone()),
            ("ta", flat2(&self.ta_hat)),
            ("tb", self.tb_hat.iter().flatten().flatten().copied().collect()),
            ("tc", self.tc_hat.clone()),
            ("td", flat2(&self.td_hat)),
        ]
    }

    /// Normwise relative deviation of each family against `reference`.
    pub fn deviation_from(&self, reference: &SufficientStats) -> FamilyDeviation {
        let mine = self.families();
        let theirs = reference.families();
        let dev = |k: usize| relative_deviation(&mine[k].1, &theirs[k].1);
        FamilyDeviation {
            jump: dev(0),
            occ: dev(1),
            ta: dev(2),
            tb: dev(3),
            tc: dev(4),
            td: dev(5),
        }
    }
}

/// `max_k |a_k - b_k| / max_k |b_k|`, or the absolute deviation when the
/// reference family is identically zero. Empty families deviate by 0.
pub fn relative_deviation(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let norm = b.iter().map(|y| y.abs()).fold(0.0, f64::max);
    if norm > 0.0 {
        diff / norm
    } else {
        diff
    }
}

/// Per-family deviation between two sets of sufficient statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FamilyDeviation {
    pub jump: f64,
    pub occ: f64,
    pub ta: f64,
    pub tb: f64,
    pub tc: f64,
    pub td: f64,
}

impl FamilyDeviation {
    pub fn max(&self) -> f64 {
        [self.jump, self.occ, self.ta, self.tb, self.tc, self.td]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deviation_is_normwise() {
        assert_eq!(relative_deviation(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(relative_deviation(&[1.0, 2.5], &[1.0, 2.0]), 0.25);
        assert_eq!(relative_deviation(&[1e-3], &[0.0]), 1e-3);
        assert_eq!(relative_deviation(&[], &[]), 0.0);
        assert!(relative_deviation(&[1.0], &[]).is_infinite());
    }

    #[test]
    fn invariants_catch_bad_totals() {
        let mut s = SufficientStats::zeros(2, 1, 3);
        s.occ_hat = vec![1.0, 2.0];
        assert!(s.check_invariants(1e-9).is_ok());
        s.occ_hat = vec![1.0, 1.5];
        assert!(s.check_invariants(1e-9).is_err());
        s.occ_hat = vec![1.0, 2.0];
        s.tb_hat = vec![vec![vec![1.0]]; 2];
        assert!(s.check_invariants(1e-9).is_ok());
    }
}
