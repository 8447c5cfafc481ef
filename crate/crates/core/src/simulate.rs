//! Seeded simulation of (hidden path, observation series) pairs.
//!
//! Output is bit-reproducible from `(model, T, seed, init_window)`:
//!
//! * Generator: ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded with
//!   `SeedableRng::seed_from_u64(seed)`.
//! * Uniforms: each draw consumes one `next_u64()` word `x` and maps it to
//!   `((x >> 11) + 0.5) / 2^53`, which lies strictly inside `(0, 1)`.
//! * Normals: inverse CDF of a uniform using Wichura's AS241 (PPND16)
//!   rational approximation, accurate to about 1e-16.
//! * Regime draws: the smallest index whose cumulative probability exceeds
//!   the uniform.
//! * Draw order: one uniform for the initial regime, then per emission one
//!   normal for the noise followed (except after the last emission) by one
//!   uniform for the next regime.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};
use crate::model::{LagWindow, ObservationSeries, SwitchingModel};

/// Portable uniform and normal variates over ChaCha8.
#[derive(Debug, Clone)]
pub struct SimRng {
    inner: ChaCha8Rng,
}

impl SimRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Uniform on the open interval `(0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
        ((self.inner.next_u64() >> 11) as f64 + 0.5) * SCALE
    }

    pub fn standard_normal(&mut self) -> f64 {
        inverse_normal_cdf(self.uniform())
    }

    /// Index drawn from the probability vector `probs`.
    pub fn categorical(&mut self, probs: &[f64]) -> usize {
        let u = self.uniform();
        let mut acc = 0.0;
        for (i, &p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        // Rounding left u above the final cumulative sum.
        probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }
}

/// Standard normal quantile, Wichura (1988) algorithm AS241 `PPND16`.
pub fn inverse_normal_cdf(p: f64) -> f64 {
    const A: [f64; 8] = [
        3.387_132_872_796_366_608,
        1.331_416_678_917_843_774_5e2,
        1.971_590_950_306_551_442_7e3,
        1.373_169_376_550_946_112_5e4,
        4.592_195_393_154_987_145_7e4,
        6.726_577_092_700_870_085_3e4,
        3.343_057_558_358_812_810_5e4,
        2.509_080_928_730_122_672_7e3,
    ];
    const B: [f64; 8] = [
        1.0,
        4.231_333_070_160_091_125_2e1,
        6.871_870_074_920_579_083e2,
        5.394_196_021_424_751_107_7e3,
        2.121_379_430_158_659_586_7e4,
        3.930_789_580_009_271_061e4,
        2.872_908_573_572_194_267_4e4,
        5.226_495_278_852_854_561e3,
    ];
    const C: [f64; 8] = [
        1.423_437_110_749_683_577_34,
        4.630_337_846_156_545_295_9,
        5.769_497_221_460_691_405_5,
        3.647_848_324_763_204_605_04,
        1.270_458_252_452_368_382_58,
        2.417_807_251_774_506_117_7e-1,
        2.272_384_498_926_918_458_33e-2,
        7.745_450_142_783_414_076_4e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.053_191_626_637_758_821_87,
        1.676_384_830_183_803_849_4,
        6.897_673_349_851_000_045_5e-1,
        1.481_039_764_274_800_745_9e-1,
        1.519_866_656_361_645_719_66e-2,
        5.475_938_084_995_344_946e-4,
        1.050_750_071_644_416_843_24e-9,
    ];
    const E: [f64; 8] = [
        6.657_904_643_501_103_777_2,
        5.463_784_911_164_114_369_9,
        1.784_826_539_917_291_335_8,
        2.965_605_718_285_048_912_3e-1,
        2.653_218_952_657_612_309_3e-2,
        1.242_660_947_388_078_438_6e-3,
        2.711_555_568_743_487_578_15e-5,
        2.010_334_399_292_288_132_65e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        5.998_322_065_558_879_376_9e-1,
        1.369_298_809_227_358_053_1e-1,
        1.487_536_129_085_061_485_25e-2,
        7.868_691_311_456_132_591e-4,
        1.846_318_317_510_054_681_8e-5,
        1.421_511_758_316_445_888_7e-7,
        2.044_263_103_389_939_785_64e-15,
    ];

    fn ratio(num: &[f64; 8], den: &[f64; 8], x: f64) -> f64 {
        let horner = |c: &[f64; 8]| c.iter().rev().fold(0.0, |acc, &k| acc * x + k);
        horner(num) / horner(den)
    }

    if !(p > 0.0 && p < 1.0) {
        return match p {
            0.0 => f64::NEG_INFINITY,
            1.0 => f64::INFINITY,
            _ => f64::NAN,
        };
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * ratio(&A, &B, r);
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let r = (-tail.ln()).sqrt();
    let x = if r <= 5.0 {
        ratio(&C, &D, r - 1.6)
    } else {
        ratio(&E, &F, r - 5.0)
    };
    if q < 0.0 {
        -x
    } else {
        x
    }
}

/// A simulated series with the regime that drove each emission.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub series: ObservationSeries,
    /// `hidden_path[k]` is the 0-based regime that drove emission `k`.
    pub hidden_path: Vec<usize>,
    pub seed: u64,
}

/// Draws `t_emissions` observations after an initial lag window (zeros by
/// default).
pub fn simulate(
    model: &SwitchingModel,
    t_emissions: usize,
    seed: u64,
    init_window: Option<LagWindow>,
) -> Result<SimOutput> {
    let p = model.ar_order();
    if t_emissions == 0 {
        return Err(Error::ContractViolation("simulation length must be at least 1".into()));
    }
    let mut window = init_window.unwrap_or_else(|| LagWindow::zeros(p));
    if window.len() != p {
        return Err(Error::DimensionMismatch {
            what: "initial window",
            expected: p,
            actual: window.len(),
        });
    }

    let mut rng = SimRng::new(seed);
    // The conditioning rows are stored oldest first.
    let mut values: Vec<f64> = window.as_slice().iter().rev().copied().collect();
    values.reserve(t_emissions);
    let mut hidden_path = Vec::with_capacity(t_emissions);

    let mut regime = rng.categorical(model.initial_dist());
    for k in 0..t_emissions {
        hidden_path.push(regime);
        let params = model.regime(regime);
        let eps = rng.standard_normal();
        let y = params.predict_mean(&window)? + params.sigma * eps;
        values.push(y);
        window.push(y);
        if k + 1 < t_emissions {
            regime = rng.categorical(model.transition().column(regime));
        }
    }

    Ok(SimOutput {
        series: ObservationSeries::new(values, p)?,
        hidden_path,
        seed,
    })
}
