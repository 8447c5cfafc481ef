#![allow(clippy::needless_range_loop)]

mod common;

use approx::assert_relative_eq;
use common::{random_instance, random_model, weighted_ls, BetaOnly, SyntheticProcess};
use switchfit::em::{e_step, m_step_regression, m_step_transition, RegressionUpdate};
use switchfit::filter::{filter_process, run_filter, FilterState};
use switchfit::model::log_std_normal;
use switchfit::oracle::{baum_welch_estep, brute_force_posterior, brute_force_process, compare_esteps};
use switchfit::simulate::simulate;
use switchfit::{ObservationSeries, RegimeParams, SwitchingModel, TransitionMatrix};

#[test]
fn filter_matches_enumeration_on_small_instances() {
    let mut seed = 100;
    for n in 1..=3 {
        for p in 0..=2 {
            for t in [1, 2, 5, 8] {
                seed += 1;
                let (model, series) = random_instance(seed, n, p, t);
                let state = run_filter(&model, &series).unwrap();
                let stats = state.finalize().unwrap();
                let exact = brute_force_posterior(&model, &series).unwrap();
                let dev = stats.deviation_from(&exact.stats);
                assert!(dev.max() < 1e-10, "n={n} p={p} t={t}: {dev:?}");
                assert_relative_eq!(
                    state.log_likelihood(&series).unwrap(),
                    exact.log_likelihood,
                    epsilon = 1e-10
                );
            }
        }
    }
}

#[test]
fn martingale_term_matches_enumeration() {
    for seed in 0..6 {
        let (model, series) = random_instance(500 + seed, 2, 1, 6);
        let process = SyntheticProcess::random(seed, 2);
        let exact = brute_force_process(&process, &model, &series).unwrap();
        let filtered = filter_process(process.clone(), &model, &series).unwrap();
        assert_relative_eq!(filtered, exact, max_relative = 1e-10);

        // The increment term on its own is not identically zero.
        let beta_exact = brute_force_process(&BetaOnly(process.clone()), &model, &series).unwrap();
        let beta_filtered = filter_process(BetaOnly(process), &model, &series).unwrap();
        assert!(beta_exact.abs() > 1e-3, "{beta_exact}");
        assert_relative_eq!(beta_filtered, beta_exact, max_relative = 1e-10);
    }
}

#[test]
fn three_regime_martingale_term() {
    let (model, series) = random_instance(77, 3, 1, 5);
    let process = SyntheticProcess::random(3, 3);
    let exact = brute_force_process(&process, &model, &series).unwrap();
    let filtered = filter_process(process, &model, &series).unwrap();
    assert_relative_eq!(filtered, exact, max_relative = 1e-10);
}

#[test]
fn single_regime_likelihood_is_the_density_product() {
    let model = SwitchingModel::new(
        TransitionMatrix::uniform(1),
        vec![RegimeParams::new(vec![0.0], 1.0)],
        vec![1.0],
    )
    .unwrap();
    let series = ObservationSeries::new(vec![0.3, -1.2, 2.5, 0.0, 0.7], 0).unwrap();
    let ll = run_filter(&model, &series).unwrap().log_likelihood(&series).unwrap();
    let direct: f64 = series.emissions().iter().map(|&y| log_std_normal(y)).sum();
    assert_eq!(ll, direct);

    // General AR(2): conditional Gaussian log-likelihood summed directly.
    let model = SwitchingModel::new(
        TransitionMatrix::uniform(1),
        vec![RegimeParams::new(vec![0.2, 0.5, -0.3], 0.7)],
        vec![1.0],
    )
    .unwrap();
    let sim = simulate(&model, 300, 4, None).unwrap();
    let ll = run_filter(&model, &sim.series)
        .unwrap()
        .log_likelihood(&sim.series)
        .unwrap();
    let direct: f64 = (0..300)
        .map(|k| {
            let w = sim.series.window(k);
            let mean = 0.2 + 0.5 * w.as_slice()[0] - 0.3 * w.as_slice()[1];
            let z = (sim.series.emission(k) - mean) / 0.7;
            -0.5 * z * z - 0.7f64.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
        })
        .sum();
    assert_relative_eq!(ll, direct, max_relative = 1e-10);
}

#[test]
fn uninformative_regimes_give_unconditional_jump_counts() {
    let a =
        TransitionMatrix::from_columns(vec![vec![0.5, 0.3, 0.2], vec![0.1, 0.8, 0.1], vec![0.25, 0.25, 0.5]]).unwrap();
    let pi = vec![0.2, 0.5, 0.3];
    let model = SwitchingModel::new(a.clone(), vec![RegimeParams::new(vec![0.0], 1.0); 3], pi.clone()).unwrap();
    let series = ObservationSeries::new((0..40).map(|k| (k as f64 * 0.7).sin()).collect(), 0).unwrap();
    let (stats, _) = e_step(&model, &series).unwrap();

    // E[J^{rs}] = sum_k P(X_k = r) a_{sr}
    let mut marginal = pi;
    let mut expected = vec![vec![0.0; 3]; 3];
    for _ in 0..40 {
        for r in 0..3 {
            for s in 0..3 {
                expected[r][s] += marginal[r] * a.get(s, r);
            }
        }
        marginal = a.apply(&marginal);
    }
    for r in 0..3 {
        for s in 0..3 {
            assert_relative_eq!(stats.jump_hat[r][s], expected[r][s], epsilon = 1e-9);
        }
    }
}

#[test]
fn forward_only_and_baum_welch_agree_on_long_series() {
    for (seed, n, p) in [(1, 1, 0), (2, 2, 1), (3, 4, 3), (4, 3, 2)] {
        let model = random_model(seed, n, p);
        let sim = simulate(&random_model(seed + 50, n, p), 500, seed, None).unwrap();
        let report = compare_esteps(&model, &sim.series).unwrap();
        assert!(report.max_deviation < 1e-8, "n={n} p={p}: {report:?}");
        assert!(report.loglik_abs_diff < 1e-9);
    }
}

#[test]
fn regression_update_equals_explicit_weighted_least_squares() {
    for (seed, n, p) in [(10, 2, 1), (11, 3, 2), (12, 2, 3)] {
        let model = random_model(seed, n, p);
        let sim = simulate(&random_model(seed + 1, n, p), 400, seed, None).unwrap();
        let (stats, _) = e_step(&model, &sim.series).unwrap();
        let smoothed = baum_welch_estep(&model, &sim.series).unwrap().smoothed;
        for r in 0..n {
            let RegressionUpdate::Updated { theta, ridge } = m_step_regression(&stats, r, 1e-8) else {
                panic!("regression failed");
            };
            assert!(ridge.is_none());
            let direct = weighted_ls(&sim.series, &smoothed[r]);
            for (a, b) in theta.iter().zip(&direct) {
                assert!((a - b).abs() <= 1e-8 * (1.0 + b.abs()), "{theta:?} vs {direct:?}");
            }
        }
    }
}

#[test]
fn transition_update_on_nearly_observed_chain_counts_the_path() {
    let model = SwitchingModel::with_sigma_floor(
        TransitionMatrix::from_columns(vec![vec![0.7, 0.3], vec![0.4, 0.6]]).unwrap(),
        vec![RegimeParams::new(vec![1.0], 1e-4), RegimeParams::new(vec![-1.0], 1e-4)],
        vec![0.5, 0.5],
        1e-12,
    )
    .unwrap();
    let sim = simulate(&model, 300, 6, None).unwrap();
    let (stats, _) = e_step(&model, &sim.series).unwrap();
    let path = &sim.hidden_path;

    // Observed transitions plus the unobserved successor of the last regime,
    // which contributes its prior column.
    let mut counts = vec![vec![0.0; 2]; 2];
    for w in path.windows(2) {
        counts[w[0]][w[1]] += 1.0;
    }
    let last = *path.last().unwrap();
    for s in 0..2 {
        counts[last][s] += model.transition().get(s, last);
    }
    let mut warnings = Vec::new();
    let a = m_step_transition(&stats, model.transition(), &mut warnings).unwrap();
    for r in 0..2 {
        let total: f64 = counts[r].iter().sum();
        for s in 0..2 {
            assert_relative_eq!(a.get(s, r), counts[r][s] / total, epsilon = 1e-9);
        }
    }
}

#[test]
fn rescaled_filter_state_gives_identical_statistics() {
    let (model, series) = random_instance(31, 3, 2, 60);
    let plain = run_filter(&model, &series).unwrap();
    for c in [1e-3, 7.5, 1e3] {
        let mut state = FilterState::new(&model, series.conditioning_window()).unwrap();
        for (k, &y) in series.emissions().iter().enumerate() {
            state.step(&model, y).unwrap();
            if k % 17 == 5 {
                state.rescale(c);
            }
        }
        let dev = state.finalize().unwrap().deviation_from(&plain.finalize().unwrap());
        assert!(dev.max() < 1e-10, "{dev:?}");
        assert_relative_eq!(
            state.log_likelihood(&series).unwrap(),
            plain.log_likelihood(&series).unwrap(),
            epsilon = 1e-10
        );
    }
}

#[test]
fn smoothed_weights_sum_to_one() {
    let (model, series) = random_instance(8, 3, 1, 7);
    for post in [
        brute_force_posterior(&model, &series).unwrap(),
        baum_welch_estep(&model, &series).unwrap(),
    ] {
        for k in 0..series.n_emissions() {
            let total: f64 = post.smoothed.iter().map(|w| w[k]).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }
}
