use std::collections::HashSet;

use miagrid::attacks::{kl_divergence_gaussians, lira_score, GaussianSummary, VarianceMode};
use miagrid::hpo::{run_hpo, EpochRange, SearchSpace};
use miagrid::models::{account_epsilon, predict_confidence, Architecture, DpSpec, Model};
use miagrid::stats::{by_adjust, clopper_pearson};
use miagrid::synthdata::{sample_population, DataSpec};
use proptest::prelude::*;

fn spec(dim: usize, classes: usize, seed: u64) -> DataSpec {
    DataSpec { dim, classes, class_separation: 2.0, noise_sigma: 1.0, seed }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn populations_are_reproducible_with_unique_ids(dim in 1usize..6, classes in 2usize..6, n in 1usize..80, seed in any::<u64>()) {
        let s = spec(dim, classes, seed);
        let a = sample_population(&s, n, "p").unwrap();
        let b = sample_population(&s, n, "p").unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.ids().iter().collect::<HashSet<_>>().len(), n);
        prop_assert!(a.labels().iter().all(|&l| l < classes));
    }

    #[test]
    fn confidences_are_distributions(dim in 1usize..5, classes in 2usize..5, hidden in 0usize..4, seed in any::<u64>(), scale in 0.1f64..50.0) {
        let arch = if hidden == 0 { Architecture::linear(dim, classes) } else { Architecture::mlp(dim, classes, hidden) };
        let weights: Vec<f64> = arch.init_weights(seed).iter().map(|w| w * scale).collect();
        let model = Model::new(arch, weights, [0; 32]).unwrap();
        let x: Vec<f64> = (0..dim).map(|i| (i as f64 - 1.5) * scale).collect();
        let p = predict_confidence(&model, &x).unwrap();
        prop_assert!(p.iter().all(|&v| v >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn kl_is_nonnegative_and_zero_on_the_diagonal(m1 in -5.0f64..5.0, v1 in 1e-3f64..10.0, m2 in -5.0f64..5.0, v2 in 1e-3f64..10.0) {
        let (a, b) = (GaussianSummary::new(m1, v1, 1), GaussianSummary::new(m2, v2, 1));
        prop_assert!(kl_divergence_gaussians(&a, &b) >= 0.0);
        prop_assert!(kl_divergence_gaussians(&a, &a).abs() <= 1e-15);
    }

    #[test]
    fn swapping_in_and_out_negates_lira(
        x in -3.0f64..3.0,
        inn in prop::collection::vec(-3.0f64..3.0, 1..12),
        out in prop::collection::vec(-3.0f64..3.0, 1..12),
    ) {
        let a = lira_score(x, &inn, &out, VarianceMode::PerExample).unwrap();
        let b = lira_score(x, &out, &inn, VarianceMode::PerExample).unwrap();
        prop_assert!((a + b).abs() <= 1e-9 * (1.0 + a.abs()));
    }

    #[test]
    fn by_adjustment_dominates_and_preserves_order(p in prop::collection::vec(0.0f64..=1.0, 1..30)) {
        let adj = by_adjust(&p).unwrap();
        for i in 0..p.len() {
            prop_assert!(adj[i] >= p[i] && adj[i] <= 1.0);
            for j in 0..p.len() {
                if p[i] <= p[j] {
                    prop_assert!(adj[i] <= adj[j]);
                }
            }
        }
    }

    #[test]
    fn clopper_pearson_brackets_the_estimate(n in 1usize..400, frac in 0.0f64..=1.0, alpha in 0.001f64..0.5) {
        let k = ((n as f64) * frac).round() as usize;
        let (lo, hi) = clopper_pearson(k, n, alpha).unwrap();
        let phat = k as f64 / n as f64;
        prop_assert!(0.0 <= lo && lo <= phat && phat <= hi && hi <= 1.0);
    }

    #[test]
    fn epsilon_is_monotone(sigma in 0.5f64..5.0, bump in 0.01f64..2.0, steps in 1usize..200, rate in 0.001f64..1.0) {
        let base = account_epsilon(sigma, steps, rate, 1e-5).unwrap();
        prop_assert!(account_epsilon(sigma + bump, steps, rate, 1e-5).unwrap() <= base + 1e-12);
        prop_assert!(account_epsilon(sigma, steps + 10, rate, 1e-5).unwrap() >= base - 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn hpo_best_is_the_maximum_and_trials_stay_in_bounds(seed in any::<u64>(), private in any::<bool>()) {
        let data = sample_population(&spec(4, 3, seed), 60, "hpo").unwrap();
        let space = SearchSpace { epochs: EpochRange::Fixed { epochs: 3 }, ..SearchSpace::with_trials(4) };
        let dp = private.then(|| DpSpec::new(8.0, 1e-5));
        let r = run_hpo(&Architecture::linear(4, 3), &data, &space, dp.as_ref(), seed).unwrap();
        let accs: Vec<f64> = r.trials.iter().map(|t| t.val_acc.unwrap_or(f64::NEG_INFINITY)).collect();
        let best = accs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let first = accs.iter().position(|&a| a == best).unwrap();
        prop_assert_eq!(r.best_trial, first);
        prop_assert_eq!(&r.best, &r.trials[first].hypers);
        prop_assert!(r.trials.iter().all(|t| space.contains(&t.hypers, data.len())));
        prop_assert_eq!(r.trials.iter().all(|t| t.hypers.is_private()), private);
    }
}
