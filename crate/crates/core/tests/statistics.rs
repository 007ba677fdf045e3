mod common;

use common::small_setup;
use etcav_core::cav::{extract_cav_runs_with, CavOptions};
use etcav_core::seed;
use etcav_core::synthdata::{build_probe_set, ConceptPoolSource, ProbeSizes, RandomPairSource};
use etcav_core::tcav::stats::{mean, std_dev, two_sided_t_test};
use etcav_core::tcav::{run_tcav, Method, NullModel, TcavOptions};
use proptest::prelude::*;
use rand::Rng;

/// Under the null, the Welch test rejects at about its nominal rate.
#[test]
fn welch_test_is_calibrated_under_the_null() {
    let mut rng = seed::rng(2024);
    let trials = 2000;
    let mut rejected = 0;
    for _ in 0..trials {
        let a: Vec<f64> = (0..30).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = (0..30).map(|_| rng.random::<f64>()).collect();
        if two_sided_t_test(&a, &b).unwrap().p_value <= 0.05 {
            rejected += 1;
        }
    }
    let rate = rejected as f64 / trials as f64;
    assert!((0.03..=0.07).contains(&rate), "rejection rate {rate}");
}

proptest! {
    #[test]
    fn p_values_are_probabilities(a in proptest::collection::vec(0.0f64..1.0, 2..40), b in proptest::collection::vec(0.0f64..1.0, 2..40)) {
        let r = two_sided_t_test(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&r.p_value));
        let swapped = two_sided_t_test(&b, &a).unwrap();
        prop_assert!((r.p_value - swapped.p_value).abs() < 1e-12);
        prop_assert!(std_dev(&a) >= 0.0);
        prop_assert!(mean(&a) >= 0.0 && mean(&a) <= 1.0);
    }
}

/// A concept with no signal is rarely significant against the
/// random-vs-random null.
#[test]
fn no_signal_concept_is_mostly_insignificant() {
    let (ds, net) = small_setup(6);
    let layer = net.probe_layers()[0];
    let probe = build_probe_set(&ds, "control", ProbeSizes::default(), 1).unwrap();
    let source = ConceptPoolSource::new(&ds, "control", 100, 100).unwrap();
    let null_source = RandomPairSource::new(&ds, 100).unwrap();
    let reps = 10;
    let mut insignificant = 0;
    for rep in 0..reps {
        let opts = CavOptions {
            runs: 20,
            seed: seed::derive_seed(99, rep),
            parallel: true,
            ..CavOptions::default()
        };
        let null_opts = CavOptions {
            seed: seed::derive_seed(1234, rep),
            ..opts
        };
        let concept = extract_cav_runs_with(&net, layer, &source, &opts).unwrap();
        let null = extract_cav_runs_with(&net, layer, &null_source, &null_opts).unwrap();
        let null_bundles: Vec<_> = null.bundles.into_iter().map(|mut b| {
            b.concept = "control".into();
            b
        }).collect();
        let tcav = TcavOptions::default();
        let null_scores = run_tcav(&net, layer, &probe, 0, &null_bundles, Method::Standard, &tcav).unwrap().scores;
        let report = run_tcav(
            &net,
            layer,
            &probe,
            0,
            &concept.bundles,
            Method::Standard,
            &TcavOptions { null: NullModel::RandomScores(&null_scores), ..tcav },
        )
        .unwrap();
        if !report.significant {
            insignificant += 1;
        }
    }
    assert!(insignificant >= 9, "{insignificant}/{reps} insignificant");
}
