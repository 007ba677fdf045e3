mod common;

use common::*;
use etcav_core::agreement::{
    agreement_curve, cell_key, integrated_agreement_closed, integrated_agreement_numeric, thresholded_agreement,
    ConceptLibrary, CurveOptions, ScoreMap,
};
use etcav_core::cav::CavOptions;
use etcav_core::synthdata::{build_probe_set, ProbeSizes};
use etcav_core::network::{MlpArch, NetworkSpec};
use etcav_core::seed;
use proptest::collection::vec;
use proptest::prelude::*;

fn maps(pairs: &[(f64, f64)]) -> (ScoreMap, ScoreMap) {
    let a = pairs.iter().enumerate().map(|(i, p)| (format!("c{i}"), p.0)).collect();
    let b = pairs.iter().enumerate().map(|(i, p)| (format!("c{i}"), p.1)).collect();
    (a, b)
}

fn scores() -> impl Strategy<Value = Vec<(f64, f64)>> {
    vec((0.0f64..=1.0, 0.0f64..=1.0), 1..40)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn closed_form_matches_numeric_integration(pairs in scores()) {
        let (a, b) = maps(&pairs);
        let closed = integrated_agreement_closed(&a, &b).unwrap();
        let numeric = integrated_agreement_numeric(&a, &b, 1001).unwrap();
        prop_assert!((closed - numeric).abs() <= 1e-3, "{closed} vs {numeric}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn symmetric_bounded_and_reflexive(pairs in scores(), alpha in 0.0f64..=1.0) {
        let (a, b) = maps(&pairs);
        let ab = integrated_agreement_closed(&a, &b).unwrap();
        prop_assert_eq!(ab, integrated_agreement_closed(&b, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(integrated_agreement_closed(&a, &a).unwrap(), 1.0);
        prop_assert_eq!(thresholded_agreement(&a, &a, alpha).unwrap(), 1.0);
        let t = thresholded_agreement(&a, &b, alpha).unwrap();
        prop_assert_eq!(t, thresholded_agreement(&b, &a, alpha).unwrap());
        prop_assert!((0.0..=1.0).contains(&t));
    }

    #[test]
    fn adding_an_agreeing_concept_never_decreases(pairs in scores(), s in 0.0f64..=1.0) {
        let (mut a, mut b) = maps(&pairs);
        let before = integrated_agreement_closed(&a, &b).unwrap();
        a.insert("extra".into(), s);
        b.insert("extra".into(), s);
        let after = integrated_agreement_closed(&a, &b).unwrap();
        prop_assert!(after >= before - 1e-15, "{before} -> {after}");
    }
}

#[test]
fn untrained_model_curve_is_reported() {
    let (ds, _) = small_setup(5);
    let arch = MlpArch {
        input_dims: (2, 8),
        hidden: vec![16, 16, 16, 16],
        pool_window: 2,
        dropout: true,
        num_classes: 2,
    };
    let net = NetworkSpec::mlp(&arch, 77).unwrap();
    let sizes = ProbeSizes {
        positives: 60,
        negatives: 60,
        eval_per_class: 40,
    };
    let probes = ["strong", "control"]
        .iter()
        .enumerate()
        .map(|(i, c)| build_probe_set(&ds, c, sizes, seed::derive_seed(5, i as u64)).unwrap())
        .collect();
    let library = ConceptLibrary::new(probes).unwrap();
    let opts = CurveOptions {
        cav: CavOptions {
            runs: 4,
            ..CavOptions::default()
        },
        depth_window: 3,
        min_accuracy: None,
    };
    let m = agreement_curve(&net, &library, &[0, 1], &opts).unwrap();
    assert_eq!(m.reference, net.find_affine_tail().unwrap());
    let depths: Vec<usize> = m.entries.iter().map(|e| e.depth).collect();
    assert_eq!(depths, vec![0, 1, 2, 3]);
    let curve = m.curve();
    assert_eq!(curve[0], (0, 1.0));
    for e in &m.entries {
        let a = e.agreement.unwrap();
        assert!((0.0..=1.0).contains(&a));
        assert!(e.scores.contains_key(&cell_key("control", 1)));
        let mean_delta = e.deltas.values().sum::<f64>() / e.deltas.len() as f64;
        assert!((a - (1.0 - mean_delta)).abs() < 1e-12);
    }

    let too_deep = CurveOptions { depth_window: 9, ..opts };
    assert!(agreement_curve(&net, &library, &[0], &too_deep).is_err());
}
