use etcav_core::synthdata::{generate, read_dataset, write_dataset, ConceptGenSpec, DatasetSpec, Split};
use proptest::prelude::*;

fn spec(train: f64, val: f64, rho: f64) -> DatasetSpec {
    DatasetSpec {
        input_dims: (2, 6),
        num_classes: 3,
        class_dims: (0..6).collect(),
        class_strength: 1.0,
        noise_sigma: 0.3,
        concepts: vec![ConceptGenSpec {
            name: "c".into(),
            signal_dims: vec![6, 7, 8],
            signal_strength: 1.0,
            presence_rate: 1.0 / 3.0,
            confound_with_class: Some((2, rho)),
        }],
        split: (train, val),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn splits_partition_every_sample(n in 10usize..400, seed in any::<u64>(), train in 0.1f64..0.6, val in 0.1f64..0.3) {
        let ds = generate(&spec(train, val, 0.0), n, seed).unwrap();
        let parts = [Split::Train, Split::Validation, Split::Test].map(|s| ds.indices(s));
        prop_assert_eq!(parts.iter().map(Vec::len).sum::<usize>(), n);
        let mut all: Vec<usize> = parts.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert!(ds.labels.iter().all(|&y| y < 3));
    }

    #[test]
    fn files_round_trip(n in 1usize..60, seed in any::<u64>()) {
        let ds = generate(&spec(0.5, 0.25, 0.5), n, seed).unwrap();
        let mut bytes = Vec::new();
        write_dataset(&mut bytes, &ds).unwrap();
        prop_assert_eq!(read_dataset(bytes.as_slice()).unwrap(), ds);
    }
}

#[test]
fn perfect_confound_tracks_the_class() {
    let ds = generate(&spec(0.6, 0.2, 1.0), 3000, 3).unwrap();
    for i in 0..ds.len() {
        assert_eq!(ds.annotations[i][0], ds.labels[i] == 2);
    }
    assert!((ds.concept_class_correlation(0, 2) - 1.0).abs() < 1e-12);
}
