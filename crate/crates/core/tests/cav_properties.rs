mod common;

use common::*;
use etcav_core::cav::{
    extract_cav_runs, extract_cav_runs_with, signal_cav, svm_cav, CavOptions, ClassifierKind, LatentDataset, SvmConfig,
};
use etcav_core::seed;
use etcav_core::synthdata::{build_probe_set, ConceptPoolSource, ProbeSizes};
use etcav_core::Tensor;
use proptest::prelude::*;
use rand::Rng;

fn latent(seed: u64, dim: usize, n_pos: usize, n_neg: usize) -> LatentDataset {
    let mut rng = seed::rng(seed);
    let mut rows = Vec::new();
    for i in 0..n_pos + n_neg {
        let label = i < n_pos;
        let offset = if label { 0.7 } else { -0.4 };
        let h = random_vec(&mut rng, dim, 1.0).into_iter().map(|v| v + offset).collect();
        rows.push((Tensor::vector(h), label));
    }
    LatentDataset::new(rows).unwrap()
}

fn mapped(data: &LatentDataset, f: impl Fn(&Tensor, bool) -> (Tensor, bool)) -> LatentDataset {
    LatentDataset::new(data.rows().iter().map(|(h, t)| f(h, *t)).collect()).unwrap()
}

/// Plain two-pass class means.
fn mean_difference(data: &LatentDataset) -> Vec<f64> {
    let mut sums = [vec![0.0; data.dim()], vec![0.0; data.dim()]];
    let mut counts = [0.0; 2];
    for (h, t) in data.rows() {
        let side = usize::from(*t);
        counts[side] += 1.0;
        for (s, v) in sums[side].iter_mut().zip(h.data()) {
            *s += v;
        }
    }
    (0..data.dim()).map(|j| sums[1][j] / counts[1] - sums[0][j] / counts[0]).collect()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    let scale = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * scale)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn signal_cav_is_the_mean_difference(seed in any::<u64>(), dim in 1usize..12, n_pos in 1usize..40, n_neg in 1usize..40) {
        let data = latent(seed, dim, n_pos, n_neg);
        let v = signal_cav(&data).unwrap();
        prop_assert!(close(v.data(), &mean_difference(&data), 1e-12));
    }

    #[test]
    fn signal_cav_ignores_shifts(seed in any::<u64>(), dim in 1usize..12, shift in -1e3f64..1e3) {
        let data = latent(seed, dim, 20, 25);
        let c = Tensor::vector((0..dim).map(|j| shift * (j as f64 + 1.0).sin()).collect());
        let shifted = mapped(&data, |h, t| (h.add(&c).unwrap(), t));
        let a = signal_cav(&data).unwrap();
        let b = signal_cav(&shifted).unwrap();
        prop_assert!(close(b.data(), a.data(), 1e-12 * (1.0 + shift.abs())));
    }

    #[test]
    fn signal_cav_scales_linearly(seed in any::<u64>(), lambda in 1e-3f64..1e3) {
        let data = latent(seed, 6, 15, 15);
        let scaled = mapped(&data, |h, t| (h.scale(lambda), t));
        let a = signal_cav(&data).unwrap().scale(lambda);
        let b = signal_cav(&scaled).unwrap();
        prop_assert!(close(b.data(), a.data(), 1e-12));
    }

    #[test]
    fn signal_cav_negates_on_label_flip(seed in any::<u64>(), n_pos in 1usize..30, n_neg in 1usize..30) {
        let data = latent(seed, 5, n_pos, n_neg);
        let flipped = mapped(&data, |h, t| (h.clone(), !t));
        let a = signal_cav(&data).unwrap();
        let b = signal_cav(&flipped).unwrap();
        prop_assert!(close(b.data(), a.scale(-1.0).data(), 1e-9));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn svm_direction_survives_positive_scaling(seed in any::<u64>(), lambda in 1e-2f64..1e2) {
        let data = latent(seed, 5, 30, 30);
        let scaled = mapped(&data, |h, t| (h.scale(lambda), t));
        let cfg = SvmConfig { iters: 400, ..SvmConfig::default() };
        let a = svm_cav(&data, &cfg, seed).unwrap();
        let b = svm_cav(&scaled, &cfg, seed).unwrap();
        prop_assert!(a.vector.cosine(&b.vector).unwrap() >= 1.0 - 1e-6);
    }

    #[test]
    fn svm_label_flip_points_the_other_way(seed in any::<u64>()) {
        let data = latent(seed, 5, 30, 30);
        let flipped = mapped(&data, |h, t| (h.clone(), !t));
        let cfg = SvmConfig { iters: 400, ..SvmConfig::default() };
        let a = svm_cav(&data, &cfg, seed).unwrap();
        let b = svm_cav(&flipped, &cfg, seed).unwrap();
        prop_assert!(a.vector.cosine(&b.vector).unwrap() <= -0.999);
    }
}

#[test]
fn degenerate_latent_sets_are_rejected() {
    assert!(LatentDataset::new(vec![]).is_err());
    let one_sided = vec![(Tensor::vector(vec![1.0]), true), (Tensor::vector(vec![2.0]), true)];
    assert!(LatentDataset::new(one_sided).is_err());
    let ragged = vec![(Tensor::vector(vec![1.0]), true), (Tensor::vector(vec![2.0, 0.0]), false)];
    assert!(LatentDataset::new(ragged).is_err());
}

#[test]
fn extraction_yields_one_bundle_per_run() {
    let (ds, net) = small_setup(1);
    let probe = build_probe_set(&ds, "strong", ProbeSizes::default(), 9).unwrap();
    let layer = net.probe_layers()[0];
    for classifier in [ClassifierKind::Signal, ClassifierKind::Svm] {
        let opts = CavOptions {
            classifier,
            seed: 4,
            ..CavOptions::default()
        };
        let runs = extract_cav_runs(&net, layer, &probe, &opts).unwrap();
        assert_eq!(runs.bundles.len(), 30);
        assert!(runs.failures.is_empty());
        let mut seeds: Vec<u64> = runs.bundles.iter().map(|b| b.run_seed).collect();
        seeds.dedup();
        assert_eq!(seeds.len(), 30);
        assert!(runs.bundles.iter().all(|b| b.layer == layer && b.classifier == classifier));
        let acc = runs.mean_accuracy().unwrap();
        assert!(acc > 0.75, "{classifier:?} accuracy {acc}");
    }
}

#[test]
fn extraction_is_reproducible_and_order_independent() {
    let (ds, net) = small_setup(2);
    let probe = build_probe_set(&ds, "strong", ProbeSizes::default(), 3).unwrap();
    let layer = net.find_affine_tail().unwrap();
    let opts = CavOptions {
        classifier: ClassifierKind::Svm,
        runs: 6,
        seed: 12,
        ..CavOptions::default()
    };
    let serial = extract_cav_runs(&net, layer, &probe, &opts).unwrap();
    let again = extract_cav_runs(&net, layer, &probe, &opts).unwrap();
    let parallel = extract_cav_runs(&net, layer, &probe, &CavOptions { parallel: true, ..opts }).unwrap();
    assert_eq!(serial, again);
    assert_eq!(serial, parallel);
}

#[test]
fn a_single_run_is_refused() {
    let (ds, net) = small_setup(3);
    let probe = build_probe_set(&ds, "strong", ProbeSizes::default(), 1).unwrap();
    let opts = CavOptions {
        runs: 1,
        ..CavOptions::default()
    };
    assert!(extract_cav_runs(&net, net.probe_layers()[0], &probe, &opts).is_err());
}

#[test]
fn fresh_draws_differ_between_runs() {
    let (ds, net) = small_setup(4);
    let source = ConceptPoolSource::new(&ds, "control", 50, 50).unwrap();
    let opts = CavOptions {
        runs: 5,
        seed: rand::rng().random(),
        ..CavOptions::default()
    };
    let runs = extract_cav_runs_with(&net, net.probe_layers()[0], &source, &opts).unwrap();
    for pair in runs.bundles.windows(2) {
        assert_ne!(pair[0].vector, pair[1].vector);
    }
}
