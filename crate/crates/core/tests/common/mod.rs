#![allow(dead_code)]

use etcav_core::network::{LayerSpec, MlpArch, NetworkSpec};
use etcav_core::seed;
use etcav_core::Tensor;
use rand::Rng;

pub fn random_vec(rng: &mut seed::Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn random_tensor(rng: &mut seed::Rng, n: usize) -> Tensor {
    Tensor::vector(random_vec(rng, n, 1.0))
}

/// Values bounded away from zero so a finite-difference step never
/// crosses a ReLU kink.
pub fn off_kink_tensor(rng: &mut seed::Rng, n: usize) -> Tensor {
    Tensor::vector(
        (0..n)
            .map(|_| {
                let m = rng.random_range(0.01..1.0);
                if rng.random_bool(0.5) { m } else { -m }
            })
            .collect(),
    )
}

/// Small random MLP; three hidden blocks unless `depth` says otherwise.
pub fn random_net(seed: u64, depth: usize) -> NetworkSpec {
    let mut rng = seed::rng(seed);
    let width = 2 * rng.random_range(2..6);
    let arch = MlpArch {
        input_dims: (2, rng.random_range(2..5)),
        hidden: vec![width; depth],
        pool_window: if rng.random_bool(0.5) { 2 } else { 1 },
        dropout: rng.random_bool(0.5),
        num_classes: rng.random_range(2..5),
    };
    let net = NetworkSpec::mlp(&arch, seed).unwrap();
    // Nonzero biases keep all-zero activations off the ReLU kinks.
    let layers = net
        .layers()
        .iter()
        .map(|l| match l {
            LayerSpec::Dense { weight, bias } => {
                let b = Tensor::vector(random_vec(&mut rng, bias.len(), 0.5));
                LayerSpec::dense(weight.clone(), b).unwrap()
            }
            other => other.clone(),
        })
        .collect();
    NetworkSpec::new(layers, net.input_dims(), net.num_classes()).unwrap()
}

/// Central difference of `f` at `x` along `dir`.
pub fn central_diff(f: impl Fn(&Tensor) -> f64, x: &Tensor, dir: &Tensor, h: f64) -> f64 {
    let plus = x.add(&dir.scale(h)).unwrap();
    let minus = x.sub(&dir.scale(h)).unwrap();
    (f(&plus) - f(&minus)) / (2.0 * h)
}

/// Central-difference gradient, one coordinate at a time.
pub fn numeric_grad(f: impl Fn(&Tensor) -> f64, x: &Tensor, h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut e = vec![0.0; x.len()];
            e[i] = 1.0;
            let e = Tensor::new(x.shape().to_vec(), e).unwrap();
            central_diff(&f, x, &e, h)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, floor)`.
pub fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(floor)
}

use etcav_core::network::{train, TrainConfig};
use etcav_core::synthdata::{generate, ConceptGenSpec, Dataset, DatasetSpec, Split};

fn concept(name: &str, dims: std::ops::Range<usize>, strength: f64) -> ConceptGenSpec {
    ConceptGenSpec {
        name: name.into(),
        signal_dims: dims.collect(),
        signal_strength: strength,
        presence_rate: 0.5,
        confound_with_class: None,
    }
}

/// Two classes on a 2×8 input, one strong concept and one with no signal,
/// and a small MLP trained on it.
pub fn small_setup(seed: u64) -> (Dataset, NetworkSpec) {
    let spec = DatasetSpec {
        input_dims: (2, 8),
        num_classes: 2,
        class_dims: (0..8).collect(),
        class_strength: 1.0,
        noise_sigma: 0.5,
        concepts: vec![concept("strong", 8..12, 2.0), concept("control", 12..16, 0.0)],
        split: (0.6, 0.2),
    };
    let ds = generate(&spec, 3000, seed).unwrap();
    let arch = MlpArch {
        input_dims: (2, 8),
        hidden: vec![16, 16],
        pool_window: 2,
        dropout: false,
        num_classes: 2,
    };
    let net = NetworkSpec::mlp(&arch, seed).unwrap();
    let cfg = TrainConfig {
        seed,
        epochs: 5,
        ..TrainConfig::default()
    };
    let (net, _) = train(&net, &ds.labeled(Split::Train), &cfg).unwrap();
    (ds, net)
}
