//! Synthetic classification data with controllable concept signals.
//!
//! Every sample is a flat vector of `d1·d2` features:
//!
//! ```text
//! x = class pattern(y) + Σ_{concept present} strength · 1[signal dims] + N(0, σ²)
//! ```
//!
//! The class pattern adds `class_strength` to the `y`-th block of
//! `class_dims`. Concept presence is a Bernoulli draw whose conditional rate
//! given `1[y = k]` is chosen so that the phi coefficient between the two
//! indicators equals the requested confound correlation.

mod file;

pub use file::{read_dataset, write_dataset};

use std::collections::BTreeMap;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::cav::RunSource;
use crate::error::{Error, Result};
use crate::seed::{self, derive_seed, stream_seed};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct ConceptGenSpec {
    pub name: String,
    pub signal_dims: Vec<usize>,
    pub signal_strength: f64,
    pub presence_rate: f64,
    /// `(class, ρ)`: target correlation between presence and `1[y = class]`.
    pub confound_with_class: Option<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub input_dims: (usize, usize),
    pub num_classes: usize,
    pub class_dims: Vec<usize>,
    pub class_strength: f64,
    pub noise_sigma: f64,
    pub concepts: Vec<ConceptGenSpec>,
    /// Train / validation fractions; the test split takes the rest.
    pub split: (f64, f64),
}

impl DatasetSpec {
    pub fn input_len(&self) -> usize {
        self.input_dims.0 * self.input_dims.1
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.input_len();
        if d == 0 || self.num_classes < 2 {
            return Err(Error::Spec("need positive input dims and at least two classes".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Spec(format!("noise sigma {} must be non-negative", self.noise_sigma)));
        }
        let (tr, va) = self.split;
        if !(tr > 0.0 && va > 0.0 && tr + va < 1.0) {
            return Err(Error::Spec(format!("split fractions ({tr}, {va}) leave no test split")));
        }
        if self.class_dims.len() < self.num_classes {
            return Err(Error::Spec(format!(
                "{} class dims cannot carry {} class patterns",
                self.class_dims.len(),
                self.num_classes
            )));
        }
        let mut owner: BTreeMap<usize, &str> = BTreeMap::new();
        for &c in &self.class_dims {
            if c >= d {
                return Err(Error::Spec(format!("class dim {c} outside input of {d}")));
            }
            if owner.insert(c, "class pattern").is_some() {
                return Err(Error::Spec(format!("class dim {c} listed twice")));
            }
        }
        let mut names = std::collections::BTreeSet::new();
        for c in &self.concepts {
            if !names.insert(c.name.as_str()) {
                return Err(Error::Spec(format!("duplicate concept name '{}'", c.name)));
            }
            if !(0.0..=1.0).contains(&c.presence_rate) {
                return Err(Error::Spec(format!("presence rate of '{}' outside [0,1]", c.name)));
            }
            for &dim in &c.signal_dims {
                if dim >= d {
                    return Err(Error::Spec(format!("signal dim {dim} of '{}' outside input of {d}", c.name)));
                }
                if let Some(prev) = owner.insert(dim, &c.name) {
                    return Err(Error::Spec(format!(
                        "signal dim {dim} of '{}' overlaps '{prev}'",
                        c.name
                    )));
                }
            }
            if let Some((k, rho)) = c.confound_with_class {
                if k >= self.num_classes {
                    return Err(Error::Spec(format!("'{}' confounded with unknown class {k}", c.name)));
                }
                if !(-1.0..=1.0).contains(&rho) {
                    return Err(Error::Spec(format!("'{}' correlation {rho} outside [-1,1]", c.name)));
                }
                self.conditional_rates(c)?;
            }
        }
        Ok(())
    }

    /// `(P(present | y = k), P(present | y ≠ k))` for a concept.
    fn conditional_rates(&self, c: &ConceptGenSpec) -> Result<(f64, f64)> {
        let p = c.presence_rate;
        let Some((_, rho)) = c.confound_with_class else {
            return Ok((p, p));
        };
        let q = 1.0 / self.num_classes as f64;
        let joint = p * q + rho * (p * (1.0 - p) * q * (1.0 - q)).sqrt();
        let in_class = joint / q;
        let out_class = (p - joint) / (1.0 - q);
        let ok = |r: f64| (-1e-12..=1.0 + 1e-12).contains(&r);
        if !ok(in_class) || !ok(out_class) {
            return Err(Error::Spec(format!(
                "correlation {rho} unreachable for '{}' at presence rate {p} with {} classes",
                c.name, self.num_classes
            )));
        }
        Ok((in_class.clamp(0.0, 1.0), out_class.clamp(0.0, 1.0)))
    }

    /// Noise-free mean of a sample with this label and concept presence.
    pub fn clean_signal(&self, label: usize, present: &[bool]) -> Tensor {
        let mut x = vec![0.0; self.input_len()];
        let block = self.class_dims.len() / self.num_classes;
        for &d in &self.class_dims[label * block..(label + 1) * block] {
            x[d] += self.class_strength;
        }
        for (c, &on) in self.concepts.iter().zip(present) {
            if on {
                for &d in &c.signal_dims {
                    x[d] += c.signal_strength;
                }
            }
        }
        Tensor::vector(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub(crate) fn tag(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Validation => 1,
            Split::Test => 2,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Split::Train),
            1 => Some(Split::Validation),
            2 => Some(Split::Test),
            _ => None,
        }
    }
}

/// Generated samples with labels, split membership and concept annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub input_dims: (usize, usize),
    pub num_classes: usize,
    pub concept_names: Vec<String>,
    pub features: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub splits: Vec<Split>,
    /// `annotations[i][c]`: concept `c` present in sample `i`.
    pub annotations: Vec<Vec<bool>>,
}

/// Samples `n` points from `spec`. Deterministic in `seed`.
pub fn generate(spec: &DatasetSpec, n: usize, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::Input("sample count must be at least 1".into()));
    }
    let rates = spec
        .concepts
        .iter()
        .map(|c| spec.conditional_rates(c))
        .collect::<Result<Vec<_>>>()?;
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::Spec(e.to_string()))?;
    let mut rng = seed::rng(stream_seed(seed, "samples"));

    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut annotations = Vec::with_capacity(n);
    for _ in 0..n {
        let y = rng.random_range(0..spec.num_classes);
        let present: Vec<bool> = spec
            .concepts
            .iter()
            .zip(&rates)
            .map(|(c, &(in_k, out_k))| {
                let hit = c.confound_with_class.is_some_and(|(k, _)| k == y);
                rng.random_bool(if hit { in_k } else { out_k })
            })
            .collect();
        let clean = spec.clean_signal(y, &present);
        let x: Vec<f64> = clean.data().iter().map(|&m| m + noise.sample(&mut rng)).collect();
        features.push(Tensor::new(vec![spec.input_dims.0, spec.input_dims.1], x)?);
        labels.push(y);
        annotations.push(present);
    }

    let mut order: Vec<usize> = (0..n).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut seed::rng(stream_seed(seed, "splits")));
    let n_train = (spec.split.0 * n as f64).round() as usize;
    let n_val = (spec.split.1 * n as f64).round() as usize;
    let mut splits = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        splits[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Validation
        } else {
            Split::Test
        };
    }

    Ok(Dataset {
        input_dims: spec.input_dims,
        num_classes: spec.num_classes,
        concept_names: spec.concepts.iter().map(|c| c.name.clone()).collect(),
        features,
        labels,
        splits,
        annotations,
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn concept_index(&self, name: &str) -> Result<usize> {
        self.concept_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Input(format!("concept '{name}' is not annotated in this dataset")))
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    /// `(x, y)` pairs of one split, in sample order.
    pub fn labeled(&self, split: Split) -> Vec<(Tensor, usize)> {
        self.indices(split)
            .into_iter()
            .map(|i| (self.features[i].clone(), self.labels[i]))
            .collect()
    }

    /// Phi coefficient between presence of `concept` and `1[y = class]`.
    pub fn concept_class_correlation(&self, concept: usize, class: usize) -> f64 {
        let n = self.len() as f64;
        let (mut a, mut b, mut ab) = (0.0, 0.0, 0.0);
        for i in 0..self.len() {
            let c = f64::from(u8::from(self.annotations[i][concept]));
            let y = f64::from(u8::from(self.labels[i] == class));
            a += c;
            b += y;
            ab += c * y;
        }
        let (pa, pb) = (a / n, b / n);
        let denom = (pa * (1.0 - pa) * pb * (1.0 - pb)).sqrt();
        if denom == 0.0 {
            0.0
        } else {
            (ab / n - pa * pb) / denom
        }
    }

    fn pool(&self, split: Split, pred: impl Fn(usize) -> bool) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split && pred(i)).collect()
    }

    fn draw(&self, pool: &[usize], n: usize, rng: &mut seed::Rng) -> Vec<usize> {
        (0..n).map(|_| pool[rng.random_range(0..pool.len())]).collect()
    }

    fn tensors(&self, ids: &[usize]) -> Vec<Tensor> {
        ids.iter().map(|&i| self.features[i].clone()).collect()
    }
}

/// Sample ids behind a [`ConceptProbeSet`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProbeIds {
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
    pub evaluation: BTreeMap<usize, Vec<usize>>,
}

/// Positive/negative examples for one concept plus class-wise evaluation
/// samples drawn from the held-out test split.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptProbeSet {
    pub name: String,
    pub positives: Vec<Tensor>,
    pub negatives: Vec<Tensor>,
    pub evaluation: BTreeMap<usize, Vec<Tensor>>,
    pub ids: ProbeIds,
}

impl ConceptProbeSet {
    pub fn evaluation_for(&self, class: usize) -> Result<&[Tensor]> {
        self.evaluation
            .get(&class)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Input(format!("probe set '{}' has no evaluation samples for class {class}", self.name)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProbeSizes {
    pub positives: usize,
    pub negatives: usize,
    pub eval_per_class: usize,
}

impl Default for ProbeSizes {
    fn default() -> Self {
        Self {
            positives: 200,
            negatives: 200,
            eval_per_class: 200,
        }
    }
}

/// Concept positives/negatives sampled with replacement from the validation
/// split, evaluation samples per class from the test split.
pub fn build_probe_set(dataset: &Dataset, concept: &str, sizes: ProbeSizes, seed: u64) -> Result<ConceptProbeSet> {
    if sizes.positives == 0 || sizes.negatives == 0 || sizes.eval_per_class == 0 {
        return Err(Error::Input("probe set sizes must be positive".into()));
    }
    let c = dataset.concept_index(concept)?;
    let pos_pool = dataset.pool(Split::Validation, |i| dataset.annotations[i][c]);
    let neg_pool = dataset.pool(Split::Validation, |i| !dataset.annotations[i][c]);
    check_pool(&format!("positives of '{concept}'"), sizes.positives, pos_pool.len())?;
    check_pool(&format!("negatives of '{concept}'"), sizes.negatives, neg_pool.len())?;

    let mut rng = seed::rng(seed);
    let positives = dataset.draw(&pos_pool, sizes.positives, &mut rng);
    let negatives = dataset.draw(&neg_pool, sizes.negatives, &mut rng);
    let mut evaluation = BTreeMap::new();
    for k in 0..dataset.num_classes {
        let pool = dataset.pool(Split::Test, |i| dataset.labels[i] == k);
        if pool.is_empty() {
            return Err(Error::InsufficientData {
                what: format!("test samples of class {k}"),
                requested: sizes.eval_per_class,
                available: 0,
            });
        }
        evaluation.insert(k, dataset.draw(&pool, sizes.eval_per_class, &mut rng));
    }

    Ok(ConceptProbeSet {
        name: concept.to_string(),
        positives: dataset.tensors(&positives),
        negatives: dataset.tensors(&negatives),
        evaluation: evaluation.iter().map(|(&k, ids)| (k, dataset.tensors(ids))).collect(),
        ids: ProbeIds {
            positives,
            negatives,
            evaluation,
        },
    })
}

fn check_pool(what: &str, requested: usize, available: usize) -> Result<()> {
    if available < requested {
        return Err(Error::InsufficientData {
            what: what.to_string(),
            requested,
            available,
        });
    }
    Ok(())
}

/// Uniform sample (with replacement) of `n` validation ids for run
/// `run_index`; the run's seed is derived from `(seed, run_index)`.
pub fn build_random_set(dataset: &Dataset, n: usize, seed: u64, run_index: usize) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::Input("random set size must be positive".into()));
    }
    let pool = dataset.indices(Split::Validation);
    if pool.is_empty() {
        return Err(Error::InsufficientData {
            what: "validation samples".into(),
            requested: n,
            available: 0,
        });
    }
    let mut rng = seed::rng(derive_seed(seed, run_index as u64));
    Ok(dataset.draw(&pool, n, &mut rng))
}

/// Fresh concept positives and negatives from the validation pools on
/// every run.
#[derive(Debug, Clone)]
pub struct ConceptPoolSource<'a> {
    dataset: &'a Dataset,
    concept: String,
    positives: Vec<usize>,
    negatives: Vec<usize>,
    n_pos: usize,
    n_neg: usize,
}

impl<'a> ConceptPoolSource<'a> {
    pub fn new(dataset: &'a Dataset, concept: &str, n_pos: usize, n_neg: usize) -> Result<Self> {
        if n_pos == 0 || n_neg == 0 {
            return Err(Error::Input("per-run set sizes must be positive".into()));
        }
        let c = dataset.concept_index(concept)?;
        let positives = dataset.pool(Split::Validation, |i| dataset.annotations[i][c]);
        let negatives = dataset.pool(Split::Validation, |i| !dataset.annotations[i][c]);
        check_pool(&format!("positives of '{concept}'"), n_pos, positives.len())?;
        check_pool(&format!("negatives of '{concept}'"), n_neg, negatives.len())?;
        Ok(Self {
            dataset,
            concept: concept.to_string(),
            positives,
            negatives,
            n_pos,
            n_neg,
        })
    }
}

impl RunSource for ConceptPoolSource<'_> {
    fn name(&self) -> &str {
        &self.concept
    }

    fn draw(&self, run_seed: u64) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
        let mut rng = seed::rng(run_seed);
        let pos = self.dataset.draw(&self.positives, self.n_pos, &mut rng);
        let neg = self.dataset.draw(&self.negatives, self.n_neg, &mut rng);
        Ok((self.dataset.tensors(&pos), self.dataset.tensors(&neg)))
    }
}

/// Random-vs-random pairs: the null distribution for significance tests.
#[derive(Debug, Clone)]
pub struct RandomPairSource<'a> {
    dataset: &'a Dataset,
    n: usize,
}

impl<'a> RandomPairSource<'a> {
    pub fn new(dataset: &'a Dataset, n: usize) -> Result<Self> {
        build_random_set(dataset, n, 0, 0)?;
        Ok(Self { dataset, n })
    }
}

impl RunSource for RandomPairSource<'_> {
    fn name(&self) -> &str {
        "random"
    }

    fn draw(&self, run_seed: u64) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
        let a = build_random_set(self.dataset, self.n, run_seed, 0)?;
        let b = build_random_set(self.dataset, self.n, run_seed, 1)?;
        Ok((self.dataset.tensors(&a), self.dataset.tensors(&b)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn concept(name: &str, dims: std::ops::Range<usize>, confound: Option<(usize, f64)>) -> ConceptGenSpec {
        ConceptGenSpec {
            name: name.into(),
            signal_dims: dims.collect(),
            signal_strength: 2.0,
            presence_rate: 0.5,
            confound_with_class: confound,
        }
    }

    fn spec() -> DatasetSpec {
        DatasetSpec {
            input_dims: (4, 8),
            num_classes: 2,
            class_dims: (0..8).collect(),
            class_strength: 1.0,
            noise_sigma: 0.5,
            concepts: vec![
                concept("necktie", 8..12, Some((0, 0.99))),
                concept("plain", 12..16, None),
                concept("anti", 16..20, Some((1, -0.4))),
            ],
            split: (0.7, 0.15),
        }
    }

    #[test]
    fn requested_correlations_are_realised() {
        let ds = generate(&spec(), 5000, 1).unwrap();
        let necktie = ds.concept_class_correlation(0, 0);
        assert!(necktie >= 0.9 && (necktie - 0.99).abs() <= 0.05, "necktie r = {necktie}");
        let plain = ds.concept_class_correlation(1, 0);
        assert!(plain.abs() <= 0.05, "independent r = {plain}");
        let anti = ds.concept_class_correlation(2, 1);
        assert!((anti + 0.4).abs() <= 0.05, "anti r = {anti}");
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(generate(&spec(), 300, 9).unwrap(), generate(&spec(), 300, 9).unwrap());
        assert_ne!(generate(&spec(), 300, 9).unwrap(), generate(&spec(), 300, 10).unwrap());
    }

    #[test]
    fn overlapping_signal_dims_rejected() {
        let mut s = spec();
        s.concepts[1].signal_dims = vec![11, 12];
        assert!(matches!(generate(&s, 10, 0), Err(Error::Spec(_))));
        let mut s = spec();
        s.concepts[0].signal_dims = vec![3];
        assert!(matches!(generate(&s, 10, 0), Err(Error::Spec(_))));
    }

    #[test]
    fn unreachable_correlation_rejected() {
        let mut s = spec();
        s.concepts[0].presence_rate = 0.05;
        assert!(matches!(s.validate(), Err(Error::Spec(_))));
        let mut s = spec();
        s.concepts[0].confound_with_class = Some((0, 1.5));
        assert!(s.validate().is_err());
    }

    #[test]
    fn splits_partition_and_follow_ratios() {
        let ds = generate(&spec(), 2000, 4).unwrap();
        let tr = ds.indices(Split::Train).len();
        let va = ds.indices(Split::Validation).len();
        let te = ds.indices(Split::Test).len();
        assert_eq!(tr + va + te, 2000);
        assert_eq!((tr, va), (1400, 300));
    }

    #[test]
    fn annotations_match_injected_signal() {
        let s = spec();
        let ds = generate(&s, 3000, 2).unwrap();
        // residual after removing the clean mean must look like N(0, 0.5²)
        let mut sum = 0.0;
        let mut sq = 0.0;
        let mut count = 0.0;
        for i in 0..ds.len() {
            let clean = s.clean_signal(ds.labels[i], &ds.annotations[i]);
            let r = ds.features[i].flatten().sub(&clean).unwrap();
            for &v in r.data() {
                assert!(v.abs() < 6.0 * s.noise_sigma, "sample {i} residual {v}");
                sum += v;
                sq += v * v;
                count += 1.0;
            }
        }
        let mean = sum / count;
        let sd = (sq / count - mean * mean).sqrt();
        assert!(mean.abs() < 0.01 && (sd - 0.5).abs() < 0.01, "mean {mean} sd {sd}");
    }

    #[test]
    fn probe_set_sizes_membership_and_disjointness() {
        let ds = generate(&spec(), 4000, 3).unwrap();
        let probe = build_probe_set(&ds, "necktie", ProbeSizes::default(), 11).unwrap();
        assert_eq!(probe.positives.len(), 200);
        assert_eq!(probe.negatives.len(), 200);
        let c = ds.concept_index("necktie").unwrap();
        assert!(probe.ids.positives.iter().all(|&i| ds.annotations[i][c] && ds.splits[i] == Split::Validation));
        assert!(probe.ids.negatives.iter().all(|&i| !ds.annotations[i][c] && ds.splits[i] == Split::Validation));
        for (k, ids) in &probe.ids.evaluation {
            assert_eq!(ids.len(), 200);
            assert!(ids.iter().all(|&i| ds.labels[i] == *k && ds.splits[i] == Split::Test));
            assert!(ids.iter().all(|i| !probe.ids.positives.contains(i) && !probe.ids.negatives.contains(i)));
        }
    }

    #[test]
    fn probe_set_errors() {
        let ds = generate(&spec(), 400, 3).unwrap();
        let zero = ProbeSizes {
            positives: 0,
            ..ProbeSizes::default()
        };
        assert!(matches!(build_probe_set(&ds, "necktie", zero, 0), Err(Error::Input(_))));
        assert!(matches!(
            build_probe_set(&ds, "necktie", ProbeSizes::default(), 0),
            Err(Error::InsufficientData { .. })
        ));
        assert!(build_probe_set(&ds, "nope", ProbeSizes::default(), 0).is_err());
    }

    #[test]
    fn random_sets_per_run() {
        let ds = generate(&spec(), 2000, 5).unwrap();
        let a = build_random_set(&ds, 100, 7, 0).unwrap();
        let b = build_random_set(&ds, 100, 7, 1).unwrap();
        assert_ne!(a, b);
        assert_eq!(a, build_random_set(&ds, 100, 7, 0).unwrap());
        assert!(a.iter().all(|&i| ds.splits[i] == Split::Validation));
    }

    #[test]
    fn random_set_class_frequencies_are_uniform() {
        // multinomial oracle: each class count within 3σ of n·p_k
        let ds = generate(&spec(), 6000, 6).unwrap();
        let val = ds.indices(Split::Validation);
        let n = 5000;
        let ids = build_random_set(&ds, n, 21, 3).unwrap();
        for k in 0..ds.num_classes {
            let p = val.iter().filter(|&&i| ds.labels[i] == k).count() as f64 / val.len() as f64;
            let count = ids.iter().filter(|&&i| ds.labels[i] == k).count() as f64;
            let sigma = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((count - n as f64 * p).abs() <= 3.0 * sigma, "class {k}: {count} vs {}", n as f64 * p);
        }
    }
}
