//! Experiment configuration: a single TOML file.
//!
//! ```toml
//! seed = 7
//! classifier = "signal"        # signal | svm
//! method = "both"              # standard | etcav | both
//! runs = 30
//! alpha = 0.05
//! null = "random"              # random | chance | none
//! classes = [0, 1, 2]
//! layers = []                  # empty: probe layers within depth_window
//! depth_window = 4
//! output_dir = "out"
//!
//! [dataset]
//! n = 6000
//! input_dims = [4, 16]
//! num_classes = 3
//! class_dims = "0..24"
//! class_strength = 0.3
//! noise_sigma = 0.5
//! split = [0.7, 0.15]
//!
//! [[concept]]
//! name = "necktie"
//! dims = "24..32"              # or an explicit list
//! strength = 1.5
//! presence = 0.3333
//! confound = { class = 0, rho = 0.99 }
//! ```
//!
//! Relative paths are resolved against the directory of the config file.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use etcav_core::cav::{CavOptions, ClassifierKind};
use etcav_core::network::{MlpArch, Optimizer, TrainConfig};
use etcav_core::seed::stream_seed;
use etcav_core::synthdata::{ConceptGenSpec, DatasetSpec, ProbeSizes};
use etcav_core::tcav::Method;

/// Probing points within this many steps of the affine-tail boundary may
/// use the fast path.
pub const DEFAULT_DEPTH_WINDOW: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodChoice {
    Standard,
    Etcav,
    Both,
}

impl MethodChoice {
    pub fn methods(self) -> Vec<Method> {
        match self {
            MethodChoice::Standard => vec![Method::Standard],
            MethodChoice::Etcav => vec![Method::Etcav],
            MethodChoice::Both => vec![Method::Standard, Method::Etcav],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierChoice {
    Signal,
    Svm,
}

impl From<ClassifierChoice> for ClassifierKind {
    fn from(c: ClassifierChoice) -> Self {
        match c {
            ClassifierChoice::Signal => ClassifierKind::Signal,
            ClassifierChoice::Svm => ClassifierKind::Svm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NullChoice {
    /// Welch test against random-vs-random CAV scores.
    Random,
    /// One-sample test against 0.5.
    Chance,
    None,
}

/// How each run draws its concept and non-concept sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampling {
    /// Fixed positives against a bootstrap of the negatives.
    Fixed,
    /// Fresh draws of both sides from the validation pool.
    Pool,
}

/// Signal dimensions as a list or a half-open `"a..b"` range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Dims {
    List(Vec<usize>),
    Range(String),
}

impl Dims {
    pub fn resolve(&self) -> Result<Vec<usize>> {
        match self {
            Dims::List(v) => Ok(v.clone()),
            Dims::Range(s) => {
                let (a, b) = s
                    .split_once("..")
                    .with_context(|| format!("dimension range '{s}' is not of the form a..b"))?;
                let a: usize = a.trim().parse().with_context(|| format!("bad range start in '{s}'"))?;
                let b: usize = b.trim().parse().with_context(|| format!("bad range end in '{s}'"))?;
                if a >= b {
                    bail!("dimension range '{s}' is empty");
                }
                Ok((a..b).collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Confound {
    pub class: usize,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConceptConfig {
    pub name: String,
    pub dims: Dims,
    pub strength: f64,
    pub presence: f64,
    #[serde(default)]
    pub confound: Option<Confound>,
    #[serde(default = "default_sampling")]
    pub sampling: Sampling,
}

fn default_sampling() -> Sampling {
    Sampling::Fixed
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub n: usize,
    pub input_dims: (usize, usize),
    pub num_classes: usize,
    pub class_dims: Dims,
    pub class_strength: f64,
    pub noise_sigma: f64,
    pub split: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub positives: usize,
    pub negatives: usize,
    pub eval_per_class: usize,
    /// Size of each side of a random-vs-random pair.
    pub random_set: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        let p = ProbeSizes::default();
        Self {
            positives: p.positives,
            negatives: p.negatives,
            eval_per_class: p.eval_per_class,
            random_set: p.positives,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub hidden: Vec<usize>,
    #[serde(default = "default_pool")]
    pub pool_window: usize,
    #[serde(default)]
    pub dropout: bool,
}

fn default_pool() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub momentum: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            momentum: t.optimizer == Optimizer::SgdMomentum,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub n_eval: Vec<usize>,
    pub repeats: usize,
    /// Multipliers of every hidden width for the model-size sweep.
    pub width_factors: Vec<usize>,
    /// Evaluation samples for the per-layer and model-size comparisons.
    pub speedup_n: usize,
    pub runs: usize,
    /// Defaults to the first concept.
    pub concept: Option<String>,
    pub class: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            n_eval: vec![100, 500, 1000, 5000, 10000],
            repeats: 5,
            width_factors: vec![1, 2, 4, 8],
            speedup_n: 1000,
            runs: 30,
            concept: None,
            class: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "default_classifier")]
    pub classifier: ClassifierChoice,
    #[serde(default = "default_method")]
    pub method: MethodChoice,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_null")]
    pub null: NullChoice,
    #[serde(default)]
    pub classes: Vec<usize>,
    #[serde(default)]
    pub layers: Vec<usize>,
    #[serde(default = "default_window")]
    pub depth_window: usize,
    /// Drop CAV runs at or below this held-out accuracy.
    #[serde(default)]
    pub min_accuracy: Option<f64>,
    #[serde(default)]
    pub parallel: bool,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub dataset_file: Option<PathBuf>,
    #[serde(default)]
    pub model_file: Option<PathBuf>,
    pub dataset: DatasetConfig,
    #[serde(rename = "concept")]
    pub concepts: Vec<ConceptConfig>,
    #[serde(default)]
    pub probe: ProbeConfig,
    pub network: NetworkConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub bench: BenchConfig,
}

fn default_classifier() -> ClassifierChoice {
    ClassifierChoice::Signal
}
fn default_method() -> MethodChoice {
    MethodChoice::Standard
}
fn default_runs() -> usize {
    30
}
fn default_alpha() -> f64 {
    0.05
}
fn default_null() -> NullChoice {
    NullChoice::Random
}
fn default_window() -> usize {
    DEFAULT_DEPTH_WINDOW
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// A parsed config plus the directory its relative paths refer to.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let config = parse(&text).with_context(|| format!("invalid config {}", path.display()))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { config, base_dir })
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.config.output_dir)
    }

    pub fn dataset_path(&self) -> PathBuf {
        match &self.config.dataset_file {
            Some(p) => self.resolve(p),
            None => self.output_dir().join("dataset.etds"),
        }
    }

    pub fn model_path(&self) -> PathBuf {
        match &self.config.model_file {
            Some(p) => self.resolve(p),
            None => self.output_dir().join("model.etcv"),
        }
    }
}

pub fn parse(text: &str) -> Result<ExperimentConfig> {
    let config: ExperimentConfig = toml::from_str(text)?;
    config.validate()?;
    Ok(config)
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.runs < 2 {
            bail!("runs = {}; significance testing needs at least 2", self.runs);
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            bail!("alpha = {} outside [0, 1]", self.alpha);
        }
        if self.concepts.is_empty() {
            bail!("the concept library is empty; add at least one [[concept]]");
        }
        let mut names = BTreeSet::new();
        for c in &self.concepts {
            if !names.insert(c.name.as_str()) {
                bail!("concept '{}' is defined twice", c.name);
            }
            if c.name == "random" {
                bail!("'random' is reserved for the random-vs-random null");
            }
        }
        if let Some(name) = &self.bench.concept {
            if !names.contains(name.as_str()) {
                bail!("bench concept '{name}' is not in the concept library");
            }
        }
        for &k in self.classes.iter().chain(std::iter::once(&self.bench.class)) {
            if k >= self.dataset.num_classes {
                bail!("class {k} out of range for {} classes", self.dataset.num_classes);
            }
        }
        if let Some(m) = self.min_accuracy {
            if !(0.0..1.0).contains(&m) {
                bail!("min_accuracy = {m} outside [0, 1)");
            }
        }
        self.dataset_spec()?.validate()?;
        Ok(())
    }

    pub fn dataset_spec(&self) -> Result<DatasetSpec> {
        let concepts = self
            .concepts
            .iter()
            .map(|c| {
                Ok(ConceptGenSpec {
                    name: c.name.clone(),
                    signal_dims: c.dims.resolve().with_context(|| format!("concept '{}'", c.name))?,
                    signal_strength: c.strength,
                    presence_rate: c.presence,
                    confound_with_class: c.confound.as_ref().map(|f| (f.class, f.rho)),
                })
            })
            .collect::<Result<_>>()?;
        Ok(DatasetSpec {
            input_dims: self.dataset.input_dims,
            num_classes: self.dataset.num_classes,
            class_dims: self.dataset.class_dims.resolve().context("class_dims")?,
            class_strength: self.dataset.class_strength,
            noise_sigma: self.dataset.noise_sigma,
            concepts,
            split: self.dataset.split,
        })
    }

    pub fn arch(&self) -> MlpArch {
        MlpArch {
            input_dims: self.dataset.input_dims,
            hidden: self.network.hidden.clone(),
            pool_window: self.network.pool_window,
            dropout: self.network.dropout,
            num_classes: self.dataset.num_classes,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.train.learning_rate,
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            seed: self.stream("train"),
            optimizer: if self.train.momentum {
                Optimizer::SgdMomentum
            } else {
                Optimizer::Sgd
            },
        }
    }

    pub fn probe_sizes(&self) -> ProbeSizes {
        ProbeSizes {
            positives: self.probe.positives,
            negatives: self.probe.negatives,
            eval_per_class: self.probe.eval_per_class,
        }
    }

    pub fn cav_options(&self, seed: u64) -> CavOptions {
        CavOptions {
            classifier: self.classifier.into(),
            runs: self.runs,
            seed,
            parallel: self.parallel,
            ..CavOptions::default()
        }
    }

    /// Named sub-seed of the experiment seed.
    pub fn stream(&self, name: &str) -> u64 {
        stream_seed(self.seed, name)
    }

    pub fn classes(&self) -> Vec<usize> {
        if self.classes.is_empty() {
            (0..self.dataset.num_classes).collect()
        } else {
            self.classes.clone()
        }
    }

    /// The configuration without file locations, which do not affect results.
    pub fn without_paths(&self) -> Self {
        Self {
            output_dir: PathBuf::new(),
            dataset_file: None,
            model_file: None,
            ..self.clone()
        }
    }

    /// SHA-256 of the effective configuration, overrides included and file
    /// locations excluded.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(&self.without_paths()).expect("config serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}
