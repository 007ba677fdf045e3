//! Concept activation vectors.
//!
//! A CAV is the normal of a linear boundary between concept and
//! non-concept activations at one layer. Two latent classifiers are
//! provided: the covariance-based [`signal_cav`] and a linear SVM
//! ([`svm_cav`]). Vectors are never normalized.

mod file;
mod svm;

pub use file::{read_bundles, write_bundles};
pub use svm::{svm_cav, SvmConfig, SvmDiagnostics, SvmFit};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::network::{LayerIndex, NetworkSpec};
use crate::seed::{self, derive_seed};
use crate::synthdata::ConceptProbeSet;
use crate::tensor::{dot_slices, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ClassifierKind {
    Signal,
    Svm,
}

impl ClassifierKind {
    pub fn name(self) -> &'static str {
        match self {
            ClassifierKind::Signal => "signal",
            ClassifierKind::Svm => "svm",
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            ClassifierKind::Signal => 0,
            ClassifierKind::Svm => 1,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(ClassifierKind::Signal),
            1 => Some(ClassifierKind::Svm),
            _ => None,
        }
    }
}

impl std::str::FromStr for ClassifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "signal" => Ok(ClassifierKind::Signal),
            "svm" => Ok(ClassifierKind::Svm),
            other => Err(Error::Input(format!("unknown classifier '{other}' (expected signal or svm)"))),
        }
    }
}

/// One CAV run.
#[derive(Debug, Clone, PartialEq)]
pub struct CavBundle {
    pub concept: String,
    pub layer: LayerIndex,
    pub vector: Tensor,
    pub classifier: ClassifierKind,
    pub heldout_accuracy: f64,
    pub run_seed: u64,
}

/// Latent activations with binary concept labels (`true` = concept).
#[derive(Debug, Clone, PartialEq)]
pub struct LatentDataset {
    rows: Vec<(Tensor, bool)>,
    dim: usize,
}

impl LatentDataset {
    pub fn new(rows: Vec<(Tensor, bool)>) -> Result<Self> {
        let Some((first, _)) = rows.first() else {
            return Err(Error::DegenerateVariance);
        };
        let dim = first.len();
        if let Some((h, _)) = rows.iter().find(|(h, _)| h.len() != dim) {
            return Err(Error::dim("latent dataset", h.shape(), &[dim]));
        }
        let pos = rows.iter().filter(|(_, t)| *t).count();
        if pos == 0 || pos == rows.len() {
            return Err(Error::DegenerateVariance);
        }
        Ok(Self { rows, dim })
    }

    /// Positives labeled `true`, negatives `false`.
    pub fn from_sets(positives: Vec<Tensor>, negatives: Vec<Tensor>) -> Result<Self> {
        let rows = positives
            .into_iter()
            .map(|h| (h, true))
            .chain(negatives.into_iter().map(|h| (h, false)))
            .collect();
        Self::new(rows)
    }

    pub fn rows(&self) -> &[(Tensor, bool)] {
        &self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// `v = (1 / (σ_t² |X|)) Σ (h − h̄)(t − t̄)` with the population variance
/// of the labels.
///
/// The mean is accumulated relative to the first row, so identical rows
/// give an exact zero vector.
pub fn signal_cav(data: &LatentDataset) -> Result<Tensor> {
    let n = data.len() as f64;
    let m = data.dim();
    let t_bar = data.rows.iter().filter(|(_, t)| *t).count() as f64 / n;
    let var_t = t_bar * (1.0 - t_bar);
    if var_t <= 0.0 {
        return Err(Error::DegenerateVariance);
    }
    let origin = data.rows[0].0.data();
    let mut offset = vec![0.0; m];
    for (h, _) in &data.rows {
        for ((o, &x), &x0) in offset.iter_mut().zip(h.data()).zip(origin) {
            *o += x - x0;
        }
    }
    let h_bar: Vec<f64> = origin.iter().zip(&offset).map(|(&x0, &o)| x0 + o / n).collect();

    let mut acc = vec![0.0; m];
    for (h, t) in &data.rows {
        let dt = f64::from(u8::from(*t)) - t_bar;
        for ((a, &x), &mu) in acc.iter_mut().zip(h.data()).zip(&h_bar) {
            *a += (x - mu) * dt;
        }
    }
    let norm = 1.0 / (var_t * n);
    Ok(Tensor::vector(acc.into_iter().map(|a| a * norm).collect()))
}

/// Supplies the positive and negative input sets of each run.
pub trait RunSource: Sync {
    fn name(&self) -> &str;
    fn draw(&self, run_seed: u64) -> Result<(Vec<Tensor>, Vec<Tensor>)>;
}

/// The probe set's positives against a bootstrap resample of its negatives.
#[derive(Debug, Clone, Copy)]
pub struct FixedPositives<'a>(pub &'a ConceptProbeSet);

impl RunSource for FixedPositives<'_> {
    fn name(&self) -> &str {
        &self.0.name
    }

    fn draw(&self, run_seed: u64) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
        let neg = &self.0.negatives;
        if self.0.positives.is_empty() || neg.is_empty() {
            return Err(Error::Input(format!("probe set '{}' has an empty side", self.0.name)));
        }
        let mut rng = seed::rng(run_seed);
        let resample = (0..neg.len()).map(|_| neg[rng.random_range(0..neg.len())].clone()).collect();
        Ok((self.0.positives.clone(), resample))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CavOptions {
    pub classifier: ClassifierKind,
    pub svm: SvmConfig,
    pub runs: usize,
    pub seed: u64,
    pub heldout_fraction: f64,
    pub parallel: bool,
}

impl Default for CavOptions {
    fn default() -> Self {
        Self {
            classifier: ClassifierKind::Signal,
            svm: SvmConfig::default(),
            runs: 30,
            seed: 0,
            heldout_fraction: 0.2,
            parallel: false,
        }
    }
}

impl CavOptions {
    /// Seed of run `i`.
    pub fn run_seed(&self, run: usize) -> u64 {
        derive_seed(self.seed, run as u64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunFailure {
    pub run: usize,
    pub run_seed: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CavRuns {
    pub bundles: Vec<CavBundle>,
    pub failures: Vec<RunFailure>,
    /// SVM runs whose objective had not settled; empty for SignalCAV.
    pub unconverged: Vec<usize>,
}

impl CavRuns {
    /// Bundles whose held-out accuracy exceeds `min_accuracy`.
    pub fn filtered(&self, min_accuracy: f64) -> Vec<CavBundle> {
        self.bundles
            .iter()
            .filter(|b| b.heldout_accuracy > min_accuracy)
            .cloned()
            .collect()
    }

    pub fn mean_accuracy(&self) -> Option<f64> {
        if self.bundles.is_empty() {
            return None;
        }
        Some(self.bundles.iter().map(|b| b.heldout_accuracy).sum::<f64>() / self.bundles.len() as f64)
    }
}

/// Runs with the probe's fixed positives against the i-th resample of its
/// negatives.
pub fn extract_cav_runs(
    net: &NetworkSpec,
    layer: LayerIndex,
    probe: &ConceptProbeSet,
    opts: &CavOptions,
) -> Result<CavRuns> {
    extract_cav_runs_with(net, layer, &FixedPositives(probe), opts)
}

pub fn extract_cav_runs_with(
    net: &NetworkSpec,
    layer: LayerIndex,
    source: &dyn RunSource,
    opts: &CavOptions,
) -> Result<CavRuns> {
    if opts.runs < 2 {
        return Err(Error::Input(format!(
            "{} CAV run(s) requested; significance testing needs at least 2",
            opts.runs
        )));
    }
    if !(opts.heldout_fraction > 0.0 && opts.heldout_fraction < 1.0) {
        return Err(Error::Input(format!("held-out fraction {} outside (0,1)", opts.heldout_fraction)));
    }
    net.latent_dim(layer)?;

    let one = |run: usize| {
        let run_seed = opts.run_seed(run);
        (run, run_seed, single_run(net, layer, source, opts, run_seed))
    };
    let outcomes: Vec<_> = if opts.parallel {
        (0..opts.runs).into_par_iter().map(one).collect()
    } else {
        (0..opts.runs).map(one).collect()
    };

    let mut out = CavRuns::default();
    for (run, run_seed, outcome) in outcomes {
        match outcome {
            Ok((bundle, converged)) => {
                if !converged {
                    out.unconverged.push(run);
                }
                out.bundles.push(bundle);
            }
            Err(e) => out.failures.push(RunFailure {
                run,
                run_seed,
                reason: e.to_string(),
            }),
        }
    }
    Ok(out)
}

fn single_run(
    net: &NetworkSpec,
    layer: LayerIndex,
    source: &dyn RunSource,
    opts: &CavOptions,
    run_seed: u64,
) -> Result<(CavBundle, bool)> {
    let (pos, neg) = source.draw(run_seed)?;
    let act = |xs: Vec<Tensor>| xs.iter().map(|x| net.forward_to(x, layer)).collect::<Result<Vec<_>>>();
    let (pos, neg) = (act(pos)?, act(neg)?);

    let mut rng = seed::rng(seed::stream_seed(run_seed, "heldout"));
    let (pos_train, pos_test) = holdout(pos, opts.heldout_fraction, &mut rng)?;
    let (neg_train, neg_test) = holdout(neg, opts.heldout_fraction, &mut rng)?;
    let train = LatentDataset::from_sets(pos_train, neg_train)?;

    let (vector, threshold, converged) = match opts.classifier {
        ClassifierKind::Signal => {
            let v = signal_cav(&train)?;
            (v.clone(), midpoint_threshold(&train, &v), true)
        }
        ClassifierKind::Svm => {
            let fit = svm_cav(&train, &opts.svm, seed::stream_seed(run_seed, "svm"))?;
            (fit.vector, -fit.bias, fit.diagnostics.converged)
        }
    };
    let correct = pos_test
        .iter()
        .filter(|h| dot_slices(h.data(), vector.data()) > threshold)
        .count()
        + neg_test
            .iter()
            .filter(|h| dot_slices(h.data(), vector.data()) <= threshold)
            .count();
    let heldout_accuracy = correct as f64 / (pos_test.len() + neg_test.len()) as f64;

    Ok((
        CavBundle {
            concept: source.name().to_string(),
            layer,
            vector,
            classifier: opts.classifier,
            heldout_accuracy,
            run_seed,
        },
        converged,
    ))
}

/// Shuffled split keeping at least one row on each side.
fn holdout(mut rows: Vec<Tensor>, fraction: f64, rng: &mut seed::Rng) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
    if rows.len() < 2 {
        return Err(Error::InsufficientData {
            what: "activations for a held-out split".into(),
            requested: 2,
            available: rows.len(),
        });
    }
    rows.shuffle(rng);
    let k = ((rows.len() as f64 * fraction).round() as usize).clamp(1, rows.len() - 1);
    let test = rows.split_off(rows.len() - k);
    Ok((rows, test))
}

/// Midpoint between the projected class means.
fn midpoint_threshold(data: &LatentDataset, v: &Tensor) -> f64 {
    let (mut sp, mut np, mut sn, mut nn) = (0.0, 0.0, 0.0, 0.0);
    for (h, t) in data.rows() {
        let p = dot_slices(h.data(), v.data());
        if *t {
            sp += p;
            np += 1.0;
        } else {
            sn += p;
            nn += 1.0;
        }
    }
    0.5 * (sp / np + sn / nn)
}
