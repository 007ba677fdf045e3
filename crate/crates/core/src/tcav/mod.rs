//! Conceptual sensitivities, TCAV scores and the affine-tail fast path.

pub mod stats;

use std::time::Instant;

use rayon::prelude::*;

use crate::cav::{CavBundle, ClassifierKind};
use crate::error::{Error, Result};
use crate::network::{LayerIndex, NetworkSpec};
use crate::synthdata::ConceptProbeSet;
use crate::tensor::{dot_slices, Tensor};

pub use stats::{one_sample_t_test, significance_vs_random, two_sided_t_test, Significance, TTest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Standard,
    Etcav,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Standard => "standard",
            Method::Etcav => "etcav",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Method::Standard),
            "etcav" => Ok(Method::Etcav),
            other => Err(Error::Input(format!("unknown method '{other}' (expected standard or etcav)"))),
        }
    }
}

/// Per-sample `S_{C,k}` values for one concept vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityRecord {
    pub concept: String,
    pub class_k: usize,
    pub layer: LayerIndex,
    pub values: Vec<f64>,
}

/// `∇_a h_k(a) · v` at the activation of `x` at `layer`.
pub fn directional_sensitivity(net: &NetworkSpec, layer: LayerIndex, x: &Tensor, k: usize, v: &Tensor) -> Result<f64> {
    let g = net.logit_grad_at_layer(x, k, layer)?;
    if g.len() != v.len() {
        return Err(Error::dim("directional_sensitivity", g.shape(), v.shape()));
    }
    Ok(dot_slices(g.data(), v.data()))
}

pub fn sensitivities(
    net: &NetworkSpec,
    layer: LayerIndex,
    samples: &[Tensor],
    k: usize,
    bundle: &CavBundle,
) -> Result<SensitivityRecord> {
    let values = samples
        .iter()
        .map(|x| directional_sensitivity(net, layer, x, k, &bundle.vector))
        .collect::<Result<_>>()?;
    Ok(SensitivityRecord {
        concept: bundle.concept.clone(),
        class_k: k,
        layer,
        values,
    })
}

/// Fraction of strictly positive sensitivities.
pub fn tcav_score(record: &SensitivityRecord) -> Result<f64> {
    score_values(&record.values)
}

pub fn score_values(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Input("TCAV score of an empty sensitivity record".into()));
    }
    Ok(values.iter().filter(|&&s| s > 0.0).count() as f64 / values.len() as f64)
}

/// `I(w_k · v > 0)`.
pub fn etcav_score(w_k: &Tensor, v: &Tensor) -> Result<f64> {
    if w_k.len() != v.len() {
        return Err(Error::dim("etcav_score", w_k.shape(), v.shape()));
    }
    Ok(if dot_slices(w_k.data(), v.data()) > 0.0 { 1.0 } else { 0.0 })
}

/// Standard path: one gradient per evaluation sample, reused across bundles.
pub fn standard_scores(
    net: &NetworkSpec,
    layer: LayerIndex,
    samples: &[Tensor],
    k: usize,
    bundles: &[CavBundle],
    parallel: bool,
) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::Input("standard TCAV needs evaluation samples".into()));
    }
    let grad = |x: &Tensor| net.logit_grad_at_layer(x, k, layer);
    let grads: Vec<Tensor> = if parallel {
        samples.par_iter().map(grad).collect::<Result<_>>()?
    } else {
        samples.iter().map(grad).collect::<Result<_>>()?
    };
    bundles
        .iter()
        .map(|b| {
            let values = grads
                .iter()
                .map(|g| {
                    if g.len() != b.vector.len() {
                        return Err(Error::dim("directional_sensitivity", g.shape(), b.vector.shape()));
                    }
                    Ok(dot_slices(g.data(), b.vector.data()))
                })
                .collect::<Result<Vec<_>>>()?;
            score_values(&values)
        })
        .collect()
}

/// Fast path at a layer whose tail is affine. Takes no evaluation samples.
pub fn etcav_scores(net: &NetworkSpec, layer: LayerIndex, k: usize, bundles: &[CavBundle]) -> Result<Vec<f64>> {
    let (w_k, _) = net.effective_logit_weights(k, layer)?;
    bundles.iter().map(|b| etcav_score(&w_k, &b.vector)).collect()
}

/// Reference distribution for the significance test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NullModel<'a> {
    /// Welch test against TCAV scores of random-vs-random CAVs.
    RandomScores(&'a [f64]),
    /// One-sample test of the mean score against 0.5.
    Chance,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TcavOptions<'a> {
    pub null: NullModel<'a>,
    pub alpha: f64,
    /// Allow the fast path to stand in for a layer whose tail is not affine.
    pub proxy: bool,
    pub parallel: bool,
}

impl Default for TcavOptions<'_> {
    fn default() -> Self {
        Self {
            null: NullModel::None,
            alpha: 0.05,
            proxy: false,
            parallel: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TcavReport {
    pub concept: String,
    pub class_k: usize,
    /// Layer of interest.
    pub layer: LayerIndex,
    /// Layer the scores were computed at; differs from `layer` under proxy.
    pub scored_layer: LayerIndex,
    pub method: Method,
    pub classifier: ClassifierKind,
    pub scores: Vec<f64>,
    pub accuracies: Vec<f64>,
    pub run_seeds: Vec<u64>,
    pub mean: f64,
    pub std: f64,
    pub p_value: Option<f64>,
    pub significant: bool,
    pub wall_time_ns: u128,
}

/// Scores every bundle for class `k` and attaches summary statistics.
///
/// The fast path runs at `layer` when its tail is affine. Otherwise it
/// needs `opts.proxy`, and scores at the network's affine-tail boundary;
/// the bundles must then come from that layer.
pub fn run_tcav(
    net: &NetworkSpec,
    layer: LayerIndex,
    probe: &ConceptProbeSet,
    k: usize,
    bundles: &[CavBundle],
    method: Method,
    opts: &TcavOptions<'_>,
) -> Result<TcavReport> {
    let Some(first) = bundles.first() else {
        return Err(Error::Input("run_tcav needs at least one CAV bundle".into()));
    };
    if k >= net.num_classes() {
        return Err(Error::Range {
            what: "class",
            index: k,
            limit: net.num_classes(),
        });
    }
    let scored_layer = match method {
        Method::Standard => layer,
        Method::Etcav if net.tail_is_affine(layer) => layer,
        Method::Etcav if opts.proxy => net.find_affine_tail()?,
        Method::Etcav => {
            return Err(Error::Precondition(format!(
                "layer {layer} is followed by a nonlinearity; the fast path needs an affine tail or proxy mode"
            )))
        }
    };
    if let Some(b) = bundles.iter().find(|b| b.layer != scored_layer) {
        return Err(Error::Input(format!(
            "bundle for '{}' was extracted at layer {}, scoring happens at layer {scored_layer}",
            b.concept, b.layer
        )));
    }

    let start = Instant::now();
    let scores = match method {
        Method::Standard => standard_scores(net, layer, probe.evaluation_for(k)?, k, bundles, opts.parallel)?,
        Method::Etcav => etcav_scores(net, scored_layer, k, bundles)?,
    };
    let wall_time_ns = start.elapsed().as_nanos();

    let p_value = if scores.len() < 2 {
        None
    } else {
        match opts.null {
            NullModel::RandomScores(random) => Some(two_sided_t_test(&scores, random)?.p_value),
            NullModel::Chance => Some(one_sample_t_test(&scores, 0.5)?.p_value),
            NullModel::None => None,
        }
    };
    Ok(TcavReport {
        concept: first.concept.clone(),
        class_k: k,
        layer,
        scored_layer,
        method,
        classifier: first.classifier,
        mean: stats::mean(&scores),
        std: stats::std_dev(&scores),
        significant: p_value.is_some_and(|p| p <= opts.alpha),
        p_value,
        accuracies: bundles.iter().map(|b| b.heldout_accuracy).collect(),
        run_seeds: bundles.iter().map(|b| b.run_seed).collect(),
        scores,
        wall_time_ns,
    })
}
