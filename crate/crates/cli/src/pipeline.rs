//! The probing pipeline behind `run` and `agreement`.

use std::collections::BTreeMap;

use anyhow::{bail, Context, Result};

use etcav_core::agreement::{agreement_from_scores, cell_key, AgreementMatrix, LayerScores};
use etcav_core::cav::{extract_cav_runs_with, CavBundle, CavRuns, ClassifierKind, FixedPositives, RunSource};
use etcav_core::network::{LayerIndex, NetworkSpec};
use etcav_core::synthdata::{build_probe_set, ConceptPoolSource, Dataset, RandomPairSource};
use etcav_core::tcav::{etcav_scores, run_tcav, standard_scores, Method, NullModel, TcavOptions, TcavReport};

use crate::config::{ExperimentConfig, NullChoice, Sampling};

/// The fast path stands in for probing points at most this many steps
/// before the affine-tail boundary, i.e. the final five.
pub const ETCAV_WINDOW: usize = 4;

#[derive(Debug, Clone, Default)]
pub struct RunFlags {
    pub override_window: bool,
}

/// Seeds and outcomes of one batch of CAV runs.
#[derive(Debug, Clone)]
pub struct CavRecord {
    pub concept: String,
    pub layer: LayerIndex,
    pub sampling: Option<Sampling>,
    pub base_seed: u64,
    pub runs: CavRuns,
    /// Runs dropped by the accuracy filter.
    pub filtered_out: usize,
}

#[derive(Debug, Clone)]
pub struct Failure {
    pub concept: String,
    pub layer: LayerIndex,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub layers: Vec<LayerIndex>,
    pub reference: Option<LayerIndex>,
    /// Ordered by concept, layer, method, class.
    pub reports: Vec<TcavReport>,
    pub cav_records: Vec<CavRecord>,
    pub null_records: Vec<CavRecord>,
    pub probe_seeds: BTreeMap<String, u64>,
    pub failures: Vec<Failure>,
    pub agreement: Option<AgreementMatrix>,
    pub warnings: Vec<String>,
}

/// Layers to probe: the configured list, or every probe layer within
/// `depth_window` of the boundary.
pub fn select_layers(net: &NetworkSpec, cfg: &ExperimentConfig) -> Result<Vec<LayerIndex>> {
    if cfg.layers.is_empty() {
        let mut out = Vec::new();
        for l in net.probe_layers() {
            if net.depth_from_tail(l)? <= cfg.depth_window {
                out.push(l);
            }
        }
        return Ok(out);
    }
    let mut layers = cfg.layers.clone();
    layers.sort_unstable();
    layers.dedup();
    if let Some(&bad) = layers.iter().find(|&&l| l >= net.output_layer()) {
        bail!(
            "layer {bad} cannot be probed; probe layers must precede the output layer {}",
            net.output_layer()
        );
    }
    Ok(layers)
}

/// Layer the fast path scores at for `layer`, enforcing the window rule.
pub fn etcav_layer(net: &NetworkSpec, layer: LayerIndex, flags: &RunFlags, warnings: &mut Vec<String>) -> Result<LayerIndex> {
    if net.tail_is_affine(layer) {
        return Ok(layer);
    }
    let tail = net.find_affine_tail()?;
    let depth = net
        .depth_from_tail(layer)
        .with_context(|| format!("the fast path cannot stand in for layer {layer}"))?;
    if depth > ETCAV_WINDOW {
        if !flags.override_window {
            bail!(
                "window rule: the fast path only stands in for the final five probing points \
                 (depth <= {ETCAV_WINDOW} before the affine-tail layer {tail}), but layer {layer} is at depth {depth}; \
                 use --method standard for this layer or pass --override-window to accept the fidelity loss"
            );
        }
        warnings.push(format!(
            "fidelity: layer {layer} is at depth {depth}, outside the {}-layer window; fast-path scores come from layer {tail}",
            ETCAV_WINDOW + 1
        ));
    }
    Ok(tail)
}

fn usable(runs: &CavRuns, min_accuracy: Option<f64>) -> Vec<CavBundle> {
    match min_accuracy {
        Some(m) => runs.filtered(m),
        None => runs.bundles.clone(),
    }
}

pub fn run_pipeline(
    net: &NetworkSpec,
    ds: &Dataset,
    cfg: &ExperimentConfig,
    methods: &[Method],
    flags: &RunFlags,
) -> Result<RunOutput> {
    if ds.input_dims != net.input_dims() || ds.num_classes != net.num_classes() {
        bail!(
            "model expects {:?} inputs and {} classes but the dataset has {:?} and {}; retrain with `etcav train`",
            net.input_dims(),
            net.num_classes(),
            ds.input_dims,
            ds.num_classes
        );
    }
    let mut out = RunOutput {
        layers: select_layers(net, cfg)?,
        ..RunOutput::default()
    };
    let classes = cfg.classes();

    let mut scored_at = BTreeMap::new();
    for &layer in &out.layers {
        for &m in methods {
            let s = match m {
                Method::Standard => layer,
                Method::Etcav => etcav_layer(net, layer, flags, &mut out.warnings)?,
            };
            scored_at.insert((layer, m), s);
        }
    }

    let mut probes = Vec::new();
    for c in &cfg.concepts {
        let seed = cfg.stream(&format!("probe/{}", c.name));
        out.probe_seeds.insert(c.name.clone(), seed);
        probes.push(build_probe_set(ds, &c.name, cfg.probe_sizes(), seed)?);
    }

    // Random-vs-random bundles per scoring layer, for the null model.
    let mut null_bundles: BTreeMap<LayerIndex, Vec<CavBundle>> = BTreeMap::new();
    if cfg.null == NullChoice::Random {
        let source = RandomPairSource::new(ds, cfg.probe.random_set)?;
        let mut layers: Vec<_> = scored_at.values().copied().collect();
        layers.sort_unstable();
        layers.dedup();
        for l in layers {
            let seed = cfg.stream(&format!("null/{l}"));
            let runs = extract_cav_runs_with(net, l, &source, &cfg.cav_options(seed))?;
            null_bundles.insert(l, runs.bundles.clone());
            out.null_records.push(CavRecord {
                concept: "random".into(),
                layer: l,
                sampling: None,
                base_seed: seed,
                runs,
                filtered_out: 0,
            });
        }
    }

    let tcav_base = TcavOptions {
        alpha: cfg.alpha,
        proxy: true,
        parallel: cfg.parallel,
        ..TcavOptions::default()
    };
    let layers = out.layers.clone();
    for (concept, probe) in cfg.concepts.iter().zip(&probes) {
        let pool;
        let fixed = FixedPositives(probe);
        let source: &dyn RunSource = match concept.sampling {
            Sampling::Fixed => &fixed,
            Sampling::Pool => {
                pool = ConceptPoolSource::new(ds, &concept.name, cfg.probe.positives, cfg.probe.negatives)?;
                &pool
            }
        };
        let mut cache: BTreeMap<LayerIndex, Result<Vec<CavBundle>, String>> = BTreeMap::new();
        for &layer in &layers {
            for &method in methods {
                let cav_layer = scored_at[&(layer, method)];
                let bundles = cache.entry(cav_layer).or_insert_with(|| {
                    let seed = cfg.stream(&format!("cav/{}/{cav_layer}", concept.name));
                    match extract_cav_runs_with(net, cav_layer, source, &cfg.cav_options(seed)) {
                        Ok(runs) => {
                            let kept = usable(&runs, cfg.min_accuracy);
                            let filtered_out = runs.bundles.len() - kept.len();
                            out.cav_records.push(CavRecord {
                                concept: concept.name.clone(),
                                layer: cav_layer,
                                sampling: Some(concept.sampling),
                                base_seed: seed,
                                runs,
                                filtered_out,
                            });
                            if kept.len() < 2 {
                                Err(format!("only {} usable CAV run(s) at layer {cav_layer}", kept.len()))
                            } else {
                                Ok(kept)
                            }
                        }
                        Err(e) => Err(e.to_string()),
                    }
                });
                let bundles = match bundles {
                    Ok(b) => b,
                    Err(reason) => {
                        out.failures.push(Failure {
                            concept: concept.name.clone(),
                            layer,
                            reason: reason.clone(),
                        });
                        continue;
                    }
                };
                for &k in &classes {
                    let null_scores;
                    let null = match cfg.null {
                        NullChoice::Random => {
                            let nb = &null_bundles[&cav_layer];
                            null_scores = match method {
                                Method::Standard => standard_scores(net, layer, probe.evaluation_for(k)?, k, nb, cfg.parallel)?,
                                Method::Etcav => etcav_scores(net, cav_layer, k, nb)?,
                            };
                            NullModel::RandomScores(&null_scores)
                        }
                        NullChoice::Chance => NullModel::Chance,
                        NullChoice::None => NullModel::None,
                    };
                    let opts = TcavOptions { null, ..tcav_base };
                    out.reports.push(run_tcav(net, layer, probe, k, bundles, method, &opts)?);
                }
            }
        }
    }

    if methods.contains(&Method::Standard) {
        agreement_from_reports(net, cfg.classifier.into(), &mut out)?;
    }
    Ok(out)
}

fn agreement_from_reports(net: &NetworkSpec, classifier: ClassifierKind, out: &mut RunOutput) -> Result<()> {
    let reference = net.find_affine_tail()?;
    out.reference = Some(reference);
    if !out.layers.contains(&reference) {
        out.warnings
            .push(format!("agreement skipped: the affine-tail layer {reference} is not among the probed layers"));
        return Ok(());
    }
    let mut per_layer: BTreeMap<LayerIndex, LayerScores> = BTreeMap::new();
    for &l in &out.layers {
        if net.depth_from_tail(l).is_ok() {
            per_layer.insert(l, LayerScores::default());
        }
    }
    for r in out.reports.iter().filter(|r| r.method == Method::Standard) {
        if let Some(s) = per_layer.get_mut(&r.layer) {
            s.scores.insert(cell_key(&r.concept, r.class_k), r.mean);
        }
    }
    for f in &out.failures {
        if let Some(s) = per_layer.get_mut(&f.layer) {
            s.failures.insert(f.concept.clone(), f.reason.clone());
        }
    }
    out.agreement = Some(agreement_from_scores(net, &per_layer, classifier)?);
    Ok(())
}
