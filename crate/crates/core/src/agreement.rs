//! Agreement of TCAV scores between a layer and the affine-tail boundary.

use std::collections::{BTreeMap, BTreeSet};

use crate::cav::{extract_cav_runs, CavOptions, ClassifierKind};
use crate::error::{Error, Result};
use crate::network::{LayerIndex, NetworkSpec};
use crate::synthdata::ConceptProbeSet;
use crate::tcav::{run_tcav, Method, TcavOptions};

/// Cell key → mean TCAV score.
pub type ScoreMap = BTreeMap<String, f64>;

/// Key of a concept-class cell.
pub fn cell_key(concept: &str, class: usize) -> String {
    format!("{concept}:{class}")
}

fn paired<'a>(a: &'a ScoreMap, b: &'a ScoreMap) -> Result<impl Iterator<Item = (f64, f64)> + 'a> {
    if a.is_empty() || !a.keys().eq(b.keys()) {
        let left: BTreeSet<_> = a.keys().collect();
        let right: BTreeSet<_> = b.keys().collect();
        let diff: Vec<_> = left.symmetric_difference(&right).collect();
        return Err(Error::Input(format!(
            "score maps must share a non-empty key set; mismatched keys {diff:?}"
        )));
    }
    Ok(a.values().zip(b.values()).map(|(&x, &y)| (x, y)))
}

/// Mean over concepts of `1[T_l > α] == 1[T_lp > α]`.
pub fn thresholded_agreement(t_l: &ScoreMap, t_lp: &ScoreMap, alpha: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Input(format!("threshold {alpha} outside [0,1]")));
    }
    let mut agree = 0usize;
    let mut n = 0usize;
    for (a, b) in paired(t_l, t_lp)? {
        if (a > alpha) == (b > alpha) {
            agree += 1;
        }
        n += 1;
    }
    Ok(agree as f64 / n as f64)
}

/// Trapezoid rule over `grid_points` equally spaced thresholds in [0,1].
pub fn integrated_agreement_numeric(t_l: &ScoreMap, t_lp: &ScoreMap, grid_points: usize) -> Result<f64> {
    if grid_points < 2 {
        return Err(Error::Input(format!("{grid_points} grid points; need at least 2")));
    }
    let _ = paired(t_l, t_lp)?;
    let h = 1.0 / (grid_points - 1) as f64;
    let mut total = 0.0;
    for i in 0..grid_points {
        let alpha = i as f64 * h;
        let weight = if i == 0 || i == grid_points - 1 { 0.5 } else { 1.0 };
        total += weight * thresholded_agreement(t_l, t_lp, alpha)?;
    }
    Ok(total * h)
}

/// `1 − mean |T_l − T_lp|`.
pub fn integrated_agreement_closed(t_l: &ScoreMap, t_lp: &ScoreMap) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (a, b) in paired(t_l, t_lp)? {
        sum += 1.0 - (a - b).abs();
        n += 1;
    }
    Ok(sum / n as f64)
}

/// Probe sets keyed by unique concept name.
#[derive(Debug, Clone, Default)]
pub struct ConceptLibrary {
    concepts: Vec<ConceptProbeSet>,
}

impl ConceptLibrary {
    pub fn new(concepts: Vec<ConceptProbeSet>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for c in &concepts {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::Input(format!("concept '{}' appears twice in the library", c.name)));
            }
        }
        Ok(Self { concepts })
    }

    pub fn concepts(&self) -> &[ConceptProbeSet] {
        &self.concepts
    }

    pub fn names(&self) -> Vec<&str> {
        self.concepts.iter().map(|c| c.name.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgreementEntry {
    pub layer: LayerIndex,
    pub depth: usize,
    /// `None` when no cell could be scored at this layer.
    pub agreement: Option<f64>,
    pub scores: ScoreMap,
    /// Cell → `|T_l − T_lp|`.
    pub deltas: ScoreMap,
    /// Concepts that failed here, with the reason.
    pub failures: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgreementMatrix {
    pub reference: LayerIndex,
    pub classifier: ClassifierKind,
    /// Ordered by depth from the reference, starting at 0.
    pub entries: Vec<AgreementEntry>,
}

impl AgreementMatrix {
    /// `(depth, agreement)` pairs for the scored layers.
    pub fn curve(&self) -> Vec<(usize, f64)> {
        self.entries.iter().filter_map(|e| e.agreement.map(|a| (e.depth, a))).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveOptions {
    pub cav: CavOptions,
    pub depth_window: usize,
    /// Drop runs at or below this held-out accuracy before averaging.
    pub min_accuracy: Option<f64>,
}

/// Mean standard-path TCAV per concept-class cell at each probe layer
/// within `depth_window` of the affine-tail boundary, compared with the
/// boundary by the closed form.
pub fn agreement_curve(
    net: &NetworkSpec,
    library: &ConceptLibrary,
    classes: &[usize],
    opts: &CurveOptions,
) -> Result<AgreementMatrix> {
    if classes.is_empty() || library.concepts().is_empty() {
        return Err(Error::Input("agreement needs at least one class and one concept".into()));
    }
    let probe_layers = net.probe_layers();
    let available = probe_layers.len().saturating_sub(1);
    if opts.depth_window > available {
        return Err(Error::Input(format!(
            "depth window {} exceeds the {available} probe layers before the boundary",
            opts.depth_window
        )));
    }

    let mut per_layer = BTreeMap::new();
    for &layer in &probe_layers {
        if net.depth_from_tail(layer)? > opts.depth_window {
            continue;
        }
        let mut scored = LayerScores::default();
        for probe in library.concepts() {
            match concept_scores(net, layer, probe, classes, opts) {
                Ok(cells) => scored.scores.extend(cells),
                Err(e) => {
                    scored.failures.insert(probe.name.clone(), e.to_string());
                }
            }
        }
        per_layer.insert(layer, scored);
    }
    agreement_from_scores(net, &per_layer, opts.cav.classifier)
}

/// Mean TCAV scores of one layer plus the concepts that could not be scored.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LayerScores {
    pub scores: ScoreMap,
    pub failures: BTreeMap<String, String>,
}

/// Agreement of every layer in `per_layer` with the affine-tail boundary,
/// which must be among the keys. Cells missing on either side are left out
/// and their concepts listed as failures.
pub fn agreement_from_scores(
    net: &NetworkSpec,
    per_layer: &BTreeMap<LayerIndex, LayerScores>,
    classifier: ClassifierKind,
) -> Result<AgreementMatrix> {
    let reference = net.find_affine_tail()?;
    let Some(reference_scores) = per_layer.get(&reference) else {
        return Err(Error::Input(format!("no scores for the reference layer {reference}")));
    };
    let mut entries = Vec::new();
    for (&layer, scored) in per_layer {
        let depth = net.depth_from_tail(layer)?;
        let mut failures = scored.failures.clone();
        for (c, why) in &reference_scores.failures {
            failures.entry(c.clone()).or_insert_with(|| format!("reference layer: {why}"));
        }
        let here: ScoreMap = scored
            .scores
            .iter()
            .filter(|(k, _)| reference_scores.scores.contains_key(*k))
            .map(|(k, v)| (k.clone(), *v))
            .collect();
        let there: ScoreMap = here.keys().map(|k| (k.clone(), reference_scores.scores[k])).collect();
        let agreement = if here.is_empty() {
            None
        } else {
            Some(integrated_agreement_closed(&here, &there)?)
        };
        let deltas = here.iter().map(|(k, v)| (k.clone(), (v - there[k]).abs())).collect();
        entries.push(AgreementEntry {
            layer,
            depth,
            agreement,
            scores: scored.scores.clone(),
            deltas,
            failures,
        });
    }
    entries.sort_by_key(|e| e.depth);
    Ok(AgreementMatrix {
        reference,
        classifier,
        entries,
    })
}

fn concept_scores(
    net: &NetworkSpec,
    layer: LayerIndex,
    probe: &ConceptProbeSet,
    classes: &[usize],
    opts: &CurveOptions,
) -> Result<ScoreMap> {
    let runs = extract_cav_runs(net, layer, probe, &opts.cav)?;
    let bundles = match opts.min_accuracy {
        Some(min) => runs.filtered(min),
        None => runs.bundles,
    };
    if bundles.is_empty() {
        return Err(Error::Input(format!("no usable CAV runs for '{}' at layer {layer}", probe.name)));
    }
    let tcav = TcavOptions {
        parallel: opts.cav.parallel,
        ..TcavOptions::default()
    };
    let mut out = ScoreMap::new();
    for &k in classes {
        let report = run_tcav(net, layer, probe, k, &bundles, Method::Standard, &tcav)?;
        out.insert(cell_key(&probe.name, k), report.mean);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(pairs: &[(&str, f64)]) -> ScoreMap {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn thresholded_hand_value() {
        let a = map(&[("c1", 0.9), ("c2", 0.2)]);
        let b = map(&[("c1", 0.8), ("c2", 0.6)]);
        assert_eq!(thresholded_agreement(&a, &b, 0.5).unwrap(), 0.5);
        assert_eq!(thresholded_agreement(&a, &b, 1.0).unwrap(), 1.0);
        assert_eq!(thresholded_agreement(&a, &a, 0.37).unwrap(), 1.0);
    }

    #[test]
    fn threshold_is_strict() {
        let a = map(&[("c", 0.5)]);
        let b = map(&[("c", 0.4)]);
        assert_eq!(thresholded_agreement(&a, &b, 0.5).unwrap(), 1.0);
    }

    #[test]
    fn closed_form_hand_values() {
        assert!((integrated_agreement_closed(&map(&[("c", 0.8)]), &map(&[("c", 0.6)])).unwrap() - 0.8).abs() < 1e-15);
        let a = map(&[("c1", 1.0), ("c2", 0.5)]);
        let b = map(&[("c1", 1.0), ("c2", 0.0)]);
        assert_eq!(integrated_agreement_closed(&a, &b).unwrap(), 0.75);
        assert_eq!(integrated_agreement_closed(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn numeric_hand_values() {
        let a = map(&[("c", 0.8)]);
        let b = map(&[("c", 0.6)]);
        assert!((integrated_agreement_numeric(&a, &b, 1001).unwrap() - 0.8).abs() <= 1e-3);
        assert_eq!(integrated_agreement_numeric(&a, &a, 1001).unwrap(), 1.0);
        let hi = map(&[("c", 1.0)]);
        let lo = map(&[("c", 0.0)]);
        assert!(integrated_agreement_numeric(&hi, &lo, 1001).unwrap() <= 1e-3);
        assert!(integrated_agreement_numeric(&a, &b, 1).is_err());
    }

    #[test]
    fn key_mismatch_is_an_error() {
        let a = map(&[("c1", 0.1)]);
        let b = map(&[("c2", 0.1)]);
        assert!(thresholded_agreement(&a, &b, 0.5).is_err());
        assert!(integrated_agreement_closed(&a, &b).is_err());
        assert!(integrated_agreement_closed(&ScoreMap::new(), &ScoreMap::new()).is_err());
    }

    #[test]
    fn library_names_unique() {
        let p = ConceptProbeSet {
            name: "x".into(),
            positives: vec![],
            negatives: vec![],
            evaluation: BTreeMap::new(),
            ids: Default::default(),
        };
        assert!(ConceptLibrary::new(vec![p.clone(), p]).is_err());
    }
}
