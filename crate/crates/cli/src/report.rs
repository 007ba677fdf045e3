//! Report files and overwrite-safe output.
//!
//! Floats in CSV files use six decimals; JSON floats are rounded to six
//! decimals. Every file carries the config hash and seed.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde_json::{json, Map, Value};

use etcav_core::agreement::AgreementMatrix;
use etcav_core::tcav::TcavReport;

use crate::pipeline::{CavRecord, RunOutput};

/// Traceability stamp shared by all files of one invocation.
#[derive(Debug, Clone)]
pub struct Stamp {
    pub config_hash: String,
    pub seed: u64,
}

impl Stamp {
    fn comment(&self) -> String {
        format!("# config_sha256={} seed={}\n", self.config_hash, self.seed)
    }

    fn insert(&self, obj: &mut Map<String, Value>) {
        obj.insert("config_sha256".into(), json!(self.config_hash));
        obj.insert("seed".into(), json!(self.seed));
    }
}

pub fn r6(x: f64) -> Value {
    if x.is_finite() {
        json!((x * 1e6).round() / 1e6)
    } else {
        Value::Null
    }
}

pub fn tcav_csv(stamp: &Stamp, reports: &[TcavReport]) -> String {
    let mut out = stamp.comment();
    out.push_str("concept,class,layer,scored_layer,method,classifier,run,run_seed,score,accuracy\n");
    for r in reports {
        for (i, ((score, acc), seed)) in r.scores.iter().zip(&r.accuracies).zip(&r.run_seeds).enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{:.6},{:.6}",
                r.concept,
                r.class_k,
                r.layer,
                r.scored_layer,
                r.method.name(),
                r.classifier.name(),
                i,
                seed,
                score,
                acc
            );
        }
    }
    out
}

pub fn tcav_json(stamp: &Stamp, output: &RunOutput, stable: bool) -> Value {
    let reports: Vec<Value> = output
        .reports
        .iter()
        .map(|r| {
            let mut o = json!({
                "concept": r.concept,
                "class": r.class_k,
                "layer": r.layer,
                "scored_layer": r.scored_layer,
                "method": r.method.name(),
                "classifier": r.classifier.name(),
                "runs": r.scores.len(),
                "mean": r6(r.mean),
                "std": r6(r.std),
                "p_value": r.p_value.map(r6),
                "significant": r.significant,
            });
            if !stable {
                o["wall_time_ns"] = json!(r.wall_time_ns as u64);
            }
            o
        })
        .collect();
    let failures: Vec<Value> = output
        .failures
        .iter()
        .map(|f| json!({"concept": f.concept, "layer": f.layer, "reason": f.reason}))
        .collect();
    let mut obj = Map::new();
    stamp.insert(&mut obj);
    obj.insert("layers".into(), json!(output.layers));
    obj.insert("reports".into(), Value::Array(reports));
    obj.insert("failures".into(), Value::Array(failures));
    Value::Object(obj)
}

pub fn agreement_csv(stamp: &Stamp, m: &AgreementMatrix) -> String {
    let mut out = stamp.comment();
    out.push_str("layer,depth_from_penultimate,classifier,agreement\n");
    for e in &m.entries {
        let a = e.agreement.map(|a| format!("{a:.6}")).unwrap_or_else(|| "NA".into());
        let _ = writeln!(out, "{},{},{},{}", e.layer, e.depth, m.classifier.name(), a);
    }
    out
}

pub fn agreement_json(stamp: &Stamp, m: &AgreementMatrix) -> Value {
    let entries: Vec<Value> = m
        .entries
        .iter()
        .map(|e| {
            let deltas: Map<String, Value> = e.deltas.iter().map(|(k, v)| (k.clone(), r6(*v))).collect();
            let scores: Map<String, Value> = e.scores.iter().map(|(k, v)| (k.clone(), r6(*v))).collect();
            json!({
                "layer": e.layer,
                "depth": e.depth,
                "agreement": e.agreement.map(r6),
                "scores": scores,
                "abs_delta": deltas,
                "failures": e.failures,
            })
        })
        .collect();
    let mut obj = Map::new();
    stamp.insert(&mut obj);
    obj.insert("reference_layer".into(), json!(m.reference));
    obj.insert("classifier".into(), json!(m.classifier.name()));
    obj.insert("entries".into(), Value::Array(entries));
    Value::Object(obj)
}

/// Two columns: depth from the boundary and agreement.
pub fn agreement_plot(stamp: &Stamp, m: &AgreementMatrix) -> String {
    let mut out = stamp.comment();
    out.push_str("# depth agreement\n");
    for (d, a) in m.curve() {
        let _ = writeln!(out, "{d} {a:.6}");
    }
    out
}

fn cav_record_json(r: &CavRecord) -> Value {
    json!({
        "concept": r.concept,
        "layer": r.layer,
        "sampling": r.sampling,
        "base_seed": r.base_seed,
        "run_seeds": r.runs.bundles.iter().map(|b| b.run_seed).collect::<Vec<_>>(),
        "accuracies": r.runs.bundles.iter().map(|b| r6(b.heldout_accuracy)).collect::<Vec<_>>(),
        "failed_runs": r.runs.failures.iter().map(|f| json!({"run": f.run, "run_seed": f.run_seed, "reason": f.reason})).collect::<Vec<_>>(),
        "unconverged_runs": r.runs.unconverged,
        "filtered_out": r.filtered_out,
    })
}

pub fn run_manifest(stamp: &Stamp, config: &Value, output: &RunOutput, files: &[String]) -> Value {
    let mut obj = Map::new();
    obj.insert("tool".into(), json!(concat!("etcav ", env!("CARGO_PKG_VERSION"))));
    stamp.insert(&mut obj);
    obj.insert("config".into(), config.clone());
    obj.insert("files".into(), json!(files));
    obj.insert("layers".into(), json!(output.layers));
    obj.insert("reference_layer".into(), json!(output.reference));
    obj.insert("probe_seeds".into(), json!(output.probe_seeds));
    obj.insert("cav_runs".into(), Value::Array(output.cav_records.iter().map(cav_record_json).collect()));
    obj.insert("null_runs".into(), Value::Array(output.null_records.iter().map(cav_record_json).collect()));
    obj.insert("warnings".into(), json!(output.warnings));
    Value::Object(obj)
}

pub fn to_pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json values serialize");
    s.push('\n');
    s
}

/// Files to be written together; nothing is written if any would be
/// overwritten without `force`.
#[derive(Debug, Default)]
pub struct OutputSet {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl OutputSet {
    pub fn add(&mut self, path: PathBuf, contents: impl Into<Vec<u8>>) {
        self.files.push((path, contents.into()));
    }

    pub fn names(&self) -> Vec<String> {
        self.files
            .iter()
            .filter_map(|(p, _)| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect()
    }

    pub fn commit(self, force: bool) -> Result<Vec<PathBuf>> {
        if !force {
            let existing: Vec<String> = self
                .files
                .iter()
                .filter(|(p, _)| p.exists())
                .map(|(p, _)| p.display().to_string())
                .collect();
            if !existing.is_empty() {
                bail!(
                    "refusing to overwrite existing file(s): {}; pass --force or choose another --out directory",
                    existing.join(", ")
                );
            }
        }
        let mut written = Vec::new();
        for (path, contents) in self.files {
            if let Some(dir) = path.parent() {
                ensure_dir(dir)?;
            }
            std::fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))?;
            written.push(path);
        }
        Ok(written)
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    if !dir.as_os_str().is_empty() {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create directory {}", dir.display()))?;
    }
    Ok(())
}
