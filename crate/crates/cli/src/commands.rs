//! Subcommand implementations.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde_json::{json, Value};

use etcav_bench::{
    gap_is_increasing, gap_plot_data, gap_series, phase_series, records_csv, scaling_csv, scaling_fit, speedup_csv,
    speedup_report, time_both, widened, Phase, ScalingReport, RECOMMENDED_REPEATS,
};
use etcav_core::network::{train, NetworkSpec};
use etcav_core::synthdata::{self, build_probe_set, read_dataset, write_dataset, Dataset, ProbeSizes, Split};
use etcav_core::tcav::Method;

use crate::config::{ClassifierChoice, LoadedConfig, MethodChoice};
use crate::pipeline::{run_pipeline, RunFlags, RunOutput};
use crate::report::{self, r6, OutputSet, Stamp};

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub classifier: Option<ClassifierChoice>,
    pub method: Option<MethodChoice>,
    pub runs: Option<usize>,
    pub out: Option<PathBuf>,
    pub stable_output: bool,
    pub override_window: bool,
    pub force: bool,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut LoadedConfig) -> Result<()> {
        let c = &mut cfg.config;
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(k) = self.classifier {
            c.classifier = k;
        }
        if let Some(m) = self.method {
            c.method = m;
        }
        if let Some(r) = self.runs {
            c.runs = r;
        }
        if let Some(out) = &self.out {
            c.output_dir = std::path::absolute(out).with_context(|| format!("bad output path {}", out.display()))?;
        }
        c.validate()
    }
}

fn stamp(cfg: &LoadedConfig) -> Stamp {
    Stamp {
        config_hash: cfg.config.hash(),
        seed: cfg.config.seed,
    }
}

fn config_value(cfg: &LoadedConfig) -> Value {
    serde_json::to_value(cfg.config.without_paths()).expect("config serializes")
}

pub fn load_dataset(path: &Path, config: &Path) -> Result<Dataset> {
    if !path.exists() {
        bail!(
            "dataset file {} not found; create it with `etcav generate --config {}`",
            path.display(),
            config.display()
        );
    }
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    read_dataset(BufReader::new(f)).with_context(|| format!("cannot read dataset {}", path.display()))
}

pub fn load_model(path: &Path, config: &Path) -> Result<NetworkSpec> {
    if !path.exists() {
        bail!(
            "model file {} not found; train one with `etcav train --config {}` or set model_file in the config",
            path.display(),
            config.display()
        );
    }
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    NetworkSpec::read_checkpoint(BufReader::new(f)).with_context(|| format!("cannot read model {}", path.display()))
}

pub fn generate(cfg: &LoadedConfig, ov: &Overrides) -> Result<Value> {
    let c = &cfg.config;
    let spec = c.dataset_spec()?;
    let ds = synthdata::generate(&spec, c.dataset.n, c.stream("dataset"))?;
    let mut bytes = Vec::new();
    write_dataset(&mut bytes, &ds)?;
    let digest = hex::encode(<sha2::Sha256 as sha2::Digest>::digest(&bytes));
    let path = cfg.dataset_path();
    let mut set = OutputSet::default();
    set.add(path.clone(), bytes);
    set.commit(ov.force)?;

    let concepts: Vec<Value> = c
        .concepts
        .iter()
        .enumerate()
        .map(|(i, concept)| {
            let prevalence = ds.annotations.iter().filter(|a| a[i]).count() as f64 / ds.len() as f64;
            let mut v = json!({"name": concept.name, "prevalence": r6(prevalence)});
            if let Some(f) = &concept.confound {
                v["class"] = json!(f.class);
                v["correlation"] = r6(ds.concept_class_correlation(i, f.class));
            }
            v
        })
        .collect();
    let s = stamp(cfg);
    Ok(json!({
        "dataset_file": path.display().to_string(),
        "sha256": digest,
        "samples": ds.len(),
        "splits": {
            "train": ds.indices(Split::Train).len(),
            "validation": ds.indices(Split::Validation).len(),
            "test": ds.indices(Split::Test).len(),
        },
        "concepts": concepts,
        "config_sha256": s.config_hash,
        "seed": s.seed,
    }))
}

pub fn train_model(cfg: &LoadedConfig, ov: &Overrides, config_path: &Path) -> Result<Value> {
    let c = &cfg.config;
    let ds = load_dataset(&cfg.dataset_path(), config_path)?;
    let init = NetworkSpec::mlp(&c.arch(), c.stream("network"))?;
    let (net, history) = train(&init, &ds.labeled(Split::Train), &c.train_config())?;
    let test = ds.labeled(Split::Test);
    let correct = test
        .iter()
        .map(|(x, y)| net.predict(x).map(|p| p == *y))
        .collect::<etcav_core::Result<Vec<_>>>()?
        .into_iter()
        .filter(|&ok| ok)
        .count();
    let mut bytes = Vec::new();
    net.write_checkpoint(&mut bytes)?;
    let path = cfg.model_path();
    let mut set = OutputSet::default();
    set.add(path.clone(), bytes);
    set.commit(ov.force)?;

    let s = stamp(cfg);
    Ok(json!({
        "model_file": path.display().to_string(),
        "params": net.param_count(),
        "layers": net.layers().iter().map(|l| l.kind().name()).collect::<Vec<_>>(),
        "probe_layers": net.probe_layers(),
        "affine_tail": net.find_affine_tail()?,
        "epochs": history.epochs.iter().map(|e| json!({"loss": r6(e.loss), "accuracy": r6(e.accuracy)})).collect::<Vec<_>>(),
        "test_accuracy": r6(if test.is_empty() { f64::NAN } else { correct as f64 / test.len() as f64 }),
        "config_sha256": s.config_hash,
        "seed": s.seed,
    }))
}

fn write_run(cfg: &LoadedConfig, ov: &Overrides, out: &RunOutput, tcav: bool, manifest_name: &str) -> Result<Vec<PathBuf>> {
    let s = stamp(cfg);
    let dir = cfg.output_dir();
    let mut set = OutputSet::default();
    if tcav {
        set.add(dir.join("tcav.csv"), report::tcav_csv(&s, &out.reports));
        set.add(dir.join("tcav.json"), report::to_pretty(&report::tcav_json(&s, out, ov.stable_output)));
    }
    if let Some(m) = &out.agreement {
        set.add(dir.join("agreement.csv"), report::agreement_csv(&s, m));
        set.add(dir.join("agreement.json"), report::to_pretty(&report::agreement_json(&s, m)));
        set.add(dir.join("agreement.dat"), report::agreement_plot(&s, m));
    }
    let mut names = set.names();
    names.push(manifest_name.to_string());
    let manifest = report::run_manifest(&s, &config_value(cfg), out, &names);
    set.add(dir.join(manifest_name), report::to_pretty(&manifest));
    set.commit(ov.force)
}

pub fn run(cfg: &LoadedConfig, ov: &Overrides, config_path: &Path) -> Result<(RunOutput, Vec<PathBuf>)> {
    let ds = load_dataset(&cfg.dataset_path(), config_path)?;
    let net = load_model(&cfg.model_path(), config_path)?;
    let flags = RunFlags {
        override_window: ov.override_window,
    };
    let out = run_pipeline(&net, &ds, &cfg.config, &cfg.config.method.methods(), &flags)?;
    let files = write_run(cfg, ov, &out, true, "manifest.json")?;
    Ok((out, files))
}

pub fn agreement(cfg: &LoadedConfig, ov: &Overrides, config_path: &Path) -> Result<(RunOutput, Vec<PathBuf>)> {
    let ds = load_dataset(&cfg.dataset_path(), config_path)?;
    let net = load_model(&cfg.model_path(), config_path)?;
    let mut c = cfg.config.clone();
    c.layers.clear();
    let out = run_pipeline(&net, &ds, &c, &[Method::Standard], &RunFlags::default())?;
    if out.agreement.is_none() {
        bail!("no agreement could be computed: {}", out.warnings.join("; "));
    }
    let files = write_run(cfg, ov, &out, false, "agreement_manifest.json")?;
    Ok((out, files))
}

fn fit_json(fit: &ScalingReport) -> Value {
    json!({
        "slope_ns_per_sample": fit.slope,
        "intercept_ns": fit.intercept,
        "r_squared": r6(fit.r_squared),
        "slope_se": fit.slope_se,
        "slope_indistinguishable_from_zero": fit.slope_indistinguishable_from_zero(),
        "noise_warning": fit.noise_warning,
    })
}

pub fn bench(cfg: &LoadedConfig, ov: &Overrides, config_path: &Path) -> Result<Value> {
    let c = &cfg.config;
    if c.parallel {
        bail!("benchmarks run single-threaded; set parallel = false in the config");
    }
    let b = &c.bench;
    if b.repeats == 0 {
        bail!("bench.repeats must be at least 1");
    }
    let ds = load_dataset(&cfg.dataset_path(), config_path)?;
    let net = load_model(&cfg.model_path(), config_path)?;
    let concept = b.concept.clone().unwrap_or_else(|| c.concepts[0].name.clone());
    let tail = net.find_affine_tail()?;
    let cav = etcav_core::cav::CavOptions {
        runs: b.runs,
        parallel: false,
        ..c.cav_options(c.stream("bench/cav"))
    };
    let probe_for = |n: usize| {
        let sizes = ProbeSizes {
            eval_per_class: n,
            ..c.probe_sizes()
        };
        build_probe_set(&ds, &concept, sizes, c.stream(&format!("bench/probe/{n}")))
    };
    let mut warnings = Vec::new();
    if b.repeats < RECOMMENDED_REPEATS {
        warnings.push(format!(
            "noise: {} repeat(s) per point; at least {RECOMMENDED_REPEATS} are recommended",
            b.repeats
        ));
    }

    // Evaluation-sample sweep at the boundary.
    let probes = b.n_eval.iter().map(|&n| probe_for(n)).collect::<etcav_core::Result<Vec<_>>>()?;
    let targets: Vec<_> = probes.iter().map(|p| (&net, tail, p)).collect();
    let (standard, fast) = time_both(&targets, b.class, &cav, b.repeats)?;
    let mut fits = serde_json::Map::new();
    for (method, records) in [(Method::Standard, &standard), (Method::Etcav, &fast)] {
        for phase in [Phase::Sensitivity, Phase::Total] {
            let fit = scaling_fit(&phase_series(records, phase))?;
            fits.insert(format!("{}_{}", method.name(), phase.name()), fit_json(&fit));
        }
    }
    let n_speedups = speedup_report(&standard, &fast)?;

    // Per-layer comparison at a fixed N.
    let probe = probe_for(b.speedup_n)?;
    let mut layers = crate::pipeline::select_layers(&net, c)?;
    layers.retain(|&l| net.tail_is_affine(l) || net.depth_from_tail(l).is_ok_and(|d| d <= crate::pipeline::ETCAV_WINDOW));
    let targets: Vec<_> = layers.iter().map(|&l| (&net, l, &probe)).collect();
    let (layer_std, layer_fast) = time_both(&targets, b.class, &cav, b.repeats)?;
    let layer_speedups = speedup_report(&layer_std, &layer_fast)?;

    // Model-size sweep with untrained widened networks.
    let wide = b
        .width_factors
        .iter()
        .map(|&f| NetworkSpec::mlp(&widened(&c.arch(), f), c.stream(&format!("bench/width/{f}"))))
        .collect::<etcav_core::Result<Vec<_>>>()?;
    let targets = wide
        .iter()
        .map(|w| Ok((w, w.find_affine_tail()?, &probe)))
        .collect::<etcav_core::Result<Vec<_>>>()?;
    let (width_std, width_fast) = time_both(&targets, b.class, &cav, b.repeats)?;
    let gaps = gap_series(&width_std, &width_fast, Phase::Sensitivity)?;
    let total_gaps = gap_series(&width_std, &width_fast, Phase::Total)?;

    let s = stamp(cfg);
    let dir = cfg.output_dir();
    let all: Vec<_> = standard
        .iter()
        .chain(&fast)
        .chain(&layer_std)
        .chain(&layer_fast)
        .chain(&width_std)
        .chain(&width_fast)
        .cloned()
        .collect();
    let comment = format!("# config_sha256={} seed={}\n", s.config_hash, s.seed);
    let mut scaling = comment.clone();
    scaling.push_str(&scaling_csv(Method::Standard, &scaling_fit(&phase_series(&standard, Phase::Sensitivity))?));
    let etcav_scaling = scaling_csv(Method::Etcav, &scaling_fit(&phase_series(&fast, Phase::Sensitivity))?);
    scaling.extend(etcav_scaling.lines().skip(1).map(|l| format!("{l}\n")));
    let mut speedups = n_speedups.clone();
    speedups.extend(layer_speedups.iter().cloned());

    let summary = json!({
        "config_sha256": s.config_hash,
        "seed": s.seed,
        "concept": concept,
        "class": b.class,
        "affine_tail": tail,
        "repeats": b.repeats,
        "fits": fits,
        "speedup_by_n": n_speedups.iter().map(|r| json!({"n_eval": r.n_eval, "inclusive": r6(r.inclusive), "exclusive": r6(r.exclusive)})).collect::<Vec<_>>(),
        "speedup_by_layer": layer_speedups.iter().map(|r| json!({"layer": r.layer, "inclusive": r6(r.inclusive), "exclusive": r6(r.exclusive)})).collect::<Vec<_>>(),
        "gap_by_params": gaps.iter().zip(&total_gaps).map(|(g, t)| json!({
            "params": g.model_params,
            "standard_sensitivity_ns": g.standard_ns,
            "etcav_sensitivity_ns": g.etcav_ns,
            "gap_ns": g.gap_ns(),
            "standard_total_ns": t.standard_ns,
            "etcav_total_ns": t.etcav_ns,
            "total_gap_ns": t.gap_ns(),
        })).collect::<Vec<_>>(),
        "gap_increasing": gap_is_increasing(&gaps),
        "warnings": warnings,
    });
    let mut set = OutputSet::default();
    set.add(dir.join("bench.csv"), format!("{comment}{}", records_csv(&all)));
    set.add(dir.join("scaling.csv"), scaling);
    set.add(dir.join("speedup.csv"), format!("{comment}{}", speedup_csv(&speedups)));
    set.add(dir.join("gap.dat"), format!("{comment}{}", gap_plot_data(&gaps)));
    set.add(dir.join("bench.json"), report::to_pretty(&summary));
    let mut names = set.names();
    names.push("bench_manifest.json".into());
    let manifest = json!({
        "tool": concat!("etcav ", env!("CARGO_PKG_VERSION")),
        "config_sha256": s.config_hash,
        "seed": s.seed,
        "config": config_value(cfg),
        "files": names,
        "cav_base_seed": cav.seed,
        "run_seeds": (0..cav.runs).map(|i| cav.run_seed(i)).collect::<Vec<_>>(),
        "warnings": summary["warnings"],
    });
    set.add(dir.join("bench_manifest.json"), report::to_pretty(&manifest));
    set.commit(ov.force)?;
    Ok(summary)
}

/// Human-readable summary of the reports in the output directory.
pub fn report_text(cfg: &LoadedConfig) -> Result<String> {
    let dir = cfg.output_dir();
    let read = |name: &str| -> Result<Option<Value>> {
        let p = dir.join(name);
        if !p.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&p).with_context(|| format!("cannot read {}", p.display()))?;
        Ok(Some(serde_json::from_str(&text).with_context(|| format!("malformed {}", p.display()))?))
    };
    let tcav = read("tcav.json")?;
    let agreement = read("agreement.json")?;
    let bench = read("bench.json")?;
    if tcav.is_none() && agreement.is_none() && bench.is_none() {
        bail!(
            "no reports in {}; produce them with `etcav run`, `etcav agreement` or `etcav bench`",
            dir.display()
        );
    }
    let mut out = String::new();
    if let Some(t) = tcav {
        out.push_str(&format!("TCAV (config {})\n", t["config_sha256"].as_str().unwrap_or("?")));
        out.push_str(&format!(
            "{:<12} {:>5} {:>5} {:>6} {:<8} {:<6} {:>8} {:>8} {:>8}  sig\n",
            "concept", "class", "layer", "scored", "method", "clf", "mean", "std", "p"
        ));
        for r in t["reports"].as_array().into_iter().flatten() {
            let num = |k: &str| r[k].as_f64().map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
            out.push_str(&format!(
                "{:<12} {:>5} {:>5} {:>6} {:<8} {:<6} {:>8} {:>8} {:>8}  {}\n",
                r["concept"].as_str().unwrap_or(""),
                r["class"],
                r["layer"],
                r["scored_layer"],
                r["method"].as_str().unwrap_or(""),
                r["classifier"].as_str().unwrap_or(""),
                num("mean"),
                num("std"),
                num("p_value"),
                if r["significant"].as_bool() == Some(true) { "*" } else { "" }
            ));
        }
    }
    if let Some(a) = agreement {
        out.push_str(&format!("\nAgreement with layer {}\n", a["reference_layer"]));
        for e in a["entries"].as_array().into_iter().flatten() {
            let v = e["agreement"].as_f64().map(|v| format!("{v:.4}")).unwrap_or_else(|| "NA".into());
            out.push_str(&format!("  depth {:>2}  layer {:>3}  {}\n", e["depth"], e["layer"], v));
        }
    }
    if let Some(b) = bench {
        out.push_str("\nBenchmark fits\n");
        if let Some(fits) = b["fits"].as_object() {
            for (name, f) in fits {
                out.push_str(&format!(
                    "  {name:<22} slope {:>12.3} ns/sample  r2 {:.4}\n",
                    f["slope_ns_per_sample"].as_f64().unwrap_or(f64::NAN),
                    f["r_squared"].as_f64().unwrap_or(f64::NAN)
                ));
            }
        }
        out.push_str(&format!("  time gap grows with model size: {}\n", b["gap_increasing"]));
    }
    Ok(out)
}
