use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

/// Pins the inputs so `--out` only moves the reports.
const PINNED: &str = "dataset_file = \"out/dataset.etds\"\nmodel_file = \"out/model.etcv\"";

const SMALL: &str = r#"
seed = 3
runs = 4
output_dir = "out"

[dataset]
n = 1500
input_dims = [2, 8]
num_classes = 2
class_dims = "0..8"
class_strength = 1.0
noise_sigma = 0.5
split = [0.6, 0.2]

[[concept]]
name = "strong"
dims = "8..12"
strength = 2.0
presence = 0.5

[[concept]]
name = "control"
dims = "12..16"
strength = 0.0
presence = 0.5
sampling = "pool"

[probe]
positives = 60
negatives = 60
eval_per_class = 40
random_set = 60

[network]
hidden = [8, 8, 8, 8, 8, 8]

[train]
epochs = 2

[bench]
n_eval = [10, 20, 30, 40]
repeats = 1
width_factors = [1, 2]
speedup_n = 20
runs = 2
"#;

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new(extra: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("exp.toml"), format!("{extra}\n{SMALL}")).unwrap();
        Self { dir }
    }

    fn config(&self) -> PathBuf {
        self.dir.path().join("exp.toml")
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn etcav(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_etcav"))
            .arg(args[0])
            .arg("--config")
            .arg(self.config())
            .args(&args[1..])
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.etcav(args);
        assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    }

    fn err(&self, args: &[&str]) -> String {
        let out = self.etcav(args);
        assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
        String::from_utf8(out.stderr).unwrap()
    }

    fn trained() -> Self {
        Self::trained_with("")
    }

    fn trained_with(extra: &str) -> Self {
        let f = Self::new(extra);
        f.ok(&["generate"]);
        f.ok(&["train"]);
        f
    }
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn generate_is_reproducible() {
    let f = Fixture::new("");
    f.ok(&["generate"]);
    let first = std::fs::read(f.path("out/dataset.etds")).unwrap();
    f.ok(&["generate", "--out", f.path("again").to_str().unwrap()]);
    assert_eq!(first, std::fs::read(f.path("again/dataset.etds")).unwrap());
}

#[test]
fn overlapping_concept_dims_are_rejected() {
    let f = Fixture::new("");
    let text = std::fs::read_to_string(f.config()).unwrap().replace("dims = \"12..16\"", "dims = \"10..14\"");
    std::fs::write(f.config(), text).unwrap();
    let err = f.err(&["generate"]);
    assert!(err.contains("overlap"), "{err}");
    assert!(!f.path("out/dataset.etds").exists());
}

#[test]
fn missing_model_names_the_fix() {
    let f = Fixture::new("");
    f.ok(&["generate"]);
    let err = f.err(&["run"]);
    assert!(err.contains("model file") && err.contains("etcav train"), "{err}");
}

#[test]
fn outputs_are_not_overwritten_without_force() {
    let f = Fixture::new("");
    f.ok(&["generate"]);
    let err = f.err(&["generate"]);
    assert!(err.contains("--force"), "{err}");
    f.ok(&["generate", "--force"]);
}

#[test]
fn window_rule_refuses_deep_layers_unless_overridden() {
    let f = Fixture::trained_with("layers = [1]\nmethod = \"etcav\"");
    let err = f.err(&["run"]);
    assert!(err.contains("window rule"), "{err}");
    assert!(!f.path("out/tcav.csv").exists());

    f.ok(&["run", "--override-window"]);
    let manifest = json(&f.path("out/manifest.json"));
    let warnings = manifest["warnings"].as_array().unwrap();
    assert!(warnings.iter().any(|w| w.as_str().unwrap().starts_with("fidelity")), "{warnings:?}");
}

#[test]
fn classifier_defaults_to_signal() {
    let f = Fixture::trained_with(PINNED);
    f.ok(&["run"]);
    let tcav = json(&f.path("out/tcav.json"));
    let reports = tcav["reports"].as_array().unwrap();
    assert!(!reports.is_empty());
    assert!(reports.iter().all(|r| r["classifier"] == "signal"));
    f.ok(&["run", "--classifier", "svm", "--out", f.path("svm").to_str().unwrap()]);
    let tcav = json(&f.path("svm/tcav.json"));
    assert!(tcav["reports"].as_array().unwrap().iter().all(|r| r["classifier"] == "svm"));
}

#[test]
fn both_methods_agree_at_the_boundary() {
    let f = Fixture::trained();
    let model: Value = serde_json::from_str(&f.ok(&["train", "--force"])).unwrap();
    let tail = model["affine_tail"].as_u64().unwrap();
    f.ok(&["run", "--method", "both"]);
    let csv = std::fs::read_to_string(f.path("out/tcav.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().filter(|l| !l.starts_with('#')).skip(1).map(|l| l.split(',').collect()).collect();
    let at_tail = |method: &str| -> Vec<(String, String, String, String)> {
        rows.iter()
            .filter(|r| r[2] == tail.to_string() && r[4] == method)
            .map(|r| (r[0].to_string(), r[1].to_string(), r[6].to_string(), r[8].to_string()))
            .collect()
    };
    let standard = at_tail("standard");
    assert!(!standard.is_empty());
    assert_eq!(standard, at_tail("etcav"));
}

#[test]
fn stable_output_is_byte_identical() {
    let f = Fixture::trained_with(PINNED);
    for dir in ["a", "b"] {
        f.ok(&["run", "--stable-output", "--out", f.path(dir).to_str().unwrap()]);
    }
    for name in ["tcav.csv", "tcav.json", "agreement.csv", "agreement.json", "agreement.dat", "manifest.json"] {
        let a = std::fs::read(f.path("a").join(name)).unwrap();
        assert_eq!(a, std::fs::read(f.path("b").join(name)).unwrap(), "{name} differs");
    }
}

#[test]
fn agreement_command_writes_its_curve() {
    let f = Fixture::trained();
    f.ok(&["agreement"]);
    let a = json(&f.path("out/agreement.json"));
    assert_eq!(a["classifier"], "signal");
    let entries = a["entries"].as_array().unwrap();
    assert_eq!(entries[0]["depth"], 0);
    assert_eq!(entries[0]["agreement"], 1.0);
    assert!(f.path("out/agreement_manifest.json").exists());
}

#[test]
fn bench_warns_on_few_repeats_and_refuses_parallel() {
    let f = Fixture::trained();
    f.ok(&["bench"]);
    let b = json(&f.path("out/bench.json"));
    let warnings = b["warnings"].as_array().unwrap();
    assert!(warnings.iter().any(|w| w.as_str().unwrap().starts_with("noise")), "{warnings:?}");
    for name in ["bench.csv", "scaling.csv", "speedup.csv", "gap.dat", "bench_manifest.json"] {
        assert!(f.path("out").join(name).exists(), "{name} missing");
    }

    let p = Fixture::trained_with("parallel = true");
    let err = p.err(&["bench"]);
    assert!(err.contains("single-threaded"), "{err}");
}

#[test]
fn report_prints_saved_results() {
    let f = Fixture::trained();
    f.ok(&["run"]);
    let text = f.ok(&["report"]);
    assert!(text.contains("strong"), "{text}");
}

#[test]
fn invalid_config_keys_are_rejected() {
    let f = Fixture::new("unknown_key = 1");
    let err = f.err(&["generate"]);
    assert!(err.contains("unknown_key"), "{err}");
}
