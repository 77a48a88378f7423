use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn tshk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tshk"))
        .args(args)
        .current_dir(repo_root())
        .output()
        .expect("spawn tshk")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, format!("{body}\n[output]\ndir = {:?}\n", dir.join("out"))).unwrap();
    path.to_string_lossy().into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const SINCOS: &str = r#"
[dataset]
source = "sincos"
p = 8

[ansatz]
n_qubits = 1
embedding = "ry"
sel_layers = 1

[train]
iterations = 15
batch_size = 2

[probe]
delta_max = 3.0
count = 31

[qmp]
device = "line"
line_width = 20
shots = 2000
"#;

#[test]
fn generate_writes_datasets_and_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[dataset]\nsource = \"moons2circles\"\n");
    let out = tshk(&["generate", "-c", &cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let data = dir.path().join("out/data");
    let rows = fs::read_to_string(data.join("train.csv")).unwrap().lines().count();
    assert_eq!(rows, 101);
    let manifest = json(&data.join("train.json"));
    assert_eq!(manifest["n"], 100);
    assert_eq!(manifest["p"], 10);
    assert_eq!(manifest["d"], 2);
    let run = json(&dir.path().join("out/generate.manifest.json"));
    assert_eq!(run["files"].as_object().unwrap().len(), 6);
    assert_eq!(run["config_sha256"].as_str().unwrap().len(), 64);

    let cfg = write_config(dir.path(), "[dataset]\nsource = \"sincos\"\n");
    assert!(tshk(&["generate", "-c", &cfg]).status.success());
    let rows = fs::read_to_string(data.join("train.csv")).unwrap().lines().count();
    assert_eq!(rows, 3);
}

#[test]
fn unknown_key_exits_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[train]\nlearnin_rate = 0.1\n");
    let out = tshk(&["train", "-c", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learnin_rate"));
    assert_eq!(tshk(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn pipeline_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SINCOS);
    let out_dir = dir.path().join("out");
    let read = |name: &str| fs::read(out_dir.join(name)).unwrap();

    for cmd in ["train", "eval", "probe", "qmp"] {
        let out = tshk(&["--threads", "2", cmd, "-c", &cfg]);
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let first: Vec<Vec<u8>> = ["model.json", "trace.csv", "metrics.json", "probe.csv", "qmp_elements.csv"]
        .iter()
        .map(|n| read(n))
        .collect();
    for cmd in ["train", "eval", "probe", "qmp"] {
        assert!(tshk(&[cmd, "-c", &cfg]).status.success());
    }
    let second: Vec<Vec<u8>> = ["model.json", "trace.csv", "metrics.json", "probe.csv", "qmp_elements.csv"]
        .iter()
        .map(|n| read(n))
        .collect();
    assert_eq!(first, second);

    let trace = String::from_utf8(read("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 16);
    let eta = String::from_utf8(read("eta.csv")).unwrap();
    assert_eq!(eta.lines().count(), 9);

    let probe = String::from_utf8(read("probe.csv")).unwrap();
    let rows: Vec<&str> = probe.lines().skip(1).collect();
    assert_eq!(rows.len(), 31);
    let f0: f64 = rows[0].split(',').nth(1).unwrap().parse().unwrap();
    assert!((f0 - 1.0).abs() < 1e-12);

    let metrics = json(&out_dir.join("metrics.json"));
    assert!(metrics["balanced_accuracy"].as_f64().unwrap() >= 0.0);
    let qmp = json(&out_dir.join("qmp_report.json"));
    assert_eq!(qmp["max_abs_gram_diff"].as_f64(), Some(0.0));
    assert_eq!(qmp["trf"], 10);
    let manifest = json(&out_dir.join("train.manifest.json"));
    assert_eq!(manifest["seed"], 0);
    assert_eq!(manifest["config"]["train"]["iterations"], 15);
}

#[test]
fn zero_iterations_and_seed_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SINCOS.replace("iterations = 15", "iterations = 0"));
    let out = tshk(&["train", "-c", &cfg, "--seed", "9"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = json(&dir.path().join("out/train.manifest.json"));
    assert_eq!(manifest["seed"], 9);
    let model = json(&dir.path().join("out/model.json"));
    let eta: Vec<f64> = serde_json::from_value(model["eta"].clone()).unwrap();
    assert!((eta.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn model_dataset_mismatch_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SINCOS.replace("iterations = 15", "iterations = 0"));
    assert!(tshk(&["train", "-c", &cfg]).status.success());
    let other = write_config(dir.path(), &SINCOS.replace("p = 8", "p = 5"));
    let out = tshk(&["eval", "-c", &other]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let out = tshk(&["eval", "-c", &other, "--model", "/nonexistent/model.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gunpoint_call_accounting() {
    let dir = tempfile::tempdir().unwrap();
    let body = r#"
[dataset]
source = "ucr"
train_path = "data/gunpoint/GunPoint_TRAIN.tsv"
test_path = "data/gunpoint/GunPoint_TEST.tsv"
decimate = 3

[ansatz]
n_qubits = 2
embedding_layers = 1
sel_layers = 1

[train]
iterations = 0

[qmp]
layout = "data/layouts/heavy_hex_127_35.json"
shots = 500
max_pairs = 70
"#;
    let cfg = write_config(dir.path(), body);
    assert!(tshk(&["train", "-c", &cfg]).status.success());
    let out = tshk(&["qmp", "-c", &cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = json(&dir.path().join("out/qmp_report.json"));
    assert_eq!(r["trf"], 35);
    assert_eq!(r["serial_calls"], 436_250);
    assert_eq!(r["packed_calls"], 12_465);
    assert_eq!(r["joint_runs"], 2);
    assert_eq!(r["min_fidelity_serial"].as_f64(), Some(1.0));
}
