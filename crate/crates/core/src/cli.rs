//! The `tshk` command line: one TOML config per run, five subcommands.
//!
//! Precedence for overlapping settings: command-line flags, then the config
//! file, then built-in defaults. Every command writes its artifacts plus a
//! `<command>.manifest.json` into the output directory.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ansatz::{AnsatzSpec, Embedding};
use crate::data::{gen_moons2circles, gen_sincos, load_ucr, Dataset, DatasetManifest, FeatureScaler, Moons2CirclesConfig};
use crate::error::{Error, Result};
use crate::kernel::{combined_kernel, cross_gram, gram_stack, slice_circuits, KernelMode, TimeMap, TrainedTshk};
use crate::qccnet::{train, weights_from_stack, TrainConfig};
use crate::qmp::{
    exact_distribution, heavy_hex_127, heavy_hex_layout_35, pack, packed_calls, result_fidelity, run_packed,
    run_serial, serial_calls, trf, window_counts, Device, QmpLayout,
};
use crate::svm::{evaluate_combined, evaluate_vote, tikhonov_regularize, Evaluation, PredictionMode};
use crate::timeprobe::{delta_grid, probe};
use crate::util::{mix_seed, read_json, write_json, write_text};

/// Which split picks the best restart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetConfig {
    Moons2circles(MoonsSource),
    Sincos(SincosSource),
    Ucr(FileSource),
    Csv(FileSource),
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Moons2circles(MoonsSource::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MoonsSource {
    pub n_instances: usize,
    pub p: usize,
    pub noise_std: f64,
    /// Training split seed; validation and test default to `seed + 1`, `seed + 2`.
    pub seed: u64,
    pub validation_seed: Option<u64>,
    pub test_seed: Option<u64>,
    pub selection: Selection,
}

impl Default for MoonsSource {
    fn default() -> Self {
        let m = Moons2CirclesConfig::default();
        MoonsSource {
            n_instances: m.n_instances,
            p: m.p,
            noise_std: m.noise_std,
            seed: m.seed,
            validation_seed: None,
            test_seed: None,
            selection: Selection::Validation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SincosSource {
    pub p: usize,
}

impl Default for SincosSource {
    fn default() -> Self {
        SincosSource { p: 10 }
    }
}

/// UCR text files, or CSV files written by `tshk generate` (each with a
/// `.json` manifest next to it).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileSource {
    pub train_path: PathBuf,
    pub test_path: PathBuf,
    #[serde(default)]
    pub validation_path: Option<PathBuf>,
    #[serde(default = "one")]
    pub decimate: usize,
    #[serde(default)]
    pub selection: Option<Selection>,
}

fn one() -> usize {
    1
}

/// Target range of the per-feature affine scaling fitted on the training split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalingConfig {
    pub lo: f64,
    pub hi: f64,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        ScalingConfig {
            lo: 0.0,
            hi: std::f64::consts::PI,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    Qaoa,
    Ry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnsatzConfig {
    pub n_qubits: usize,
    pub embedding: EmbeddingKind,
    pub embedding_layers: usize,
    pub sel_layers: usize,
    /// Defaults to `min(n_qubits, 2)`.
    pub walsh_locality: Option<usize>,
}

impl Default for AnsatzConfig {
    fn default() -> Self {
        AnsatzConfig {
            n_qubits: 3,
            embedding: EmbeddingKind::Qaoa,
            embedding_layers: 3,
            sel_layers: 3,
            walsh_locality: None,
        }
    }
}

impl AnsatzConfig {
    pub fn spec(&self, n_features: usize) -> Result<AnsatzSpec> {
        let embedding = match self.embedding {
            EmbeddingKind::Qaoa => Embedding::Qaoa {
                layers: self.embedding_layers,
            },
            EmbeddingKind::Ry => Embedding::RyFixed,
        };
        let spec = AnsatzSpec::new(self.n_qubits, n_features, embedding, self.sel_layers)?;
        match self.walsh_locality {
            Some(k) => spec.with_locality(k),
            None => Ok(spec),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    Exact,
    Shots,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmConfig {
    pub c: f64,
    pub prediction: PredictionMode,
    pub readout: Readout,
    pub shots: u64,
    pub shot_seed: u64,
    /// Shift each training slice to the PSD cone and recompute the weights.
    pub regularize: bool,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            c: 100.0,
            prediction: PredictionMode::Combined,
            readout: Readout::Exact,
            shots: 1024,
            shot_seed: 0,
            regularize: false,
        }
    }
}

impl SvmConfig {
    fn kernel_mode(&self) -> KernelMode {
        match self.readout {
            Readout::Exact => KernelMode::Exact,
            Readout::Shots => KernelMode::Shots {
                count: self.shots,
                seed: self.shot_seed,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    /// Largest evolution-time lag.
    pub delta_max: f64,
    pub count: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            delta_max: 2.0,
            count: 201,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceKind {
    Line,
    HeavyHex127,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QmpConfig {
    /// Layout JSON; overrides `device`.
    pub layout: Option<PathBuf>,
    pub device: DeviceKind,
    pub line_width: usize,
    pub buffer: usize,
    pub shots: u64,
    pub flip_prob: f64,
    pub seed: u64,
    /// Time index of the training Gram slice to run.
    pub slice: usize,
    /// Cap on the number of kernel elements run (all pairs when absent).
    pub max_pairs: Option<usize>,
}

impl Default for QmpConfig {
    fn default() -> Self {
        QmpConfig {
            layout: None,
            device: DeviceKind::HeavyHex127,
            line_width: 127,
            buffer: 1,
            shots: 10_000,
            flip_prob: 0.0,
            seed: 0,
            slice: 0,
            max_pairs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub scaling: ScalingConfig,
    pub time: TimeMap,
    pub ansatz: AnsatzConfig,
    pub train: TrainConfig,
    pub svm: SvmConfig,
    pub probe: ProbeConfig,
    pub qmp: QmpConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the effective (post-override) config.
    pub fn hash(&self) -> String {
        sha256_hex(self.to_toml().as_bytes())
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Raw (unscaled) splits.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub validation: Option<Dataset>,
    pub test: Dataset,
    pub selection: Selection,
    pub seed: Option<u64>,
}

impl Splits {
    fn selection_split(&self) -> Result<&Dataset> {
        match self.selection {
            Selection::Train => Ok(&self.train),
            Selection::Test => Ok(&self.test),
            Selection::Validation => self
                .validation
                .as_ref()
                .ok_or_else(|| Error::config("dataset.selection = \"validation\" but no validation split")),
        }
    }
}

fn load_csv(path: &Path) -> Result<Dataset> {
    let manifest: DatasetManifest = read_json(&path.with_extension("json"))?;
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ds = Dataset::from_csv(&manifest.name, &text, manifest.times, manifest.d)?;
    if ds.len() != manifest.n {
        return Err(Error::usage(format!(
            "{} has {} rows but its manifest says {}",
            path.display(),
            ds.len(),
            manifest.n
        )));
    }
    Ok(ds)
}

pub fn load_splits(cfg: &DatasetConfig) -> Result<Splits> {
    match cfg {
        DatasetConfig::Moons2circles(m) => {
            let gen = |seed| {
                gen_moons2circles(&Moons2CirclesConfig {
                    n_instances: m.n_instances,
                    p: m.p,
                    noise_std: m.noise_std,
                    seed,
                })
            };
            Ok(Splits {
                train: gen(m.seed)?,
                validation: Some(gen(m.validation_seed.unwrap_or(m.seed.wrapping_add(1)))?),
                test: gen(m.test_seed.unwrap_or(m.seed.wrapping_add(2)))?,
                selection: m.selection,
                seed: Some(m.seed),
            })
        }
        DatasetConfig::Sincos(s) => {
            let ds = gen_sincos(s.p, 0)?;
            Ok(Splits {
                train: ds.clone(),
                validation: None,
                test: ds,
                selection: Selection::Train,
                seed: None,
            })
        }
        DatasetConfig::Ucr(f) | DatasetConfig::Csv(f) => {
            let csv = matches!(cfg, DatasetConfig::Csv(_));
            let read = |p: &Path| -> Result<Dataset> {
                let ds = if csv { load_csv(p)? } else { crate::data::read_ucr(p)? };
                ds.decimate(f.decimate)
            };
            let (train, test) = if csv {
                (read(&f.train_path)?, read(&f.test_path)?)
            } else {
                let (a, b) = load_ucr(&f.train_path, &f.test_path)?;
                (a.decimate(f.decimate)?, b.decimate(f.decimate)?)
            };
            let validation = f.validation_path.as_deref().map(read).transpose()?;
            let selection = f.selection.unwrap_or(if validation.is_some() {
                Selection::Validation
            } else {
                Selection::Train
            });
            Ok(Splits {
                train,
                validation,
                test,
                selection,
                seed: None,
            })
        }
    }
}

#[derive(Debug, Serialize)]
struct Manifest {
    command: String,
    version: String,
    config_sha256: String,
    seed: u64,
    config: toml::Value,
    /// File name to SHA-256 of its contents.
    files: BTreeMap<String, String>,
    created_unix: u64,
}

struct Outputs {
    dir: PathBuf,
    files: BTreeMap<String, String>,
}

impl Outputs {
    fn new(dir: &Path) -> Self {
        Outputs {
            dir: dir.to_path_buf(),
            files: BTreeMap::new(),
        }
    }

    fn text(&mut self, name: &str, text: &str) -> Result<()> {
        write_text(&self.dir.join(name), text)?;
        self.files.insert(name.to_string(), sha256_hex(text.as_bytes()));
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.text(name, &text)
    }

    fn finish(self, command: &str, cfg: &RunConfig, seed: u64) -> Result<PathBuf> {
        let manifest = Manifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256: cfg.hash(),
            seed,
            config: toml::Value::try_from(cfg).map_err(|e| Error::config(e.to_string()))?,
            files: self.files,
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        };
        let path = self.dir.join(format!("{command}.manifest.json"));
        write_json(&path, &manifest)?;
        Ok(path)
    }
}

fn eta_csv(model: &TrainedTshk) -> String {
    let mut s = String::from("t,eta\n");
    for (t, w) in model.times.iter().zip(model.eta.as_slice()) {
        s.push_str(&format!("{t:?},{w:?}\n"));
    }
    s
}

/// Write each split as `data/<split>.csv` plus `data/<split>.json`.
pub fn cmd_generate(cfg: &RunConfig) -> Result<PathBuf> {
    let splits = load_splits(&cfg.dataset)?;
    let mut out = Outputs::new(&cfg.output.dir);
    let mut named = vec![("train", &splits.train), ("test", &splits.test)];
    if let Some(v) = &splits.validation {
        named.push(("validation", v));
    }
    for (name, ds) in named {
        out.text(&format!("data/{name}.csv"), &ds.to_csv())?;
        out.json(&format!("data/{name}.json"), &ds.manifest(splits.seed))?;
    }
    out.finish("generate", cfg, splits.seed.unwrap_or(0))
}

/// Train and write `model.json`, `trace.csv`, `restarts.csv` and `eta.csv`.
pub fn cmd_train(cfg: &RunConfig) -> Result<(PathBuf, TrainedTshk)> {
    let splits = load_splits(&cfg.dataset)?;
    let scaler = FeatureScaler::fit(&splits.train, cfg.scaling.lo, cfg.scaling.hi)?;
    let train_ds = scaler.apply(&splits.train)?;
    let eval_ds = scaler.apply(splits.selection_split()?)?;
    let spec = cfg.ansatz.spec(train_ds.d)?;
    log::info!(
        "training {} on {} instances (p = {}), {} restart(s)",
        spec.label(),
        train_ds.len(),
        train_ds.p(),
        cfg.train.restarts
    );
    let outcome = train(&train_ds, &eval_ds, &spec, cfg.time, scaler, &cfg.train)?;
    let mut out = Outputs::new(&cfg.output.dir);
    out.json("model.json", &outcome.model)?;
    out.text("trace.csv", &outcome.trace_csv())?;
    out.text("restarts.csv", &outcome.restarts_csv())?;
    out.text("eta.csv", &eta_csv(&outcome.model))?;
    out.finish("train", cfg, cfg.train.seed)?;
    Ok((cfg.output.dir.join("model.json"), outcome.model))
}

pub fn load_model(path: &Path) -> Result<TrainedTshk> {
    let model: TrainedTshk = read_json(path)?;
    model.spec.validate()?;
    model.theta.check(&model.spec)?;
    Ok(model)
}

fn scaled_splits(model: &TrainedTshk, splits: &Splits) -> Result<(Dataset, Dataset)> {
    let train_ds = model.scaler.apply(&splits.train)?;
    let test_ds = model.scaler.apply(&splits.test)?;
    model.check_dataset(&train_ds)?;
    model.check_dataset(&test_ds)?;
    Ok((train_ds, test_ds))
}

/// Score the test split; writes `metrics.json`, `decisions.csv`, `eta.csv`.
pub fn cmd_eval(cfg: &RunConfig, model: &TrainedTshk) -> Result<Evaluation> {
    let splits = load_splits(&cfg.dataset)?;
    let (train_ds, test_ds) = scaled_splits(model, &splits)?;
    let mode = cfg.svm.kernel_mode();
    let stack = gram_stack(&model.spec, &model.theta, &train_ds.instances, &model.evolution_times(), mode)?;
    let (test_mats, _) = cross_gram(model, &train_ds.instances, &test_ds.instances, mode)?;
    let (y_tr, y_te) = (train_ds.labels(), test_ds.labels());
    // regularized kernels get fresh weights from the corrected slices
    let (mats, eta) = if cfg.svm.regularize {
        let mats = stack.mats.iter().map(tikhonov_regularize).collect::<Result<Vec<_>>>()?;
        let t = &cfg.train;
        let (eta, _) = weights_from_stack(&mats, &y_tr, t.lambda, t.inner_tol, t.inner_max_iter)?;
        (mats, eta)
    } else {
        (stack.mats, model.eta.clone())
    };
    let eval = match cfg.svm.prediction {
        PredictionMode::Combined => {
            let k_train = combined_kernel(&mats, &eta)?;
            let k_test = combined_kernel(&test_mats, &eta)?;
            evaluate_combined(&k_train, &y_tr, &k_test, &y_te, cfg.svm.c)?
        }
        PredictionMode::Vote => evaluate_vote(&mats, &y_tr, &test_mats, &y_te, &eta, cfg.svm.c)?,
    };
    let mut out = Outputs::new(&cfg.output.dir);
    out.json("metrics.json", &eval.report)?;
    out.text("decisions.csv", &eval.decisions_csv(&y_te))?;
    out.text("eta.csv", &eta_csv(model))?;
    out.finish("eval", cfg, model.seed)?;
    Ok(eval)
}

/// Overlap probe over `[0, delta_max]`; writes `probe.csv` and `probe_markers.csv`.
pub fn cmd_probe(cfg: &RunConfig, model: &TrainedTshk) -> Result<crate::timeprobe::ProbeResult> {
    let deltas = delta_grid(cfg.probe.delta_max, cfg.probe.count)?;
    let r = probe(
        &model.spec,
        &model.theta.beta,
        &model.theta.gamma,
        &deltas,
        &model.evolution_times(),
    )?;
    let mut out = Outputs::new(&cfg.output.dir);
    out.text("probe.csv", &r.to_csv())?;
    out.text("probe_markers.csv", &r.markers_csv())?;
    out.finish("probe", cfg, model.seed)?;
    Ok(r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QmpElement {
    pub i: usize,
    pub j: usize,
    pub exact: f64,
    pub serial: f64,
    pub packed: f64,
    /// Packed histogram scored against the serial one; `None` if the serial
    /// histogram is uniform.
    pub fidelity_serial: Option<f64>,
    /// Packed histogram scored against the exact distribution.
    pub fidelity_exact: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QmpReport {
    pub slice: usize,
    pub circuit_qubits: usize,
    pub trf: usize,
    pub active_qubits: usize,
    pub device_width: usize,
    pub elements: usize,
    pub joint_runs: usize,
    pub shots: u64,
    pub flip_prob: f64,
    pub max_abs_gram_diff: f64,
    pub mean_fidelity_serial: f64,
    pub min_fidelity_serial: f64,
    pub mean_fidelity_exact: f64,
    pub min_fidelity_exact: f64,
    /// Kernel evaluations for the full training and test Gram stacks.
    pub serial_calls: u64,
    pub packed_calls: u64,
}

/// Layout for `n`-qubit circuits from the config.
pub fn qmp_layout(cfg: &QmpConfig, n: usize) -> Result<QmpLayout> {
    if let Some(path) = &cfg.layout {
        let layout = QmpLayout::load(path)?;
        if layout.assignments.iter().any(|a| a.qubits.len() != n) {
            return Err(Error::usage(format!("layout {} is not for {n}-qubit circuits", path.display())));
        }
        return Ok(layout);
    }
    match cfg.device {
        DeviceKind::HeavyHex127 if n == 2 && cfg.buffer == 1 => Ok(heavy_hex_layout_35()),
        DeviceKind::HeavyHex127 => pack(
            usize::MAX,
            n,
            &Device::Graph {
                width: 127,
                edges: heavy_hex_127(),
            },
            cfg.buffer,
        ),
        DeviceKind::Line => pack(usize::MAX, n, &Device::Line(cfg.line_width), cfg.buffer),
    }
}

/// Run one training Gram slice serially and packed; writes `qmp_report.json`,
/// `qmp_elements.csv` and `layout.json`.
pub fn cmd_qmp(cfg: &RunConfig, model: &TrainedTshk) -> Result<QmpReport> {
    let q = &cfg.qmp;
    let splits = load_splits(&cfg.dataset)?;
    let (train_ds, test_ds) = scaled_splits(model, &splits)?;
    let times = model.evolution_times();
    let t = *times
        .get(q.slice)
        .ok_or_else(|| Error::config(format!("qmp.slice = {} outside p = {}", q.slice, times.len())))?;
    let mut circuits = slice_circuits(&model.spec, &model.theta, &train_ds.instances, q.slice, t)?;
    if let Some(cap) = q.max_pairs {
        circuits.truncate(cap);
    }
    let n = model.spec.n_qubits;
    let layout = qmp_layout(q, n)?;
    let width = trf(&layout);
    let zeros = "0".repeat(n);
    let mut elements = Vec::with_capacity(circuits.len());
    let mut joint_runs = 0;
    for (b, batch) in circuits.chunks(width).enumerate() {
        let seed = mix_seed(q.seed, &[b as u64]);
        let mut sub = layout.clone();
        sub.assignments.truncate(batch.len());
        let progs: Vec<_> = batch.iter().map(|(_, c)| c.clone()).collect();
        let joint = run_packed(&sub, &progs, q.shots, seed, q.flip_prob)?;
        joint_runs += 1;
        for (a, ((i, j), c)) in sub.assignments.iter().zip(batch) {
            let packed = window_counts(&joint, &a.qubits)?;
            let serial = run_serial(c, a.circuit, q.shots, seed)?;
            let exact = exact_distribution(c);
            let p_packed = packed.distribution();
            let outcomes = 1usize << n;
            elements.push(QmpElement {
                i: *i,
                j: *j,
                exact: exact[&zeros],
                serial: serial.get(&zeros) as f64 / q.shots as f64,
                packed: packed.get(&zeros) as f64 / q.shots as f64,
                fidelity_serial: result_fidelity(&p_packed, &serial.distribution(), outcomes).ok(),
                fidelity_exact: result_fidelity(&p_packed, &exact, outcomes).ok(),
            });
        }
    }
    let stats = |f: fn(&QmpElement) -> Option<f64>| {
        let v: Vec<f64> = elements.iter().filter_map(f).collect();
        if v.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            (v.iter().sum::<f64>() / v.len() as f64, v.iter().copied().fold(f64::INFINITY, f64::min))
        }
    };
    let (mean_s, min_s) = stats(|e| e.fidelity_serial);
    let (mean_e, min_e) = stats(|e| e.fidelity_exact);
    let serial_total = serial_calls(train_ds.p(), train_ds.len(), test_ds.len());
    let report = QmpReport {
        slice: q.slice,
        circuit_qubits: n,
        trf: width,
        active_qubits: layout.active_qubits(),
        device_width: layout.device_width,
        elements: elements.len(),
        joint_runs,
        shots: q.shots,
        flip_prob: q.flip_prob,
        max_abs_gram_diff: elements.iter().map(|e| (e.serial - e.packed).abs()).fold(0.0, f64::max),
        mean_fidelity_serial: mean_s,
        min_fidelity_serial: min_s,
        mean_fidelity_exact: mean_e,
        min_fidelity_exact: min_e,
        serial_calls: serial_total,
        packed_calls: packed_calls(serial_total, width),
    };
    let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
    let mut csv = String::from("i,j,exact,serial,packed,fidelity_serial,fidelity_exact\n");
    for e in &elements {
        csv.push_str(&format!(
            "{},{},{:?},{:?},{:?},{},{}\n",
            e.i,
            e.j,
            e.exact,
            e.serial,
            e.packed,
            opt(e.fidelity_serial),
            opt(e.fidelity_exact)
        ));
    }
    let mut out = Outputs::new(&cfg.output.dir);
    out.json("qmp_report.json", &report)?;
    out.text("qmp_elements.csv", &csv)?;
    out.json("layout.json", &layout)?;
    out.finish("qmp", cfg, q.seed)?;
    Ok(report)
}

#[derive(Debug, Parser)]
#[command(name = "tshk", version, about = "Trainable time-series quantum kernels")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output.dir`).
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Training seed (overrides `train.seed`).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct WithModel {
    #[command(flatten)]
    common: Common,
    /// Trained model (defaults to `<out>/model.json`).
    #[arg(short, long)]
    model: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the dataset splits as CSV plus manifests.
    Generate(Common),
    /// Train a kernel and write the model, loss trace and weights.
    Train(Common),
    /// Evaluate a trained kernel with an SVM on the test split.
    Eval(WithModel),
    /// Tabulate the embedding-overlap probe of a trained kernel.
    Probe(WithModel),
    /// Compare serial and multi-programmed execution of one Gram slice.
    Qmp(WithModel),
}

fn resolve(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(o) = &common.out {
        cfg.output.dir = o.clone();
    }
    if let Some(s) = common.seed {
        cfg.train.seed = s;
    }
    Ok(cfg)
}

fn model_for(args: &WithModel, cfg: &RunConfig) -> Result<TrainedTshk> {
    let path = args.model.clone().unwrap_or_else(|| cfg.output.dir.join("model.json"));
    load_model(&path)
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(c) => {
            let cfg = resolve(&c)?;
            let m = cmd_generate(&cfg)?;
            println!("wrote {}", m.display());
        }
        Command::Train(c) => {
            let cfg = resolve(&c)?;
            let (path, model) = cmd_train(&cfg)?;
            println!("wrote {}", path.display());
            println!("eta = {:.4?}", model.eta.as_slice());
        }
        Command::Eval(a) => {
            let cfg = resolve(&a.common)?;
            let model = model_for(&a, &cfg)?;
            let r = cmd_eval(&cfg, &model)?.report;
            println!(
                "F1 {:.4}  balanced accuracy {:.4}  ROC AUC {:.4}  accuracy {:.4}",
                r.f1, r.balanced_accuracy, r.roc_auc, r.accuracy
            );
        }
        Command::Probe(a) => {
            let cfg = resolve(&a.common)?;
            let model = model_for(&a, &cfg)?;
            let r = cmd_probe(&cfg, &model)?;
            let lo = r.values.iter().copied().fold(f64::INFINITY, f64::min);
            println!("{} lags, min overlap {lo:.4}", r.values.len());
        }
        Command::Qmp(a) => {
            let cfg = resolve(&a.common)?;
            let model = model_for(&a, &cfg)?;
            let r = cmd_qmp(&cfg, &model)?;
            println!(
                "TRF {}  elements {}  joint runs {}  fidelity mean {:.5} min {:.5}  calls serial {} packed {}",
                r.trf, r.elements, r.joint_runs, r.mean_fidelity_serial, r.min_fidelity_serial, r.serial_calls, r.packed_calls
            );
        }
    }
    Ok(())
}

/// Parse `args`, run, and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool already configured: {e}");
        }
    }
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
