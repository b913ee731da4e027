//! Config-driven experiment runner: data, training with checkpoint reuse,
//! attack sweeps, stealth analysis, the noise study and report files.
//!
//! Accuracy CSV columns, in order:
//! `model,attack,scenario,source,psr_db,realized_psr_db,accuracy`.
//! Clean rows use attack `none` and `-inf` for both PSR columns.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attacks::{accuracy_of, craft, AttackConfig, AttackKind, GradientOracle, QvcClassifier};
use crate::cnn::{train_cnn, write_cnn_history, CNNModel, CnnTrainConfig};
use crate::datasets::{
    default_specs, generate_fourier_dataset, load_dataset, save_dataset, Dataset, FourierClassSpec,
};
use crate::encoding::{aae_ansatz, exact_encode_report, normalize_signal, AaeConfig};
use crate::error::{Error, Result};
use crate::optim::AdamConfig;
use crate::qvc::{
    train_qvc, write_loss_history, AaeCache, EncoderKind, QVCModel, QvcTrainConfig, SignalEncoder,
    DEFAULT_TEMPERATURE,
};
use crate::stealth::perceptibility_rate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "binary")]
    Binary,
    #[serde(rename = "3class")]
    ThreeClass,
}

impl Task {
    pub fn n_classes(self) -> usize {
        match self {
            Task::Binary => 2,
            Task::ThreeClass => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Synthetic {
        train_per_class: usize,
        test_per_class: usize,
        /// One spec per class; defaults to square, sawtooth, triangle.
        #[serde(default)]
        specs: Option<Vec<FourierClassSpec>>,
    },
    Files {
        train: PathBuf,
        test: PathBuf,
    },
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synthetic {
            train_per_class: 500,
            test_per_class: 100,
            specs: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Cnn,
    Qvc { layers: usize },
    AaeQvc { aae_layers: usize, qvc_layers: usize },
}

impl ModelSpec {
    pub fn name(&self) -> String {
        match self {
            ModelSpec::Cnn => "cnn".into(),
            ModelSpec::Qvc { layers } => format!("qvc{layers}"),
            ModelSpec::AaeQvc {
                aae_layers,
                qvc_layers,
            } => format!("aae{aae_layers}_qvc{qvc_layers}"),
        }
    }

    fn noisy_name(&self, noise_p: f64) -> String {
        if noise_p > 0.0 {
            format!("{}_noise{noise_p}", self.name())
        } else {
            self.name()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub kind: AttackKind,
    #[serde(default = "default_pgd_iters")]
    pub pgd_iters: usize,
    #[serde(default = "default_pgd_alpha")]
    pub pgd_alpha_fraction: f64,
    #[serde(default = "default_true")]
    pub pgd_random_init: bool,
    #[serde(default = "default_uap_subset")]
    pub uap_subset_size: usize,
}

fn default_pgd_iters() -> usize {
    10
}
fn default_pgd_alpha() -> f64 {
    0.25
}
fn default_true() -> bool {
    true
}
fn default_uap_subset() -> usize {
    100
}
fn default_alpha() -> f64 {
    0.05
}

impl AttackSpec {
    pub fn new(kind: AttackKind) -> Self {
        Self {
            kind,
            pgd_iters: default_pgd_iters(),
            pgd_alpha_fraction: default_pgd_alpha(),
            pgd_random_init: true,
            uap_subset_size: default_uap_subset(),
        }
    }

    pub fn at(&self, psr_db: f64) -> AttackConfig {
        AttackConfig {
            kind: self.kind,
            psr_db,
            pgd_iters: self.pgd_iters,
            pgd_alpha_fraction: self.pgd_alpha_fraction,
            pgd_random_init: self.pgd_random_init,
            uap_subset_size: self.uap_subset_size,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub cnn_epochs: usize,
    pub cnn_lr: f64,
    pub cnn_batch_size: usize,
    pub cnn_dropout: f64,
    pub qvc_epochs: usize,
    pub qvc_lr: f64,
    pub qvc_batch_size: usize,
    pub qvc_patience: usize,
    pub qvc_val_fraction: f64,
    pub qvc_init_scale: f64,
    pub qvc_temperature: f64,
    pub aae_iterations: usize,
    pub aae_lr: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let q = QvcTrainConfig::default();
        let c = CnnTrainConfig::default();
        let a = AaeConfig::default();
        Self {
            cnn_epochs: c.epochs,
            cnn_lr: c.lr,
            cnn_batch_size: c.batch_size,
            cnn_dropout: 0.2,
            qvc_epochs: q.epochs,
            qvc_lr: q.lr,
            qvc_batch_size: q.batch_size,
            qvc_patience: q.patience,
            qvc_val_fraction: q.val_fraction,
            qvc_init_scale: q.init_scale,
            qvc_temperature: DEFAULT_TEMPERATURE,
            aae_iterations: a.iterations,
            aae_lr: a.adam.lr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    #[serde(default)]
    pub dataset: DatasetSource,
    pub models: Vec<ModelSpec>,
    #[serde(default)]
    pub attacks: Vec<AttackSpec>,
    #[serde(default)]
    pub psr_grid: Vec<f64>,
    #[serde(default)]
    pub noise_p: f64,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default = "default_alpha")]
    pub stealth_alpha: f64,
    /// Also write every crafted set as a dataset file with a JSON sidecar.
    #[serde(default)]
    pub save_adversarial: bool,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(if path == "." { String::new() } else { path }, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::config("models", "at least one model is required"));
        }
        for (i, m) in self.models.iter().enumerate() {
            let bad = match *m {
                ModelSpec::Cnn => false,
                ModelSpec::Qvc { layers } => layers == 0,
                ModelSpec::AaeQvc {
                    aae_layers,
                    qvc_layers,
                } => aae_layers == 0 || qvc_layers == 0,
            };
            if bad {
                return Err(Error::config(format!("models[{i}]"), "layer counts must be positive"));
            }
            if self.models[..i].contains(m) {
                return Err(Error::config(format!("models[{i}]"), "duplicate model"));
            }
        }
        for (i, p) in self.psr_grid.iter().enumerate() {
            if !p.is_finite() {
                return Err(Error::config(format!("psr_grid[{i}]"), "must be finite"));
            }
            if i > 0 && *p <= self.psr_grid[i - 1] {
                return Err(Error::config(format!("psr_grid[{i}]"), "grid must be strictly increasing"));
            }
        }
        if !self.attacks.is_empty() && self.psr_grid.is_empty() {
            return Err(Error::config("psr_grid", "attacks need a non-empty grid"));
        }
        for (i, a) in self.attacks.iter().enumerate() {
            a.at(0.0)
                .validate()
                .map_err(|e| Error::config(format!("attacks[{i}]"), e.to_string()))?;
        }
        if !(0.0..=1.0).contains(&self.noise_p) {
            return Err(Error::config("noise_p", "must lie in [0, 1]"));
        }
        if !(self.stealth_alpha > 0.0 && self.stealth_alpha < 1.0) {
            return Err(Error::config("stealth_alpha", "must lie in (0, 1)"));
        }
        let t = &self.training;
        let positive = [
            ("training.cnn_epochs", t.cnn_epochs as f64),
            ("training.cnn_lr", t.cnn_lr),
            ("training.cnn_batch_size", t.cnn_batch_size as f64),
            ("training.qvc_epochs", t.qvc_epochs as f64),
            ("training.qvc_lr", t.qvc_lr),
            ("training.qvc_batch_size", t.qvc_batch_size as f64),
            ("training.qvc_patience", t.qvc_patience as f64),
            ("training.qvc_temperature", t.qvc_temperature),
            ("training.aae_iterations", t.aae_iterations as f64),
            ("training.aae_lr", t.aae_lr),
        ];
        for (path, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(path, "must be positive"));
            }
        }
        if !(0.0..1.0).contains(&t.cnn_dropout) {
            return Err(Error::config("training.cnn_dropout", "must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&t.qvc_val_fraction) {
            return Err(Error::config("training.qvc_val_fraction", "must lie in [0, 1)"));
        }
        match &self.dataset {
            DatasetSource::Synthetic {
                train_per_class,
                test_per_class,
                specs,
            } => {
                if *train_per_class == 0 || *test_per_class == 0 {
                    return Err(Error::config("dataset.synthetic", "per-class counts must be positive"));
                }
                if let Some(specs) = specs {
                    if specs.len() != self.task.n_classes() {
                        return Err(Error::config(
                            "dataset.synthetic.specs",
                            format!("{} specs for {} classes", specs.len(), self.task.n_classes()),
                        ));
                    }
                    for (i, s) in specs.iter().enumerate() {
                        s.validate()
                            .map_err(|e| Error::config(format!("dataset.synthetic.specs[{i}]"), e.to_string()))?;
                    }
                }
            }
            DatasetSource::Files { .. } => {}
        }
        Ok(())
    }
}

/// Sub-seed for a named pipeline stage.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(label.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub struct Data {
    pub train: Dataset,
    pub test: Dataset,
}

/// Train and test splits drawn from independent sub-seeds of `seed`.
pub fn synthetic_data(
    specs: &[FourierClassSpec],
    train_per_class: usize,
    test_per_class: usize,
    seed: u64,
) -> Result<Data> {
    Ok(Data {
        train: generate_fourier_dataset(specs, train_per_class, derive_seed(seed, "data/train"))?,
        test: generate_fourier_dataset(specs, test_per_class, derive_seed(seed, "data/test"))?,
    })
}

pub fn load_data(cfg: &ExperimentConfig) -> Result<Data> {
    let n = cfg.task.n_classes();
    let (train, test) = match &cfg.dataset {
        DatasetSource::Synthetic {
            train_per_class,
            test_per_class,
            specs,
        } => {
            let specs = specs.clone().unwrap_or_else(|| default_specs(n));
            let d = synthetic_data(&specs, *train_per_class, *test_per_class, cfg.seed)?;
            (d.train, d.test)
        }
        DatasetSource::Files { train, test } => (load_dataset(train)?, load_dataset(test)?),
    };
    for (d, path) in [(&train, "dataset.train"), (&test, "dataset.test")] {
        if d.n_classes != n {
            return Err(Error::config(path, format!("{} classes, task needs {n}", d.n_classes)));
        }
        if d.is_empty() {
            return Err(Error::EmptyDataset);
        }
    }
    Ok(Data { train, test })
}

fn fingerprint(d: &Dataset) -> String {
    let mut h = Sha256::new();
    h.update((d.n_classes as u64).to_le_bytes());
    for s in &d.samples {
        h.update((s.label as u64).to_le_bytes());
        for v in &s.values {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    hex(&h.finalize())
}

fn refs(d: &Dataset) -> Vec<&[f64]> {
    d.samples.iter().map(|s| s.values.as_slice()).collect()
}

pub enum TrainedModel {
    Cnn(CNNModel),
    Qvc(QvcClassifier),
}

impl TrainedModel {
    pub fn oracle(&self) -> &dyn GradientOracle {
        match self {
            TrainedModel::Cnn(m) => m,
            TrainedModel::Qvc(m) => m,
        }
    }
}

pub struct ModelEntry {
    pub name: String,
    pub spec: ModelSpec,
    pub noise_p: f64,
    pub model: TrainedModel,
    pub checkpoint: PathBuf,
}

#[derive(Serialize)]
struct CheckpointKey<'a> {
    spec: &'a ModelSpec,
    training: &'a TrainingConfig,
    seed: u64,
    noise_p: f64,
    data: String,
}

fn encoder_for(cfg: &ExperimentConfig, spec: &ModelSpec, noise_p: f64) -> SignalEncoder {
    match *spec {
        ModelSpec::AaeQvc { aae_layers, .. } => {
            let aae = AaeConfig {
                n_layers: aae_layers,
                iterations: cfg.training.aae_iterations,
                adam: AdamConfig {
                    lr: cfg.training.aae_lr,
                    ..AaeConfig::default().adam
                },
                ..AaeConfig::default()
            };
            SignalEncoder::aae(aae_layers, aae, derive_seed(cfg.seed, "aae")).with_noise(noise_p)
        }
        _ => SignalEncoder::exact().with_noise(noise_p),
    }
}

/// Loads the checkpoint matching `(spec, training config, seed, noise, data)`
/// or trains and saves it when `train_missing` is set.
pub fn obtain_model(
    cfg: &ExperimentConfig,
    data: &Data,
    spec: &ModelSpec,
    noise_p: f64,
    train_missing: bool,
) -> Result<ModelEntry> {
    let name = spec.noisy_name(noise_p);
    let key = CheckpointKey {
        spec,
        training: &cfg.training,
        seed: cfg.seed,
        noise_p,
        data: fingerprint(&data.train),
    };
    let digest = hex(&Sha256::digest(serde_json::to_vec(&key)?));
    let dir = cfg.output_dir.join("checkpoints");
    let path = dir.join(format!("{name}-{}.json", &digest[..16]));
    let train_x = refs(&data.train);
    let train_y = data.train.labels();
    let n_classes = cfg.task.n_classes();
    let t = &cfg.training;
    if !path.exists() && !train_missing {
        return Err(Error::MissingCheckpoint(path));
    }
    if !path.exists() {
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let history_path = path.with_extension("history.csv");
    let model = match spec {
        ModelSpec::Cnn => {
            let m = if path.exists() {
                CNNModel::load(&path)?
            } else {
                let mut m = CNNModel::new(n_classes, derive_seed(cfg.seed, "cnn/init"))?;
                m.dropout_rate = t.cnn_dropout;
                let tc = CnnTrainConfig {
                    lr: t.cnn_lr,
                    batch_size: t.cnn_batch_size,
                    epochs: t.cnn_epochs,
                    seed: derive_seed(cfg.seed, "cnn/train"),
                };
                let h = train_cnn(&mut m, &train_x, &train_y, &tc)?;
                write_cnn_history(&h, &history_path)?;
                m.save(&path)?;
                m
            };
            TrainedModel::Cnn(m)
        }
        ModelSpec::Qvc { layers } | ModelSpec::AaeQvc { qvc_layers: layers, .. } => {
            let encoder = encoder_for(cfg, spec, noise_p);
            let mut cache = AaeCache::new();
            let m = if path.exists() {
                QVCModel::load(&path)?
            } else {
                let kind = match *spec {
                    ModelSpec::AaeQvc { aae_layers, .. } => EncoderKind::Aae { layers: aae_layers },
                    _ => EncoderKind::Exact,
                };
                let base = spec.name();
                let mut m = QVCModel::random(
                    *layers,
                    n_classes,
                    kind,
                    t.qvc_init_scale,
                    derive_seed(cfg.seed, &format!("{base}/init")),
                )?;
                m.temperature = t.qvc_temperature;
                let set = encoder.encode_set(&train_x, &mut cache)?;
                let tc = QvcTrainConfig {
                    lr: t.qvc_lr,
                    batch_size: t.qvc_batch_size,
                    epochs: t.qvc_epochs,
                    patience: t.qvc_patience,
                    val_fraction: t.qvc_val_fraction,
                    init_scale: t.qvc_init_scale,
                    seed: derive_seed(cfg.seed, &format!("{base}/train")),
                };
                let h = train_qvc(&mut m, &set, &train_y, &tc)?;
                write_loss_history(&h, &history_path)?;
                m.save(&path)?;
                m
            };
            if m.n_classes != n_classes {
                return Err(Error::ClassCountMismatch {
                    source_classes: m.n_classes,
                    target_classes: n_classes,
                });
            }
            TrainedModel::Qvc(QvcClassifier::with_cache(m, encoder, cache))
        }
    };
    Ok(ModelEntry {
        name,
        spec: *spec,
        noise_p,
        model,
        checkpoint: path,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Clean,
    Whitebox,
    Blackbox,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Clean => "clean",
            Scenario::Whitebox => "whitebox",
            Scenario::Blackbox => "blackbox",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "clean" => Some(Scenario::Clean),
            "whitebox" => Some(Scenario::Whitebox),
            "blackbox" => Some(Scenario::Blackbox),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub attack: String,
    pub scenario: Scenario,
    pub source: String,
    pub psr_db: f64,
    pub realized_psr_db: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StealthRow {
    pub attack: String,
    pub source_model: String,
    pub psr_db: f64,
    pub realized_psr_db: f64,
    pub n_adversarial: usize,
    pub n_perceptible: usize,
    pub perceptible_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceRow {
    pub model: String,
    pub parameters: usize,
    /// Mean gate count of the encoder over the test signals; `None` for the
    /// CNN.
    pub encoder_gates: Option<usize>,
    pub classifier_gates: Option<usize>,
}

impl ResourceRow {
    pub fn total_gates(&self) -> Option<usize> {
        Some(self.encoder_gates? + self.classifier_gates?)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
    pub stealth: Vec<StealthRow>,
    pub resources: Vec<ResourceRow>,
}

impl ExperimentReport {
    pub fn clean_accuracy(&self, model: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.scenario == Scenario::Clean && r.model == model)
            .map(|r| r.accuracy)
    }

    /// Rows for one (target, source, attack) curve in grid order.
    pub fn curve(&self, model: &str, source: &str, attack: AttackKind) -> Vec<&ReportRow> {
        self.rows
            .iter()
            .filter(|r| {
                r.scenario != Scenario::Clean && r.model == model && r.source == source && r.attack == attack.name()
            })
            .collect()
    }

    pub fn stealth_curve(&self, source: &str, attack: AttackKind) -> Vec<&StealthRow> {
        self.stealth
            .iter()
            .filter(|r| r.source_model == source && r.attack == attack.name())
            .collect()
    }
}

/// Which parts of the pipeline to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub train_missing: bool,
    pub whitebox: bool,
    pub blackbox: bool,
    pub stealth: bool,
}

impl RunOptions {
    pub fn full() -> Self {
        Self {
            train_missing: true,
            whitebox: true,
            blackbox: true,
            stealth: true,
        }
    }

    pub fn train_only() -> Self {
        Self {
            train_missing: true,
            whitebox: false,
            blackbox: false,
            stealth: false,
        }
    }
}

fn resource_row(entry: &ModelEntry, test: &Dataset) -> Result<ResourceRow> {
    Ok(match &entry.model {
        TrainedModel::Cnn(m) => ResourceRow {
            model: entry.name.clone(),
            parameters: m.parameter_count(),
            encoder_gates: None,
            classifier_gates: None,
        },
        TrainedModel::Qvc(q) => {
            let ansatz = q.model.ansatz();
            let encoder_gates = match q.model.encoder {
                EncoderKind::Exact => {
                    let mut total = 0;
                    for s in &test.samples {
                        total += exact_encode_report(&normalize_signal(&s.values)?).gate_count;
                    }
                    (total as f64 / test.len() as f64).round() as usize
                }
                EncoderKind::Aae { layers } => aae_ansatz(layers).gate_count(),
            };
            ResourceRow {
                model: entry.name.clone(),
                parameters: ansatz.n_params(),
                encoder_gates: Some(encoder_gates),
                classifier_gates: Some(ansatz.gate_count()),
            }
        }
    })
}

fn clean_row(entry: &ModelEntry, test: &Dataset) -> Result<ReportRow> {
    Ok(ReportRow {
        model: entry.name.clone(),
        attack: "none".into(),
        scenario: Scenario::Clean,
        source: entry.name.clone(),
        psr_db: f64::NEG_INFINITY,
        realized_psr_db: f64::NEG_INFINITY,
        accuracy: accuracy_of(entry.model.oracle(), &refs(test), &test.labels())?,
    })
}

fn craft_seed(master: u64, source: &str, attack: AttackKind, grid_index: usize) -> u64 {
    derive_seed(master, &format!("craft/{source}/{}/{grid_index}", attack.name()))
}

#[derive(Serialize)]
struct AdversarialManifest<'a> {
    source_model: &'a str,
    attack: &'a str,
    requested_psr_db: f64,
    realized_psr_db: f64,
    seed: u64,
}

/// Runs every selected cell of the sweep over already obtained models.
fn sweep(
    cfg: &ExperimentConfig,
    test: &Dataset,
    sources: &[&ModelEntry],
    targets: &[&ModelEntry],
    opts: RunOptions,
    report: &mut ExperimentReport,
) -> Result<()> {
    let xs = refs(test);
    let ys = test.labels();
    for attack in &cfg.attacks {
        for (gi, &psr) in cfg.psr_grid.iter().enumerate() {
            for src in sources {
                let wanted: Vec<&&ModelEntry> = targets
                    .iter()
                    .filter(|t| if t.name == src.name { opts.whitebox } else { opts.blackbox })
                    .collect();
                if wanted.is_empty() && !opts.stealth {
                    continue;
                }
                let seed = craft_seed(cfg.seed, &src.name, attack.kind, gi);
                let res = craft(src.model.oracle(), &xs, &ys, &attack.at(psr), seed)?;
                let adv = res.adversarial_refs();
                for t in wanted {
                    report.rows.push(ReportRow {
                        model: t.name.clone(),
                        attack: attack.kind.name().into(),
                        scenario: if t.name == src.name {
                            Scenario::Whitebox
                        } else {
                            Scenario::Blackbox
                        },
                        source: src.name.clone(),
                        psr_db: psr,
                        realized_psr_db: res.realized_psr_db,
                        accuracy: accuracy_of(t.model.oracle(), &adv, &ys)?,
                    });
                }
                if opts.stealth {
                    let s = perceptibility_rate(&adv, &xs, cfg.stealth_alpha)?;
                    report.stealth.push(StealthRow {
                        attack: attack.kind.name().into(),
                        source_model: src.name.clone(),
                        psr_db: psr,
                        realized_psr_db: res.realized_psr_db,
                        n_adversarial: s.n_adversarial,
                        n_perceptible: s.n_perceptible,
                        perceptible_rate: s.perceptible_rate,
                    });
                }
                if cfg.save_adversarial {
                    let dir = cfg.output_dir.join("adversarial");
                    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                    let stem = format!("{}_{}_{gi}", src.name, attack.kind.name());
                    save_dataset(&test.with_values(res.adversarial.clone()), &dir.join(format!("{stem}.qsig")))?;
                    let manifest = AdversarialManifest {
                        source_model: &src.name,
                        attack: attack.kind.name(),
                        requested_psr_db: psr,
                        realized_psr_db: res.realized_psr_db,
                        seed,
                    };
                    let path = dir.join(format!("{stem}.json"));
                    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
                }
            }
        }
    }
    Ok(())
}

fn clean_self_stealth(cfg: &ExperimentConfig, test: &Dataset) -> Result<StealthRow> {
    let xs = refs(test);
    let s = perceptibility_rate(&xs, &xs, cfg.stealth_alpha)?;
    Ok(StealthRow {
        attack: "none".into(),
        source_model: "clean".into(),
        psr_db: f64::NEG_INFINITY,
        realized_psr_db: f64::NEG_INFINITY,
        n_adversarial: s.n_adversarial,
        n_perceptible: s.n_perceptible,
        perceptible_rate: s.perceptible_rate,
    })
}

/// Trains or loads every configured model and runs the selected parts of
/// the sweep over the test split.
pub fn run_with(cfg: &ExperimentConfig, opts: RunOptions) -> Result<ExperimentReport> {
    cfg.validate()?;
    let data = load_data(cfg)?;
    let entries: Vec<ModelEntry> = cfg
        .models
        .iter()
        .map(|m| obtain_model(cfg, &data, m, 0.0, opts.train_missing))
        .collect::<Result<_>>()?;
    let mut report = ExperimentReport::default();
    for e in &entries {
        report.rows.push(clean_row(e, &data.test)?);
        report.resources.push(resource_row(e, &data.test)?);
    }
    if opts.stealth && !cfg.attacks.is_empty() {
        report.stealth.push(clean_self_stealth(cfg, &data.test)?);
    }
    let all: Vec<&ModelEntry> = entries.iter().collect();
    sweep(cfg, &data.test, &all, &all, opts, &mut report)?;
    Ok(report)
}

/// Full pipeline: train or load, sweep, write every report file.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let report = run_with(cfg, RunOptions::full())?;
    emit_report(&report, &cfg.output_dir)?;
    write_manifest(cfg)?;
    Ok(report)
}

/// Noiseless and noisy copies of every AAE-QVC, both attacked with
/// CNN-crafted perturbations. The noisy copy runs on the density-matrix
/// backend with depolarizing noise after every layer.
pub fn run_noise_study(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let aae: Vec<&ModelSpec> = cfg
        .models
        .iter()
        .filter(|m| matches!(m, ModelSpec::AaeQvc { .. }))
        .collect();
    if aae.is_empty() {
        return Err(Error::config("models", "the noise study needs an aae_qvc model"));
    }
    let has_cnn = cfg.models.contains(&ModelSpec::Cnn);
    if !cfg.attacks.is_empty() && !has_cnn {
        return Err(Error::config("models", "CNN-crafted attacks need a cnn model"));
    }
    let data = load_data(cfg)?;
    let mut entries = Vec::new();
    if has_cnn {
        entries.push(obtain_model(cfg, &data, &ModelSpec::Cnn, 0.0, true)?);
    }
    let n_sources = entries.len();
    for spec in aae {
        entries.push(obtain_model(cfg, &data, spec, 0.0, true)?);
        if cfg.noise_p > 0.0 {
            entries.push(obtain_model(cfg, &data, spec, cfg.noise_p, true)?);
        }
    }
    let mut report = ExperimentReport::default();
    for e in &entries {
        report.rows.push(clean_row(e, &data.test)?);
        report.resources.push(resource_row(e, &data.test)?);
    }
    let sources: Vec<&ModelEntry> = entries[..n_sources].iter().collect();
    let targets: Vec<&ModelEntry> = entries.iter().collect();
    let opts = RunOptions {
        train_missing: true,
        whitebox: true,
        blackbox: true,
        stealth: false,
    };
    sweep(cfg, &data.test, &sources, &targets, opts, &mut report)?;
    Ok(report)
}

fn fmt_f64(v: f64) -> String {
    if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v}")
    }
}

fn parse_f64(s: &str, path: &Path) -> Result<f64> {
    s.parse()
        .map_err(|_| Error::config(path.display().to_string(), format!("not a number: {s}")))
}

pub const ACCURACY_HEADER: [&str; 7] = [
    "model",
    "attack",
    "scenario",
    "source",
    "psr_db",
    "realized_psr_db",
    "accuracy",
];

pub fn write_accuracy_csv(rows: &[ReportRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(ACCURACY_HEADER)?;
    for r in rows {
        w.write_record([
            r.model.clone(),
            r.attack.clone(),
            r.scenario.name().into(),
            r.source.clone(),
            fmt_f64(r.psr_db),
            fmt_f64(r.realized_psr_db),
            fmt_f64(r.accuracy),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_accuracy_csv(path: &Path) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    if header != ACCURACY_HEADER {
        return Err(Error::config(path.display().to_string(), "unexpected accuracy CSV header"));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        rows.push(ReportRow {
            model: rec[0].into(),
            attack: rec[1].into(),
            scenario: Scenario::parse(&rec[2])
                .ok_or_else(|| Error::config(path.display().to_string(), format!("scenario {}", &rec[2])))?,
            source: rec[3].into(),
            psr_db: parse_f64(&rec[4], path)?,
            realized_psr_db: parse_f64(&rec[5], path)?,
            accuracy: parse_f64(&rec[6], path)?,
        });
    }
    Ok(rows)
}

fn write_stealth_csv(rows: &[StealthRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "attack",
        "source_model",
        "psr_db",
        "realized_psr_db",
        "n_adversarial",
        "n_perceptible",
        "perceptible_rate",
    ])?;
    for r in rows {
        w.write_record([
            r.attack.clone(),
            r.source_model.clone(),
            fmt_f64(r.psr_db),
            fmt_f64(r.realized_psr_db),
            r.n_adversarial.to_string(),
            r.n_perceptible.to_string(),
            fmt_f64(r.perceptible_rate),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_resources_csv(rows: &[ResourceRow], path: &Path) -> Result<()> {
    let opt = |v: Option<usize>| v.map_or_else(|| "-".to_string(), |g| g.to_string());
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["model", "parameters", "encoder_gates", "classifier_gates", "total_gates"])?;
    for r in rows {
        w.write_record([
            r.model.clone(),
            r.parameters.to_string(),
            opt(r.encoder_gates),
            opt(r.classifier_gates),
            opt(r.total_gates()),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Wide table: one row per PSR (clean first), one column per series.
fn write_wide(path: &Path, series: &BTreeMap<String, BTreeMap<usize, (f64, f64)>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["psr_db".to_string()];
    header.extend(series.keys().cloned());
    w.write_record(&header)?;
    let mut grid: BTreeMap<usize, f64> = BTreeMap::new();
    for s in series.values() {
        for (&k, &(psr, _)) in s {
            grid.insert(k, psr);
        }
    }
    for (k, psr) in grid {
        let mut rec = vec![fmt_f64(psr)];
        for s in series.values() {
            rec.push(s.get(&k).map_or_else(String::new, |&(_, v)| fmt_f64(v)));
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `accuracy.csv`, `stealth.csv`, `resources.csv` and plot-ready
/// tables under `figures/`. Returns the paths written.
pub fn emit_report(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>> {
    if report.rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let figures = dir.join("figures");
    std::fs::create_dir_all(&figures).map_err(|e| Error::io(&figures, e))?;
    let mut written = Vec::new();
    let p = dir.join("accuracy.csv");
    write_accuracy_csv(&report.rows, &p)?;
    written.push(p);
    let p = dir.join("stealth.csv");
    write_stealth_csv(&report.stealth, &p)?;
    written.push(p);
    let p = dir.join("resources.csv");
    write_resources_csv(&report.resources, &p)?;
    written.push(p);

    let clean: BTreeMap<&str, f64> = report
        .rows
        .iter()
        .filter(|r| r.scenario == Scenario::Clean)
        .map(|r| (r.model.as_str(), r.accuracy))
        .collect();
    let mut attacks: Vec<&str> = report
        .rows
        .iter()
        .filter(|r| r.scenario != Scenario::Clean)
        .map(|r| r.attack.as_str())
        .collect();
    attacks.dedup();
    attacks.sort_unstable();
    attacks.dedup();
    for attack in attacks {
        for scenario in [Scenario::Whitebox, Scenario::Blackbox] {
            let mut series: BTreeMap<String, BTreeMap<usize, (f64, f64)>> = BTreeMap::new();
            for r in report
                .rows
                .iter()
                .filter(|r| r.scenario == scenario && r.attack == attack)
            {
                let col = match scenario {
                    Scenario::Whitebox => r.model.clone(),
                    _ => format!("{}->{}", r.source, r.model),
                };
                let s = series.entry(col).or_default();
                if let Some(&c) = clean.get(r.model.as_str()) {
                    s.insert(0, (f64::NEG_INFINITY, c));
                }
                let k = s.len();
                s.insert(k, (r.psr_db, r.accuracy));
            }
            if !series.is_empty() {
                let p = figures.join(format!("{}_{attack}.csv", scenario.name()));
                write_wide(&p, &series)?;
                written.push(p);
            }
        }
        let mut series: BTreeMap<String, BTreeMap<usize, (f64, f64)>> = BTreeMap::new();
        for r in report.stealth.iter().filter(|r| r.attack == attack) {
            let s = series.entry(r.source_model.clone()).or_default();
            let k = s.len();
            s.insert(k, (r.psr_db, r.perceptible_rate));
        }
        if !series.is_empty() {
            let p = figures.join(format!("stealth_{attack}.csv"));
            write_wide(&p, &series)?;
            written.push(p);
        }
    }
    Ok(written)
}

#[derive(Serialize)]
struct Manifest<'a> {
    config: &'a ExperimentConfig,
    config_hash: String,
}

pub fn write_manifest(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let bytes = serde_json::to_vec(cfg)?;
    let m = Manifest {
        config: cfg,
        config_hash: hex(&Sha256::digest(&bytes)),
    };
    let path = cfg.output_dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&m)?).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
