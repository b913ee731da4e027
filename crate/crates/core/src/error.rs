use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("qubit index {index} out of range for {n_qubits}-qubit register")]
    QubitOutOfRange { index: usize, n_qubits: usize },

    #[error("CNOT control and target must differ (both {0})")]
    ControlEqualsTarget(usize),

    #[error("gate angle must be finite, got {0}")]
    NonFiniteAngle(f64),

    #[error("expected {expected} parameters, got {actual}")]
    ParameterCount { expected: usize, actual: usize },

    #[error("parameter {0} does not drive a rotation gate")]
    NonRotationParameter(usize),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid quantum state: {0}")]
    InvalidState(String),

    #[error("probability {0} outside [0, 1]")]
    InvalidProbability(f64),

    #[error("signal is all zeros")]
    ZeroSignal,

    #[error("signal power must be positive, got {0}")]
    NonPositivePower(f64),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("empty sample")]
    EmptySample,

    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },

    #[error("input shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("class-count mismatch: source has {source_classes}, target has {target_classes}")]
    ClassCountMismatch {
        source_classes: usize,
        target_classes: usize,
    },

    #[error("all gradients on the crafting subset are zero")]
    AllZeroGradients,

    #[error("invalid attack configuration: {0}")]
    InvalidAttack(String),

    #[error("invalid waveform spec: {0}")]
    InvalidSpec(String),

    #[error("class {class} has {available} samples, {requested} requested")]
    InsufficientSamples {
        class: usize,
        available: usize,
        requested: usize,
    },

    #[error("bad magic in dataset file")]
    BadMagic,

    #[error("unsupported dataset format version {0}")]
    UnsupportedVersion(u16),

    #[error("truncated dataset file: {0}")]
    Truncated(String),

    #[error("record count mismatch: header declares {declared}, found {found}")]
    CountMismatch { declared: usize, found: usize },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("missing checkpoint {0}")]
    MissingCheckpoint(PathBuf),

    #[error("unsupported checkpoint: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::QubitOutOfRange { .. } => "qubit_out_of_range",
            Error::ControlEqualsTarget(_) => "control_equals_target",
            Error::NonFiniteAngle(_) => "non_finite_angle",
            Error::ParameterCount { .. } => "parameter_count",
            Error::NonRotationParameter(_) => "non_rotation_parameter",
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::InvalidState(_) => "invalid_state",
            Error::InvalidProbability(_) => "invalid_probability",
            Error::ZeroSignal => "zero_signal",
            Error::NonPositivePower(_) => "non_positive_power",
            Error::EmptyDataset => "empty_dataset",
            Error::EmptySample => "empty_sample",
            Error::LabelOutOfRange { .. } => "label_out_of_range",
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::ClassCountMismatch { .. } => "class_count_mismatch",
            Error::AllZeroGradients => "all_zero_gradients",
            Error::InvalidAttack(_) => "invalid_attack",
            Error::InvalidSpec(_) => "invalid_spec",
            Error::InsufficientSamples { .. } => "insufficient_samples",
            Error::BadMagic => "bad_magic",
            Error::UnsupportedVersion(_) => "unsupported_version",
            Error::Truncated(_) => "truncated",
            Error::CountMismatch { .. } => "count_mismatch",
            Error::Config { .. } => "config",
            Error::MissingCheckpoint(_) => "missing_checkpoint",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}
