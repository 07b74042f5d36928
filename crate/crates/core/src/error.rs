use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the extraction pipeline.
#[derive(Debug, Error)]
pub enum TseError {
    #[error("invalid waveform: {0}")]
    InvalidWaveform(String),

    #[error("signal has zero power: {0}")]
    ZeroPower(&'static str),

    #[error("length error: {0}")]
    Length(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("duration error: {0}")]
    Duration(String),

    #[error("speaker {speaker} has {available} valid enrollment utterances, {required} required")]
    InsufficientUtterances {
        speaker: String,
        available: usize,
        required: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("reference signal has zero power")]
    ZeroReference,

    #[error("index {index} out of range 1..={len}")]
    Index { index: usize, len: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("input too short: {len} samples, at least {min} required")]
    TooShort { len: usize, min: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty enrollment set")]
    EmptyEnrollmentSet,

    #[error("subset size {k} exceeds candidate count {n}")]
    SubsetTooLarge { k: usize, n: usize },

    #[error("speaker label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("training diverged at epoch {epoch}: {message}")]
    Divergence { epoch: usize, message: String },

    #[error("within-class scatter is zero")]
    Degenerate,

    #[error("need at least {required} classes, got {got}")]
    InsufficientClasses { required: usize, got: usize },

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("evaluating mixture {mixture} with enrollment {enrollment}: {source}")]
    Cell {
        mixture: String,
        enrollment: String,
        #[source]
        source: Box<TseError>,
    },
}

impl TseError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TseError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, TseError>;
