use std::path::PathBuf;

use thiserror::Error;

/// Errors produced across the pipeline.
#[derive(Debug, Error)]
pub enum IceError {
    #[error("invalid alphabet: {0}")]
    InvalidAlphabet(String),

    #[error("invalid sequence: {0}")]
    InvalidSequence(#[from] crate::seq::SequenceViolation),

    #[error("invalid region mask: {0}")]
    InvalidMask(String),

    #[error("invalid edit: {0}")]
    InvalidEdit(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("only {available} of {requested} requested sequences fall inside the training region")]
    InsufficientInRegion { requested: usize, available: usize },

    #[error("correlation is undefined for constant input")]
    UndefinedCorrelation,

    #[error("ridge system is numerically singular (condition estimate {condition:.3e}, residual {residual:.3e})")]
    SingularSystem { condition: f64, residual: f64 },

    #[error("mask sampling exceeded {retries} retries without selecting a position")]
    MaskRetriesExceeded { retries: usize },

    #[error(
        "pair generation hit the attempt cap: {emitted} of {requested} pairs after {attempts} attempts (acceptance rate {acceptance_rate:.4})"
    )]
    AttemptCapReached {
        requested: usize,
        emitted: usize,
        attempts: usize,
        acceptance_rate: f64,
    },

    #[error("invalid candidate: {0}")]
    InvalidCandidate(String),

    #[error("no valid candidate edit exists")]
    NoCandidate,

    #[error("ragged trajectories: expected {expected} steps, found {found}")]
    RaggedTrajectories { expected: usize, found: usize },

    #[error("artifact {path} has config hash {found}, expected {expected}")]
    ConfigHashMismatch {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("unsupported {what} version {found} (expected {expected})")]
    UnsupportedVersion {
        what: &'static str,
        expected: u32,
        found: u32,
    },

    #[error("parse error in {context}: {reason}")]
    Parse { context: String, reason: String },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<IceError>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

impl IceError {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        IceError::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        IceError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(context: impl Into<String>, reason: impl Into<String>) -> Self {
        IceError::Parse {
            context: context.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = IceError> = std::result::Result<T, E>;
