use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape {shape:?} holds {expected} elements but {actual} values were supplied")]
    Construction {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },

    #[error("invalid shape {0:?}: every extent must be at least 1")]
    ZeroExtent(Vec<usize>),

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: String, detail: String },

    #[error("axis {axis} out of range for rank {rank}")]
    Axis { axis: usize, rank: usize },

    #[error("label {label} at position {index} is outside 0..{classes}")]
    Label {
        index: usize,
        label: usize,
        classes: usize,
    },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("layer {layer} ({kind}): {source}")]
    Layer {
        layer: usize,
        kind: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("backward called without a matching forward cache: {0}")]
    StaleCache(String),

    #[error("invalid model spec: {0}")]
    Spec(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize },

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: not a checkpoint file (bad magic)")]
    BadMagic { path: PathBuf },

    #[error("{path}: unsupported checkpoint version {found} (expected {expected})")]
    Version {
        path: PathBuf,
        found: String,
        expected: String,
    },

    #[error("{path}: truncated file: expected {expected} bytes, found {actual}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("{path}: manifest/payload disagreement: {detail}")]
    PayloadMismatch { path: PathBuf, detail: String },

    #[error("{path}: malformed manifest: {message}")]
    Manifest { path: PathBuf, message: String },

    #[error("probability matrices disagree at row {row}: expected id `{expected}`, found `{found}`")]
    Alignment {
        row: usize,
        expected: String,
        found: String,
    },

    #[error("invalid config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn shape(op: &str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op: op.to_string(),
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable snake_case name of the variant, used in CLI error lines.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Construction { .. } => "construction",
            Error::ZeroExtent(_) => "zero_extent",
            Error::Shape { .. } => "shape",
            Error::Axis { .. } => "axis",
            Error::Label { .. } => "label",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Layer { source, .. } => source.code(),
            Error::StaleCache(_) => "stale_cache",
            Error::Spec(_) => "spec",
            Error::NonFinite { .. } => "non_finite",
            Error::Parse { .. } => "parse",
            Error::Io { .. } => "io",
            Error::BadMagic { .. } => "bad_magic",
            Error::Version { .. } => "version",
            Error::Truncated { .. } => "truncated",
            Error::PayloadMismatch { .. } => "payload_mismatch",
            Error::Manifest { .. } => "manifest",
            Error::Alignment { .. } => "alignment",
            Error::Config(_) => "config",
        }
    }
}
