use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("layer {layer} ({kind}): expected input shape {expected:?}, got {got:?}")]
    Shape {
        layer: usize,
        kind: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("non-finite loss {value}")]
    NonFiniteLoss { value: f64 },

    #[error("non-finite value in {term}: {value}")]
    NonFiniteTerm { term: &'static str, value: f64 },

    #[error("training diverged: |{term}| = {value} exceeds {limit}")]
    Divergence {
        term: &'static str,
        value: f64,
        limit: f64,
    },

    #[error("parameter mismatch: {0}")]
    ParamMismatch(String),

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error("unsupported {what} version {found} (expected {expected})")]
    UnsupportedVersion {
        what: &'static str,
        found: u32,
        expected: u32,
    },

    #[error("dimension mismatch: {what} is {found}, expected {expected}")]
    Dimension {
        what: &'static str,
        found: usize,
        expected: usize,
    },

    #[error("normalization statistics missing for {0}")]
    MissingStats(PathBuf),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("snapshot for scenario {scenario} is unusable: {reason}")]
    CorruptSnapshot { scenario: String, reason: String },

    #[error("output directory {0} holds a partial run; rerun with --force or --resume")]
    PartialRun(PathBuf),

    #[error("output directory {0} already holds a completed run; use --force to overwrite")]
    AlreadyComplete(PathBuf),

    #[error("missing coverage: {0}")]
    Coverage(String),

    #[error("plot rendering failed: {0}")]
    Plot(String),

    #[error("I/O error on {path}: {source}")]
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
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            what,
            reason: reason.into(),
        }
    }
}
