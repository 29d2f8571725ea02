use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },

    #[error("overlapping splits: class {class:?} appears in both {first} and {second}")]
    OverlappingSplits {
        class: String,
        first: String,
        second: String,
    },

    #[error("empty class: {0:?} has no example references")]
    EmptyClass(String),

    #[error("insufficient classes: need {needed}, section has {available}")]
    InsufficientClasses { needed: usize, available: usize },

    #[error("insufficient examples in class {class:?}: need {needed}, have {available}")]
    InsufficientExamples {
        class: String,
        needed: usize,
        available: usize,
    },

    #[error("invalid episode spec: {0}")]
    InvalidEpisodeSpec(String),

    #[error("invalid preprocess config: {0}")]
    InvalidPreprocess(String),

    #[error("expected a 3-channel image, got {0} channels")]
    ChannelCount(usize),

    #[error("image decode {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("unknown architecture {0:?}")]
    UnknownArchitecture(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate feature norm ({norm:e})")]
    DegenerateFeature { norm: f64 },

    #[error("degenerate class mean for class {class:?} (norm {norm:e})")]
    DegenerateClassMean { class: String, norm: f64 },

    #[error(
        "svm solver did not converge for class {class} after {iterations} iterations (gradient norm {grad_norm:e})"
    )]
    SvmNonConvergence {
        class: usize,
        iterations: usize,
        grad_norm: f64,
    },

    #[error("regime inapplicable: {regime} requires parameters of group {group} but the model has none")]
    RegimeInapplicable { regime: String, group: String },

    #[error("unknown optimizer {0:?}")]
    UnknownOptimizer(String),

    #[error("unknown regime {0:?}")]
    UnknownRegime(String),

    #[error("invalid optimizer config: {0}")]
    InvalidOptimizer(String),

    #[error("non-finite loss at epoch {epoch} (last finite loss {last_finite:?})")]
    NonFiniteLoss { epoch: usize, last_finite: Option<f64> },

    #[error("head/episode mismatch: {0}")]
    HeadMismatch(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
