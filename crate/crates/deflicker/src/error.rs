use std::path::PathBuf;

/// Errors surfaced by the library and the CLI.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("sequence too short: need at least {needed} frames, got {got}")]
    SequenceTooShort { needed: usize, got: usize },

    #[error("bad flow file magic in {path}: expected 202021.25, got {got}")]
    BadFlowMagic { path: PathBuf, got: f32 },

    #[error("truncated flow file {path}: expected {expected} bytes of data, got {got}")]
    TruncatedFlow {
        path: PathBuf,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value encountered in {context}")]
    NonFinite { context: String },

    #[error("flow unavailable for frames {t} -> {reference}: {reason}")]
    FlowUnavailable {
        t: usize,
        reference: usize,
        reason: String,
    },

    #[error(
        "pretrained feature weights not found at {path}; \
         run with feature_extractor = \"fixed-random\" or place the weight file there"
    )]
    PretrainedWeightsUnavailable { path: PathBuf },

    #[error("unsupported checkpoint version {got} (this build reads version {supported})")]
    CheckpointVersion { got: u32, supported: u32 },

    #[error("checkpoint is missing parameter {name}")]
    MissingParameter { name: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("training diverged at iteration {iteration}: {context}")]
    Diverged { iteration: usize, context: String },

    #[error("image error for {path}: {source}")]
    Image {
        path: PathBuf,
        source: image::ImageError,
    },

    #[error("i/o error for {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn image(path: impl Into<PathBuf>, source: image::ImageError) -> Self {
        Error::Image {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
