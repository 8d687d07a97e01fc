use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

/// Error type shared across the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("model load failed for {path}: {reason}")]
    ModelLoad { path: PathBuf, reason: String },

    #[error("manifest inconsistency in {path}: {reason}")]
    ModelConsistency { path: PathBuf, reason: String },

    #[error("degenerate noise fit: {0}")]
    DegenerateFit(String),

    #[error("ill-conditioned matrix: condition number {cond:.3e} exceeds {threshold:.3e}")]
    Conditioning { cond: f64, threshold: f64 },

    #[error("stratified split failed: class {class} has only {count} samples")]
    Stratification { class: String, count: usize },

    #[error("classifier container: {0}")]
    Container(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("candidate evaluation failed at column {column}, candidate {candidate:?}: {source}")]
    CandidateEval {
        column: usize,
        candidate: Vec<u8>,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("image codec: {0}")]
    Image(#[from] ::image::ImageError),
}

impl Error {
    /// Process exit code for the CLI: 2 for config/parameter problems,
    /// 3 for numerical/conditioning failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parameter(_) | Error::Config(_) => 2,
            Error::Conditioning { .. } | Error::DegenerateFit(_) => 3,
            Error::CandidateEval { source, .. } => source.exit_code(),
            _ => 1,
        }
    }
}
