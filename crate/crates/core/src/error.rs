use std::path::PathBuf;

/// Errors produced by the coding pipeline, its data loaders and its file formats.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("odd real dimension: cannot pack {0} reals into complex symbols")]
    OddRealDimension(usize),

    #[error("zero-power block: cannot normalize an all-zero symbol vector")]
    ZeroPowerBlock,

    #[error("channel in deep fade: gain is zero")]
    DeepFade,

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("spatial size {height}x{width} must be a multiple of {multiple}")]
    StrideMismatch {
        height: usize,
        width: usize,
        multiple: usize,
    },

    #[error("ratio unreachable with this architecture: {0}")]
    RatioUnreachable(String),

    #[error("invalid architecture: {0}")]
    InvalidArch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("no attention modules in this model")]
    NoAttentionModules,

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("truncated record in {path} at byte offset {offset}")]
    TruncatedRecord { path: PathBuf, offset: u64 },

    #[error("unsupported image {path}: {reason}")]
    Image { path: PathBuf, reason: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("training diverged at epoch {epoch}, step {step}: loss is {loss}")]
    Divergence { epoch: usize, step: usize, loss: f64 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
