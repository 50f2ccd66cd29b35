use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid spec: field `{field}`: {reason}")]
    InvalidSpec { field: String, reason: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("heterogeneous kernel sizes in bank: {0}")]
    HeterogeneousKernelSize(String),

    #[error("insufficient stack: supply {supply} kernels, demand {demand}")]
    InsufficientStack { supply: usize, demand: usize },

    #[error("layer shape mismatch at layer {layer}: source {source_shape:?}, target {target_shape:?}")]
    LayerShapeMismatch {
        layer: usize,
        source_shape: Vec<usize>,
        target_shape: Vec<usize>,
    },

    #[error("kernel size mismatch: source {source_kernel:?}, target {target_kernel:?}")]
    KernelSizeMismatch {
        source_kernel: (usize, usize),
        target_kernel: (usize, usize),
    },

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("unknown dataset `{0}`")]
    UnknownDataset(String),

    #[error("download of {url} failed: {reason}")]
    DownloadFailure { url: String, reason: String },

    #[error("digest mismatch for {path}: expected {expected}, found {found}")]
    DigestMismatch {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("no split table registered for dataset `{0}`")]
    NoSplitTable(String),

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NanLoss { epoch: usize, step: usize },

    #[error("frozen parameter `{0}` changed during training")]
    MaskViolation(String),

    #[error("baseline accuracy must be positive")]
    ZeroBaseline,

    #[error("duplicate run: config digest already recorded as run `{run_id}`")]
    DuplicateRun { run_id: String },

    #[error("incomplete matrix, missing cells: {0:?}")]
    IncompleteMatrix(Vec<(String, String)>),

    #[error("no records for tag `{0}`")]
    NoRecords(String),

    #[error("layer {0} has no kernels")]
    EmptyLayer(usize),

    #[error("run `{0}` did not complete; dependent runs cannot start")]
    UpstreamFailed(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid_spec(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidSpec {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(format!("json: {e}"))
    }
}

impl From<safetensors::SafeTensorError> for Error {
    fn from(e: safetensors::SafeTensorError) -> Self {
        Error::Format(format!("safetensors: {e}"))
    }
}
