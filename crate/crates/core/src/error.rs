use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate 6-d rotation: {0}")]
    DegenerateRotation(&'static str),
    #[error("matrix is not a rotation (orthonormality residual {0:.3e})")]
    NotARotation(f64),
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("non-finite value produced by {0}")]
    NonFiniteValue(String),
    #[error("bad schedule parameters: {0}")]
    BadScheduleParams(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("model is untrained; set allow_untrained to sample anyway")]
    UntrainedModel,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("dataset contains a single class")]
    SingleClassDataset,
    #[error("non-finite loss at epoch {epoch}, step {step}: {detail}")]
    NonFiniteLoss { epoch: usize, step: usize, detail: String },
    #[error("models disagree on {0}")]
    ModelMismatch(&'static str),
    #[error("unknown refinement method `{0}`")]
    UnknownMethod(String),
    #[error("joint {joint} = {value} outside limits [{lo}, {hi}]")]
    JointLimit { joint: usize, value: f64, lo: f64, hi: f64 },
    #[error("view culled every point")]
    FullyOccluded,
    #[error("positive quota not reached: found {found} of {wanted} after {attempts} attempts")]
    PositiveStarvation { found: usize, wanted: usize, attempts: usize },
    #[error("grasp list is empty")]
    EmptyList,
    #[error("need at least 2 grasps, got {0}")]
    TooFewGrasps(usize),
    #[error("no manifest found in {0}")]
    MissingManifest(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Wraps an I/O failure with the path it concerns.
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| Error::Io { path, source }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch { op, detail: detail.into() }
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format { what, detail: detail.into() }
    }
}
