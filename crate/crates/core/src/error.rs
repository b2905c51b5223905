use std::path::PathBuf;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("degenerate intensity range: 5th and 95th percentiles are both {0}")]
    DegenerateIntensity(f64),
    #[error("volume has {found} voxels, at least {required} are needed")]
    TooFewVoxels { required: usize, found: usize },
    #[error("malformed file: {0}")]
    Format(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("sample position out of bounds: {0}")]
    OutOfBounds(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("vessel geometry overflows the volume: {0}")]
    GeometryOverflow(String),
    #[error("center ({x:.3}, {y:.3}) is not strictly inside the lumen at slice {z}")]
    CenterOutsideLumen { x: f64, y: f64, z: usize },
    #[error("patch shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch { expected: [usize; 3], found: [usize; 3] },
    #[error("network predictor has no weights loaded")]
    UntrainedModel,
    #[error("edge detection failed: only {succeeded} of {total} rays found both edges")]
    AllRaysFailed { succeeded: usize, total: usize },
    #[error("need training and validation samples, got {train} and {validation}")]
    EmptyDataset { train: usize, validation: usize },
    #[error("non-finite loss at epoch {epoch}, batch {batch} (last finite loss {last_finite})")]
    NonFiniteLoss { epoch: usize, batch: usize, last_finite: f64 },
    #[error("gradient check failed for {} parameter(s), worst relative error {worst:.3e}", .params.len())]
    GradientMismatch { params: Vec<String>, worst: f64 },
    #[error("mean aggregation needs members sharing one center")]
    MixedGeometry,
    #[error("reference center lies outside the lumen of ensemble member {0}")]
    CenterOutsideMember(usize),
    #[error("polar fit is degenerate: {0}")]
    DegenerateFit(String),
    #[error("polygon is self-intersecting (edges {0} and {1})")]
    SelfIntersecting(usize, usize),
    #[error("correlation needs at least 2 groups, found {0}")]
    InsufficientGroups(usize),
    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),
    #[error("{path}: {source}")]
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
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_) | Error::Json(_) => 2,
            Error::MissingArtifact(_) => 3,
            Error::DegenerateIntensity(_)
            | Error::NonFiniteLoss { .. }
            | Error::GradientMismatch { .. }
            | Error::DegenerateFit(_)
            | Error::AllRaysFailed { .. }
            | Error::InsufficientGroups(_) => 4,
            _ => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
