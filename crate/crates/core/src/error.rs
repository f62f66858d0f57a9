use thiserror::Error;

/// Errors produced by the mapping engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point ({x:.4}, {y:.4}) is outside the map bounds")]
    OutOfBounds { x: f64, y: f64 },

    #[error("invalid label set: {0}")]
    InvalidLabels(String),

    #[error("label index {index} out of range for {count} labels")]
    LabelOutOfRange { index: usize, count: usize },

    #[error("zero-norm feature vector")]
    ZeroNorm,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),

    #[error("batch has no positive pairs")]
    NoPositivePairs,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid confusion matrix: {0}")]
    InvalidConfusion(String),

    #[error("observation mode/width mismatch: {0}")]
    ModeMismatch(String),

    #[error("no frontier left: exploration complete")]
    ExplorationComplete,

    #[error("goal ({col}, {row}) is unreachable")]
    Unreachable { col: usize, row: usize },

    #[error("pose ({x:.3}, {y:.3}) lies inside an obstacle")]
    PoseInObstacle { x: f64, y: f64 },

    #[error("infeasible floorplan config: {0}")]
    InfeasibleConfig(String),

    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("malformed {what}: {msg}")]
    Format { what: &'static str, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short stable identifier, used for machine-parsable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::OutOfBounds { .. } => "out_of_bounds",
            Error::InvalidLabels(_) => "invalid_labels",
            Error::LabelOutOfRange { .. } => "label_out_of_range",
            Error::ZeroNorm => "zero_norm",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::InvalidTemperature(_) => "invalid_temperature",
            Error::NoPositivePairs => "no_positive_pairs",
            Error::Empty(_) => "empty",
            Error::NonFinite(_) => "non_finite",
            Error::InvalidConfusion(_) => "invalid_confusion",
            Error::ModeMismatch(_) => "mode_mismatch",
            Error::ExplorationComplete => "exploration_complete",
            Error::Unreachable { .. } => "unreachable",
            Error::PoseInObstacle { .. } => "pose_in_obstacle",
            Error::InfeasibleConfig(_) => "infeasible_config",
            Error::GeometryMismatch(_) => "geometry_mismatch",
            Error::Config(_) => "config",
            Error::Format { .. } => "format",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
