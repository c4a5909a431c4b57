use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("gripper width range is zero (max width == grasp width), width scale is undefined")]
    ZeroWidthRange,

    #[error("arcsin argument {arg} outside [-1, 1]: tilt is geometrically unreachable")]
    RotationDomain { arg: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("diffusion step {k} outside 1..={max}")]
    StepOutOfRange { k: usize, max: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("constraint infeasible on dim {dim}: lower {lower} > upper {upper}")]
    Infeasible { dim: usize, lower: f64, upper: f64 },

    #[error("pixel set is empty")]
    EmptySet,

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("did not converge within {steps} steps")]
    NonConvergence { steps: usize },

    #[error("unsupported format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
