use thiserror::Error;

/// Errors raised anywhere in the design pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("history already holds {horizon} stages")]
    HorizonExceeded { horizon: usize },

    #[error("design component {index} = {value} outside [{lo}, {hi}]")]
    BoundsViolation {
        index: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("length mismatch: expected {expected}, got {actual} ({what})")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("unsupported prior: {0}")]
    UnsupportedPrior(String),

    #[error("belief grid needs at least 2 nodes per dimension, got {0}")]
    GridTooCoarse(usize),

    #[error("grids have different axes")]
    GridMismatch,

    #[error("posterior degenerate: every node mass underflowed")]
    DegeneratePosterior,

    #[error("forward model failure: {0}")]
    ModelFailure(String),

    #[error("sensor position ({x}, {y}) outside the computational domain")]
    OutOfDomain { x: f64, y: f64 },

    #[error("time step {dt} violates the convection stability bound (Courant sum {courant:.3} > {limit})")]
    StabilityViolation { dt: f64, courant: f64, limit: f64 },

    #[error("non-finite gradient")]
    NonFiniteGradient,

    #[error("non-finite policy output at stage {stage}")]
    NonFinitePolicyOutput { stage: usize },

    #[error("non-finite loss at iteration {iteration}: {detail}")]
    NonFiniteLoss { iteration: usize, detail: String },

    #[error("checkpoint architecture {found:?} does not match expected {expected:?}")]
    ArchMismatch {
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DegeneratePosterior
                | Error::NonFiniteGradient
                | Error::NonFinitePolicyOutput { .. }
                | Error::NonFiniteLoss { .. }
                | Error::StabilityViolation { .. }
                | Error::ModelFailure(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
