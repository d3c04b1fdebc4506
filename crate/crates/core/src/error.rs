use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("{what}: distance {distance} is not below the injectivity radius {r_inj}")]
    BeyondInjectivity { what: &'static str, distance: f64, r_inj: f64 },

    #[error("radius {radius} outside the admissible range (< {limit})")]
    RadiusOutOfRange { radius: f64, limit: f64 },

    #[error("unsupported combination: {0}")]
    Unsupported(String),

    #[error("net construction needs more than {budget} points (target epsilon {epsilon})")]
    PointBudgetExceeded { budget: usize, epsilon: f64 },

    #[error("Voronoi cell {index} received no Monte Carlo samples; increase mc_samples")]
    EmptyCell { index: usize },

    #[error("net has no measures; call estimate_measures first")]
    MissingMeasures,

    #[error("weight alpha vanishes at net point {index}")]
    DegenerateWeight { index: usize },

    #[error("dimension {dim} exceeds the dense limit {limit}")]
    DimensionTooLarge { dim: usize, limit: usize },

    #[error("outside the convergence regime: {0}")]
    Regime(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
