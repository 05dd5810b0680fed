use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("rejection sampling exhausted after {attempts} attempts (epsilon too large for k and R?)")]
    SamplingExhausted { attempts: usize },

    #[error("direction vector must have unit norm, got norm {norm}")]
    NonUnitDirection { norm: f64 },

    #[error("no valid quadratic-domination radius at relaxation q = {q}")]
    NoValidRadius { q: f64 },

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("every sampled secant was degenerate (kernel norm below threshold)")]
    AllSamplesDegenerate,

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("zero amplitude: the conditioning bound needs min |a_r| > 0")]
    ZeroAmplitude,

    #[error("beta = {beta} too large: {reason}")]
    BetaTooLarge { beta: f64, reason: String },

    #[error("noise norm {noise} exceeds the certified budget {budget}")]
    NoiseBudgetExceeded { noise: f64, budget: f64 },

    #[error("{k} spikes cannot be {epsilon}-separated inside the ball of radius {radius}")]
    InfeasibleSeparation { k: usize, epsilon: f64, radius: f64 },

    #[error("target value {alpha} outside [{low}, {high}]")]
    AlphaOutOfRange { alpha: f64, low: f64, high: f64 },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}
