use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// The state left the region where the model coefficients are defined.
    #[error("state {state:?} is outside the domain of model {model}")]
    Domain { model: String, state: Vec<f64> },

    #[error("covariance matrix is not positive definite")]
    SingularCovariance,

    #[error("bridge is degenerate: evaluation time {t} is not inside ({s}, {horizon})")]
    DegenerateBridge { s: f64, t: f64, horizon: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("functional has no closed-form Gaussian expectation; use sampled mode")]
    UnsupportedFunctional,

    #[error("all particle weights are zero")]
    AllZeroWeights,

    #[error("particle weights are not finite")]
    NonFiniteWeights,

    #[error("mixture density underflowed to zero at a resampled point")]
    ZeroBarDensity,

    #[error("empty input")]
    EmptyInput,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, Error>;
