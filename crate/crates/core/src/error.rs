use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("operation requires a differentiable data term, got {0}")]
    NotSmooth(&'static str),

    #[error("singular prox denominator: min |1 + tau/sigma^2 |k_hat|^2| = {min_abs:e}")]
    SingularDenominator { min_abs: f64 },

    #[error("primal-dual solver stopped after {iterations} iterations with last change {last_change:e}")]
    NotConverged {
        iterations: usize,
        last_change: f64,
        last_iterate: Vec<f64>,
    },

    #[error("power iteration stopped after {iterations} iterations at {estimate} (relative change {relative_change:e})")]
    PowerIteration {
        iterations: usize,
        estimate: f64,
        relative_change: f64,
    },

    #[error("step size {tau:e} violates {inequality} (cap {cap:e})")]
    StepSizeCap {
        tau: f64,
        cap: f64,
        inequality: &'static str,
    },

    #[error("missing constant: {0}")]
    MissingConstant(&'static str),

    #[error("variance is undefined for fewer than two samples (count = {0})")]
    VarianceUndefined(u64),

    #[error("grid mismatch between distributions")]
    GridMismatch,

    #[error("distribution is not normalized (total mass {0})")]
    Unnormalized(f64),
}
