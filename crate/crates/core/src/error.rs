use thiserror::Error;

/// Errors raised by the core library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("parameter out of range: {0}")]
    InvalidParameter(&'static str),
    #[error("density is not integrable: alpha = {alpha} must exceed dim = {dim}")]
    NonIntegrable { alpha: f64, dim: usize },
    #[error("quadrature did not reach tolerance (estimated error {estimate:e})")]
    QuadratureFailure { estimate: f64 },
    #[error("no radius R > M solves the scaling equation for n = {n}")]
    NoRoot { n: f64 },
    #[error("simplex budget exceeded: more than {limit} simplices")]
    BudgetExceeded { limit: usize },
    #[error("filtration has max_dim = {max_dim}, need at least {needed}")]
    InsufficientDim { max_dim: usize, needed: usize },
    #[error("brute-force oracle accepts at most {limit} points, got {got}")]
    TooLarge { limit: usize, got: usize },
    #[error("region constants unsupported for (k = {k}, m = {m})")]
    Unsupported { k: usize, m: usize },
    #[error("only {accepted} accepted Monte Carlo samples (need at least {needed})")]
    InsufficientSamples { accepted: u64, needed: u64 },
}

pub type Result<T> = core::result::Result<T, Error>;
