use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("normalization invariant violated: probabilities sum to {sum} (must be 1 within {tol:e})")]
    Normalization { sum: f64, tol: f64 },

    #[error("positivity invariant violated: atom {atom} has probability {prob} (must be > 0)")]
    NonPositiveProbability { atom: usize, prob: f64 },

    #[error("finiteness invariant violated: {0}")]
    NonFinite(String),

    #[error("partition invariant violated: {0}")]
    InvalidPartition(String),

    #[error("time grid invariant violated: {0}")]
    InvalidGrid(String),

    #[error("filtration invariant violated: partition at index {index} does not refine its predecessor")]
    NotRefining { index: usize },

    #[error("adaptedness invariant violated: row {time_index} is not measurable (spread {spread:e} on block {block})")]
    NotAdapted { time_index: usize, block: usize, spread: f64 },

    #[error("stopping-time invariant violated: event {{tau = {time_index}}} is not measurable at that time")]
    NotStoppingTime { time_index: usize },

    #[error("not a submartingale: E[x_{{k+1}} | F_k] - x_k = {violation:e} at step {step}, atom {atom}")]
    NotSubmartingale { step: usize, atom: usize, violation: f64 },

    #[error("not a martingale: max |E[n_{{k+1}} | F_k] - n_k| = {violation:e}")]
    NotMartingale { violation: f64 },

    #[error("monotonicity violated: value decreases by {decrease:e} at step {step}, atom {atom}")]
    NonMonotone { step: usize, atom: usize, decrease: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("malformed decomposition: {invariant} violated by {violation:e}")]
    MalformedDecomposition { invariant: &'static str, violation: f64 },

    #[error("model error: {0}")]
    Model(String),

    #[error("resource error: {0}")]
    Resource(String),
}
