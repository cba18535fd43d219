use thiserror::Error;

pub type Result<T> = std::result::Result<T, GtError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GtError {
    #[error("pool_size * n_pools = {product} is not divisible by n_items = {n_items}")]
    Divisibility { product: usize, n_items: usize },

    #[error("design parameters infeasible: {0}")]
    InvalidDesignParams(String),

    #[error("stub matching failed after {attempts} attempts")]
    InfeasibleDesign { attempts: usize },

    #[error("invalid design: {}", .0.join("; "))]
    InvalidDesign(Vec<String>),

    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("invalid parameter {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("exact enumeration over {n_items} items exceeds the cap of {cap}")]
    CapExceeded { n_items: usize, cap: usize },

    #[error("observed test results have zero probability under the model")]
    DegenerateEvidence,

    #[error("prevalence {0} must lie strictly inside (0, 1)")]
    DegeneratePrevalence(f64),

    #[error("ground truth must contain both defective and non-defective items")]
    DegenerateTruth,

    #[error("distribution has no mass")]
    EmptyDistribution,

    #[error("non-finite message encountered at iteration {iteration}")]
    NumericalBreakdown { iteration: usize },
}

pub(crate) fn check_probability(name: &'static str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(GtError::InvalidParameter {
            name,
            value,
            reason: "must lie in [0, 1]",
        })
    }
}
