//! Error type shared across the crate.

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong while evaluating targets, metrics, or chains.
///
/// Numerical blow-ups along a trajectory (`NonFinite`, `FixedPointStall`,
/// `MetricOverflow`) are *divergences*: the sampler catches them, rejects the
/// proposal, and keeps going. The remaining variants are genuine caller or
/// configuration errors.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A non-finite value appeared where a finite one was required.
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// An implicit integrator step failed to converge.
    #[error("fixed-point solve stalled after {max_iters} iterations (residual {residual:.3e})")]
    FixedPointStall { max_iters: usize, residual: f64 },

    /// A metric evaluation overflowed (e.g. sinh of a huge argument).
    #[error("metric overflow: {0}")]
    MetricOverflow(&'static str),

    /// Bad argument from the caller (dimension mismatch, nonpositive step, ...).
    #[error("invalid argument: {0}")]
    Invalid(String),

    /// A sample series that cannot be analyzed (constant, too short, ...).
    #[error("degenerate series: {0}")]
    Degenerate(&'static str),

    /// A chain that never got off the ground (near-total warm-up divergence).
    #[error("chain failed: {reason} (final epsilon {epsilon:.3e}, divergent fraction {divergent_fraction:.3})")]
    ChainFailed {
        reason: String,
        epsilon: f64,
        divergent_fraction: f64,
    },
}

impl Error {
    /// True for trajectory-level numerical failures that a Metropolis
    /// rejection absorbs; false for errors the caller must fix.
    pub fn is_divergence(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_) | Error::FixedPointStall { .. } | Error::MetricOverflow(_)
        )
    }
}
