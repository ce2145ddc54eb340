//! Error types shared across the library.

use thiserror::Error;

/// Errors raised by model construction, simulation and solvers.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// A structural precondition on inputs was violated.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A market price of risk was requested where the corresponding
    /// volatility slot is zero but the excess return is not.
    #[error("degenerate market: {0}")]
    DegenerateMarket(String),

    /// Evaluation outside the time range covered by a coefficient table.
    #[error("time {t} outside supported range [{lo}, {hi}]")]
    TimeOutOfRange { t: f64, lo: f64, hi: f64 },

    /// A multiplicative jump factor reached -1 or below, which would
    /// destroy positivity of the corresponding price process.
    #[error("jump factor not greater than -1: {0}")]
    JumpFactorTooSmall(String),

    /// A simulated price process left the positive domain.
    #[error("nonpositive state in simulation: {0}")]
    NonpositiveState(String),

    /// Iterative solver exhausted its budget without meeting tolerance.
    #[error("solver did not converge: {0}")]
    NoConvergence(String),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
