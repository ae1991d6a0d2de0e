//! Crate-wide error type.
//!
//! Every fallible operation in the library funnels into [`Error`]. Numerical
//! routines fail loudly (dimension mismatches, violated preconditions,
//! blow-up) rather than silently clamping, so that experiment drivers can
//! count and report aborted paths instead of polluting statistics.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A field or vector was built against a different basis than the one the
    /// operation expects (wrong equation kind, mode count, or grid).
    #[error("basis mismatch: {0}")]
    BasisMismatch(String),

    /// A vector's length disagrees with the dimension an operator expects.
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: String,
    },

    /// The nonlinearity exponent violates the subcriticality condition
    /// sigma * d < 2 required for the cubic-type equation on a 1-D domain.
    #[error("subcriticality violation: sigma={sigma} requires sigma*d < 2 (d=1)")]
    Subcriticality { sigma: f64 },

    /// The low-mode noise block is not invertible, so the noise inverse that
    /// reconstructs low-mode vectors does not exist.
    #[error("low-mode inversion unavailable: {0}")]
    LowModeInversion(String),

    /// A state norm exceeded the configured guard during time stepping.
    #[error("state blow-up at step {step} (t={time:.6}): |u|^2 = {norm_sq:.3e} exceeds guard {guard:.3e}")]
    BlowUp {
        step: usize,
        time: f64,
        norm_sq: f64,
        guard: f64,
    },

    /// Configuration failed validation; the message lists every violated
    /// precondition, one per line.
    #[error("invalid configuration:\n{0}")]
    InvalidConfig(String),

    /// A statistical routine received an empty or degenerate sample.
    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    /// A discrete probability vector failed validation.
    #[error("invalid probability vector: {0}")]
    InvalidMeasure(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serialize(String),
}

impl Error {
    pub fn dim(expected: usize, got: usize, context: &str) -> Self {
        Error::DimensionMismatch {
            expected,
            got,
            context: context.to_string(),
        }
    }
}

impl From<Error> for String {
    fn from(e: Error) -> String {
        e.to_string()
    }
}
