//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HamflowError {
    /// Bad configuration: shape mismatches, invalid field values, unknown presets.
    #[error("configuration error: {0}")]
    Config(String),

    /// Misuse of an API contract (e.g. backward from a non-scalar root).
    #[error("usage error: {0}")]
    Usage(String),

    /// Parameter outside a function's mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Non-finite values produced during leapfrog integration.
    #[error("integration error at leapfrog step {step}: {detail}")]
    Integration { step: usize, detail: String },

    /// A loss term could not be evaluated for a specific sample.
    #[error("loss error at sample {sample}: {detail}")]
    Loss { sample: usize, detail: String },

    /// Encoder produced non-finite outputs.
    #[error("encoding error: {0}")]
    Encoding(String),

    /// Training diverged (NaN loss); last good parameters were kept.
    #[error("training diverged at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },

    /// Sampler diagnostics indicate a broken run (e.g. zero HMC acceptance).
    #[error("diagnostic error: {0}")]
    Diagnostic(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, HamflowError>;

impl HamflowError {
    /// Process exit code for the CLI: 2 for config problems, 3 for runtime
    /// divergence, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HamflowError::Config(_) | HamflowError::Domain(_) | HamflowError::Usage(_) => 2,
            HamflowError::Divergence { .. }
            | HamflowError::Integration { .. }
            | HamflowError::Loss { .. } => 3,
            _ => 1,
        }
    }
}
