use thiserror::Error;

/// Crate-wide error type.
#[derive(Error, Debug)]
pub enum Error {
    #[error("shape mismatch in {op}: {details}")]
    Shape { op: &'static str, details: String },

    #[error("singular matrix in {op}: {details}")]
    Singular { op: &'static str, details: String },

    #[error("degenerate input in {op}: {details}")]
    DegenerateInput { op: &'static str, details: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dynamics diverged at step {step}: {details}")]
    Divergence { step: usize, details: String },

    #[error("parse error in {path} at byte offset {offset}: {details}")]
    Parse {
        path: String,
        offset: u64,
        details: String,
    },

    #[error("admissible feedback sampling failed after {attempts} attempts")]
    SamplingFailure { attempts: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
