//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by transform construction, calibration, and the CLI.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are inconsistent.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A value that must be finite was NaN or infinite.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// LU factorization hit a pivot below the singularity threshold.
    #[error("singular matrix: pivot magnitude {pivot:.3e} below 1e-12")]
    Singular { pivot: f64 },

    /// A dimension that must be a power of two was not.
    #[error("dimension {0} is not a power of two")]
    Dimension(usize),

    /// Butterfly layer index outside `1..=log2(n)`.
    #[error("layer {layer} out of range 1..={max}")]
    Layer { layer: usize, max: usize },

    /// An operation received an empty input.
    #[error("empty input: {0}")]
    Empty(&'static str),

    /// Quantization scale must be positive.
    #[error("scale must be positive, got {0}")]
    Scale(f64),

    /// Grouping policy incompatible with the data shape.
    #[error("grouping incompatible: {0}")]
    Grouping(String),

    /// Soft-histogram temperature must be positive.
    #[error("temperature must be positive, got {0}")]
    Temperature(f64),

    /// Schedule step outside `0..=total_steps`.
    #[error("step {step} out of range 0..={total}")]
    Step { step: usize, total: usize },

    /// Curve index out of range.
    #[error("index {index} out of range for curve of length {len}")]
    Index { index: usize, len: usize },

    /// No power-of-two factorization exists for the requested dimension.
    #[error("no-pow2-factor: dimension {0} has no balanced power-of-two factorization; supply an explicit one")]
    NoPow2Factor(usize),

    /// Coherence is only defined for orthogonal matrices.
    #[error("not-orthogonal: max|QᵀQ - I| = {deviation:.3e} exceeds 1e-6")]
    NotOrthogonal { deviation: f64 },

    /// Persisted file is corrupt or has mismatched array lengths.
    #[error("format error at {offset}: {message}")]
    Format { offset: String, message: String },

    /// Persisted file carries an unsupported version tag.
    #[error("unsupported version {0:?} (expected \"1\")")]
    Version(String),

    /// Configuration failed schema validation.
    #[error("config error: {0}")]
    Config(String),

    /// Training produced a non-finite loss.
    #[error("diverged: non-finite loss at step {step}")]
    Diverged { step: usize },

    /// Underlying I/O failure.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Invariant violation that indicates a bug rather than bad input.
    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for CLI surfaces: 1 I/O, 2 usage/validation,
    /// 3 numerical divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 1,
            Error::Diverged { .. } => 3,
            _ => 2,
        }
    }
}
