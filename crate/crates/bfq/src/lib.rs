//! Learnable butterfly orthogonal transforms for extreme low-bit quantization.
//!
//! The crate builds, applies, differentiates, and calibrates Givens-factorized
//! rotations (plus Cayley/Kronecker composites for dimensions that are not a
//! power of two), quantizes rotated weights and activations, and measures
//! mutual coherence and reconstruction error against fixed-rotation baselines
//! on synthetic layer data.
//!
//! Module map:
//! - [`linalg`]: minimal dense linear algebra (mat-vec, LU solves, Hadamard
//!   construction, Haar-random orthogonal sampling, transform materialization).
//! - [`butterfly`]: the learnable butterfly transform and its analytic
//!   gradients.
//! - [`composite`]: Cayley-parameterized orthogonal blocks and Kronecker
//!   composites for arbitrary even dimensions.
//! - [`quant`]: symmetric uniform quantization, fake quantization with a
//!   straight-through gradient contract, hard/soft bin histograms.
//! - [`calibrate`]: loss assembly and SGD training of transform parameters on
//!   a calibration set, plus synthetic layer-data generation.
//! - [`analyze`]: coherence measurement, quantization-error metrics, and
//!   baseline comparisons.
//! - [`transform`]: the strategy trait unifying fixed and learned transforms,
//!   with a by-name registry used for runtime selection.
//! - [`persist`]: versioned transform files and the binary calibration-data
//!   container.
//! - [`cli`]: command implementations behind the `bfq` binary.
//!
//! All randomness is derived from explicit `u64` seeds through ChaCha8, so
//! every operation is reproducible bit-for-bit across platforms.

pub mod analyze;
pub mod butterfly;
pub mod calibrate;
pub mod cli;
pub mod composite;
mod error;
pub mod linalg;
pub mod persist;
pub mod quant;
pub mod transform;

pub use error::{Error, Result};
