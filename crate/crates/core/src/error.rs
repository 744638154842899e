use thiserror::Error;

/// Errors raised by the workbench.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum MixqError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("unsupported codebook: {bits}-bit {kind}")]
    UnsupportedCodebook { bits: u8, kind: String },

    #[error("code {code} out of range for a {bits}-bit codebook")]
    CodeOutOfRange { code: u32, bits: u8 },

    #[error("corrupt quantized matrix: {0}")]
    Corrupt(String),

    #[error("svd did not converge for a {rows}x{cols} matrix")]
    SvdFailed { rows: usize, cols: usize },

    #[error("kernel matrix is not positive definite after jitter (n = {n}, max diagonal {max_diag:e})")]
    NotPositiveDefinite { n: usize, max_diag: f64 },

    #[error("non-finite gradient in layer {layer}")]
    NonFiniteGradient { layer: usize },

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },

    #[error("config length {got} does not match {expected} adapter-bearing layers")]
    ConfigLength { expected: usize, got: usize },

    #[error("invalid bit-width {0}; only 4 and 8 are supported")]
    InvalidBitWidth(u32),

    #[error("all candidate configurations have been evaluated")]
    SearchSpaceExhausted,

    #[error("search space 2^{layers} exceeds the brute-force guard of {limit} configurations")]
    BruteForceGuard { layers: usize, limit: usize },

    #[error("replay log disagrees with the search: {0}")]
    ReplayMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, MixqError>;
