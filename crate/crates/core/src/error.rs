use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("negative time t = {0}")]
    NegativeTime(f64),

    #[error("heat kernel series unconverged at t = {t}: tail estimate {tail:e} exceeds 1e-8")]
    UnconvergedKernel { t: f64, tail: f64 },

    #[error("mode count mismatch: operator has {operator} modes, noise path has {path}")]
    ModeMismatch { operator: usize, path: usize },

    #[error("noise path does not match the operator's decay rates")]
    RateMismatch,

    #[error("blow-up at t = {t}: sup-norm {norm:e} exceeds threshold")]
    BlowUp { t: f64, norm: f64 },

    #[error("blow-up in sample {index} at t = {t}: sup-norm {norm:e}")]
    SampleBlowUp { index: usize, t: f64, norm: f64 },

    #[error("reaction overflow: |x|_E = {norm:e} exceeds {threshold:e}")]
    ReactionOverflow { norm: f64, threshold: f64 },

    #[error("resolvent tail bound {tail:e} exceeds tolerance {tol:e}")]
    TailTooLarge { tail: f64, tol: f64 },

    #[error("variance gate: stderr {stderr:e} exceeds {limit}x |mean| = {mean:e} at t = {t}")]
    VarianceGate {
        t: f64,
        mean: f64,
        stderr: f64,
        limit: f64,
    },

    #[error("I/O error on {path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
