use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatsError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("mode {mode} out of range for a tensor of order {order}")]
    ModeOutOfRange { mode: usize, order: usize },

    #[error("non-finite value at flat index {0}")]
    NonFinite(usize),

    #[error("rank {rank} out of range (must be in 1..={max})")]
    RankOutOfRange { rank: usize, max: usize },

    #[error("matrix is not symmetric (relative asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix is not positive definite (min eigenvalue {min_eig:e} <= floor {floor:e})")]
    NotPositiveDefinite { min_eig: f64, floor: f64 },

    #[error("columns are not orthonormal (||VᵀV - I||_F = {0:e})")]
    NotOrthonormal(f64),

    #[error(
        "anchor overlap violated{}{}: min eigenvalue {min_eig:e} <= floor {floor:e}",
        .mode.map(|m| format!(" on mode {m}")).unwrap_or_default(),
        .sample.map(|s| format!(" for sample {s}")).unwrap_or_default()
    )]
    /// `mode` is 1-based; `sample` is the corpus index.
    OverlapViolation {
        min_eig: f64,
        floor: f64,
        mode: Option<usize>,
        sample: Option<usize>,
    },

    #[error("zero reference norm")]
    ZeroNorm,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unstable configuration: {0}")]
    Unstable(String),

    #[error("training diverged at step {step} (loss {loss})")]
    Diverged { step: usize, loss: f64 },

    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for GatsError {
    fn from(e: std::io::Error) -> Self {
        GatsError::Io(e.to_string())
    }
}

impl GatsError {
    /// Attach a sample index to an overlap violation; other errors pass through.
    pub fn with_sample(self, index: usize) -> Self {
        match self {
            GatsError::OverlapViolation {
                min_eig,
                floor,
                mode,
                ..
            } => GatsError::OverlapViolation {
                min_eig,
                floor,
                mode,
                sample: Some(index),
            },
            other => other,
        }
    }

    pub fn with_mode(self, k: usize) -> Self {
        match self {
            GatsError::OverlapViolation {
                min_eig,
                floor,
                sample,
                ..
            } => GatsError::OverlapViolation {
                min_eig,
                floor,
                mode: Some(k),
                sample,
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, GatsError>;
