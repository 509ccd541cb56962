use alloc::boxed::Box;

/// Errors produced by the numeric core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("matrix data length {len} does not match {rows}x{cols}")]
    DataLength { rows: usize, cols: usize, len: usize },

    #[error("non-finite value in {what}")]
    NonFinite { what: &'static str },

    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("{op}: expected a square matrix, got {rows}x{cols}")]
    NotSquare {
        op: &'static str,
        rows: usize,
        cols: usize,
    },

    #[error("{op}: length mismatch, expected {expected}, found {found}")]
    LengthMismatch {
        op: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("{what} did not converge within {sweeps} sweeps")]
    NoConvergence { what: &'static str, sweeps: usize },

    #[error("matrix is not symmetric positive definite: {reason}")]
    NotSpd { reason: &'static str },

    #[error("feature matrix has {frames} rows but only {dim} columns; pooling requires rows <= columns")]
    TooManyFrames { frames: usize, dim: usize },

    #[error("epsilon must be positive, got {0}")]
    InvalidEpsilon(f64),

    #[error("degenerate spectrum: |s{i}^2 - s{j}^2| = {gap:e} is below the gap threshold")]
    DegenerateSpectrum { i: usize, j: usize, gap: f64 },

    #[error("singular value s{index} = {value:e} is below the floor")]
    SingularValueTooSmall { index: usize, value: f64 },

    #[error("video has no frames")]
    EmptyVideo,

    #[error("no item with label {label} in the database")]
    NoRelevant { label: u32 },

    #[error("need at least {needed} subjects with enough videos, found {found}")]
    InsufficientSubjects { needed: usize, found: usize },

    #[error("subject {label} has {found} videos, need {needed}")]
    InsufficientVideos {
        label: u32,
        needed: usize,
        found: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),

    #[error("non-finite gradient in {tensor}")]
    NonFiniteGradient { tensor: &'static str },

    #[error("training step {step}: {source}")]
    AtStep { step: usize, source: Box<Error> },
}

pub type Result<T> = core::result::Result<T, Error>;
