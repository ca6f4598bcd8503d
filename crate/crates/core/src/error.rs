use thiserror::Error;

/// Errors produced by the simulator, the analysis routines and the runner.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not square: {0}x{1}")]
    NotSquare(usize, usize),

    #[error("matrix is not Hermitian (max |M - M^dag| = {0:e})")]
    NotHermitian(f64),

    #[error("trace is not 1 (got {0})")]
    InvalidTrace(f64),

    #[error("not positive semi-definite (min eigenvalue {0:e})")]
    NotPositive(f64),

    #[error("state is not normalized (|psi|^2 = {0})")]
    NotNormalized(f64),

    #[error("invalid subsystem selection: {0}")]
    InvalidSubsystems(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("negative time {0} ns")]
    NegativeTime(f64),

    #[error("need at least {needed} samples, found {found}")]
    TooFewPoints { needed: usize, found: usize },

    #[error("smoothing window must be odd, got {0}")]
    EvenWindow(usize),

    #[error("time grids are not aligned")]
    MisalignedGrids,

    #[error("time {t} ns outside grid [{start}, {end}]")]
    OutOfRange { t: f64, start: f64, end: f64 },

    #[error("degenerate readout contrast: L0 = L1 = {0}")]
    DegenerateContrast(f64),

    #[error("trace `{0}` is identically zero")]
    AllZeroTrace(String),

    #[error("rate is masked (singular) at t = {0} ns")]
    MaskedRate(f64),

    #[error("step {dt} ns exceeds stability bound {bound} ns")]
    StepTooLarge { dt: f64, bound: f64 },

    #[error("{0}")]
    Config(String),

    #[error("unknown figure `{given}`; valid identifiers: {valid}")]
    UnknownFigure { given: String, valid: String },

    #[error("invariant violated before write: {0}")]
    Invariant(String),

    #[error("malformed CSV: {0}")]
    Csv(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
