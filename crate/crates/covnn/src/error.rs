//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by covariance estimation, filtering, training, the
/// graphon lab, and file I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate sample: covariance estimation needs at least 2 rows, got {0}")]
    DegenerateSample(usize),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("shape mismatch: expected {expected}, got {found}")]
    Shape { expected: String, found: String },

    #[error("zero spectrum: largest eigenvalue {0:.3e} is below tolerance")]
    ZeroSpectrum(f64),

    #[error("degenerate spectrum: eigenvalues {0:.6} and {1:.6} are too close for interpolation")]
    DegenerateSpectrum(f64, f64),

    #[error("non-finite value encountered in {0}")]
    NumericOverflow(String),

    #[error("zero trace: partition undefined")]
    ZeroTrace,

    #[error("diagonal entry {index} is {value:.3e}; partition needs positive diagonals")]
    NonPositiveDiagonal { index: usize, value: f64 },

    #[error("dominance exponent must lie in (2/3, 1], got {0}")]
    DominanceExponent(f64),

    #[error("diagonals differ at index {index} by {delta:.3e}; cut norm needs matching diagonals")]
    DiagonalMismatch { index: usize, delta: f64 },

    #[error("matrix is not trace-normalized: trace = {0:.6}")]
    UnnormalizedTrace(f64),

    #[error("covariance is not spectrum-normalized; normalize before use")]
    UnnormalizedSpectrum,

    #[error("malformed model document: {0}")]
    MalformedDocument(String),

    #[error("unsupported document version {found} (this build reads up to {supported})")]
    VersionMismatch { found: u32, supported: u32 },

    #[error("checksum mismatch: document corrupted or edited")]
    ChecksumMismatch,

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("degenerate split: {0}")]
    DegenerateSplit(String),

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    NonFiniteLoss { epoch: usize, loss: f64 },

    #[error("group too small: {0} needs at least {1} observations")]
    InsufficientGroup(String, usize),

    #[error("zero variance in {0}")]
    ZeroVariance(String),

    #[error("duplicate subject id `{0}`")]
    DuplicateSubject(String),

    #[error("missing column `{0}` in {1}")]
    MissingColumn(String, String),

    #[error("csv parse error at line {line}: {message}")]
    Csv { line: u64, message: String },

    #[error("unknown graphon preset `{0}`")]
    UnknownGraphon(String),

    #[error("{0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
