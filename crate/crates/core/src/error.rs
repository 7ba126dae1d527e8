use thiserror::Error;

/// Errors produced anywhere in the simulation and analysis pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("tone at {freq} Hz is at or above Nyquist ({nyquist} Hz)")]
    AliasedTone { freq: f64, nyquist: f64 },
    #[error("insufficient samples: need {need}, have {have}")]
    InsufficientSamples { need: usize, have: usize },
    #[error("signal frequency {f_sig} Hz outside band (0, {band}] Hz")]
    OutOfBand { f_sig: f64, band: f64 },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("no convergence after {iterations} iterations")]
    NonConvergence { iterations: usize },
    #[error("rank-deficient least-squares problem ({0})")]
    RankDeficient(String),
    #[error("harmonic {harmonic} aliases onto the fundamental")]
    HarmonicAlias { harmonic: usize },
    #[error("inner grid too coarse: phase advanced {advance:.3} levels in one cell (limit {limit})")]
    GridTooCoarse { advance: f64, limit: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("fixed-point overflow: {0}")]
    FixedPointOverflow(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error("parse: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
