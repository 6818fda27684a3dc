use thiserror::Error;

/// Errors raised by the simulation and analysis pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("state became non-finite at t = {t} ms")]
    NonFinite { t: f64 },

    #[error("no limit cycle found: {0}")]
    NoCycle(String),

    #[error("no burst detected{}", .0.as_deref().map(|c| format!(" ({c})")).unwrap_or_default())]
    NoBurst(Option<String>),

    #[error("speed sweep failed at xi = {xi}: {source}")]
    SweepFailed { xi: f64, source: Box<Error> },

    #[error("adjoint did not converge after {periods} periods (relative change {change:.3e})")]
    NoConvergence { periods: usize, change: f64 },

    #[error("eta equation has {0} interior roots; expected at most one")]
    Ambiguous(usize),

    #[error("arccos argument {0} outside [-1, 1]")]
    DomainError(f64),

    #[error("degenerate denominator: H'(1/3+eta) equals H'(2/3-eta)")]
    DegenerateDenominator,

    #[error("newton diverged from seed ({0:.4}, {1:.4})")]
    NewtonDiverged(f64, f64),

    #[error("continuation step too large at xi = {0}; try halving it")]
    StepTooLarge(f64),

    #[error("unknown preset '{0}'")]
    UnknownPreset(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
