use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("configuration: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("input: {0}")]
    Input(String),
    #[error("series did not converge within {terms} terms (last term norm {last_norm:.3e})")]
    SeriesNonConvergence { terms: usize, last_norm: f64 },
    #[error("1+p is not positive definite")]
    Positivity,
    #[error("hartree: mass drift {drift:.3e} at step {step}")]
    Instability { step: usize, drift: f64 },
    #[error("{0}: non-finite value encountered")]
    Divergence(&'static str),
    #[error("picard: residual stopped decreasing ({previous:.3e} -> {last:.3e})")]
    NonContraction { previous: f64, last: f64 },
    #[error("internal consistency: {0}")]
    Consistency(String),
    #[error("fock truncation: tail mass {tail:.3e} exceeds {threshold:.1e}")]
    Truncation { tail: f64, threshold: f64 },
    #[error("verification failed for {identity}: deviation {deviation:.3e} > {tolerance:.1e}")]
    Verification { identity: String, deviation: f64, tolerance: f64 },
    #[error("calibration drift {drift:.3e} for constant {name}")]
    CalibrationDrift { name: String, drift: f64 },
    #[error("{stage}: {source}")]
    Stage { stage: &'static str, source: Box<Error> },
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl Error {
    /// Prefix the error with the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage { stage, source: Box::new(self) }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
