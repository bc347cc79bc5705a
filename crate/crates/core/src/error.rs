use thiserror::Error;

/// Errors raised by the numerical pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: grid {left} vs grid {right}")]
    Shape { left: usize, right: usize },

    #[error("invalid grid size {0}: must be even and at least 8")]
    GridSize(usize),

    #[error("Picard iteration did not converge at step {step} after {iterations} iterations (shrink T or the time step)")]
    PicardDivergence { step: usize, iterations: usize },

    #[error("solution blew up at step {step} (shrink T or the time step)")]
    BlowUp { step: usize },

    #[error("invalid solver configuration: {0}")]
    Config(String),

    #[error("mollifier too wide for grid: rhohat at the Nyquist shell is {value:.3e} (> 1e-3)")]
    MollifierTooWide { value: f64 },

    #[error("non-degeneracy violated: eigenvalue {eigenvalue} <= -1")]
    NonDegeneracyViolation { eigenvalue: f64 },

    #[error("matrix is not symmetric (asymmetry {0:.3e})")]
    NotSymmetric(f64),

    #[error("basis size {requested} exceeds the {available} available real modes")]
    BasisTooLarge { requested: usize, available: usize },

    #[error("regularity fit is degenerate: only {0} populated shells")]
    DegenerateFit(usize),

    #[error("maximum iterations ({0}) exceeded")]
    MaxIterExceeded(usize),

    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// True for failures that signal a violated numerical hypothesis
    /// (non-degeneracy, local existence) rather than bad input.
    pub fn is_hypothesis_violation(&self) -> bool {
        matches!(
            self,
            Error::PicardDivergence { .. }
                | Error::BlowUp { .. }
                | Error::NonDegeneracyViolation { .. }
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
