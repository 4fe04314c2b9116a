//! Error types shared across the engine.

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// All the ways an engine operation can fail.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration or experiment setup.
    #[error("configuration error: {0}")]
    Config(String),

    /// Two vector arguments disagree on length.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// An input is outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Wealth dropped to zero or below after fees; the run cannot continue.
    #[error("bankruptcy at step {step}: wealth {wealth:.6e} after fees")]
    Bankruptcy { step: usize, wealth: f64 },

    /// The fee fixed-point iteration did not converge.
    #[error("fee fixed point did not converge at step {step} after {iterations} iterations")]
    FeeNonConvergence { step: usize, iterations: usize },

    /// A data file could not be parsed.
    #[error("parse error in {source_name} at line {line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    /// A Monte Carlo run failed; the whole experiment is aborted.
    #[error("run {run} failed: {source}")]
    Run {
        run: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn in_run(self, run: usize) -> Error {
        Error::Run {
            run,
            source: Box::new(self),
        }
    }

    /// True for errors caused by bad configuration or unparseable input,
    /// as opposed to failures that arise while an experiment is running.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_) | Error::Dimension(_) | Error::Domain(_) | Error::Parse { .. } => true,
            Error::Run { source, .. } => source.is_config(),
            _ => false,
        }
    }
}
