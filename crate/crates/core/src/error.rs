use thiserror::Error;

/// Errors raised across the solver, verification and CLI layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("overlap error: {0}")]
    Overlap(String),
    #[error("coverage error: {0}")]
    Coverage(String),
    #[error("measure error: {0}")]
    Measure(String),
    #[error("unbounded sigma2 error: {0}")]
    UnboundedSigma2(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("singularity error: kernel evaluated at coincident points x = y = {0}")]
    Singularity(f64),
    #[error("quadrature error: {0}")]
    Quadrature(String),
    #[error("consistency error: {0}")]
    Consistency(String),
    #[error("singular matrix error: {0}")]
    SingularMatrix(String),
    #[error("convergence error: {0}")]
    Convergence(String),
    #[error("step error: {0}")]
    Step(String),
    #[error("nontermination error: walk exceeded {0} steps")]
    Nontermination(usize),
    #[error("ratio error: {0}")]
    Ratio(String),
    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// True for errors caused by the user's input rather than by the numerics.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Overlap(_)
                | Error::Coverage(_)
                | Error::Measure(_)
                | Error::UnboundedSigma2(_)
                | Error::Config(_)
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
