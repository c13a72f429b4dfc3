use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("non-finite input: {0}")]
    NonFinite(String),
    #[error("degenerate metric: |det g| = {0:e}")]
    DegenerateMetric(f64),
    #[error("signature is not (-, +, ..., +) at {0}")]
    Signature(String),
    #[error("covector is not lightlike: |H| = {0:e}")]
    NotLightlike(f64),
    #[error("tangential covector is not timelike (radicand margin {0:e})")]
    NotTimelike(f64),
    #[error("tangential exit: |<d rho, dx/ds>| = {0:e}")]
    TangentialExit(f64),
    #[error("no boundary exit up to s = {0}")]
    NoExit(f64),
    #[error("step size collapsed at s = {0} (tangency suspected)")]
    StepCollapse(f64),
    #[error("ill-conditioned system: condition number {0:e}")]
    IllConditioned(f64),
    #[error("quadrature did not converge (error estimate {0:e})")]
    Quadrature(f64),
    #[error("fit rejected: {0}")]
    FitRejected(String),
    #[error("not on boundary: |rho| = {0:e}")]
    NotOnBoundary(f64),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn check_finite(label: &str, xs: &[f64]) -> Result<()> {
    if xs.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(label.to_string()))
    }
}
