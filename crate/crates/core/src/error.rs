use thiserror::Error;

/// Errors raised across the pipeline.
///
/// Variants are grouped so the CLI can map them onto exit codes:
/// configuration problems, numeric failures, and hypothesis violations.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("symbol evaluated at |p| = {norm:e} below p_min = {p_min:e}")]
    ConicSingularity { norm: f64, p_min: f64 },

    #[error("step size collapsed at t = {t}")]
    StepCollapse { t: f64 },

    #[error("quadrature budget of {budget} evaluations exceeded (error estimate {estimate:e})")]
    BudgetExceeded { budget: usize, estimate: f64 },

    #[error("caustic: {0}")]
    Caustic(String),

    #[error("degenerate caustic at t = {t}: tangential zero of the Jacobian, unsupported")]
    DegenerateCaustic { t: f64 },

    #[error("no root of H0 = E on the source chart: {0}")]
    NoRoot(String),

    #[error("transversality violated: {0}")]
    Transversality(String),

    #[error("compactness violated: {0}")]
    Compactness(String),

    #[error("non-trapping violated: {0}")]
    Trapping(String),

    #[error("chart rejected: {0}")]
    ChartRejected(String),

    #[error("extrapolation did not converge: {0}")]
    Extrapolation(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("unsupported geometry: {0}")]
    Unsupported(String),

    #[error("io: {0}")]
    Io(String),
}

impl Error {
    /// Exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidParameter(_) => 2,
            Error::Trapping(_)
            | Error::Transversality(_)
            | Error::Compactness(_)
            | Error::NoRoot(_) => 4,
            _ => 3,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
