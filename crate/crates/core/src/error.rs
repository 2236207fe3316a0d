use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Everything that can go wrong in the library.
///
/// Numeric payloads are stored as `f64` regardless of the scalar type the
/// failing computation ran in.
#[derive(Debug, Error)]
pub enum Error {
    #[error("value {value} lies outside the domain of the {graph} graph")]
    DomainViolation { graph: &'static str, value: f64 },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    Nonconvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("Newton iteration diverged after {iterations} iterations (last residual {residual:e})")]
    NewtonDivergence { iterations: usize, residual: f64 },

    #[error("iterate left the domain of the {graph} graph and safeguarding could not recover")]
    DomainEscape { graph: &'static str },

    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("size mismatch: expected {expected}, found {found}")]
    SizeMismatch { expected: usize, found: usize },

    #[error("field is not trace compatible")]
    NotTraceCompatible,

    #[error("right-hand side has nonzero mean {mean:e}")]
    NonzeroMean { mean: f64 },

    #[error("singular matrix: zero pivot in column {0}")]
    Singular(usize),

    #[error("at least {needed} points required, found {found}")]
    InsufficientPoints { needed: usize, found: usize },

    #[error("initial data means differ: {first} vs {second}")]
    MeanMismatch { first: f64, second: f64 },

    #[error("inadmissible profile: {0}")]
    InadmissibleProfile(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed field file: {0}")]
    FieldFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable short identifier used in machine-readable error records.
    pub fn code(&self) -> &'static str {
        match self {
            Error::DomainViolation { .. } => "domain_violation",
            Error::Nonconvergence { .. } => "nonconvergence",
            Error::NewtonDivergence { .. } => "newton_divergence",
            Error::DomainEscape { .. } => "domain_escape",
            Error::InvalidDimension(_) => "invalid_dimension",
            Error::SizeMismatch { .. } => "size_mismatch",
            Error::NotTraceCompatible => "not_trace_compatible",
            Error::NonzeroMean { .. } => "nonzero_mean",
            Error::Singular(_) => "singular",
            Error::InsufficientPoints { .. } => "insufficient_points",
            Error::MeanMismatch { .. } => "mean_mismatch",
            Error::InadmissibleProfile(_) => "inadmissible_profile",
            Error::InvalidConfig(_) => "invalid_config",
            Error::FieldFormat(_) => "field_format",
            Error::Io(_) => "io",
        }
    }

    /// Whether the error stems from user input rather than from a solver failure.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig(_)
                | Error::InvalidDimension(_)
                | Error::MeanMismatch { .. }
                | Error::InadmissibleProfile(_)
                | Error::FieldFormat(_)
                | Error::Io(_)
        )
    }
}
