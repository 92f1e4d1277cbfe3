use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid design: {0}")]
    InvalidDesign(String),
    #[error("size mismatch: expected {expected}, got {got}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("population size must be at least 1")]
    EmptyPopulation,
    #[error("moment of order {0} is not supported (1..=6)")]
    UnsupportedMoment(u32),
    #[error("enumeration infeasible: {states} support states exceed the cap of {cap}")]
    EnumerationInfeasible { states: u128, cap: u128 },
    #[error("enumeration not supported for design `{0}`")]
    EnumerationUnsupported(&'static str),
    #[error("design `{0}` has no limit weight; the A-conditions fail (use `audit`)")]
    NoLimit(&'static str),
    #[error("limit normalizer must be positive, got {0}")]
    ZeroNormalizer(f64),
    #[error("empirical c.d.f. is empty (no unit selected)")]
    EmptyEcdf,
    #[error("limit c.d.f. is flat at level {0}; quantile is not unique")]
    FlatQuantile(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("bound is vacuous: expected sample size {0} must exceed 1")]
    VacuousBound(f64),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
