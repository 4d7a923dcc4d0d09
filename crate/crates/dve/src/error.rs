use thiserror::Error;

/// Errors shared across the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DveError {
    #[error("empty sample: no class has a positive count")]
    EmptySample,

    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("degenerate profile: {0}")]
    DegenerateProfile(String),

    #[error("zero sample coverage (every sampled class is a singleton)")]
    ZeroCoverage,

    #[error("fixed-point solve did not converge after {iterations} iterations")]
    NoConvergence { iterations: u32 },

    #[error("invalid estimate: {0}")]
    InvalidEstimate(String),

    #[error("empty aggregate: no records match")]
    EmptyAggregate,

    #[error("unknown preset '{0}'")]
    UnknownPreset(String),

    #[error("requested slice missing from records: {0}")]
    MissingSlice(String),

    #[error("config mismatch: {0}")]
    ConfigMismatch(String),
}

/// Stable short codes used in the `error` column of the record store.
impl DveError {
    pub fn code(&self) -> &'static str {
        match self {
            DveError::EmptySample => "empty_sample",
            DveError::InvalidSpec(_) => "invalid_spec",
            DveError::DegenerateProfile(_) => "degenerate_profile",
            DveError::ZeroCoverage => "zero_coverage",
            DveError::NoConvergence { .. } => "no_convergence",
            DveError::InvalidEstimate(_) => "invalid_estimate",
            DveError::EmptyAggregate => "empty_aggregate",
            DveError::UnknownPreset(_) => "unknown_preset",
            DveError::MissingSlice(_) => "missing_slice",
            DveError::ConfigMismatch(_) => "config_mismatch",
        }
    }
}

pub type Result<T> = std::result::Result<T, DveError>;
