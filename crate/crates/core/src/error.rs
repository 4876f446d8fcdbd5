use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{what} did not converge after {iterations} iterations")]
    NonConvergence { what: &'static str, iterations: usize },

    #[error("{what}: no acceptable sample after {tries} tries ({diagnostics})")]
    RetriesExhausted {
        what: &'static str,
        tries: usize,
        diagnostics: String,
    },

    #[error("activation {0} has no Taylor expansion at the origin")]
    NoTaylorSeries(String),

    #[error("Taylor majorant series diverges at z = {z}")]
    SeriesDivergence { z: f64 },

    #[error("construction infeasible: {0}")]
    Infeasible(String),

    #[error("enumeration needs 2^{required} labelings but the cap is 2^{cap}")]
    EnumerationCap { required: usize, cap: usize },

    #[error("value overflows f64 (natural log of value = {log_value})")]
    Overflow { log_value: f64 },

    #[error("trial {trial}: every restart was abandoned on a non-finite gradient")]
    AllRestartsAbandoned { trial: usize },
}
