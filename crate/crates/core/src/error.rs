use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("resource limit exceeded: {what} would need {needed}, limit is {limit}")]
    ResourceLimit { what: String, needed: u128, limit: u128 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("bracket violation: g({lo}) = {g_lo}, g({hi}) = {g_hi}, target {target}")]
    Bracket { lo: f64, hi: f64, g_lo: f64, g_hi: f64, target: f64 },

    #[error("optimizer did not converge after {iterations} iterations (gap {gap:e}, best value {best_value})")]
    NonConvergence { iterations: usize, gap: f64, best_value: f64, best_point: Vec<f64> },

    #[error("tensor is not in the required class: {0}")]
    ClassViolation(String),

    #[error("internal consistency check failed: {0}")]
    Internal(String),

    #[error("cache i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
