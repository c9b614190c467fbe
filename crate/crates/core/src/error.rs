use thiserror::Error;

use crate::sieve::ResonanceRecord;

/// Failure modes shared by every stage of the pipeline.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("small divisor at l={ell:?}: |divisor| = {divisor:.3e} below floor {floor:.3e}")]
    SmallDivisor { ell: Vec<i32>, divisor: f64, floor: f64 },
    #[error("parameter excluded: {0}")]
    Excluded(Box<ResonanceRecord>),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("serialization error: {0}")]
    Serde(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
