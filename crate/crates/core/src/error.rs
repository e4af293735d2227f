use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("degenerate geometry: user {user} is {distance:e} m from antenna {antenna}")]
    DegenerateGeometry { user: usize, antenna: usize, distance: f64 },

    #[error("radiation vector is identically zero")]
    DegenerateRadiation,

    #[error("infeasible power fractions at antenna {index}: requested {requested}, remaining {remaining}")]
    InfeasibleFractions { index: usize, requested: f64, remaining: f64 },

    #[error("coupling {delta} unreachable at non-negative spacing (max {max})")]
    OutOfRange { delta: f64, max: f64 },

    #[error("user {decoder} cannot decode user {target}: decoding position is earlier")]
    InvalidPair { decoder: usize, target: usize },

    #[error("minimum-rate demands exceed the power budget: {0}")]
    QosInfeasible(String),

    #[error("expansion point violates constraint `{constraint}` by {violation:e}")]
    InfeasibleStart { constraint: String, violation: f64 },

    #[error("{users} users exceed the exhaustive-ordering guard of {max}")]
    TooManyUsers { users: usize, max: usize },

    #[error("{antennas} antennas exceed the exhaustive-activation guard of {max}")]
    TooManyAntennas { antennas: usize, max: usize },

    #[error("config error in {path}: {message}")]
    Config { path: PathBuf, message: String },

    #[error("I/O error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error on {path}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
