use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the simulation primitives and Monte Carlo drivers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("argument outside domain: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("quadrature failed: {reason} (tail mass {tail_mass:e} at z = {z}, target {target:e})")]
    Quadrature {
        reason: String,
        z: f64,
        tail_mass: f64,
        target: f64,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
