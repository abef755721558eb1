use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid knot vector: {0}")]
    InvalidKnots(String),
    #[error("parameter {0} outside [0, 1]")]
    Domain(f64),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("refinement would create level {0}, the cap is {1}")]
    DepthExceeded(usize, usize),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("topology error: {0}")]
    Topology(String),
    #[error("trace compatibility violated: {0}")]
    TraceCompatibility(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
