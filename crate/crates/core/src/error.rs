use thiserror::Error;

/// Errors raised anywhere in the bound / mapping / optimization pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid material: {0}")]
    InvalidMaterial(String),

    #[error("invalid load set: {0}")]
    InvalidLoads(String),

    #[error("singular matrix in {0}")]
    Singular(&'static str),

    #[error("inconsistent rotation: rotated fourth moment is {0:e}")]
    InconsistentRotation(f64),

    #[error("moments are infeasible: residuals {0:?}")]
    InfeasibleMoments([f64; 3]),

    #[error("reconstruction failed: {0}")]
    Reconstruction(String),

    #[error("degenerate cell geometry: {0}")]
    DegenerateGeometry(String),

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("linear solver failed: {0}")]
    Solver(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
