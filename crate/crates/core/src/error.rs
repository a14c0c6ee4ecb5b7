use thiserror::Error;

/// Errors produced by the estimation pipeline and its numerical substrate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix is singular: smallest eigenvalue {min_eigenvalue:e} is below the floor {floor:e}")]
    SingularMatrix { min_eigenvalue: f64, floor: f64 },

    #[error("polynomial of degree {degree} exceeds the available degree {limit}")]
    DegreeExceeded { degree: usize, limit: usize },

    #[error("moment {0} is not part of the pseudo-expectation support")]
    MomentUnavailable(String),

    #[error("capacity exceeded: {what} is {size}, limit is {limit}")]
    CapacityExceeded {
        what: &'static str,
        size: usize,
        limit: usize,
    },

    #[error("solver did not produce a feasible point: {0}")]
    SolverFailure(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        Error::Io(err.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        Error::InvalidInput(format!("json: {err}"))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
