use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("unsupported quadrature degree {degree}: supported degrees are {min}..={max}")]
    UnsupportedDegree { degree: usize, min: usize, max: usize },

    #[error("integrand is not finite at quadrature node {index}")]
    NonFiniteIntegrand { index: usize },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("cell ({i}, {j}): {source}")]
    Cell {
        i: usize,
        j: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("moment vector is not realizable: {0}")]
    NotRealizable(String),

    #[error("anchor distribution has flat support: {0}")]
    FlatSupport(String),

    #[error("Newton iteration did not converge after {iterations} iterations (last residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("Newton iteration diverged; residual history {history:?}")]
    Divergence { history: Vec<f64> },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("time step {dt:e} exceeds stability bound {bound:e}")]
    UnstableTimeStep { dt: f64, bound: f64 },

    #[error("realizability violated in cell {cell}: {detail}")]
    RealizabilityViolation { cell: usize, detail: String },

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub fn at_cell(self, i: usize, j: usize) -> Error {
        Error::Cell { i, j, source: Box::new(self) }
    }

    /// True for failures of the numerics (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NoConvergence { .. }
            | Error::Divergence { .. }
            | Error::NotRealizable(_)
            | Error::RealizabilityViolation { .. }
            | Error::FlatSupport(_)
            | Error::NonFiniteIntegrand { .. } => true,
            Error::Cell { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
