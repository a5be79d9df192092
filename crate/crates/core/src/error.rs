use std::fmt;

/// Coarse error category, used for process exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorClass {
    Validation,
    Solver,
    Geometry,
    Io,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Validation => 2,
            ErrorClass::Solver => 3,
            ErrorClass::Geometry => 4,
            ErrorClass::Io => 1,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("curve self-intersection: {0}")]
    CurveSelfIntersection(String),
    #[error("meshing failed: {0}")]
    MeshingFailure(String),
    #[error("invalid curve: {0}")]
    InvalidCurve(String),
    #[error("dimension mismatch: {what} has length {found}, expected {expected}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("linear solver stagnated after {iterations} iterations (relative residual {residual:.3e})")]
    SolverStagnation { iterations: usize, residual: f64 },
    #[error("factorization failed: {0}")]
    Factorization(String),
    #[error("newton iteration diverged (last residual {residual:.3e})")]
    NewtonDivergence { residual: f64 },
    #[error("boundary data has zero mass on this mesh")]
    ZeroMass,
    #[error("no sign change on bracket [{lo}, {hi}]")]
    NoBracket { lo: f64, hi: f64 },
    #[error("transport problem infeasible: {0}")]
    Infeasible(String),
    #[error("coincident points passed to the tangent-point radius")]
    DegenerateInput,
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid configuration: {}", ValidationList(.0))]
    Validation(Vec<String>),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

struct ValidationList<'a>(&'a [String]);

impl fmt::Display for ValidationList<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join("; "))
    }
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::CurveSelfIntersection(_)
            | Error::MeshingFailure(_)
            | Error::InvalidCurve(_)
            | Error::DegenerateInput => ErrorClass::Geometry,
            Error::DimensionMismatch { .. }
            | Error::SolverStagnation { .. }
            | Error::Factorization(_)
            | Error::NewtonDivergence { .. }
            | Error::ZeroMass
            | Error::NoBracket { .. }
            | Error::Infeasible(_) => ErrorClass::Solver,
            Error::Parse { .. } | Error::Validation(_) => ErrorClass::Validation,
            Error::Io(_) => ErrorClass::Io,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
