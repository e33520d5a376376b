use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("inertia matrix is numerically singular")]
    SingularInertia,
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("model file: {0}")]
    Parse(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: u_nom has {u_nom}, a has {a}, bounds have {lower}/{upper}")]
    Dimension {
        u_nom: usize,
        a: usize,
        lower: usize,
        upper: usize,
    },
    #[error("non-finite problem data")]
    NonFinite,
    #[error("lower bound exceeds upper bound at coordinate {0}")]
    EmptyBox(usize),
    #[error("constraint gradient norm {norm:e} is at or below {eps:e}")]
    Degenerate { norm: f64, eps: f64 },
}

#[derive(Debug, Error)]
pub enum FilterError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error("invalid filter configuration: {0}")]
    Config(String),
}
