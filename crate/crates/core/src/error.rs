use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate parameter: {0}")]
    DegenerateParameter(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("ambiguous nullspace at gap ratio {gap_ratio:e}; singular values {singular_values:?}")]
    AmbiguousNullspace { singular_values: Vec<f64>, gap_ratio: f64 },
    #[error("inconsistent constraints: empty nullspace")]
    InconsistentConstraints,
    #[error("operator is not block diagonal in magnetization (residual {0:e})")]
    NotBlockDiagonal(f64),
    #[error("degenerate reference spectrum (min gap {0:e})")]
    DegenerateReference(f64),
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
    #[error("ill-conditioned interpolation: {0}")]
    IllConditioned(String),
    #[error("config error at line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{context}: {source}")]
    Context { context: String, source: Box<Error> },
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context { context: context.into(), source: Box::new(self) }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
