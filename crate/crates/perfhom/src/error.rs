use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid Lamé parameters: {0}")]
    InvalidParams(String),
    #[error("invalid curve: {0}")]
    InvalidCurve(String),
    #[error("violates (A3): r2 = {0} >= 1/2")]
    HoleTooLarge(f64),
    #[error("node count {0} must be even and at least 32")]
    BadNodeCount(usize),
    #[error("hole exits unit cell: eta * r2 = {0} >= 1/2")]
    HoleExitsCell(f64),
    #[error("parameter out of range: {0}")]
    OutOfRange(String),
    #[error("singular point: {0}")]
    Singular(&'static str),
    #[error("Ewald truncation cannot reach accuracy {requested:e} (estimate {estimate:e})")]
    Truncation { requested: f64, estimate: f64 },
    #[error("kernel dimension != 2 at this resolution (singular values {0:?})")]
    KernelDimension(Vec<f64>),
    #[error("degenerate moment normalization (condition number {0:e})")]
    DegenerateMoments(f64),
    #[error("near-degenerate boundary system (condition number {0:e})")]
    IllConditioned(f64),
    #[error("linear solve failed: {0}")]
    Solve(String),
    #[error("evaluation point within the near-boundary band (distance {0:e})")]
    NearBoundary(f64),
    #[error("holes unresolved: grid {grid} < required {required}")]
    Unresolved { grid: usize, required: usize },
    #[error("grid mismatch: {0} vs {1}")]
    GridMismatch(usize, usize),
    #[error("fit error: {0}")]
    Fit(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
