use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown wavelet family `{0}`")]
    UnknownFamily(String),
    #[error("refinement depth {0} outside [4, 20]")]
    DepthOutOfRange(u32),
    #[error("insufficient data: n = {n} cannot support resolution level 0 (needs {needed})")]
    InsufficientData { n: usize, needed: f64 },
    #[error("abscissa {x} outside domain [{lo}, {hi}]")]
    OutsideDomain { x: f64, lo: f64, hi: f64 },
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("coefficient vectors index different resolution plans")]
    PlanMismatch,
    #[error("smoothness s = {0} must exceed 1/2 for the remainder series to converge")]
    Smoothness(f64),
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(&'static str),
    #[error("degenerate u-posterior: normalizer underflow")]
    DegenerateUPosterior,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unknown prior guess `{0}`")]
    UnknownGuess(String),
    #[error("could not bracket the bound after {0} doublings")]
    Bracketing(usize),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed data file: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
