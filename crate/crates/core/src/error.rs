use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the function being evaluated.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("covariance is not positive definite after {attempts} jitter escalations: {diagnostic}")]
    NotPositiveDefinite { attempts: usize, diagnostic: String },

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("ratio overflow at level {level}: l_k = {ratio} > 1/2")]
    RatioOverflow { level: usize, ratio: f64 },

    #[error("too few scales for a slope fit: {got} < {needed}")]
    TooFewScales { got: usize, needed: usize },

    #[error("atom overflow: {count} atoms exceed the cap of {cap}")]
    AtomOverflow { count: usize, cap: usize },

    #[error("grid too coarse for tol: tol = {tol} < guard = {guard}")]
    GridTooCoarse { tol: f64, guard: f64 },

    #[error("empty delta-ball on grid: {0}")]
    EmptyBall(String),

    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("time {0} is not a grid point of the covariance model")]
    OffGrid(f64),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by a numerical failure rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. }
                | Error::Quadrature(_)
                | Error::RatioOverflow { .. }
                | Error::AtomOverflow { .. }
                | Error::TooFewScales { .. }
        )
    }
}
