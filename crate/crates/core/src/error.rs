use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Which side of an admissibility bound a strategy crossed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bound {
    /// `c > -sqrt(lambda)` failed: the portfolio could jump to zero or below.
    JumpFloor,
    /// `c <= cap` failed under the convex jump-volatility constraint.
    Cap,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed market: {0}")]
    Structure(String),

    #[error(
        "volatility matrix on piece {piece} is ill-conditioned (condition number {condition:e})"
    )]
    IllConditioned { piece: usize, condition: f64 },

    #[error(
        "no growth optimal portfolio: theta = {theta} >= sqrt(lambda) = {sqrt_lambda} \
         on jump column {column}{}",
        .piece.map(|p| format!(" of piece {p}")).unwrap_or_default()
    )]
    NoGop {
        piece: Option<usize>,
        column: usize,
        theta: f64,
        sqrt_lambda: f64,
    },

    #[error("portfolio volatility {value} on jump column {column} is not above the floor {floor}")]
    InadmissibleVolatility {
        column: usize,
        value: f64,
        floor: f64,
    },

    #[error("strategy is inadmissible on piece {piece}, column {column}: volatility {value} violates {bound:?} bound {limit}")]
    InadmissibleStrategy {
        piece: usize,
        column: usize,
        value: f64,
        limit: f64,
        bound: Bound,
    },

    #[error("jump-volatility cap is only defined for d = 2, m = 1 (got d = {d}, m = {m})")]
    UnsupportedConstraint { d: usize, m: usize },

    #[error("jump-volatility cap must be positive and finite, got {0}")]
    InvalidCap(f64),

    #[error("theta is within 5% of sqrt(lambda): {required} paths required, {n_paths} requested")]
    HighVariance { n_paths: usize, required: usize },

    #[error("market violates the modelling assumptions: {0}")]
    InvalidMarket(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{}: {source}", .path.display())]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn structure(msg: impl Into<String>) -> Self {
        Error::Structure(msg.into())
    }
}
