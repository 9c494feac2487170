//! Growth rates and the growth optimal portfolio.
//!
//! Everything here is expressed in portfolio volatilities
//! `c^k = sum_j pi^j b^{j,k}`. For a diffusive column the growth rate
//! contribution is `c theta - c^2 / 2`; for a jump column it is
//!
//! ```text
//! c (theta - sqrt(lambda)) + lambda log(1 + c / sqrt(lambda))
//! ```
//!
//! which is strictly concave on `c > -sqrt(lambda)` and bounded above only
//! when `theta < sqrt(lambda)`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::market::{cap_binds, solve_checked, MarketSpec};

/// Growth rate split into its cash, diffusive and jump parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GrowthRate {
    pub total: f64,
    pub base: f64,
    pub diffusive: f64,
    pub jump: f64,
}

/// Jump-column growth contribution for a single component.
pub fn jump_summand(c: f64, theta: f64, lambda: f64) -> f64 {
    let sqrt_lambda = lambda.sqrt();
    c * (theta - sqrt_lambda) + lambda * (c / sqrt_lambda).ln_1p()
}

fn check_lengths(c: &[f64], theta: &[f64], lambda: &[f64]) -> Result<usize> {
    if c.len() != theta.len() {
        return Err(Error::InvalidArgument(format!(
            "volatility vector has length {}, theta has length {}",
            c.len(),
            theta.len()
        )));
    }
    if lambda.len() > c.len() {
        return Err(Error::InvalidArgument(format!(
            "{} intensities for {} risk sources",
            lambda.len(),
            c.len()
        )));
    }
    Ok(c.len() - lambda.len())
}

/// Growth rate of a portfolio with volatilities `c`. The number of
/// diffusive columns is `c.len() - lambda.len()`.
pub fn growth_rate(c: &[f64], theta: &[f64], lambda: &[f64], r: f64) -> Result<GrowthRate> {
    let m = check_lengths(c, theta, lambda)?;
    let diffusive: f64 = c[..m]
        .iter()
        .zip(&theta[..m])
        .map(|(c, t)| c * t - 0.5 * c * c)
        .sum();
    let mut jump = 0.0;
    for (i, &lambda) in lambda.iter().enumerate() {
        let column = m + i;
        let floor = -lambda.sqrt();
        if !(c[column] > floor) {
            return Err(Error::InadmissibleVolatility {
                column,
                value: c[column],
                floor,
            });
        }
        jump += jump_summand(c[column], theta[column], lambda);
    }
    Ok(GrowthRate {
        total: r + diffusive + jump,
        base: r,
        diffusive,
        jump,
    })
}

/// Unconstrained optimal volatilities: `c* = theta` on diffusive columns and
/// `theta / (1 - theta / sqrt(lambda))` on jump columns.
pub fn optimal_volatilities(theta: &[f64], lambda: &[f64]) -> Result<Vec<f64>> {
    let m = check_lengths(theta, theta, lambda)?;
    let mut c = theta.to_vec();
    for (i, &lambda) in lambda.iter().enumerate() {
        let column = m + i;
        let th = theta[column];
        if th == 0.0 {
            continue;
        }
        let sqrt_lambda = lambda.sqrt();
        if !(th < sqrt_lambda) {
            return Err(Error::NoGop {
                piece: None,
                column,
                theta: th,
                sqrt_lambda,
            });
        }
        c[column] = th / (1.0 - th / sqrt_lambda);
    }
    Ok(c)
}

/// Risky fractions `pi` with `pi^T b = c^T`.
pub fn gop_fractions(c_star: &[f64], b: &[Vec<f64>]) -> Result<Vec<f64>> {
    let d = c_star.len();
    if b.len() != d || b.iter().any(|row| row.len() != d) {
        return Err(Error::InvalidArgument(format!("b must be {d}x{d}")));
    }
    let bt = DMatrix::from_fn(d, d, |k, j| b[j][k]);
    let pi = solve_checked(bt, DVector::from_column_slice(c_star), 0)?;
    Ok(pi.iter().copied().collect())
}

/// Closed-form optimal growth rate
/// `r + sum theta^2 / 2 + sum lambda (log(1 + theta / (sqrt(lambda) - theta)) - theta / sqrt(lambda))`.
pub fn optimal_growth_rate(theta: &[f64], lambda: &[f64], r: f64) -> Result<f64> {
    let m = check_lengths(theta, theta, lambda)?;
    let mut g = r + 0.5 * theta[..m].iter().map(|t| t * t).sum::<f64>();
    for (i, &lambda) in lambda.iter().enumerate() {
        let column = m + i;
        let th = theta[column];
        let sqrt_lambda = lambda.sqrt();
        if !(th < sqrt_lambda) {
            return Err(Error::NoGop {
                piece: None,
                column,
                theta: th,
                sqrt_lambda,
            });
        }
        g += lambda * ((th / (sqrt_lambda - th)).ln_1p() - th / sqrt_lambda);
    }
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GopRegime {
    Unconstrained,
    Constrained,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConstrainedVolatilities {
    pub c: [f64; 2],
    pub regime: GopRegime,
}

/// Optimal volatilities for `d = 2, m = 1` when the jump volatility is
/// capped at `cap`. When the cap binds the optimum sits on it; otherwise the
/// unconstrained optimum is feasible and is returned.
pub fn constrained_optimal_volatilities(
    theta: [f64; 2],
    lambda: f64,
    cap: f64,
) -> Result<ConstrainedVolatilities> {
    if !(cap > 0.0 && cap.is_finite()) {
        return Err(Error::InvalidCap(cap));
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "intensity must be positive, got {lambda}"
        )));
    }
    let sqrt_lambda = lambda.sqrt();
    if cap_binds(theta[1], sqrt_lambda, cap) {
        Ok(ConstrainedVolatilities {
            c: [theta[0], cap],
            regime: GopRegime::Constrained,
        })
    } else {
        let c = optimal_volatilities(&theta, &[lambda])?;
        Ok(ConstrainedVolatilities {
            c: [c[0], c[1]],
            regime: GopRegime::Unconstrained,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PieceGop {
    pub piece: usize,
    pub theta: Vec<f64>,
    pub c_star: Vec<f64>,
    pub pi_star: Vec<f64>,
    /// `1 - sum(pi_star)`.
    pub cash: f64,
    pub g_star: f64,
    pub regime: GopRegime,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GopSolution {
    pub pieces: Vec<PieceGop>,
}

impl GopSolution {
    /// `∫_0^t g*(s) ds`.
    pub fn integrated_growth(&self, spec: &MarketSpec, t: f64) -> f64 {
        self.pieces
            .iter()
            .map(|p| p.g_star * spec.piece_overlap(p.piece, t))
            .sum()
    }
}

/// GOP on a single piece, honouring the cap when one is set.
pub fn solve_gop_piece(spec: &MarketSpec, piece: usize) -> Result<PieceGop> {
    let cap = spec.checked_cap()?;
    let p = &spec.pieces[piece];
    let theta = spec.market_price_of_risk(piece)?;
    let (c_star, regime) = match cap {
        Some(cap) => {
            let cv = constrained_optimal_volatilities([theta[0], theta[1]], p.lambda[0], cap)?;
            (cv.c.to_vec(), cv.regime)
        }
        None => (
            optimal_volatilities(&theta, &p.lambda).map_err(|e| with_piece(e, piece))?,
            GopRegime::Unconstrained,
        ),
    };
    let pi_star = gop_fractions(&c_star, &p.b).map_err(|e| with_piece(e, piece))?;
    let g_star = match regime {
        GopRegime::Unconstrained => optimal_growth_rate(&theta, &p.lambda, p.r)?,
        GopRegime::Constrained => growth_rate(&c_star, &theta, &p.lambda, p.r)?.total,
    };
    Ok(PieceGop {
        piece,
        cash: 1.0 - pi_star.iter().sum::<f64>(),
        theta,
        c_star,
        pi_star,
        g_star,
        regime,
    })
}

/// GOP on every piece; fails with [`Error::NoGop`] on the first piece where
/// the unconstrained growth rate is unbounded.
pub fn solve_gop(spec: &MarketSpec) -> Result<GopSolution> {
    spec.check_structure()?;
    let pieces = (0..spec.pieces.len())
        .map(|i| solve_gop_piece(spec, i))
        .collect::<Result<_>>()?;
    Ok(GopSolution { pieces })
}

fn with_piece(err: Error, piece: usize) -> Error {
    match err {
        Error::NoGop {
            column,
            theta,
            sqrt_lambda,
            ..
        } => Error::NoGop {
            piece: Some(piece),
            column,
            theta,
            sqrt_lambda,
        },
        Error::IllConditioned { condition, .. } => Error::IllConditioned { piece, condition },
        other => other,
    }
}
