//! Market description: piecewise-constant short rate, appreciation rates,
//! generalized volatility matrix and jump intensities.
//!
//! The risky assets follow
//!
//! ```text
//! dS^j = S^j_- ( a^j dt + sum_{k<m} b^{j,k} dW^k + sum_{k>=m} b^{j,k} dM^{k-m} )
//! dM^i = (dN^i - lambda^i dt) / sqrt(lambda^i)
//! ```
//!
//! so both diffusive and jump columns of `b` carry units of 1/sqrt(year).
//! Indices are zero-based throughout: columns `0..m` are diffusive, columns
//! `m..d` are jump columns and jump column `k` is driven by counting process
//! `k - m`.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Volatility matrices with a larger 2-norm condition number are treated as
/// singular.
pub const MAX_CONDITION_NUMBER: f64 = 1e12;

/// Coefficients that hold on `[t_start, next t_start)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Piece {
    pub t_start: f64,
    pub r: f64,
    pub a: Vec<f64>,
    /// Row `j` is asset `j`, column `k` is risk source `k`.
    pub b: Vec<Vec<f64>>,
    pub lambda: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSpec {
    pub d: usize,
    pub m: usize,
    pub horizon: f64,
    pub pieces: Vec<Piece>,
    /// Upper bound on the portfolio volatility of the single jump column
    /// (only meaningful for `d = 2, m = 1`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraint_cap: Option<f64>,
}

impl MarketSpec {
    /// Single-piece market on `[0, horizon]`.
    pub fn constant(
        m: usize,
        horizon: f64,
        r: f64,
        a: Vec<f64>,
        b: Vec<Vec<f64>>,
        lambda: Vec<f64>,
    ) -> Self {
        MarketSpec {
            d: a.len(),
            m,
            horizon,
            pieces: vec![Piece {
                t_start: 0.0,
                r,
                a,
                b,
                lambda,
            }],
            constraint_cap: None,
        }
    }

    /// Builds a constant-coefficient market with a prescribed market price of
    /// risk: `a = r 1 + b theta`.
    pub fn from_theta(
        m: usize,
        horizon: f64,
        r: f64,
        b: Vec<Vec<f64>>,
        theta: &[f64],
        lambda: Vec<f64>,
    ) -> Self {
        let a = appreciation_for_theta(r, &b, theta);
        Self::constant(m, horizon, r, a, b, lambda)
    }

    pub fn with_cap(mut self, cap: f64) -> Self {
        self.constraint_cap = Some(cap);
        self
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let spec: MarketSpec = serde_json::from_str(text)?;
        spec.check_structure()?;
        Ok(spec)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_owned(),
            source,
        })?;
        let spec: MarketSpec = serde_json::from_str(&text).map_err(|source| Error::Parse {
            path: path.to_owned(),
            source,
        })?;
        spec.check_structure()?;
        Ok(spec)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("market spec serializes")
    }

    /// Number of jump components, `d - m`.
    pub fn n_jumps(&self) -> usize {
        self.d - self.m
    }

    /// Dimension and ordering checks. Violations of the modelling
    /// assumptions are not structural; see [`validate_market`].
    pub fn check_structure(&self) -> Result<()> {
        let d = self.d;
        if d == 0 {
            return Err(Error::structure("d must be at least 1"));
        }
        if self.m > d {
            return Err(Error::structure(format!("m = {} exceeds d = {d}", self.m)));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::structure(format!(
                "horizon must be positive and finite, got {}",
                self.horizon
            )));
        }
        if self.pieces.is_empty() {
            return Err(Error::structure("at least one piece is required"));
        }
        if self.pieces[0].t_start != 0.0 {
            return Err(Error::structure(format!(
                "first piece must start at 0, got {}",
                self.pieces[0].t_start
            )));
        }
        for (i, piece) in self.pieces.iter().enumerate() {
            if i > 0 && !(piece.t_start > self.pieces[i - 1].t_start) {
                return Err(Error::structure(format!(
                    "piece {i}: t_start {} is not after the previous breakpoint {}",
                    piece.t_start,
                    self.pieces[i - 1].t_start
                )));
            }
            if !(piece.t_start < self.horizon) {
                return Err(Error::structure(format!(
                    "piece {i}: t_start {} is not before the horizon {}",
                    piece.t_start, self.horizon
                )));
            }
            if piece.a.len() != d {
                return Err(Error::structure(format!(
                    "piece {i}: a has length {}, expected {d}",
                    piece.a.len()
                )));
            }
            if piece.b.len() != d || piece.b.iter().any(|row| row.len() != d) {
                return Err(Error::structure(format!("piece {i}: b must be {d}x{d}")));
            }
            if piece.lambda.len() != self.n_jumps() {
                return Err(Error::structure(format!(
                    "piece {i}: lambda has length {}, expected d - m = {}",
                    piece.lambda.len(),
                    self.n_jumps()
                )));
            }
            let finite = piece.r.is_finite()
                && piece.a.iter().all(|x| x.is_finite())
                && piece.b.iter().flatten().all(|x| x.is_finite())
                && piece.lambda.iter().all(|x| x.is_finite());
            if !finite {
                return Err(Error::structure(format!(
                    "piece {i}: non-finite coefficient"
                )));
            }
        }
        if let Some(cap) = self.constraint_cap {
            if !cap.is_finite() {
                return Err(Error::structure(format!(
                    "constraint_cap must be finite, got {cap}"
                )));
            }
        }
        Ok(())
    }

    /// Breakpoints `0 = t_0 < ... < t_K = T`.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.pieces.iter().map(|p| p.t_start).collect();
        out.push(self.horizon);
        out
    }

    pub fn piece_end(&self, piece: usize) -> f64 {
        self.pieces
            .get(piece + 1)
            .map_or(self.horizon, |p| p.t_start)
    }

    /// Index of the piece whose interval `[t_start, t_end)` contains `t`;
    /// times at or beyond the horizon map to the last piece.
    pub fn piece_index_at(&self, t: f64) -> usize {
        self.pieces
            .partition_point(|p| p.t_start <= t)
            .saturating_sub(1)
    }

    /// Length of `[t_start, t_end) ∩ [0, until]` for a piece.
    pub fn piece_overlap(&self, piece: usize, until: f64) -> f64 {
        let start = self.pieces[piece].t_start;
        let end = self.piece_end(piece).min(until);
        (end - start).max(0.0)
    }

    pub fn sqrt_lambda(&self, piece: usize) -> Vec<f64> {
        self.pieces[piece].lambda.iter().map(|l| l.sqrt()).collect()
    }

    pub fn volatility_matrix(&self, piece: usize) -> DMatrix<f64> {
        let b = &self.pieces[piece].b;
        DMatrix::from_fn(self.d, self.d, |j, k| b[j][k])
    }

    /// 2-norm condition number of `b` on a piece (`inf` when singular).
    pub fn condition_number(&self, piece: usize) -> f64 {
        condition_number(&self.volatility_matrix(piece))
    }

    /// `theta = b^{-1} (a - r 1)` on a piece.
    pub fn market_price_of_risk(&self, piece: usize) -> Result<Vec<f64>> {
        let b = self.volatility_matrix(piece);
        let p = &self.pieces[piece];
        let excess = DVector::from_iterator(self.d, p.a.iter().map(|a| a - p.r));
        let theta = solve_checked(b, excess, piece)?;
        Ok(theta.iter().copied().collect())
    }

    /// Market price of risk for every piece.
    pub fn thetas(&self) -> Result<Vec<Vec<f64>>> {
        (0..self.pieces.len())
            .map(|i| self.market_price_of_risk(i))
            .collect()
    }

    /// The cap, checked against the shape it is defined for.
    pub fn checked_cap(&self) -> Result<Option<f64>> {
        match self.constraint_cap {
            None => Ok(None),
            Some(_) if (self.d, self.m) != (2, 1) => Err(Error::UnsupportedConstraint {
                d: self.d,
                m: self.m,
            }),
            Some(cap) if !(cap > 0.0 && cap.is_finite()) => Err(Error::InvalidCap(cap)),
            Some(cap) => Ok(Some(cap)),
        }
    }
}

/// `a = r 1 + b theta`.
pub fn appreciation_for_theta(r: f64, b: &[Vec<f64>], theta: &[f64]) -> Vec<f64> {
    b.iter()
        .map(|row| r + row.iter().zip(theta).map(|(b, t)| b * t).sum::<f64>())
        .collect()
}

pub(crate) fn condition_number(b: &DMatrix<f64>) -> f64 {
    let sv = b.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 || !max.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Solves `b x = rhs`, rejecting matrices above [`MAX_CONDITION_NUMBER`].
pub(crate) fn solve_checked(
    b: DMatrix<f64>,
    rhs: DVector<f64>,
    piece: usize,
) -> Result<DVector<f64>> {
    let condition = condition_number(&b);
    if !(condition <= MAX_CONDITION_NUMBER) {
        return Err(Error::IllConditioned { piece, condition });
    }
    b.lu()
        .solve(&rhs)
        .ok_or(Error::IllConditioned { piece, condition })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    /// Intensity not strictly positive.
    NonPositiveIntensity {
        piece: usize,
        component: usize,
        lambda: f64,
    },
    /// Jump coefficient below `-sqrt(lambda)`: the asset could jump below
    /// zero.
    JumpBelowFloor {
        piece: usize,
        asset: usize,
        column: usize,
        value: f64,
        floor: f64,
    },
    /// Volatility matrix not (numerically) invertible.
    Singular { piece: usize, condition: f64 },
    /// Cap supplied for a market shape it is not defined for.
    UnsupportedConstraint { d: usize, m: usize },
    /// Cap that is zero, negative or non-finite.
    InvalidCap { cap: f64 },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub valid: bool,
    pub violations: Vec<Violation>,
}

/// Checks positivity of intensities, the jump floor `b >= -sqrt(lambda)` and
/// invertibility of `b` on every piece.
pub fn validate_market(spec: &MarketSpec) -> Result<ValidationReport> {
    spec.check_structure()?;
    let mut violations = Vec::new();
    for (i, piece) in spec.pieces.iter().enumerate() {
        for (k, &lambda) in piece.lambda.iter().enumerate() {
            if !(lambda > 0.0) {
                violations.push(Violation::NonPositiveIntensity {
                    piece: i,
                    component: k,
                    lambda,
                });
            }
        }
        for (j, row) in piece.b.iter().enumerate() {
            for (col, &value) in row.iter().enumerate().skip(spec.m) {
                let lambda = piece.lambda[col - spec.m];
                if lambda <= 0.0 {
                    continue;
                }
                let floor = -lambda.sqrt();
                if value < floor {
                    violations.push(Violation::JumpBelowFloor {
                        piece: i,
                        asset: j,
                        column: col,
                        value,
                        floor,
                    });
                }
            }
        }
        let condition = spec.condition_number(i);
        if !(condition <= MAX_CONDITION_NUMBER) {
            violations.push(Violation::Singular {
                piece: i,
                condition,
            });
        }
    }
    if let Some(cap) = spec.constraint_cap {
        if (spec.d, spec.m) != (2, 1) {
            violations.push(Violation::UnsupportedConstraint {
                d: spec.d,
                m: spec.m,
            });
        }
        if !(cap > 0.0) {
            violations.push(Violation::InvalidCap { cap });
        }
    }
    Ok(ValidationReport {
        valid: violations.is_empty(),
        violations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RegimeTag {
    /// `theta < sqrt(lambda)` and no binding cap: the inverse discounted GOP
    /// is the density candidate of an equivalent local martingale measure.
    ElmmCandidate,
    /// `theta >= sqrt(lambda)` without a cap: growth rate is unbounded.
    GopNonexistent,
    /// Cap present and binding: the deflator loses mass.
    ConstrainedStrictSupermartingale,
}

/// Aggregate over all pieces and jump components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MarketRegime {
    Martingale,
    StrictSupermartingale,
    GopNonexistent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CapStatus {
    pub cap: f64,
    /// Unconstrained optimum `theta / (1 - theta / sqrt(lambda))`; absent when
    /// it does not exist.
    pub threshold: Option<f64>,
    pub binding: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegimeEntry {
    pub piece: usize,
    /// Column of `b`, in `m..d`.
    pub column: usize,
    pub theta: f64,
    pub sqrt_lambda: f64,
    pub tag: RegimeTag,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cap: Option<CapStatus>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegimeReport {
    pub overall: MarketRegime,
    pub entries: Vec<RegimeEntry>,
}

impl RegimeReport {
    pub fn entry(&self, piece: usize, column: usize) -> Option<&RegimeEntry> {
        self.entries
            .iter()
            .find(|e| e.piece == piece && e.column == column)
    }
}

/// Whether a cap on the jump volatility restricts the log-optimal investor.
///
/// Binds iff `theta >= sqrt(lambda)`, or `cap < theta / (1 - theta/sqrt(lambda))`.
pub fn cap_binds(theta: f64, sqrt_lambda: f64, cap: f64) -> bool {
    if theta >= sqrt_lambda {
        true
    } else {
        cap < theta / (1.0 - theta / sqrt_lambda)
    }
}

pub fn classify_regime(spec: &MarketSpec) -> Result<RegimeReport> {
    spec.check_structure()?;
    let cap = spec.checked_cap()?;
    let mut entries = Vec::new();
    for i in 0..spec.pieces.len() {
        let theta = spec.market_price_of_risk(i)?;
        for (jump, sqrt_lambda) in spec.sqrt_lambda(i).into_iter().enumerate() {
            let column = spec.m + jump;
            let th = theta[column];
            let (tag, cap_status) = match cap {
                None if th < sqrt_lambda => (RegimeTag::ElmmCandidate, None),
                None => (RegimeTag::GopNonexistent, None),
                Some(cap) => {
                    let binding = cap_binds(th, sqrt_lambda, cap);
                    let threshold = (th < sqrt_lambda).then(|| th / (1.0 - th / sqrt_lambda));
                    let tag = if binding {
                        RegimeTag::ConstrainedStrictSupermartingale
                    } else {
                        RegimeTag::ElmmCandidate
                    };
                    (
                        tag,
                        Some(CapStatus {
                            cap,
                            threshold,
                            binding,
                        }),
                    )
                }
            };
            entries.push(RegimeEntry {
                piece: i,
                column,
                theta: th,
                sqrt_lambda,
                tag,
                cap: cap_status,
            });
        }
    }
    let overall = if entries.iter().any(|e| e.tag == RegimeTag::GopNonexistent) {
        MarketRegime::GopNonexistent
    } else if entries
        .iter()
        .any(|e| e.tag == RegimeTag::ConstrainedStrictSupermartingale)
    {
        MarketRegime::StrictSupermartingale
    } else {
        MarketRegime::Martingale
    };
    Ok(RegimeReport { overall, entries })
}
