//! The Girsanov pair of the candidate measure change, its density along a
//! path, and closed-form expectations of the deflator and of benchmarked
//! portfolios.
//!
//! The candidate density is
//!
//! ```text
//! L_t = exp(-1/2 ∫|phi|^2 + ∫phi dW + sum_k ∫(1 - psi_k) lambda_k) * prod_{jumps} psi_k
//! ```
//!
//! Requiring every discounted asset to be a local martingale under `L` gives
//! a `d x d` linear system whose unique solution is `phi = -theta`,
//! `psi = 1 - theta / sqrt(lambda)`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gop::{solve_gop, GopRegime, GopSolution};
use crate::market::{solve_checked, MarketRegime, MarketSpec};
use crate::path::{EventKind, SimulatedPath};
use crate::simulate::{Strategy, ValuePath};

/// `|psi| <= PSI_ZERO_TOLERANCE` is treated as zero.
pub const PSI_ZERO_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Equivalence {
    /// Every `psi > 0`.
    Equivalent,
    /// Some `psi = 0`, none negative: the density can hit zero.
    AbsolutelyContinuousOnly,
    /// Some `psi < 0`: no equivalent local martingale measure.
    NotEquivalent,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PieceDeflator {
    pub piece: usize,
    /// Diffusive multipliers, length `m`.
    pub phi: Vec<f64>,
    /// Jump multipliers, length `d - m`.
    pub psi_rn: Vec<f64>,
    /// Per jump component, `psi_rn > 0`.
    pub positive: Vec<bool>,
    /// Max-abs residual of the linear system.
    pub residual: f64,
    pub equivalence: Equivalence,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeflatorSolution {
    pub pieces: Vec<PieceDeflator>,
}

impl DeflatorSolution {
    pub fn equivalence(&self) -> Equivalence {
        self.pieces
            .iter()
            .map(|p| p.equivalence)
            .max_by_key(|e| match e {
                Equivalence::Equivalent => 0,
                Equivalence::AbsolutelyContinuousOnly => 1,
                Equivalence::NotEquivalent => 2,
            })
            .unwrap_or(Equivalence::Equivalent)
    }
}

fn classify(psi: &[f64]) -> Equivalence {
    if psi.iter().any(|&p| p < -PSI_ZERO_TOLERANCE) {
        Equivalence::NotEquivalent
    } else if psi.iter().any(|&p| p.abs() <= PSI_ZERO_TOLERANCE) {
        Equivalence::AbsolutelyContinuousOnly
    } else {
        Equivalence::Equivalent
    }
}

fn require_positive_intensity(spec: &MarketSpec, piece: usize) -> Result<()> {
    match spec.pieces[piece].lambda.iter().find(|l| !(**l > 0.0)) {
        Some(l) => Err(Error::InvalidArgument(format!(
            "intensity on piece {piece} must be positive, got {l}"
        ))),
        None => Ok(()),
    }
}

/// Solves the drift-cancellation system on one piece by LU factorization.
pub fn solve_unique_deflator(spec: &MarketSpec, piece: usize) -> Result<PieceDeflator> {
    spec.check_structure()?;
    if piece >= spec.pieces.len() {
        return Err(Error::InvalidArgument(format!(
            "piece {piece} out of range"
        )));
    }
    require_positive_intensity(spec, piece)?;
    let (d, m) = (spec.d, spec.m);
    let sqrt_lambda = spec.sqrt_lambda(piece);
    let (b, rhs) = deflator_system(spec, piece)?;
    let x = solve_checked(b.clone(), rhs.clone(), piece)?;
    let residual = (&b * &x - &rhs).amax();

    let phi = x.rows(0, m).iter().copied().collect();
    let psi_rn: Vec<f64> = (0..d - m).map(|i| x[m + i] / sqrt_lambda[i]).collect();
    Ok(PieceDeflator {
        piece,
        positive: psi_rn.iter().map(|&v| v > PSI_ZERO_TOLERANCE).collect(),
        equivalence: classify(&psi_rn),
        phi,
        psi_rn,
        residual,
    })
}

pub fn solve_deflator(spec: &MarketSpec) -> Result<DeflatorSolution> {
    spec.check_structure()?;
    let pieces = (0..spec.pieces.len())
        .map(|i| solve_unique_deflator(spec, i))
        .collect::<Result<_>>()?;
    Ok(DeflatorSolution { pieces })
}

/// `phi = -theta`, `psi = 1 - theta / sqrt(lambda)` on every piece.
pub fn closed_form_deflator(spec: &MarketSpec) -> Result<DeflatorSolution> {
    spec.check_structure()?;
    let m = spec.m;
    let pieces = (0..spec.pieces.len())
        .map(|i| {
            require_positive_intensity(spec, i)?;
            let theta = spec.market_price_of_risk(i)?;
            let psi_rn: Vec<f64> = spec
                .sqrt_lambda(i)
                .iter()
                .enumerate()
                .map(|(k, s)| 1.0 - theta[m + k] / s)
                .collect();
            Ok(PieceDeflator {
                piece: i,
                phi: theta[..m].iter().map(|t| -t).collect(),
                positive: psi_rn.iter().map(|&v| v > PSI_ZERO_TOLERANCE).collect(),
                equivalence: classify(&psi_rn),
                psi_rn,
                residual: 0.0,
            })
        })
        .collect::<Result<_>>()?;
    Ok(DeflatorSolution { pieces })
}

/// Density `L_t` at every event of `path`. Fails if some `psi_rn < 0`, where
/// the formula is not a density.
pub fn radon_nikodym_path(
    solution: &DeflatorSolution,
    path: &SimulatedPath,
    spec: &MarketSpec,
) -> Result<ValuePath> {
    if solution.pieces.len() != spec.pieces.len() {
        return Err(Error::InvalidArgument(format!(
            "solution has {} pieces, market has {}",
            solution.pieces.len(),
            spec.pieces.len()
        )));
    }
    if let Some(p) = solution
        .pieces
        .iter()
        .find(|p| p.psi_rn.iter().any(|&v| v < 0.0))
    {
        return Err(Error::InvalidArgument(format!(
            "negative jump multiplier on piece {}: {:?}",
            p.piece, p.psi_rn
        )));
    }
    let n = path.events.len();
    let mut log_l = Vec::with_capacity(n);
    let mut log_left = Vec::with_capacity(n);
    let mut acc = 0.0;
    log_l.push(0.0);
    log_left.push(0.0);
    for e in 1..n {
        let piece = path.interval_piece[e];
        let sol = &solution.pieces[piece];
        let lambda = &spec.pieces[piece].lambda;
        let dt = path.events[e].t - path.events[e - 1].t;
        let w0 = path.w_at(e - 1);
        let w1 = path.w_at(e);
        let mut rate = 0.0;
        for (k, phi) in sol.phi.iter().enumerate() {
            rate -= 0.5 * phi * phi;
            acc += phi * (w1[k] - w0[k]);
        }
        for (psi, l) in sol.psi_rn.iter().zip(lambda) {
            rate += (1.0 - psi) * l;
        }
        acc += rate * dt;
        log_left.push(acc);
        if let EventKind::Jump(k) = path.events[e].kind {
            acc += sol.psi_rn[k].ln();
        }
        log_l.push(acc);
    }
    Ok(ValuePath {
        times: path.events.iter().map(|e| e.t).collect(),
        scale: 1.0,
        values: log_l.iter().map(|x| x.exp()).collect(),
        left: log_left.iter().map(|x| x.exp()).collect(),
        absorbed: log_l.contains(&f64::NEG_INFINITY),
        log_unit: log_l,
        log_unit_left: log_left,
        discounted: true,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnalyticExpectation {
    pub value: f64,
    pub regime: MarketRegime,
    /// `∫_0^T D(t) dt`.
    pub integrated_drift: f64,
}

/// Rate `D` at which `log E[Z_t]` decreases on a piece: zero where the
/// optimum is unconstrained, and otherwise
/// `sum_k c_k (theta_k - sqrt(lambda_k)) + lambda_k c_k / (sqrt(lambda_k) + c_k)`
/// over the jump columns at the constrained optimum `c`.
pub fn supermartingale_drift(spec: &MarketSpec, gop: &GopSolution, piece: usize) -> f64 {
    let pg = &gop.pieces[piece];
    if pg.regime == GopRegime::Unconstrained {
        return 0.0;
    }
    let m = spec.m;
    spec.pieces[piece]
        .lambda
        .iter()
        .enumerate()
        .map(|(i, &lambda)| {
            let c = pg.c_star[m + i];
            let theta = pg.theta[m + i];
            let s = lambda.sqrt();
            c * (theta - s) + lambda * c / (s + c)
        })
        .sum()
}

/// `E[Z_t]` for the inverse discounted GOP: `exp(-∫_0^t D)`.
pub fn analytic_deflator_expectation(spec: &MarketSpec, t: f64) -> Result<AnalyticExpectation> {
    check_time(spec, t)?;
    let gop = solve_gop(spec)?;
    let integrated_drift: f64 = (0..spec.pieces.len())
        .map(|i| supermartingale_drift(spec, &gop, i) * spec.piece_overlap(i, t))
        .sum();
    let constrained = gop
        .pieces
        .iter()
        .any(|p| p.regime == GopRegime::Constrained && spec.piece_overlap(p.piece, t) > 0.0);
    Ok(AnalyticExpectation {
        value: (-integrated_drift).exp(),
        regime: if constrained {
            MarketRegime::StrictSupermartingale
        } else {
            MarketRegime::Martingale
        },
        integrated_drift,
    })
}

/// `E[S^delta_t / S^gop_t]` for a constant-fraction strategy with initial
/// wealth `s`:
/// `s exp(∫ sum_diff (c - g)(theta - g) + sum_jump (c - g)(theta - sqrt(lambda) + lambda / (sqrt(lambda) + g)))`,
/// `g` the optimal volatilities.
pub fn analytic_benchmarked_expectation(
    spec: &MarketSpec,
    strategy: &Strategy,
    t: f64,
) -> Result<f64> {
    check_time(spec, t)?;
    strategy.check_admissible(spec)?;
    let gop = solve_gop(spec)?;
    let m = spec.m;
    let mut exponent = 0.0;
    for (i, pg) in gop.pieces.iter().enumerate() {
        let overlap = spec.piece_overlap(i, t);
        if overlap == 0.0 {
            continue;
        }
        let c = strategy.volatilities(spec, i);
        let mut rate = 0.0;
        for k in 0..m {
            rate += (c[k] - pg.c_star[k]) * (pg.theta[k] - pg.c_star[k]);
        }
        for (j, &lambda) in spec.pieces[i].lambda.iter().enumerate() {
            let k = m + j;
            let s = lambda.sqrt();
            rate += (c[k] - pg.c_star[k]) * (pg.theta[k] - s + lambda / (s + pg.c_star[k]));
        }
        exponent += rate * overlap;
    }
    Ok(strategy.initial_wealth * exponent.exp())
}

fn check_time(spec: &MarketSpec, t: f64) -> Result<()> {
    if !(0.0..=spec.horizon).contains(&t) {
        return Err(Error::InvalidArgument(format!(
            "time {t} outside [0, {}]",
            spec.horizon
        )));
    }
    Ok(())
}

/// Matrix form of the system, for callers that want to inspect it.
pub fn deflator_system(spec: &MarketSpec, piece: usize) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let theta = spec.market_price_of_risk(piece)?;
    let b = spec.volatility_matrix(piece);
    let mut shift = DVector::zeros(spec.d);
    for (i, s) in spec.sqrt_lambda(piece).iter().enumerate() {
        shift[spec.m + i] = *s;
    }
    let rhs = -(&b * DVector::from_column_slice(&theta)) + &b * &shift;
    Ok((b, rhs))
}
