//! Exact values of assets, portfolios, the discounted GOP and its inverse
//! along a [`SimulatedPath`].
//!
//! With piecewise-constant coefficients every value process is a product of
//! an exponential in `(t, W)` and one factor per jump, so it is evaluated
//! exactly at every event. [`log_euler_simulate`] provides a first-order
//! scheme on the log-value SDE for comparison.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Bound, Error, Result};
use crate::gop::{growth_rate, solve_gop, GopSolution};
use crate::market::{validate_market, MarketSpec};
use crate::path::{EventKind, SimulatedPath};

/// Margin for the strict admissibility inequality `c > -sqrt(lambda)`.
pub const ADMISSIBILITY_MARGIN: f64 = 1e-12;

/// Rounding allowance when checking `c <= cap`.
pub const CAP_TOLERANCE: f64 = 1e-12;

/// Values of one process at every event of a path.
#[derive(Debug, Clone, PartialEq)]
pub struct ValuePath {
    pub times: Vec<f64>,
    /// Initial value.
    pub scale: f64,
    /// `log(value / scale)` after any jump at the event.
    pub log_unit: Vec<f64>,
    /// `log(value / scale)` just before the event.
    pub log_unit_left: Vec<f64>,
    pub values: Vec<f64>,
    pub left: Vec<f64>,
    pub discounted: bool,
    /// A jump factor of exactly zero was hit.
    pub absorbed: bool,
}

impl ValuePath {
    pub fn terminal(&self) -> f64 {
        *self.values.last().expect("value path is never empty")
    }

    pub fn terminal_log_unit(&self) -> f64 {
        *self.log_unit.last().expect("value path is never empty")
    }

    pub fn min_value(&self) -> f64 {
        self.values
            .iter()
            .chain(&self.left)
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// Pointwise reciprocal, e.g. the deflator from the discounted GOP.
    pub fn reciprocal(&self) -> ValuePath {
        ValuePath {
            times: self.times.clone(),
            scale: 1.0 / self.scale,
            log_unit: self.log_unit.iter().map(|x| -x).collect(),
            log_unit_left: self.log_unit_left.iter().map(|x| -x).collect(),
            values: self.values.iter().map(|v| 1.0 / v).collect(),
            left: self.left.iter().map(|v| 1.0 / v).collect(),
            discounted: self.discounted,
            absorbed: self.absorbed,
        }
    }
}

/// Fractions of wealth in the risky assets, one vector per piece (a single
/// vector applies to all pieces). The remainder `1 - sum(pi)` is cash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Strategy {
    #[serde(default = "unit_wealth")]
    pub initial_wealth: f64,
    pub fractions: Vec<Vec<f64>>,
}

fn unit_wealth() -> f64 {
    1.0
}

impl Strategy {
    pub fn constant(initial_wealth: f64, fractions: Vec<f64>) -> Self {
        Strategy {
            initial_wealth,
            fractions: vec![fractions],
        }
    }

    pub fn cash(d: usize) -> Self {
        Self::constant(1.0, vec![0.0; d])
    }

    /// The growth optimal strategy with unit initial wealth.
    pub fn from_gop(gop: &GopSolution) -> Self {
        Strategy {
            initial_wealth: 1.0,
            fractions: gop.pieces.iter().map(|p| p.pi_star.clone()).collect(),
        }
    }

    pub fn fractions_on(&self, piece: usize) -> &[f64] {
        if self.fractions.len() == 1 {
            &self.fractions[0]
        } else {
            &self.fractions[piece]
        }
    }

    /// Portfolio volatilities `c^k = sum_j pi^j b^{j,k}` on a piece.
    pub fn volatilities(&self, spec: &MarketSpec, piece: usize) -> Vec<f64> {
        let pi = self.fractions_on(piece);
        let b = &spec.pieces[piece].b;
        (0..spec.d)
            .map(|k| pi.iter().zip(b).map(|(p, row)| p * row[k]).sum())
            .collect()
    }

    fn check_shape(&self, spec: &MarketSpec) -> Result<()> {
        if !(self.initial_wealth > 0.0 && self.initial_wealth.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "initial wealth must be positive, got {}",
                self.initial_wealth
            )));
        }
        let rows = self.fractions.len();
        if rows != 1 && rows != spec.pieces.len() {
            return Err(Error::InvalidArgument(format!(
                "strategy has {rows} fraction vectors for {} pieces",
                spec.pieces.len()
            )));
        }
        if self.fractions.iter().any(|f| f.len() != spec.d) {
            return Err(Error::InvalidArgument(format!(
                "fraction vectors must have length d = {}",
                spec.d
            )));
        }
        if self.fractions.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("non-finite fraction".into()));
        }
        Ok(())
    }

    /// Jump volatilities above `-sqrt(lambda)` (with margin) and, when the
    /// market carries a cap, not above it.
    pub fn check_admissible(&self, spec: &MarketSpec) -> Result<()> {
        self.check_shape(spec)?;
        let cap = spec.checked_cap()?;
        for piece in 0..spec.pieces.len() {
            let c = self.volatilities(spec, piece);
            for (i, sqrt_lambda) in spec.sqrt_lambda(piece).into_iter().enumerate() {
                let column = spec.m + i;
                let floor = -sqrt_lambda + ADMISSIBILITY_MARGIN;
                if !(c[column] > floor) {
                    return Err(Error::InadmissibleStrategy {
                        piece,
                        column,
                        value: c[column],
                        limit: -sqrt_lambda,
                        bound: Bound::JumpFloor,
                    });
                }
                if let Some(cap) = cap {
                    if c[column] > cap + CAP_TOLERANCE {
                        return Err(Error::InadmissibleStrategy {
                            piece,
                            column,
                            value: c[column],
                            limit: cap,
                            bound: Bound::Cap,
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct LogCoefficients {
    drift: f64,
    diffusion: Vec<f64>,
    jump_log: Vec<f64>,
}

/// Per-piece coefficients of `log X` for an exponential-product process.
/// Build once, then evaluate on many paths.
#[derive(Debug, Clone)]
pub struct PathFormula {
    pieces: Vec<LogCoefficients>,
    scale: f64,
    discounted: bool,
}

impl PathFormula {
    /// Portfolio with fractions `strategy`.
    pub fn portfolio(spec: &MarketSpec, strategy: &Strategy, discounted: bool) -> Result<Self> {
        strategy.check_admissible(spec)?;
        Self::portfolio_unchecked(spec, strategy, discounted)
    }

    fn portfolio_unchecked(
        spec: &MarketSpec,
        strategy: &Strategy,
        discounted: bool,
    ) -> Result<Self> {
        let thetas = spec.thetas()?;
        let pieces = (0..spec.pieces.len())
            .map(|i| {
                let p = &spec.pieces[i];
                let c = strategy.volatilities(spec, i);
                let sqrt_lambda = spec.sqrt_lambda(i);
                let mut drift = if discounted { 0.0 } else { p.r };
                drift += c.iter().zip(&thetas[i]).map(|(c, t)| c * t).sum::<f64>();
                drift -= 0.5 * c[..spec.m].iter().map(|c| c * c).sum::<f64>();
                drift -= c[spec.m..]
                    .iter()
                    .zip(&sqrt_lambda)
                    .map(|(c, s)| c * s)
                    .sum::<f64>();
                let jump_log = c[spec.m..]
                    .iter()
                    .zip(&sqrt_lambda)
                    .map(|(c, s)| (c / s).ln_1p())
                    .collect();
                LogCoefficients {
                    drift,
                    diffusion: c[..spec.m].to_vec(),
                    jump_log,
                }
            })
            .collect();
        Ok(PathFormula {
            pieces,
            scale: strategy.initial_wealth,
            discounted,
        })
    }

    /// Asset `j` with unit initial price, from its appreciation rate.
    pub fn asset(spec: &MarketSpec, j: usize, discounted: bool) -> Result<Self> {
        if j >= spec.d {
            return Err(Error::InvalidArgument(format!("asset {j} out of range")));
        }
        let pieces = (0..spec.pieces.len())
            .map(|i| {
                let p = &spec.pieces[i];
                let row = &p.b[j];
                let sqrt_lambda = spec.sqrt_lambda(i);
                let mut drift = p.a[j] - if discounted { p.r } else { 0.0 };
                drift -= 0.5 * row[..spec.m].iter().map(|b| b * b).sum::<f64>();
                drift -= row[spec.m..]
                    .iter()
                    .zip(&sqrt_lambda)
                    .map(|(b, s)| b * s)
                    .sum::<f64>();
                let jump_log = row[spec.m..]
                    .iter()
                    .zip(&sqrt_lambda)
                    .map(|(b, s)| (b / s + 1.0).ln())
                    .collect();
                LogCoefficients {
                    drift,
                    diffusion: row[..spec.m].to_vec(),
                    jump_log,
                }
            })
            .collect();
        Ok(PathFormula {
            pieces,
            scale: 1.0,
            discounted,
        })
    }

    /// Discounted GOP with unit initial value.
    pub fn gop(spec: &MarketSpec, gop: &GopSolution) -> Result<Self> {
        Self::portfolio(spec, &Strategy::from_gop(gop), true)
    }

    pub fn evaluate(&self, path: &SimulatedPath) -> ValuePath {
        let n = path.events.len();
        let mut log_unit = Vec::with_capacity(n);
        let mut log_left = Vec::with_capacity(n);
        let mut x = 0.0;
        log_unit.push(0.0);
        log_left.push(0.0);
        for e in 1..n {
            let coeff = &self.pieces[path.interval_piece[e]];
            let dt = path.events[e].t - path.events[e - 1].t;
            let (w0, w1) = (path.w_at(e - 1), path.w_at(e));
            x += coeff.drift * dt;
            for (k, sigma) in coeff.diffusion.iter().enumerate() {
                x += sigma * (w1[k] - w0[k]);
            }
            log_left.push(x);
            if let EventKind::Jump(k) = path.events[e].kind {
                x += coeff.jump_log[k];
            }
            log_unit.push(x);
        }
        let values: Vec<f64> = log_unit.iter().map(|x| self.scale * x.exp()).collect();
        let left: Vec<f64> = log_left.iter().map(|x| self.scale * x.exp()).collect();
        ValuePath {
            times: path.events.iter().map(|e| e.t).collect(),
            scale: self.scale,
            absorbed: log_unit.contains(&f64::NEG_INFINITY),
            log_unit,
            log_unit_left: log_left,
            values,
            left,
            discounted: self.discounted,
        }
    }
}

fn require_valid(spec: &MarketSpec) -> Result<()> {
    let report = validate_market(spec)?;
    if report.valid {
        Ok(())
    } else {
        Err(Error::InvalidMarket(format!("{:?}", report.violations)))
    }
}

/// Undiscounted asset prices, unit initial values. A jump coefficient equal
/// to `-sqrt(lambda)` sends the asset to zero; the path is still returned
/// with `absorbed` set.
pub fn simulate_assets(spec: &MarketSpec, path: &SimulatedPath) -> Result<Vec<ValuePath>> {
    require_valid(spec)?;
    (0..spec.d)
        .map(|j| Ok(PathFormula::asset(spec, j, false)?.evaluate(path)))
        .collect()
}

/// Undiscounted portfolio value.
pub fn simulate_portfolio(
    spec: &MarketSpec,
    strategy: &Strategy,
    path: &SimulatedPath,
) -> Result<ValuePath> {
    Ok(PathFormula::portfolio(spec, strategy, false)?.evaluate(path))
}

/// Portfolio value in units of the bank account.
pub fn simulate_portfolio_discounted(
    spec: &MarketSpec,
    strategy: &Strategy,
    path: &SimulatedPath,
) -> Result<ValuePath> {
    Ok(PathFormula::portfolio(spec, strategy, true)?.evaluate(path))
}

/// Discounted GOP (constrained optimum when the market carries a cap).
pub fn simulate_gop(spec: &MarketSpec, path: &SimulatedPath) -> Result<ValuePath> {
    let gop = solve_gop(spec)?;
    Ok(PathFormula::gop(spec, &gop)?.evaluate(path))
}

/// Inverse of the discounted GOP.
pub fn simulate_deflator(spec: &MarketSpec, path: &SimulatedPath) -> Result<ValuePath> {
    Ok(simulate_gop(spec, path)?.reciprocal())
}

/// First-order scheme for `d log S = g dt + c dW + log(1 + c/sqrt(lambda)) sqrt(lambda) dM`
/// on the grid with step `stride * path.dt`, coefficients frozen at the left
/// grid point and jumps taken at their sampled times. Returns undiscounted
/// values at the coarse grid points.
pub fn log_euler_simulate(
    spec: &MarketSpec,
    strategy: &Strategy,
    path: &SimulatedPath,
    stride: usize,
) -> Result<ValuePath> {
    strategy.check_admissible(spec)?;
    if stride == 0 || path.steps % stride != 0 {
        return Err(Error::InvalidArgument(format!(
            "stride {stride} does not divide the {} grid steps",
            path.steps
        )));
    }
    let thetas = spec.thetas()?;
    let coarse: Vec<usize> = path.grid_events.iter().step_by(stride).copied().collect();
    let mut log_unit = vec![0.0; coarse.len()];
    let mut x = 0.0;
    for n in 0..coarse.len() - 1 {
        let (e0, e1) = (coarse[n], coarse[n + 1]);
        let t0 = path.events[e0].t;
        let h = path.events[e1].t - t0;
        let piece = spec.piece_index_at(t0);
        let p = &spec.pieces[piece];
        let c = strategy.volatilities(spec, piece);
        let g = growth_rate(&c, &thetas[piece], &p.lambda, p.r)?.total;
        x += g * h;
        let (w0, w1) = (path.w_at(e0), path.w_at(e1));
        for k in 0..spec.m {
            x += c[k] * (w1[k] - w0[k]);
        }
        for (i, &lambda) in p.lambda.iter().enumerate() {
            let jumps = path.events[e0 + 1..=e1]
                .iter()
                .filter(|e| e.kind == EventKind::Jump(i))
                .count();
            let sqrt_lambda = lambda.sqrt();
            let d_m = (jumps as f64 - lambda * h) / sqrt_lambda;
            x += (c[spec.m + i] / sqrt_lambda).ln_1p() * sqrt_lambda * d_m;
        }
        log_unit[n + 1] = x;
    }
    let s = strategy.initial_wealth;
    let values: Vec<f64> = log_unit.iter().map(|x| s * x.exp()).collect();
    Ok(ValuePath {
        times: coarse.iter().map(|&e| path.events[e].t).collect(),
        scale: s,
        log_unit_left: log_unit.clone(),
        left: values.clone(),
        log_unit,
        values,
        discounted: false,
        absorbed: false,
    })
}

/// Largest `|log euler - log exact|` over the coarse grid points.
pub fn max_log_error(
    euler: &ValuePath,
    exact: &ValuePath,
    path: &SimulatedPath,
    stride: usize,
) -> f64 {
    path.grid_events
        .iter()
        .step_by(stride)
        .zip(&euler.log_unit)
        .map(|(&e, x)| (x - exact.log_unit[e]).abs())
        .fold(0.0, f64::max)
}

/// One path's worth of CSV rows.
pub struct PathDump<'a> {
    pub path_id: u64,
    pub path: &'a SimulatedPath,
    pub assets: &'a [ValuePath],
    pub gop: &'a ValuePath,
    pub deflator: &'a ValuePath,
}

pub fn write_csv_header<W: Write>(out: &mut W, d: usize) -> io::Result<()> {
    write!(out, "path_id,t,event_type")?;
    for j in 1..=d {
        write!(out, ",S{j}")?;
    }
    writeln!(out, ",Sbar_gop,Zhat")
}

/// Grid and jump events; breakpoints are internal and not written.
pub fn write_csv_rows<W: Write>(out: &mut W, dump: &PathDump<'_>) -> io::Result<()> {
    for (e, event) in dump.path.events.iter().enumerate() {
        let label = match event.kind {
            EventKind::Grid => "grid".to_string(),
            EventKind::Jump(k) => format!("jump:{}", k + 1),
            EventKind::Breakpoint => continue,
        };
        write!(out, "{},{},{}", dump.path_id, event.t, label)?;
        for asset in dump.assets {
            write!(out, ",{}", asset.values[e])?;
        }
        writeln!(out, ",{},{}", dump.gop.values[e], dump.deflator.values[e])?;
    }
    Ok(())
}
