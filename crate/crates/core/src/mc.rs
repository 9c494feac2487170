//! Monte Carlo estimators for deflator and benchmarked-portfolio
//! expectations, with deterministic parallel accumulation.
//!
//! Samples are produced per path index in parallel, collected in index order
//! and reduced by pairwise summation, so a report depends only on its inputs
//! and never on the number of worker threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::deflator::{analytic_benchmarked_expectation, analytic_deflator_expectation};
use crate::error::{Error, Result};
use crate::gop::{growth_rate, solve_gop, GopRegime, GopSolution};
use crate::market::MarketSpec;
use crate::path::{grid_index, grid_steps_for, SimulatedPath};
use crate::simulate::{PathFormula, Strategy, ADMISSIBILITY_MARGIN, CAP_TOLERANCE};

/// Two-sided 99% normal quantile.
pub const Z99: f64 = 2.576;

/// Width of the one-sided test, in standard errors.
pub const TEST_SIGMAS: f64 = 3.0;

/// `sqrt(lambda) - theta` below this fraction of `sqrt(lambda)` is flagged.
pub const HIGH_VARIANCE_FRACTION: f64 = 0.05;

pub const HIGH_VARIANCE_MIN_PATHS: usize = 1_000_000;

/// Largest growth-rate excess over the optimum tolerated as rounding.
pub const DOMINANCE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct McConfig {
    pub n_paths: usize,
    pub seed: u64,
    /// Pair each path with its Gaussian reflection; `n_paths` must be even.
    #[serde(default)]
    pub antithetic: bool,
}

impl McConfig {
    pub fn new(n_paths: usize, seed: u64) -> Self {
        McConfig {
            n_paths,
            seed,
            antithetic: false,
        }
    }

    fn check(&self) -> Result<()> {
        if self.n_paths < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 paths, got {}",
                self.n_paths
            )));
        }
        if self.antithetic && self.n_paths % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "antithetic sampling needs an even number of paths, got {}",
                self.n_paths
            )));
        }
        Ok(())
    }

    fn n_samples(&self) -> usize {
        if self.antithetic {
            self.n_paths / 2
        } else {
            self.n_paths
        }
    }
}

/// Quantity whose expectation is estimated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Functional {
    /// Inverse discounted GOP.
    Deflator,
    /// Strategy value in units of the GOP.
    Benchmarked { strategy: Strategy },
    /// Deflator times the discounted strategy value.
    DeflatedPortfolio { strategy: Strategy },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    ConsistentWithMartingale,
    StrictSupermartingale,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub ci99: [f64; 2],
}

impl Estimate {
    /// Mean and standard error of i.i.d. samples.
    pub fn from_samples(samples: &[f64]) -> Estimate {
        let n = samples.len() as f64;
        let mean = pairwise_sum(samples) / n;
        let squares: Vec<f64> = samples.iter().map(|x| (x - mean) * (x - mean)).collect();
        let variance = if samples.len() > 1 {
            pairwise_sum(&squares) / (n - 1.0)
        } else {
            0.0
        };
        let std_error = (variance / n).sqrt();
        Estimate {
            mean,
            std_error,
            ci99: [mean - Z99 * std_error, mean + Z99 * std_error],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McReport {
    pub t: f64,
    #[serde(flatten)]
    pub estimate: Estimate,
    pub n_paths: usize,
    pub seed: u64,
    pub antithetic: bool,
    /// Value at time zero; a supermartingale mean cannot exceed it.
    pub baseline: f64,
    pub verdict: Verdict,
    pub reference: Option<f64>,
    pub reference_within_3se: Option<bool>,
    pub high_variance: bool,
}

/// Fixed-shape pairwise summation.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        xs.iter().sum()
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

/// Verdict of the one-sided test of `E = baseline` against `E < baseline`.
pub fn verdict(estimate: &Estimate, baseline: f64, reference: Option<f64>) -> Verdict {
    let band = TEST_SIGMAS * estimate.std_error;
    if estimate.mean + band < baseline {
        Verdict::StrictSupermartingale
    } else if reference.is_some_and(|r| r < baseline * (1.0 - 1e-12)) {
        Verdict::Inconclusive
    } else if (estimate.mean - baseline).abs() <= band {
        Verdict::ConsistentWithMartingale
    } else {
        Verdict::Inconclusive
    }
}

fn report(
    t: f64,
    estimate: Estimate,
    config: &McConfig,
    baseline: f64,
    reference: Option<f64>,
    high_variance: bool,
) -> McReport {
    McReport {
        t,
        verdict: verdict(&estimate, baseline, reference),
        reference_within_3se: reference
            .map(|r| (estimate.mean - r).abs() <= TEST_SIGMAS * estimate.std_error),
        estimate,
        n_paths: config.n_paths,
        seed: config.seed,
        antithetic: config.antithetic,
        baseline,
        reference,
        high_variance,
    }
}

/// Whether some unconstrained piece has `sqrt(lambda) - theta` within 5% of
/// `sqrt(lambda)`, where the deflator's jump factor nearly vanishes.
pub fn is_high_variance(spec: &MarketSpec, gop: &GopSolution) -> bool {
    gop.pieces.iter().any(|p| {
        p.regime == GopRegime::Unconstrained
            && spec
                .sqrt_lambda(p.piece)
                .iter()
                .enumerate()
                .any(|(i, s)| s - p.theta[spec.m + i] < HIGH_VARIANCE_FRACTION * s)
    })
}

fn check_variance(spec: &MarketSpec, gop: &GopSolution, config: &McConfig) -> Result<bool> {
    let flagged = is_high_variance(spec, gop);
    if flagged && config.n_paths < HIGH_VARIANCE_MIN_PATHS {
        return Err(Error::HighVariance {
            n_paths: config.n_paths,
            required: HIGH_VARIANCE_MIN_PATHS,
        });
    }
    Ok(flagged)
}

/// Per-sample values at several grid indices; antithetic pairs are averaged.
fn collect_samples<F>(
    spec: &MarketSpec,
    steps: usize,
    config: &McConfig,
    width: usize,
    eval: F,
) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&SimulatedPath) -> Vec<f64> + Sync,
{
    let rows: Vec<Vec<f64>> = (0..config.n_samples() as u64)
        .into_par_iter()
        .map(|i| {
            let path = SimulatedPath::generate(spec, steps, config.seed, i)?;
            let mut row = eval(&path);
            if config.antithetic {
                let mirror = SimulatedPath::generate_antithetic(spec, steps, config.seed, i)?;
                for (a, b) in row.iter_mut().zip(eval(&mirror)) {
                    *a = 0.5 * (*a + b);
                }
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;
    Ok((0..width)
        .map(|j| rows.iter().map(|row| row[j]).collect())
        .collect())
}

struct Evaluator {
    gop: PathFormula,
    strategy: Option<PathFormula>,
    deflated: bool,
}

impl Evaluator {
    fn new(spec: &MarketSpec, gop: &GopSolution, functional: &Functional) -> Result<Self> {
        let gop_formula = PathFormula::gop(spec, gop)?;
        let (strategy, deflated) = match functional {
            Functional::Deflator => (None, false),
            Functional::Benchmarked { strategy } => {
                (Some(PathFormula::portfolio(spec, strategy, true)?), false)
            }
            Functional::DeflatedPortfolio { strategy } => {
                (Some(PathFormula::portfolio(spec, strategy, true)?), true)
            }
        };
        Ok(Evaluator {
            gop: gop_formula,
            strategy,
            deflated,
        })
    }

    fn at(&self, path: &SimulatedPath, events: &[usize]) -> Vec<f64> {
        let gop = self.gop.evaluate(path);
        match &self.strategy {
            None => events.iter().map(|&e| 1.0 / gop.values[e]).collect(),
            Some(formula) => {
                let v = formula.evaluate(path);
                events
                    .iter()
                    .map(|&e| {
                        if self.deflated {
                            (1.0 / gop.values[e]) * v.values[e]
                        } else {
                            v.scale * (v.log_unit[e] - gop.log_unit[e]).exp()
                        }
                    })
                    .collect()
            }
        }
    }

    fn baseline(functional: &Functional) -> f64 {
        match functional {
            Functional::Deflator => 1.0,
            Functional::Benchmarked { strategy } | Functional::DeflatedPortfolio { strategy } => {
                strategy.initial_wealth
            }
        }
    }
}

fn reference(spec: &MarketSpec, functional: &Functional, t: f64) -> Result<f64> {
    match functional {
        Functional::Deflator => Ok(analytic_deflator_expectation(spec, t)?.value),
        Functional::Benchmarked { strategy } | Functional::DeflatedPortfolio { strategy } => {
            analytic_benchmarked_expectation(spec, strategy, t)
        }
    }
}

/// Estimates `E[X_t]` for the functional `X`.
pub fn estimate_terminal_expectation(
    spec: &MarketSpec,
    functional: &Functional,
    t: f64,
    config: &McConfig,
) -> Result<McReport> {
    config.check()?;
    let gop = solve_gop(spec)?;
    let high_variance = check_variance(spec, &gop, config)?;
    let steps = grid_steps_for(&[t], spec.horizon)?;
    let evaluator = Evaluator::new(spec, &gop, functional)?;
    let n = grid_index(t, spec.horizon, steps);
    let samples = collect_samples(spec, steps, config, 1, |path| {
        evaluator.at(path, &[path.grid_events[n]])
    })?;
    Ok(report(
        t,
        Estimate::from_samples(&samples[0]),
        config,
        Evaluator::baseline(functional),
        Some(reference(spec, functional, t)?),
        high_variance,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    /// Starts with the exact value at `t = 0`.
    pub points: Vec<McReport>,
    /// `mean_j <= mean_{j-1} + 3 sqrt(se_j^2 + se_{j-1}^2)` for every `j`.
    pub nonincreasing: bool,
    /// Largest `(mean_j - mean_{j-1}) / pooled se` (negative when decreasing).
    pub max_increase_sigmas: f64,
}

/// `E[S_t / S^gop_t]` at each checkpoint, all from the same paths.
pub fn supermartingale_sweep(
    spec: &MarketSpec,
    strategy: &Strategy,
    checkpoints: &[f64],
    config: &McConfig,
) -> Result<SweepReport> {
    config.check()?;
    if checkpoints.is_empty() || checkpoints.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidArgument(
            "checkpoints must be non-empty and strictly increasing".into(),
        ));
    }
    let gop = solve_gop(spec)?;
    let high_variance = check_variance(spec, &gop, config)?;
    let steps = grid_steps_for(checkpoints, spec.horizon)?;
    let functional = Functional::Benchmarked {
        strategy: strategy.clone(),
    };
    let evaluator = Evaluator::new(spec, &gop, &functional)?;
    let indices: Vec<usize> = checkpoints
        .iter()
        .map(|&t| grid_index(t, spec.horizon, steps))
        .collect();
    let columns = collect_samples(spec, steps, config, checkpoints.len(), |path| {
        let events: Vec<usize> = indices.iter().map(|&n| path.grid_events[n]).collect();
        evaluator.at(path, &events)
    })?;

    let s = strategy.initial_wealth;
    let start = Estimate {
        mean: s,
        std_error: 0.0,
        ci99: [s, s],
    };
    let mut points = vec![report(0.0, start, config, s, Some(s), high_variance)];
    for (&t, samples) in checkpoints.iter().zip(&columns) {
        points.push(report(
            t,
            Estimate::from_samples(samples),
            config,
            s,
            Some(analytic_benchmarked_expectation(spec, strategy, t)?),
            high_variance,
        ));
    }
    let mut nonincreasing = true;
    let mut max_increase_sigmas = f64::NEG_INFINITY;
    for pair in points.windows(2) {
        let (a, b) = (&pair[0].estimate, &pair[1].estimate);
        let pooled = a.std_error.hypot(b.std_error);
        let increase = b.mean - a.mean;
        if increase > TEST_SIGMAS * pooled {
            nonincreasing = false;
        }
        let sigmas = if pooled > 0.0 {
            increase / pooled
        } else if increase > 0.0 {
            f64::INFINITY
        } else if increase < 0.0 {
            f64::NEG_INFINITY
        } else {
            0.0
        };
        max_increase_sigmas = max_increase_sigmas.max(sigmas);
    }
    Ok(SweepReport {
        points,
        nonincreasing,
        max_increase_sigmas,
    })
}

/// Risky fractions drawn uniformly from the admissible set intersected with
/// the box `[-half_width, half_width]^d`, by rejection.
pub fn sample_admissible_fractions<R: Rng + ?Sized>(
    spec: &MarketSpec,
    piece: usize,
    half_width: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    const MAX_TRIES: usize = 100_000;
    let cap = spec.checked_cap()?;
    let b = &spec.pieces[piece].b;
    let sqrt_lambda = spec.sqrt_lambda(piece);
    for _ in 0..MAX_TRIES {
        let pi: Vec<f64> = (0..spec.d)
            .map(|_| rng.random_range(-half_width..=half_width))
            .collect();
        let admissible = sqrt_lambda.iter().enumerate().all(|(i, s)| {
            let k = spec.m + i;
            let c: f64 = pi.iter().zip(b).map(|(p, row)| p * row[k]).sum();
            c > -s + ADMISSIBILITY_MARGIN && cap.is_none_or(|cap| c <= cap + CAP_TOLERANCE)
        });
        if admissible {
            return Ok(pi);
        }
    }
    Err(Error::InvalidArgument(format!(
        "no admissible strategy found in the box of half-width {half_width} on piece {piece}"
    )))
}

/// Random admissible strategy with unit wealth, fractions drawn per piece.
pub fn random_strategy(
    spec: &MarketSpec,
    half_width: f64,
    seed: u64,
    index: u64,
) -> Result<Strategy> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let fractions = (0..spec.pieces.len())
        .map(|i| sample_admissible_fractions(spec, i, half_width, &mut rng))
        .collect::<Result<_>>()?;
    Ok(Strategy {
        initial_wealth: 1.0,
        fractions,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PieceDominance {
    pub piece: usize,
    /// Optimal growth rate, evaluated at the optimal volatilities.
    pub g_star: f64,
    /// `|g_star - closed form|`.
    pub closed_form_gap: f64,
    /// Growth rate of the GOP minus `g_star`.
    pub gop_slack: f64,
    /// Largest `g - g_star` over the sampled strategies.
    pub max_slack: f64,
    pub violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DominanceReport {
    pub n_strategies: usize,
    pub seed: u64,
    pub half_width: f64,
    pub pieces: Vec<PieceDominance>,
    pub violations: usize,
    pub max_slack: f64,
}

/// Samples `n_strategies` admissible fraction vectors per piece and compares
/// their growth rates with the optimum.
pub fn growth_dominance_test(
    spec: &MarketSpec,
    n_strategies: usize,
    seed: u64,
) -> Result<DominanceReport> {
    let gop = solve_gop(spec)?;
    let half_width = gop
        .pieces
        .iter()
        .flat_map(|p| p.pi_star.iter())
        .fold(1.0f64, |acc, x| acc.max(2.0 * x.abs()));
    let mut pieces = Vec::with_capacity(gop.pieces.len());
    for pg in &gop.pieces {
        let i = pg.piece;
        let p = &spec.pieces[i];
        let g_star = growth_rate(&pg.c_star, &pg.theta, &p.lambda, p.r)?.total;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let mut max_slack = f64::NEG_INFINITY;
        let mut violations = 0;
        for _ in 0..n_strategies {
            let pi = sample_admissible_fractions(spec, i, half_width, &mut rng)?;
            let c = Strategy::constant(1.0, pi).volatilities(spec, i);
            let slack = growth_rate(&c, &pg.theta, &p.lambda, p.r)?.total - g_star;
            if slack > DOMINANCE_TOLERANCE {
                violations += 1;
            }
            max_slack = max_slack.max(slack);
        }
        let c_gop = Strategy::constant(1.0, pg.pi_star.clone()).volatilities(spec, i);
        pieces.push(PieceDominance {
            piece: i,
            g_star,
            closed_form_gap: (g_star - pg.g_star).abs(),
            gop_slack: growth_rate(&c_gop, &pg.theta, &p.lambda, p.r)?.total - g_star,
            max_slack,
            violations,
        });
    }
    Ok(DominanceReport {
        n_strategies,
        seed,
        half_width,
        violations: pieces.iter().map(|p| p.violations).sum(),
        max_slack: pieces
            .iter()
            .map(|p| p.max_slack)
            .fold(f64::NEG_INFINITY, f64::max),
        pieces,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogWealthReport {
    pub t: f64,
    #[serde(flatten)]
    pub estimate: Estimate,
    pub n_paths: usize,
    pub seed: u64,
    pub antithetic: bool,
    /// `∫_0^t (g - g*)`.
    pub reference: f64,
    /// `mean <= 3 se`.
    pub dominated: bool,
}

/// `E[log(S_t / S_0)] - E[log(S*_t / S*_0)]` on common paths.
pub fn log_wealth_comparison(
    spec: &MarketSpec,
    strategy: &Strategy,
    t: f64,
    config: &McConfig,
) -> Result<LogWealthReport> {
    config.check()?;
    let gop = solve_gop(spec)?;
    let steps = grid_steps_for(&[t], spec.horizon)?;
    let ours = PathFormula::portfolio(spec, strategy, false)?;
    let best = PathFormula::gop(spec, &gop)?;
    let n = grid_index(t, spec.horizon, steps);
    let samples = collect_samples(spec, steps, config, 1, |path| {
        let e = path.grid_events[n];
        let a = ours.evaluate(path).log_unit[e];
        // The GOP formula is discounted; add back the rate.
        let b = best.evaluate(path).log_unit[e];
        vec![a - b - integrated_rate(spec, path.events[e].t)]
    })?;
    let mut reference = 0.0;
    for pg in &gop.pieces {
        let p = &spec.pieces[pg.piece];
        let c = strategy.volatilities(spec, pg.piece);
        let g = growth_rate(&c, &pg.theta, &p.lambda, p.r)?.total;
        let g_star = growth_rate(&pg.c_star, &pg.theta, &p.lambda, p.r)?.total;
        reference += (g - g_star) * spec.piece_overlap(pg.piece, t);
    }
    let estimate = Estimate::from_samples(&samples[0]);
    Ok(LogWealthReport {
        t,
        dominated: estimate.mean <= TEST_SIGMAS * estimate.std_error,
        estimate,
        n_paths: config.n_paths,
        seed: config.seed,
        antithetic: config.antithetic,
        reference,
    })
}

fn integrated_rate(spec: &MarketSpec, t: f64) -> f64 {
    (0..spec.pieces.len())
        .map(|i| spec.pieces[i].r * spec.piece_overlap(i, t))
        .sum()
}
