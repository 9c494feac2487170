//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::process::{Command, ExitCode};
use std::time::Instant;

use jdgop::deflator::{radon_nikodym_path, solve_unique_deflator, DeflatorSolution};
use jdgop::gop::{growth_rate, optimal_growth_rate, optimal_volatilities, solve_gop};
use jdgop::market::{appreciation_for_theta, Piece};
use jdgop::mc::{
    estimate_terminal_expectation, random_strategy, sample_admissible_fractions,
    supermartingale_sweep, Functional, McConfig, Verdict,
};
use jdgop::path::SimulatedPath;
use jdgop::scenario::{builtin, builtin_names};
use jdgop::simulate::{log_euler_simulate, max_log_error, simulate_deflator, simulate_portfolio};
use jdgop::{MarketSpec, Strategy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn market(theta: [f64; 2], cap: Option<f64>) -> MarketSpec {
    let spec = MarketSpec::from_theta(
        1,
        1.0,
        0.02,
        vec![vec![0.2, 0.1], vec![0.05, 0.4]],
        &theta,
        vec![1.0],
    );
    match cap {
        Some(c) => spec.with_cap(c),
        None => spec,
    }
}

const PATHS: usize = 100_000;

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let r = estimate_terminal_expectation(
        &market([0.3, 0.5], None),
        &Functional::Deflator,
        1.0,
        &McConfig::new(PATHS, 1),
    )
    .map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let (mean, se) = (r.estimate.mean, r.estimate.std_error);
    check(
        (mean - 1.0).abs() <= 3.0 * se && secs < 30.0,
        format!(
            "mean {mean:.6}, se {se:.2e}, |mean - 1| / se = {:.2}, {secs:.1}s",
            (mean - 1.0).abs() / se
        ),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let r = estimate_terminal_expectation(
        &market([0.3, 1.5], Some(1.0)),
        &Functional::Deflator,
        1.0,
        &McConfig::new(PATHS, 2),
    )
    .map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let (mean, se) = (r.estimate.mean, r.estimate.std_error);
    let target = (-1f64).exp();
    check(
        (mean - target).abs() <= 3.0 * se
            && mean + 3.0 * se < 1.0
            && r.verdict == Verdict::StrictSupermartingale
            && secs < 30.0,
        format!(
            "mean {mean:.6} vs e^-1 {target:.6}, se {se:.2e}, verdict {:?}, {secs:.1}s",
            r.verdict
        ),
    )
}

fn criterion_3() -> Outcome {
    let (theta2, lambda, psi) = (0.6f64, 1.0f64, 0.5f64);
    let s = lambda.sqrt();
    let d = psi * (psi * (theta2 - s) + theta2 * s) / (s + psi);
    let target = (-d).exp();
    let r = estimate_terminal_expectation(
        &market([0.3, theta2], Some(psi)),
        &Functional::Deflator,
        1.0,
        &McConfig::new(PATHS, 3),
    )
    .map_err(|e| e.to_string())?;
    let (mean, se) = (r.estimate.mean, r.estimate.std_error);
    check(
        mean + 3.0 * se < 1.0 && (mean - target).abs() <= 3.0 * se,
        format!("mean {mean:.6} vs exp(-D) {target:.6} (D = {d:.6}), se {se:.2e}"),
    )
}

fn gauss_solve(mut a: Vec<Vec<f64>>, mut rhs: Vec<f64>) -> Vec<f64> {
    let n = rhs.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        rhs.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            rhs[row] -= f * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (rhs[row] - tail) / a[row][row];
    }
    x
}

/// Well-conditioned market with `theta < sqrt(lambda)` on every jump column.
fn random_market(rng: &mut ChaCha8Rng) -> MarketSpec {
    loop {
        let d = rng.random_range(1..=4);
        let m = rng.random_range(0..=d);
        let b: Vec<Vec<f64>> = (0..d)
            .map(|j| {
                (0..d)
                    .map(|k| rng.random_range(-0.3..0.3) + if j == k { 0.6 } else { 0.0 })
                    .collect()
            })
            .collect();
        let lambda: Vec<f64> = (m..d).map(|_| rng.random_range(0.2..5.0)).collect();
        let theta: Vec<f64> = (0..d)
            .map(|k| {
                let u = rng.random_range(-0.95..0.95);
                if k < m {
                    u
                } else {
                    u * lambda[k - m].sqrt()
                }
            })
            .collect();
        let spec = MarketSpec::from_theta(m, 1.0, rng.random_range(0.0..0.05), b, &theta, lambda);
        if spec.condition_number(0) < 1e3 {
            return spec;
        }
    }
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let spec = random_market(&mut rng);
        let p = &spec.pieces[0];
        let theta = gauss_solve(p.b.clone(), p.a.iter().map(|a| a - p.r).collect());
        let sol = solve_unique_deflator(&spec, 0).map_err(|e| e.to_string())?;
        for k in 0..spec.m {
            worst = worst.max((sol.phi[k] + theta[k]).abs());
        }
        for (i, l) in p.lambda.iter().enumerate() {
            let closed = 1.0 - theta[spec.m + i] / l.sqrt();
            worst = worst.max((sol.psi_rn[i] - closed).abs());
        }
    }

    let spec = market([0.3, 0.5], None);
    let solution = DeflatorSolution {
        pieces: vec![solve_unique_deflator(&spec, 0).map_err(|e| e.to_string())?],
    };
    let mut worst_path = 0.0f64;
    let mut events = 0;
    for index in 0..100 {
        let path = SimulatedPath::generate(&spec, 100, 44, index).map_err(|e| e.to_string())?;
        let l = radon_nikodym_path(&solution, &path, &spec).map_err(|e| e.to_string())?;
        let z = simulate_deflator(&spec, &path).map_err(|e| e.to_string())?;
        for (a, b) in l.values.iter().zip(&z.values) {
            worst_path = worst_path.max((a - b).abs() / b);
            events += 1;
        }
    }
    check(
        worst < 1e-10 && worst_path < 1e-10,
        format!("max coefficient error {worst:.1e}; max |L - Z| / Z {worst_path:.1e} over {events} events"),
    )
}

fn summand_difference(c1: f64, c2: f64, theta: f64, lambda: f64) -> f64 {
    let s = lambda.sqrt();
    (c1 - c2) * (theta - s) + lambda * ((c1 - c2) / (s + c2)).ln_1p()
}

fn golden_section(better: impl Fn(f64, f64) -> bool, mut lo: f64, mut hi: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    for _ in 0..300 {
        if hi - lo < 1e-13 * (1.0 + hi.abs()) {
            break;
        }
        if better(x1, x2) {
            hi = x2;
            x2 = x1;
            x1 = hi - inv_phi * (hi - lo);
        } else {
            lo = x1;
            x1 = x2;
            x2 = lo + inv_phi * (hi - lo);
        }
    }
    0.5 * (lo + hi)
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_argmax = 0.0f64;
    let mut worst_slack = f64::NEG_INFINITY;
    for _ in 0..1000 {
        let spec = random_market(&mut rng);
        let p = &spec.pieces[0];
        let theta = spec.market_price_of_risk(0).map_err(|e| e.to_string())?;
        let c_star = optimal_volatilities(&theta, &p.lambda).map_err(|e| e.to_string())?;
        for k in 0..spec.d {
            let oracle = if k < spec.m {
                let t = theta[k];
                let f = |c: f64| c * t - 0.5 * c * c;
                golden_section(
                    |a, b| f(a) > f(b),
                    t.abs().mul_add(-10.0, -1.0),
                    t.abs().mul_add(10.0, 1.0),
                )
            } else {
                let (t, l) = (theta[k], p.lambda[k - spec.m]);
                let s = l.sqrt();
                let hi = (10.0 * s).max(10.0 * c_star[k].abs());
                golden_section(
                    |a, b| summand_difference(a, b, t, l) > 0.0,
                    -s * (1.0 - 1e-9),
                    hi,
                )
            };
            worst_argmax = worst_argmax.max((oracle - c_star[k]).abs());
        }
        let g_star = optimal_growth_rate(&theta, &p.lambda, p.r).map_err(|e| e.to_string())?;
        let width = c_star.iter().fold(1.0f64, |a, c| a.max(2.0 * c.abs()));
        for _ in 0..1000 {
            let pi = sample_admissible_fractions(&spec, 0, width, &mut rng)
                .map_err(|e| e.to_string())?;
            let c = Strategy::constant(1.0, pi).volatilities(&spec, 0);
            let g = growth_rate(&c, &theta, &p.lambda, p.r)
                .map_err(|e| e.to_string())?
                .total;
            worst_slack = worst_slack.max(g - g_star);
        }
    }
    check(
        worst_argmax < 1e-6 && worst_slack <= 1e-12,
        format!("max |argmax - c*| {worst_argmax:.1e}; max g - g* {worst_slack:.2e} over 10^6 strategies"),
    )
}

fn criterion_6() -> Outcome {
    let checkpoints = [0.25, 0.5, 0.75, 1.0];
    let regimes = [
        ("martingale", market([0.3, 0.5], None)),
        ("constrained", market([0.3, 1.5], Some(1.0))),
        ("binding", market([0.3, 0.6], Some(0.5))),
    ];
    let mut worst = f64::NEG_INFINITY;
    let mut failures = Vec::new();
    for (r, (name, spec)) in regimes.iter().enumerate() {
        for i in 0..10u64 {
            let strategy =
                random_strategy(spec, 2.0, 60 + r as u64, i).map_err(|e| e.to_string())?;
            let sweep = supermartingale_sweep(
                spec,
                &strategy,
                &checkpoints,
                &McConfig::new(10_000, 600 + i),
            )
            .map_err(|e| e.to_string())?;
            worst = worst.max(sweep.max_increase_sigmas);
            if !sweep.nonincreasing {
                failures.push(format!("{name}#{i}"));
            }
        }
        let gop = solve_gop(spec).map_err(|e| e.to_string())?;
        let sweep = supermartingale_sweep(
            spec,
            &Strategy::from_gop(&gop),
            &checkpoints,
            &McConfig::new(10_000, 7),
        )
        .map_err(|e| e.to_string())?;
        if sweep
            .points
            .iter()
            .any(|p| p.estimate.mean != 1.0 || p.estimate.std_error != 0.0)
        {
            failures.push(format!("{name}: GOP not constant"));
        }
    }
    check(
        failures.is_empty(),
        format!("30 strategies, largest increase {worst:.2} pooled SE; GOP constant; failures {failures:?}"),
    )
}

/// Single diffusive asset whose drift and short rate step up at 40
/// breakpoints that are not aligned with any of the grids.
fn convergence_market() -> MarketSpec {
    let golden = (5f64.sqrt() - 1.0) / 2.0;
    let mut starts: Vec<f64> = (1..=40).map(|i| (i as f64 * golden).fract()).collect();
    starts.sort_by(f64::total_cmp);
    let mut pieces = vec![Piece {
        t_start: 0.0,
        r: 0.01,
        a: vec![0.05],
        b: vec![vec![0.25]],
        lambda: vec![],
    }];
    for (i, t) in starts.into_iter().enumerate() {
        let r = 0.01 + 0.002 * (i + 1) as f64;
        let theta = 0.2 + 0.02 * (i + 1) as f64;
        pieces.push(Piece {
            t_start: t,
            r,
            a: appreciation_for_theta(r, &[vec![0.25]], &[theta]),
            b: vec![vec![0.25]],
            lambda: vec![],
        });
    }
    MarketSpec {
        d: 1,
        m: 1,
        horizon: 1.0,
        pieces,
        constraint_cap: None,
    }
}

fn criterion_7() -> Outcome {
    let spec = convergence_market();
    let strategy = Strategy::constant(1.0, vec![0.8]);
    let steps = 10_000;
    let mut errors = [0.0f64; 3];
    for seed in [1u64, 2, 3] {
        let path = SimulatedPath::generate(&spec, steps, seed, 0).map_err(|e| e.to_string())?;
        let exact = simulate_portfolio(&spec, &strategy, &path).map_err(|e| e.to_string())?;
        for (slot, stride) in [100usize, 10, 1].into_iter().enumerate() {
            let euler =
                log_euler_simulate(&spec, &strategy, &path, stride).map_err(|e| e.to_string())?;
            errors[slot] = errors[slot].max(max_log_error(&euler, &exact, &path, stride));
        }
    }
    let ratio = errors[1] / errors[2];
    check(
        errors[0] > errors[1] && errors[1] > errors[2] && (5.0..=20.0).contains(&ratio),
        format!(
            "max log error {:.2e} / {:.2e} / {:.2e} at dt 1e-2 / 1e-3 / 1e-4; ratio {ratio:.2}",
            errors[0], errors[1], errors[2]
        ),
    )
}

fn criterion_8() -> Outcome {
    let run = |name: &str, threads: &str| -> Result<Vec<u8>, String> {
        let out = Command::new(env!("CARGO_BIN_EXE_jdgop"))
            .args(["run", &format!("builtin:{name}"), "--threads", threads])
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!("{name}: exit {:?}", out.status.code()));
        }
        Ok(out.stdout)
    };
    let mut differing = Vec::new();
    for name in builtin_names() {
        builtin(name).map_err(|e| e.to_string())?;
        if run(name, "1")? != run(name, "8")? {
            differing.push(name);
        }
    }
    check(
        differing.is_empty(),
        format!(
            "{} built-in scenarios compared; differing {differing:?}",
            builtin_names().len()
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("martingale regime E[Z_T] = 1", criterion_1),
        ("strict supermartingale E[Z_T] = e^-1", criterion_2),
        ("binding cap under bounded jump price", criterion_3),
        ("unique measure-change coefficients", criterion_4),
        ("growth optimality", criterion_5),
        ("supermartingale sweep", criterion_6),
        ("log-Euler convergence", criterion_7),
        ("thread-count determinism", criterion_8),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => println!("criterion {}: PASS  {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {}: FAIL  {name}: {detail}", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
