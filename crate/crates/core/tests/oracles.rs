//! Independent numerical oracles for the closed forms used by the library.

use jdgop::deflator::{
    analytic_benchmarked_expectation, analytic_deflator_expectation, solve_unique_deflator,
};
use jdgop::gop::{
    constrained_optimal_volatilities, growth_rate, jump_summand, optimal_growth_rate,
    optimal_volatilities, GopRegime,
};
use jdgop::market::{cap_binds, Piece};
use jdgop::mc::{estimate_terminal_expectation, random_strategy, Functional, McConfig};
use jdgop::path::{sample_jump_times, SimulatedPath};
use jdgop::MarketSpec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `f(c1) - f(c2)` for the jump summand without cancellation.
fn summand_difference(c1: f64, c2: f64, theta: f64, lambda: f64) -> f64 {
    let s = lambda.sqrt();
    (c1 - c2) * (theta - s) + lambda * ((c1 - c2) / (s + c2)).ln_1p()
}

fn golden_section_argmax(theta: f64, lambda: f64, mut lo: f64, mut hi: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    for _ in 0..300 {
        if hi - lo < 1e-13 * (1.0 + hi.abs()) {
            break;
        }
        if summand_difference(x1, x2, theta, lambda) > 0.0 {
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

fn search_bracket(lambda: f64, closed_form: f64) -> (f64, f64) {
    let s = lambda.sqrt();
    (-s * (1.0 - 1e-9), (10.0 * s).max(10.0 * closed_form.abs()))
}

#[test]
fn golden_section_reproduces_optimal_jump_volatility() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let lambda = 10f64.powf(rng.random_range(-1.0..1.0));
        let s = lambda.sqrt();
        let theta = s * rng.random_range(-2.0..0.99);
        let c = optimal_volatilities(&[0.1, theta], &[lambda]).unwrap()[1];
        let (lo, hi) = search_bracket(lambda, c);
        let oracle = golden_section_argmax(theta, lambda, lo, hi);
        worst = worst.max((oracle - c).abs());
    }
    assert!(worst < 1e-6, "worst deviation {worst}");
}

/// Capped grid search followed by local golden-section refinement.
fn capped_argmax(theta: f64, lambda: f64, cap: f64) -> f64 {
    let s = lambda.sqrt();
    let lo = -s * (1.0 - 1e-9);
    let n = 20_000;
    let grid: Vec<f64> = (0..=n)
        .map(|i| lo + (cap - lo) * i as f64 / n as f64)
        .collect();
    let best = (0..=n)
        .max_by(|&i, &j| {
            jump_summand(grid[i], theta, lambda).total_cmp(&jump_summand(grid[j], theta, lambda))
        })
        .unwrap();
    if best == n {
        return cap;
    }
    golden_section_argmax(theta, lambda, grid[best.saturating_sub(1)], grid[best + 1])
}

#[test]
fn capped_search_matches_constrained_optimum() {
    let cases = [
        ([0.3, 1.5], 1.0, 1.0, [0.3, 1.0], GopRegime::Constrained),
        ([0.3, 0.2], 1.0, 10.0, [0.3, 0.25], GopRegime::Unconstrained),
        ([0.0, 0.6], 1.0, 1.0, [0.0, 1.0], GopRegime::Constrained),
    ];
    for (theta, lambda, cap, expected, regime) in cases {
        let got = constrained_optimal_volatilities(theta, lambda, cap).unwrap();
        assert_eq!(got.regime, regime);
        assert!((got.c[0] - expected[0]).abs() < 1e-12);
        assert!((got.c[1] - expected[1]).abs() < 1e-12);
        assert!((capped_argmax(theta[1], lambda, cap) - expected[1]).abs() < 1e-6);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let lambda = rng.random_range(0.2..5.0);
        let theta = rng.random_range(-1.0..3.0);
        let cap = rng.random_range(0.05..4.0);
        let got = constrained_optimal_volatilities([0.1, theta], lambda, cap).unwrap();
        assert!((capped_argmax(theta, lambda, cap) - got.c[1]).abs() < 1e-6);
    }
}

#[test]
fn derivative_changes_sign_once() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..200 {
        let lambda: f64 = rng.random_range(0.1..10.0);
        let s = lambda.sqrt();
        let theta = s * rng.random_range(-1.0..0.99);
        let derivative = |c: f64| (theta - s) + lambda / (s + c);
        let c_star = optimal_volatilities(&[0.0, theta], &[lambda]).unwrap()[1];
        let (lo, hi) = search_bracket(lambda, c_star);
        let signs: Vec<bool> = (0..=2000)
            .map(|i| derivative(lo + (hi - lo) * i as f64 / 2000.0) > 0.0)
            .collect();
        let changes = signs.windows(2).filter(|w| w[0] != w[1]).count();
        assert_eq!(changes, 1);
    }
}

#[test]
fn optimal_growth_matches_numeric_maximum() {
    // r = 0, theta = (0, 0.5), lambda = 1: log 2 - 1/2.
    let g = optimal_growth_rate(&[0.0, 0.5], &[1.0], 0.0).unwrap();
    assert!((g - (2f64.ln() - 0.5)).abs() < 1e-15);
    let n = 200_000;
    let numeric = (1..n)
        .map(|i| -1.0 + 11.0 * i as f64 / n as f64)
        .map(|c| {
            growth_rate(&[0.0, c], &[0.0, 0.5], &[1.0], 0.0)
                .unwrap()
                .total
        })
        .fold(f64::NEG_INFINITY, f64::max);
    assert!((numeric - g).abs() < 1e-8);
    assert!((growth_rate(&[1.0], &[0.5], &[1.0], 0.0).unwrap().total - 0.193147).abs() < 1e-6);
}

#[test]
fn jump_volatility_tends_to_theta_for_large_intensity() {
    let theta = 0.4;
    let mut previous = f64::INFINITY;
    for lambda in [1.0, 1e2, 1e4, 1e6, 1e8] {
        let c = optimal_volatilities(&[0.0, theta], &[lambda]).unwrap()[1];
        let gap = (c - theta).abs();
        assert!(gap < previous);
        previous = gap;
    }
    assert!(previous < 1e-4);
}

/// Gaussian elimination with partial pivoting.
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

fn random_market(rng: &mut ChaCha8Rng, d: usize, m: usize) -> MarketSpec {
    loop {
        let b: Vec<Vec<f64>> = (0..d)
            .map(|j| {
                (0..d)
                    .map(|k| {
                        let diag = if j == k { 0.5 } else { 0.0 };
                        diag + rng.random_range(-0.3..0.3)
                    })
                    .collect()
            })
            .collect();
        let lambda: Vec<f64> = (m..d).map(|_| rng.random_range(0.3..4.0)).collect();
        let a: Vec<f64> = (0..d).map(|_| rng.random_range(-0.1..0.3)).collect();
        let spec = MarketSpec::constant(m, 1.0, rng.random_range(0.0..0.05), a, b, lambda);
        if spec.condition_number(0) < 1e3 {
            return spec;
        }
    }
}

#[test]
fn market_price_of_risk_matches_elimination() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..300 {
        let d = rng.random_range(1..=4);
        let m = rng.random_range(0..=d);
        let spec = random_market(&mut rng, d, m);
        let p = &spec.pieces[0];
        let rhs: Vec<f64> = p.a.iter().map(|a| a - p.r).collect();
        let oracle = gauss_solve(p.b.clone(), rhs);
        let theta = spec.market_price_of_risk(0).unwrap();
        for (x, y) in theta.iter().zip(&oracle) {
            assert!((x - y).abs() < 1e-10);
        }
    }
}

#[test]
fn deflator_system_matches_elimination() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..300 {
        let d = rng.random_range(2..=4);
        let m = rng.random_range(0..d);
        let spec = random_market(&mut rng, d, m);
        let p = &spec.pieces[0];
        let theta = gauss_solve(p.b.clone(), p.a.iter().map(|a| a - p.r).collect());
        // Row j: sum_k b[j][k] x_k = -sum_k b[j][k] theta_k + sum_{k>=m} b[j][k] sqrt(lambda).
        let rhs: Vec<f64> = (0..d)
            .map(|j| {
                let bt: f64 = (0..d).map(|k| p.b[j][k] * theta[k]).sum();
                let shift: f64 = (m..d).map(|k| p.b[j][k] * p.lambda[k - m].sqrt()).sum();
                shift - bt
            })
            .collect();
        let x = gauss_solve(p.b.clone(), rhs);
        let sol = solve_unique_deflator(&spec, 0).unwrap();
        for k in 0..m {
            assert!((sol.phi[k] - x[k]).abs() < 1e-10);
        }
        for k in m..d {
            let psi = x[k] / p.lambda[k - m].sqrt();
            assert!((sol.psi_rn[k - m] - psi).abs() < 1e-10);
        }
    }
}

fn chi_square(observed: &[f64], expected: &[f64]) -> f64 {
    observed
        .iter()
        .zip(expected)
        .map(|(o, e)| (o - e) * (o - e) / e)
        .sum()
}

fn poisson_pmf(mean: f64, k: u32) -> f64 {
    let mut p = (-mean).exp();
    for i in 1..=k {
        p *= mean / i as f64;
    }
    p
}

fn count_jumps(starts: &[f64], rates: &[f64], n: u64, seed: u64) -> Vec<usize> {
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i);
            sample_jump_times(starts, rates, 1.0, &mut rng).len()
        })
        .collect()
}

#[test]
fn jump_counts_follow_poisson_law() {
    let n = 100_000u64;
    let counts = count_jumps(&[0.0], &[2.0], n, 1);
    let mean = counts.iter().sum::<usize>() as f64 / n as f64;
    assert!((mean - 2.0).abs() < 3.0 * (2.0 / n as f64).sqrt(), "{mean}");

    // Chi-square on {0, 1, 2, 3, 4, 5, >=6}, 6 degrees of freedom, 1% level.
    let mut observed = [0.0; 7];
    for c in &counts {
        observed[(*c).min(6)] += 1.0;
    }
    let mut expected: Vec<f64> = (0..6).map(|k| n as f64 * poisson_pmf(2.0, k)).collect();
    expected.push(n as f64 - expected.iter().sum::<f64>());
    assert!(chi_square(&observed, &expected) < 16.812);

    // Rare jumps: {0, >=1}, one degree of freedom.
    let counts = count_jumps(&[0.0], &[0.001], n, 2);
    let zeros = counts.iter().filter(|&&c| c == 0).count() as f64;
    let p0 = (-0.001f64).exp();
    let stat = chi_square(
        &[zeros, n as f64 - zeros],
        &[n as f64 * p0, n as f64 * (1.0 - p0)],
    );
    assert!(stat < 6.635, "{stat}");

    let counts = count_jumps(&[0.0, 0.5], &[1.0, 3.0], n, 3);
    let mean = counts.iter().sum::<usize>() as f64 / n as f64;
    assert!((mean - 2.0).abs() < 3.0 * (2.0 / n as f64).sqrt(), "{mean}");
}

#[test]
fn brownian_increments_have_variance_dt() {
    let spec = MarketSpec::constant(
        2,
        1.0,
        0.0,
        vec![0.1, 0.1],
        vec![vec![0.3, 0.0], vec![0.0, 0.3]],
        vec![],
    );
    let steps = 10;
    let dt = 0.1;
    let mut sums = [0.0f64; 2];
    let mut n = 0.0;
    for i in 0..5000 {
        let path = SimulatedPath::generate(&spec, steps, 4, i).unwrap();
        for inc in path.grid_increments() {
            for k in 0..2 {
                sums[k] += inc[k] * inc[k];
            }
            n += 1.0;
        }
    }
    for s in sums {
        let var = s / n;
        // Sample variance of chi-square(1) * dt: sd = dt sqrt(2 / n).
        assert!((var - dt).abs() < 4.0 * dt * (2.0 / n).sqrt(), "{var}");
    }
}

fn constrained_market(theta2: f64, cap: f64) -> MarketSpec {
    MarketSpec::from_theta(
        1,
        1.0,
        0.02,
        vec![vec![0.2, 0.1], vec![0.05, 0.4]],
        &[0.3, theta2],
        vec![1.0],
    )
    .with_cap(cap)
}

#[test]
fn analytic_expectation_matches_monte_carlo_across_caps() {
    for (theta2, cap) in [(1.5, 0.3), (2.5, 0.8), (0.8, 1.2), (0.6, 0.5)] {
        let spec = constrained_market(theta2, cap);
        let r = estimate_terminal_expectation(
            &spec,
            &Functional::Deflator,
            1.0,
            &McConfig::new(40_000, 17),
        )
        .unwrap();
        let analytic = analytic_deflator_expectation(&spec, 1.0).unwrap().value;
        assert!(
            (r.estimate.mean - analytic).abs() < 3.5 * r.estimate.std_error,
            "theta2 {theta2} cap {cap}: {} vs {analytic}",
            r.estimate.mean
        );
    }
}

#[test]
fn benchmarked_expectation_matches_monte_carlo() {
    for spec in [
        constrained_market(1.5, 1.0),
        MarketSpec::from_theta(
            1,
            1.0,
            0.02,
            vec![vec![0.2, 0.1], vec![0.05, 0.4]],
            &[0.3, 0.5],
            vec![1.0],
        ),
    ] {
        for index in 0..3 {
            let strategy = random_strategy(&spec, 2.0, 99, index).unwrap();
            let functional = Functional::Benchmarked {
                strategy: strategy.clone(),
            };
            let r =
                estimate_terminal_expectation(&spec, &functional, 1.0, &McConfig::new(40_000, 23))
                    .unwrap();
            let analytic = analytic_benchmarked_expectation(&spec, &strategy, 1.0).unwrap();
            assert!(
                (r.estimate.mean - analytic).abs() < 3.5 * r.estimate.std_error,
                "{} vs {analytic}",
                r.estimate.mean
            );
        }
    }
}

fn drift(theta2: f64, lambda: f64, psi: f64) -> f64 {
    let s = lambda.sqrt();
    psi * (theta2 - s) + psi * lambda / (s + psi)
}

#[test]
fn expectation_decreases_in_cap_when_gop_would_not_exist() {
    // theta2 > sqrt(lambda): every cap binds.
    let mut previous = 1.0;
    for i in 1..=40 {
        let cap = 0.1 * i as f64;
        let e = analytic_deflator_expectation(&constrained_market(1.5, cap), 1.0)
            .unwrap()
            .value;
        assert!(e < previous, "cap {cap}");
        let h = 1e-6;
        let slope = (drift(1.5, 1.0, cap + h) - drift(1.5, 1.0, cap - h)) / (2.0 * h);
        assert!(slope > 0.0);
        previous = e;
    }
}

#[test]
fn drift_positive_exactly_when_cap_binds() {
    for i in 1..20 {
        let theta2 = 0.05 * i as f64;
        for j in 1..60 {
            let cap = 0.05 * j as f64;
            let d = drift(theta2, 1.0, cap);
            let factored = cap * (cap * (theta2 - 1.0) + theta2) / (1.0 + cap);
            assert!((d - factored).abs() < 1e-14);
            let threshold = theta2 / (1.0 - theta2);
            if (cap - threshold).abs() > 1e-9 {
                assert_eq!(d > 0.0, cap < threshold, "theta2 {theta2} cap {cap}");
                assert_eq!(cap_binds(theta2, 1.0, cap), cap < threshold);
            }
        }
    }
}

#[test]
fn multi_piece_expectation_integrates_drift() {
    let b = vec![vec![0.2, 0.1], vec![0.05, 0.4]];
    let piece = |t_start: f64, theta2: f64| Piece {
        t_start,
        r: 0.01,
        a: jdgop::market::appreciation_for_theta(0.01, &b, &[0.3, theta2]),
        b: b.clone(),
        lambda: vec![1.0],
    };
    let spec = MarketSpec {
        d: 2,
        m: 1,
        horizon: 1.0,
        pieces: vec![piece(0.0, 1.5), piece(0.5, 0.2)],
        constraint_cap: Some(1.0),
    };
    // First half binds with D = 1; second half is unconstrained.
    let e = analytic_deflator_expectation(&spec, 1.0).unwrap();
    assert!((e.integrated_drift - 0.5).abs() < 1e-14);
    let r =
        estimate_terminal_expectation(&spec, &Functional::Deflator, 1.0, &McConfig::new(40_000, 5))
            .unwrap();
    assert!((r.estimate.mean - e.value).abs() < 3.5 * r.estimate.std_error);
}
