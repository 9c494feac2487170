//! Sample paths of the driving noise: Brownian motion on a uniform grid and
//! exact jump times of the counting processes.
//!
//! Every path is a pure function of `(spec, steps, seed, path index)`.
//! Each path draws from its own ChaCha stream, keyed by the master seed and
//! a substream tag and positioned by the path index, so paths can be
//! generated in any order or concurrently with identical results.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::market::MarketSpec;

/// Independent random streams used by one path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Substream {
    /// Grid increments of `W`.
    Brownian,
    /// Brownian-bridge draws at off-grid events.
    Bridge,
    /// Arrivals of counting process `k`.
    Jumps(usize),
}

impl Substream {
    fn tag(self) -> u64 {
        match self {
            Substream::Brownian => 0,
            Substream::Bridge => 1,
            Substream::Jumps(k) => 16 + k as u64,
        }
    }
}

/// RNG for `(seed, substream)` positioned on stream `path_index`.
pub fn path_rng(seed: u64, path_index: u64, substream: Substream) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&substream.tag().to_le_bytes());
    key[16..24].copy_from_slice(b"jdgop-pa");
    key[24..].copy_from_slice(b"th-strm1");
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(path_index);
    rng
}

/// Arrival times on `(0, horizon]` of a Poisson process whose intensity is
/// `rates[i]` on `[starts[i], starts[i+1])`, by inverting the integrated
/// intensity at unit-rate exponential arrivals.
pub fn sample_jump_times<R: Rng + ?Sized>(
    starts: &[f64],
    rates: &[f64],
    horizon: f64,
    rng: &mut R,
) -> Vec<f64> {
    debug_assert_eq!(starts.len(), rates.len());
    let mut times: Vec<f64> = Vec::new();
    let mut target: f64 = rng.sample(Exp1);
    let mut integrated = 0.0;
    for (i, (&start, &rate)) in starts.iter().zip(rates).enumerate() {
        let end = starts.get(i + 1).copied().unwrap_or(horizon);
        let mass = rate * (end - start);
        while target < integrated + mass {
            let mut t = (start + (target - integrated) / rate).min(end);
            if let Some(&prev) = times.last() {
                if t <= prev {
                    t = prev.next_up();
                }
            }
            if t <= 0.0 {
                t = f64::MIN_POSITIVE;
            }
            times.push(t);
            target += rng.sample::<f64, _>(Exp1);
        }
        integrated += mass;
    }
    times
}

/// Makes jump times distinct across processes. A time already taken by an
/// earlier process is moved by one ulp; returns the number of moves.
pub(crate) fn separate_ties(jump_times: &mut [Vec<f64>], horizon: f64) -> usize {
    let mut seen: HashSet<u64> = HashSet::new();
    let mut moves = 0;
    for times in jump_times.iter_mut() {
        for t in times.iter_mut() {
            let mut downward = false;
            while seen.contains(&t.to_bits()) {
                let up = t.next_up();
                downward |= up > horizon;
                *t = if downward { t.next_down() } else { up };
                moves += 1;
            }
            seen.insert(t.to_bits());
        }
        times.sort_by(f64::total_cmp);
    }
    moves
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Grid,
    Breakpoint,
    /// Jump of counting process `k` (jump column `m + k`).
    Jump(usize),
}

impl EventKind {
    // Jumps sort before coinciding grid points and breakpoints so that a jump
    // landing exactly on a breakpoint still sees the left-limit coefficients.
    fn rank(self) -> u8 {
        match self {
            EventKind::Jump(_) => 0,
            EventKind::Grid => 1,
            EventKind::Breakpoint => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Event {
    pub t: f64,
    pub kind: EventKind,
}

/// One realization of `(W, N)` on `[0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedPath {
    pub seed: u64,
    pub index: u64,
    pub antithetic: bool,
    pub steps: usize,
    pub dt: f64,
    pub m: usize,
    /// Sorted jump times per counting process.
    pub jump_times: Vec<Vec<f64>>,
    /// Union of grid points, interior breakpoints and jump times.
    pub events: Vec<Event>,
    /// `W` at every event, row-major `events.len() x m`.
    pub w: Vec<f64>,
    /// Event index of grid point `n`.
    pub grid_events: Vec<usize>,
    /// Piece governing the interval that ends at each event (entry 0 unused).
    pub interval_piece: Vec<usize>,
    /// Number of one-ulp moves made to separate coinciding jump times.
    pub tie_shifts: usize,
}

impl SimulatedPath {
    pub fn generate(spec: &MarketSpec, steps: usize, seed: u64, index: u64) -> Result<Self> {
        Self::build(spec, steps, seed, index, false)
    }

    /// Same jump times, negated Gaussian draws.
    pub fn generate_antithetic(
        spec: &MarketSpec,
        steps: usize,
        seed: u64,
        index: u64,
    ) -> Result<Self> {
        Self::build(spec, steps, seed, index, true)
    }

    fn build(
        spec: &MarketSpec,
        steps: usize,
        seed: u64,
        index: u64,
        antithetic: bool,
    ) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidArgument(
                "a path needs at least one grid step".into(),
            ));
        }
        let horizon = spec.horizon;
        let m = spec.m;
        let sign = if antithetic { -1.0 } else { 1.0 };

        let starts: Vec<f64> = spec.pieces.iter().map(|p| p.t_start).collect();
        let mut jump_times: Vec<Vec<f64>> = (0..spec.n_jumps())
            .map(|k| {
                let rates: Vec<f64> = spec.pieces.iter().map(|p| p.lambda[k]).collect();
                if rates.iter().any(|&r| !(r > 0.0)) {
                    return Err(Error::InvalidArgument(format!(
                        "intensity of counting process {k} must be positive"
                    )));
                }
                let mut rng = path_rng(seed, index, Substream::Jumps(k));
                Ok(sample_jump_times(&starts, &rates, horizon, &mut rng))
            })
            .collect::<Result<_>>()?;
        let tie_shifts = separate_ties(&mut jump_times, horizon);

        let grid_t: Vec<f64> = (0..=steps)
            .map(|n| horizon * n as f64 / steps as f64)
            .collect();

        let mut events: Vec<Event> = grid_t
            .iter()
            .map(|&t| Event {
                t,
                kind: EventKind::Grid,
            })
            .collect();
        events.extend(starts[1..].iter().map(|&t| Event {
            t,
            kind: EventKind::Breakpoint,
        }));
        for (k, times) in jump_times.iter().enumerate() {
            events.extend(times.iter().map(|&t| Event {
                t,
                kind: EventKind::Jump(k),
            }));
        }
        events.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.kind.rank().cmp(&b.kind.rank())));

        // Brownian values on the grid.
        let mut grid_w = vec![0.0; (steps + 1) * m];
        let mut rng = path_rng(seed, index, Substream::Brownian);
        for n in 0..steps {
            let sd = (grid_t[n + 1] - grid_t[n]).sqrt();
            for k in 0..m {
                let z: f64 = rng.sample(StandardNormal);
                grid_w[(n + 1) * m + k] = grid_w[n * m + k] + sign * sd * z;
            }
        }

        // Fill in W at off-grid events by sequential Brownian bridges towards
        // the next grid point.
        let mut bridge = path_rng(seed, index, Substream::Bridge);
        let mut w = vec![0.0; events.len() * m];
        let mut grid_events = Vec::with_capacity(steps + 1);
        let mut last_grid = 0usize;
        let mut anchor_t = 0.0;
        let mut anchor_w = vec![0.0; m];
        for (e, event) in events.iter().enumerate() {
            let out = &mut w[e * m..(e + 1) * m];
            if event.kind == EventKind::Grid {
                last_grid = grid_events.len();
                grid_events.push(e);
                out.copy_from_slice(&grid_w[last_grid * m..(last_grid + 1) * m]);
                anchor_t = event.t;
                anchor_w.copy_from_slice(out);
                continue;
            }
            let next = (last_grid + 1).min(steps);
            let (t1, w1) = (grid_t[next], &grid_w[next * m..(next + 1) * m]);
            if event.t <= anchor_t {
                out.copy_from_slice(&anchor_w);
            } else if event.t >= t1 {
                out.copy_from_slice(w1);
            } else {
                let span = t1 - anchor_t;
                let frac = (event.t - anchor_t) / span;
                let sd = ((event.t - anchor_t) * (t1 - event.t) / span).sqrt();
                for k in 0..m {
                    let z: f64 = bridge.sample(StandardNormal);
                    out[k] = anchor_w[k] + frac * (w1[k] - anchor_w[k]) + sign * sd * z;
                }
            }
            anchor_t = event.t;
            anchor_w.copy_from_slice(out);
        }

        let mut interval_piece = vec![0; events.len()];
        for e in 1..events.len() {
            interval_piece[e] = spec.piece_index_at(events[e - 1].t);
        }

        Ok(SimulatedPath {
            seed,
            index,
            antithetic,
            steps,
            dt: horizon / steps as f64,
            m,
            jump_times,
            events,
            w,
            grid_events,
            interval_piece,
            tie_shifts,
        })
    }

    pub fn w_at(&self, event: usize) -> &[f64] {
        &self.w[event * self.m..(event + 1) * self.m]
    }

    /// Per-step Brownian increments on the uniform grid (`steps x m`).
    pub fn grid_increments(&self) -> Vec<Vec<f64>> {
        self.grid_events
            .windows(2)
            .map(|pair| {
                let (a, b) = (self.w_at(pair[0]), self.w_at(pair[1]));
                b.iter().zip(a).map(|(b, a)| b - a).collect()
            })
            .collect()
    }

    pub fn terminal_event(&self) -> usize {
        self.events.len() - 1
    }

    pub fn jump_count(&self, process: usize) -> usize {
        self.jump_times[process].len()
    }
}

/// Smallest uniform grid on `[0, horizon]` (at most 10^6 steps) that contains
/// every requested time.
pub fn grid_steps_for(times: &[f64], horizon: f64) -> Result<usize> {
    if let Some(&bad) = times.iter().find(|&&t| !(t > 0.0 && t <= horizon)) {
        return Err(Error::InvalidArgument(format!(
            "time {bad} is outside (0, {horizon}]"
        )));
    }
    (1..=1_000_000usize)
        .find(|&n| {
            times.iter().all(|&t| {
                let x = t / horizon * n as f64;
                (x - x.round()).abs() < 1e-9
            })
        })
        .ok_or_else(|| Error::InvalidArgument("times do not lie on a common grid".into()))
}

/// Grid index of time `t` on a grid with `steps` steps over `[0, horizon]`.
pub fn grid_index(t: f64, horizon: f64, steps: usize) -> usize {
    (t / horizon * steps as f64).round() as usize
}
