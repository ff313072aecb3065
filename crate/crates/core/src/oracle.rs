//! Brute-force check of a plan: equal-mass particles, each crossing the toll
//! once, with consecutive crossings at least `m / h` apart.
//!
//! With `s_i = t_i + i m / h` the gap constraints say `s` is nonincreasing,
//! and the objective is separable and convex in `s`. Pool-adjacent-violators
//! with an exact one-dimensional solve per pooled block therefore returns
//! the global optimum.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::planner::{crossing_cost, crossing_cost_slope, TransportPlan};
use crate::unconstrained::TransportMap;

/// Crossing times are kept inside `[T_MIN, 1 - T_MIN]`.
pub const T_MIN: f64 = 1e-9;

/// Tolerance on a gap to count as active.
const ACTIVE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParticleSystem {
    pub n: usize,
    /// Mass of each particle.
    pub mass: f64,
    pub x0: f64,
    pub h: f64,
    /// Quantile midpoints of `rho0`, ascending.
    pub x: Vec<f64>,
    pub target: Vec<f64>,
    /// Crossing times, decreasing.
    pub t: Vec<f64>,
}

impl ParticleSystem {
    fn a(&self, i: usize) -> f64 {
        self.x0 - self.x[i]
    }

    fn b(&self, i: usize) -> f64 {
        self.target[i] - self.x0
    }

    fn shift(&self, i: usize) -> f64 {
        i as f64 * self.mass / self.h
    }

    /// `sum_i m [a_i^2 / t_i + b_i^2 / (1 - t_i)]`.
    pub fn cost(&self) -> f64 {
        (0..self.n)
            .map(|i| self.mass * crossing_cost(self.a(i), self.b(i), self.t[i]))
            .sum()
    }

    /// Smallest `t_i - t_{i+1} - m / h`.
    pub fn min_gap_slack(&self) -> f64 {
        self.t
            .windows(2)
            .map(|w| w[0] - w[1] - self.mass / self.h)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Particles at `x_i = F0^{-1}((i - 1/2) / n)` with the unconstrained
/// crossing times projected onto the gap constraints.
pub fn discretize(map: &TransportMap, x0: f64, h: f64, n: usize) -> Result<ParticleSystem> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one particle".into()));
    }
    let rho0 = map.source();
    let x: Vec<f64> = (0..n)
        .map(|i| rho0.quantile_unchecked((i as f64 + 0.5) / n as f64))
        .collect();
    let target: Vec<f64> = x.iter().map(|x| map.eval(*x)).collect();
    let mut ps = ParticleSystem {
        n,
        mass: 1.0 / n as f64,
        x0,
        h,
        x,
        target,
        t: vec![0.0; n],
    };
    let s: Vec<f64> = (0..n)
        .map(|i| {
            let (a, b) = (ps.a(i), ps.b(i));
            a / (a + b) + ps.shift(i)
        })
        .collect();
    let s = antitonic_mean(&s);
    ps.t = (0..n)
        .map(|i| (s[i] - ps.shift(i)).clamp(T_MIN, 1.0 - T_MIN))
        .collect();
    Ok(ps)
}

/// Euclidean projection onto nonincreasing sequences.
fn antitonic_mean(s: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, usize)> = Vec::new();
    for v in s {
        blocks.push((*v, 1));
        while blocks.len() > 1 {
            let (m2, c2) = blocks[blocks.len() - 1];
            let (m1, c1) = blocks[blocks.len() - 2];
            if m1 >= m2 {
                break;
            }
            blocks.pop();
            let c = c1 + c2;
            *blocks.last_mut().unwrap() = ((m1 * c1 as f64 + m2 * c2 as f64) / c as f64, c);
        }
    }
    blocks
        .into_iter()
        .flat_map(|(m, c)| std::iter::repeat_n(m, c))
        .collect()
}

#[derive(Debug, Clone, Copy)]
struct Block {
    start: usize,
    end: usize,
    s: f64,
}

/// Common `s` of the particles `start..=end` minimizing their joint cost.
fn block_optimum(ps: &ParticleSystem, start: usize, end: usize) -> f64 {
    let g = |s: f64| -> f64 {
        (start..=end)
            .map(|i| crossing_cost_slope(ps.a(i), ps.b(i), s - ps.shift(i)))
            .sum()
    };
    let mut lo = ps.shift(end) + T_MIN;
    let mut hi = 1.0 + ps.shift(start) - T_MIN;
    if g(lo) >= 0.0 {
        return lo;
    }
    if g(hi) <= 0.0 {
        return hi;
    }
    loop {
        let m = 0.5 * (lo + hi);
        if m <= lo || m >= hi {
            return m;
        }
        if g(m) < 0.0 {
            lo = m;
        } else {
            hi = m;
        }
    }
}

pub fn solve_crossing_times(ps: &ParticleSystem) -> Result<ParticleSystem> {
    let span = (ps.n as f64 - 1.0) * ps.mass / ps.h;
    if span >= 1.0 {
        return Err(Error::InfeasibleDiscrete(span));
    }
    let mut blocks: Vec<Block> = Vec::with_capacity(ps.n);
    for i in 0..ps.n {
        blocks.push(Block {
            start: i,
            end: i,
            s: block_optimum(ps, i, i),
        });
        while blocks.len() > 1 {
            let top = blocks[blocks.len() - 1];
            let below = blocks[blocks.len() - 2];
            if below.s >= top.s {
                break;
            }
            blocks.pop();
            let merged = blocks.last_mut().unwrap();
            merged.end = top.end;
            merged.s = block_optimum(ps, merged.start, merged.end);
        }
    }
    let mut out = ps.clone();
    for b in &blocks {
        for i in b.start..=b.end {
            out.t[i] = (b.s - ps.shift(i)).clamp(T_MIN, 1.0 - T_MIN);
        }
    }
    Ok(out)
}

/// Largest violation of the optimality conditions, in units of the
/// per-particle derivative: free particles must be stationary, and on every
/// maximal chain of active gaps the running sums of derivatives (the
/// multipliers) must be nonnegative and end at zero.
pub fn kkt_residual(ps: &ParticleSystem) -> f64 {
    let g: Vec<f64> = (0..ps.n)
        .map(|i| crossing_cost_slope(ps.a(i), ps.b(i), ps.t[i]))
        .collect();
    let gap = ps.mass / ps.h;
    let mut worst: f64 = 0.0;
    let mut run = 0.0;
    for (i, gi) in g.iter().enumerate() {
        run += gi;
        let active = i + 1 < ps.n && ps.t[i] - ps.t[i + 1] - gap <= ACTIVE_TOL;
        if active {
            worst = worst.max(-run);
        } else {
            worst = worst.max(run.abs());
            run = 0.0;
        }
    }
    worst
}

/// Flux through the toll on `bins` equal time bins. Each particle passes
/// during a window of width `m / h` centred at its crossing time (moved
/// inside `[0, 1]` if needed), at rate `h`.
pub fn reconstruct_flux(ps: &ParticleSystem, bins: usize) -> Vec<f64> {
    let width = 1.0 / bins as f64;
    let win = ps.mass / ps.h;
    let mut out = vec![0.0; bins];
    for t in &ps.t {
        let lo = (t - 0.5 * win).clamp(0.0, 1.0 - win);
        let hi = lo + win;
        let first = ((lo / width).floor() as usize).min(bins - 1);
        let last = ((hi / width).ceil() as usize).min(bins);
        for (b, slot) in out.iter_mut().enumerate().take(last).skip(first) {
            let (bl, br) = (b as f64 * width, (b + 1) as f64 * width);
            let overlap = (hi.min(br) - lo.max(bl)).max(0.0);
            *slot += ps.h * overlap / width;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub n: usize,
    pub oracle_cost: f64,
    pub plan_cost: f64,
    pub cost_gap: f64,
    /// `max_i |toll_plan(x_i) - t_i|`.
    pub sup_toll_gap: f64,
    pub kkt_residual: f64,
}

pub fn compare(plan: &TransportPlan, ps: &ParticleSystem) -> OracleReport {
    let sup_toll_gap =
        ps.x.iter()
            .zip(&ps.t)
            .map(|(x, t)| (plan.toll(*x) - t).abs())
            .fold(0.0, f64::max);
    let oracle_cost = ps.cost();
    OracleReport {
        n: ps.n,
        oracle_cost,
        plan_cost: plan.cost_j,
        cost_gap: (oracle_cost - plan.cost_j).abs(),
        sup_toll_gap,
        kkt_residual: kkt_residual(ps),
    }
}

/// Discretizes, solves and compares in one go.
pub fn run_oracle(plan: &TransportPlan, n: usize) -> Result<(ParticleSystem, OracleReport)> {
    let ps = discretize(&plan.map, plan.x0, plan.h, n)?;
    let ps = solve_crossing_times(&ps)?;
    let report = compare(plan, &ps);
    Ok((ps, report))
}
