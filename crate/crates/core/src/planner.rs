//! Construction of the optimal flux-constrained plan: violations of the
//! unconstrained flux, anchor optimization, saturation intervals and the
//! merge rule.

use std::cell::Cell;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraint::{
    feasibility, flux_at, normalize_instance, FeasibilityReport, NormalizedInstance,
    UnconstrainedProfile, VelocityProfile,
};
use crate::density::Density1D;
use crate::error::{Error, Result};
use crate::quadrature::integrate_pieces;
use crate::saturation::{
    find_departure_points, solve_vy, Departure, VelocityCurve, DEFAULT_ODE_STEPS,
};
use crate::unconstrained::{optimal_map, prolong_map, wasserstein2_sq, TransportMap, COST_TOL};

/// Solver knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanOptions {
    /// Points of the violation scan and of the output grid.
    pub grid: usize,
    pub max_intervals: usize,
    /// Amount `h` is lowered by after hitting the interval cap; `None`
    /// means `1e-3 * h`.
    pub epsilon_h: Option<f64>,
    pub max_h_retries: usize,
    /// Coarse bracketing points of the anchor search.
    pub scan_points: usize,
    pub anchor_tol: f64,
    /// Anchors stay this far left of the toll.
    pub toll_margin: f64,
    pub ode_steps: usize,
    /// Relative lower bound on the densities, as a fraction of their max.
    pub density_floor: f64,
    /// Evaluate scans right to left; results must not change.
    pub reverse_scan: bool,
}

impl Default for PlanOptions {
    fn default() -> Self {
        Self {
            grid: 4096,
            max_intervals: 64,
            epsilon_h: None,
            max_h_retries: 8,
            scan_points: 64,
            anchor_tol: 1e-8,
            toll_margin: 1e-6,
            ode_steps: DEFAULT_ODE_STEPS,
            density_floor: crate::density::DEFAULT_FLOOR,
            reverse_scan: false,
        }
    }
}

/// Per-particle cost `a^2 / tau + b^2 / (1 - tau)` of crossing at time `tau`
/// with `a = x0 - x` still to go before the toll and `b = T(x) - x0` after.
pub fn crossing_cost(a: f64, b: f64, tau: f64) -> f64 {
    if !(tau > 0.0 && tau < 1.0) {
        return f64::INFINITY;
    }
    a * a / tau + b * b / (1.0 - tau)
}

pub fn crossing_cost_slope(a: f64, b: f64, tau: f64) -> f64 {
    -a * a / (tau * tau) + b * b / ((1.0 - tau) * (1.0 - tau))
}

/// `J(v) = \int [v (x0 - x) + (T - x0)^2 / (1 - toll)] rho0 dx`.
pub fn cost_j<P: VelocityProfile + ?Sized>(p: &P, map: &TransportMap, x0: f64) -> Result<f64> {
    cost_j_with_breaks(p, map, x0, &[])
}

/// `cost_j` with extra points where `p` may have kinks.
pub fn cost_j_with_breaks<P: VelocityProfile + ?Sized>(
    p: &P,
    map: &TransportMap,
    x0: f64,
    breaks: &[f64],
) -> Result<f64> {
    let rho0 = map.source();
    let (a0, b0) = rho0.support();
    let overrun = Cell::new(None);
    let f = |x: f64| {
        let r = rho0.pdf(x);
        if r == 0.0 {
            return 0.0;
        }
        let v = p.speed(x);
        let a = x0 - x;
        let tau = a / v;
        if !(0.0..1.0).contains(&tau) {
            if overrun.get().is_none() {
                overrun.set(Some(x));
            }
            return 0.0;
        }
        let b = map.eval(x) - x0;
        (v * a + b * b / (1.0 - tau)) * r
    };
    let mut pts = map.breakpoints();
    pts.extend_from_slice(breaks);
    let j = integrate_pieces(&f, a0, b0, &pts, COST_TOL);
    match overrun.get() {
        Some(x) => Err(Error::TollOverrun(x)),
        None => Ok(j),
    }
}

/// Rightmost point below `right_limit` (inclusive when it is the right end of
/// the support) where the unconstrained flux exceeds `h`, located on a
/// `grid`-point scan and refined by bisection.
pub fn find_violation(
    map: &TransportMap,
    x0: f64,
    h: f64,
    right_limit: f64,
    grid: usize,
) -> Option<f64> {
    find_violation_ordered(map, x0, h, right_limit, grid, false)
}

fn find_violation_ordered(
    map: &TransportMap,
    x0: f64,
    h: f64,
    right_limit: f64,
    grid: usize,
    reverse: bool,
) -> Option<f64> {
    let rho0 = map.source();
    let (a0, b0) = rho0.support();
    let profile = UnconstrainedProfile { map };
    let violates = |x: f64| matches!(flux_at(&profile, rho0, x0, x), Ok(c) if c > h);
    let inclusive = right_limit >= b0;
    let limit = right_limit.min(b0);
    if limit <= a0 {
        return None;
    }
    let n = grid.max(2);
    let xs: Vec<f64> = (0..n)
        .map(|k| a0 + (b0 - a0) * k as f64 / (n - 1) as f64)
        .filter(|x| *x < limit)
        .chain(inclusive.then_some(limit))
        .collect();
    let flags: Vec<bool> = if reverse {
        let mut f: Vec<bool> = xs.iter().rev().map(|x| violates(*x)).collect();
        f.reverse();
        f
    } else {
        xs.iter().map(|x| violates(*x)).collect()
    };
    let k = flags.iter().rposition(|f| *f)?;
    if k + 1 == xs.len() {
        if inclusive {
            return Some(xs[k]);
        }
        if violates(limit) {
            return Some(limit);
        }
    }
    let mut lo = xs[k];
    let mut hi = if k + 1 < xs.len() { xs[k + 1] } else { limit };
    while hi - lo > 1e-12 {
        let m = 0.5 * (lo + hi);
        if m <= lo || m >= hi {
            break;
        }
        if violates(m) {
            lo = m;
        } else {
            hi = m;
        }
    }
    Some(lo)
}

/// A candidate anchor together with its saturated curve.
#[derive(Debug, Clone)]
pub struct Anchor {
    pub y: f64,
    pub curve: VelocityCurve,
    /// `z` is `-inf` when the curve stays above `T - Id` on the whole
    /// support.
    pub departure: Departure,
    /// `J_x(y)`.
    pub cost: f64,
}

/// One saturation interval `(z, y)`.
#[derive(Debug, Clone)]
pub struct SaturationInterval {
    pub z: f64,
    pub w: f64,
    pub y: f64,
    /// Lower end of the anchor search.
    pub x_search: f64,
    /// Violation point the departure scan started from.
    pub x_depart: f64,
    /// Result of merging with at least one earlier interval.
    pub merged: bool,
    pub curve: VelocityCurve,
}

impl SaturationInterval {
    pub fn contains(&self, x: f64) -> bool {
        x > self.z && x < self.y
    }
}

/// Fixed instance data shared by the construction steps.
#[derive(Debug, Clone)]
pub struct Planner {
    map: TransportMap,
    x0: f64,
    h: f64,
    opts: PlanOptions,
    w2: f64,
}

impl Planner {
    pub fn new(rho0: &Density1D, rho1: &Density1D, x0: f64, h: f64, opts: PlanOptions) -> Self {
        let map = prolong_map(&optimal_map(rho0, rho1));
        let w2 = wasserstein2_sq(&map);
        Self {
            map,
            x0,
            h,
            opts,
            w2,
        }
    }

    pub fn map(&self) -> &TransportMap {
        &self.map
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    fn with_h(&self, h: f64) -> Self {
        Self { h, ..self.clone() }
    }

    pub fn find_violation(&self, right_limit: f64) -> Option<f64> {
        find_violation_ordered(
            &self.map,
            self.x0,
            self.h,
            right_limit,
            self.opts.grid,
            self.opts.reverse_scan,
        )
    }

    fn splice_range(&self, dep: &Departure, y: f64) -> (f64, f64) {
        let (a0, b0) = self.map.source().support();
        (dep.z.max(a0), y.min(b0))
    }

    /// Curve and departure points for the anchor `y`, departing from
    /// `x_depart`.
    fn curve_for(&self, x_depart: f64, y: f64) -> Result<(VelocityCurve, Departure)> {
        let (a0, _) = self.map.source().support();
        let curve = solve_vy(&self.map, self.x0, self.h, y, a0 - 1.0, self.opts.ode_steps)?;
        let dep = match find_departure_points(&curve, &self.map, x_depart.min(y)) {
            Ok(d) => d,
            Err(Error::NoDeparture(_)) if curve.reaches_start() => Departure {
                w: f64::NEG_INFINITY,
                z: f64::NEG_INFINITY,
            },
            Err(e) => return Err(e),
        };
        Ok((curve, dep))
    }

    fn splice_cost(&self, curve: &VelocityCurve, dep: &Departure, y: f64) -> f64 {
        let (lo, hi) = self.splice_range(dep, y);
        if !(lo < hi) {
            return self.w2;
        }
        if curve.toll(lo) >= 1.0 {
            return f64::INFINITY;
        }
        let rho0 = self.map.source();
        let x0 = self.x0;
        let f = |x: f64| {
            let r = rho0.pdf(x);
            if r == 0.0 {
                return 0.0;
            }
            let t = self.map.eval(x);
            let (a, b) = (x0 - x, t - x0);
            (crossing_cost(a, b, curve.toll(x)) - (t - x) * (t - x)) * r
        };
        self.w2 + integrate_pieces(&f, lo, hi, &self.map.breakpoints(), COST_TOL)
    }

    pub fn evaluate(&self, x_depart: f64, y: f64) -> Result<Anchor> {
        let (curve, departure) = self.curve_for(x_depart, y)?;
        let cost = self.splice_cost(&curve, &departure, y);
        Ok(Anchor {
            y,
            curve,
            departure,
            cost,
        })
    }

    /// `J_x(y)`: cost of `T - Id` with `v_y` spliced in on `[z_y, y]`.
    pub fn cost_jx(&self, x_anchor: f64, y: f64) -> Result<f64> {
        Ok(self.evaluate(x_anchor, y)?.cost)
    }

    /// First-order condition of `J_x` in `y`: the integral of the slope of
    /// the crossing cost over the spliced range. `J_x'(y)` is this times a
    /// factor that does not vanish right of the violation.
    pub fn stationarity(&self, x_anchor: f64, y: f64) -> Result<f64> {
        let (curve, dep) = self.curve_for(x_anchor, y)?;
        let (lo, hi) = self.splice_range(&dep, y);
        if !(lo < hi) {
            return Ok(0.0);
        }
        if curve.toll(lo) >= 1.0 {
            return Err(Error::TollOverrun(lo));
        }
        let rho0 = self.map.source();
        let x0 = self.x0;
        let f = |x: f64| {
            let r = rho0.pdf(x);
            if r == 0.0 {
                return 0.0;
            }
            crossing_cost_slope(x0 - x, self.map.eval(x) - x0, curve.toll(x)) * r
        };
        Ok(integrate_pieces(&f, lo, hi, &self.map.breakpoints(), 1e-12))
    }

    fn scan_cost(&self, x_depart: f64, y: f64) -> f64 {
        match self.evaluate(x_depart, y) {
            Ok(a) if a.cost.is_finite() => a.cost,
            _ => f64::INFINITY,
        }
    }

    /// Minimizer of `J_x` over `[lower, x0 - toll_margin]`.
    pub fn optimize_anchor(&self, x_depart: f64, lower: f64) -> Result<Anchor> {
        let hi = self.x0 - self.opts.toll_margin;
        if lower.is_nan() || lower > self.x0 {
            return Err(Error::InvalidArgument(format!(
                "anchor search range [{lower}, {hi}] is empty"
            )));
        }
        if lower >= hi {
            // violation at the toll itself
            return self.evaluate(x_depart, hi);
        }
        let n = self.opts.scan_points.max(3);
        let ys: Vec<f64> = (0..n)
            .map(|k| {
                if k + 1 == n {
                    hi
                } else {
                    lower + (hi - lower) * k as f64 / (n - 1) as f64
                }
            })
            .collect();
        let costs: Vec<f64> = if self.opts.reverse_scan {
            let mut c: Vec<f64> = ys
                .par_iter()
                .rev()
                .map(|y| self.scan_cost(x_depart, *y))
                .collect();
            c.reverse();
            c
        } else {
            ys.par_iter()
                .map(|y| self.scan_cost(x_depart, *y))
                .collect()
        };
        let mut k = 0;
        for (i, c) in costs.iter().enumerate() {
            if *c < costs[k] {
                k = i;
            }
        }
        if !costs[k].is_finite() {
            return Err(Error::TollOverrun(x_depart));
        }
        let a = ys[k.saturating_sub(1)];
        let b = ys[(k + 1).min(n - 1)];
        let (mut y, mut best) =
            golden_section(|y| self.scan_cost(x_depart, y), a, b, self.opts.anchor_tol);
        if costs[k] < best {
            y = ys[k];
            best = costs[k];
        }

        // polish on the first-order condition when it brackets a root
        let g = |y: f64| self.stationarity(x_depart, y).unwrap_or(f64::NAN);
        let (mut lo, mut up) = (a, b);
        let (glo, gup) = (g(lo), g(up));
        if glo.is_finite() && gup.is_finite() && glo * gup < 0.0 {
            let lo_sign = glo.signum();
            for _ in 0..200 {
                let m = 0.5 * (lo + up);
                if m <= lo || m >= up {
                    break;
                }
                let gm = g(m);
                if !gm.is_finite() {
                    break;
                }
                if gm.signum() == lo_sign {
                    lo = m;
                } else {
                    up = m;
                }
            }
            let yp = 0.5 * (lo + up);
            let cp = self.scan_cost(x_depart, yp);
            if cp <= best + 10.0 * COST_TOL {
                y = yp;
            }
        }
        self.evaluate(x_depart, y)
    }

    fn construct(&self) -> Result<(Vec<SaturationInterval>, usize)> {
        let (_, b0) = self.map.source().support();
        let (a0, _) = self.map.source().support();
        let mut stack: Vec<SaturationInterval> = Vec::new();
        let mut right_limit = b0;
        let mut iterations = 0;
        while let Some(x) = self.find_violation(right_limit) {
            iterations += 1;
            if iterations > self.opts.max_intervals {
                return Err(Error::CapExceeded(self.opts.max_intervals));
            }
            let mut lower = x;
            let mut merged = false;
            let anchor = loop {
                let a = self.optimize_anchor(x, lower)?;
                match stack.last() {
                    Some(top) if a.y > top.z => {
                        lower = top.x_search;
                        merged = true;
                        stack.pop();
                    }
                    _ => break a,
                }
            };
            let z = anchor.departure.z;
            stack.push(SaturationInterval {
                z,
                w: anchor.departure.w,
                y: anchor.y,
                x_search: lower,
                x_depart: x,
                merged,
                curve: anchor.curve,
            });
            if z <= a0 {
                break;
            }
            right_limit = z;
        }
        Ok((stack, iterations))
    }
}

/// Golden-section search for a minimum of `f` on `[a, b]`.
pub fn golden_section(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> (f64, f64) {
    let inv = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (a, b);
    let mut c = b - inv * (b - a);
    let mut d = a + inv * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Solved flux-constrained plan on a normalized instance.
#[derive(Debug, Clone)]
pub struct TransportPlan {
    pub rho0: Density1D,
    pub rho1: Density1D,
    pub x0: f64,
    /// Flux bound the plan was built with.
    pub h: f64,
    /// Flux bound asked for; larger than `h` after cap retries.
    pub h_requested: f64,
    /// Prolonged unconstrained map.
    pub map: TransportMap,
    /// Saturation intervals, right to left.
    pub intervals: Vec<SaturationInterval>,
    pub gamma0: f64,
    pub gamma1: f64,
    pub cost_j: f64,
    pub w2_sq: f64,
    pub iterations: usize,
    pub terminated_by_cap: bool,
}

impl TransportPlan {
    fn interval_at(&self, x: f64) -> Option<&SaturationInterval> {
        self.intervals.iter().find(|i| i.contains(x))
    }

    /// `v*(x)`.
    pub fn v_star(&self, x: f64) -> f64 {
        match self.interval_at(x) {
            Some(i) => i.curve.eval(x),
            None => self.map.prolonged_eval(x) - x,
        }
    }

    pub fn toll(&self, x: f64) -> f64 {
        (self.x0 - x) / self.v_star(x)
    }

    pub fn is_saturated(&self, x: f64) -> bool {
        self.interval_at(x).is_some()
    }

    /// `T(x)` on the source support.
    pub fn target_of(&self, x: f64) -> f64 {
        self.map.eval(x)
    }

    /// Speed after the toll, `(T(x) - x0) / (1 - toll(x))`.
    pub fn post_toll_speed(&self, x: f64) -> f64 {
        (self.map.eval(x) - self.x0) / (1.0 - self.toll(x))
    }

    /// The saturated set `E` is empty.
    pub fn is_unconstrained(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn support(&self) -> (f64, f64) {
        self.rho0.support()
    }

    fn kinks(&self) -> Vec<f64> {
        self.intervals
            .iter()
            .flat_map(|i| [i.z, i.w, i.y])
            .filter(|x| x.is_finite())
            .collect()
    }
}

impl VelocityProfile for TransportPlan {
    fn speed(&self, x: f64) -> f64 {
        self.v_star(x)
    }

    fn speed_slope(&self, x: f64) -> f64 {
        match self.interval_at(x) {
            Some(i) => i.curve.slope(x),
            None => self.map.derivative(x) - 1.0,
        }
    }
}

/// Builds the plan for a normalized instance: all mass of `rho0` crosses
/// `x0` from left to right.
pub fn build_plan(
    rho0: &Density1D,
    rho1: &Density1D,
    x0: f64,
    h: f64,
    opts: &PlanOptions,
) -> Result<TransportPlan> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "flux bound h = {h} must be positive"
        )));
    }
    for d in [rho0, rho1] {
        if !d.is_bounded_below(opts.density_floor) {
            return Err(Error::NotBoundedBelow {
                min: d.interior_min(),
                floor: opts.density_floor * d.max_density(),
            });
        }
    }
    let planner = Planner::new(rho0, rho1, x0, h, opts.clone());
    let report = feasibility(&planner.map, x0, h);
    if !report.feasible {
        return Err(Error::Infeasible {
            h,
            omega_mass: report.omega_mass,
        });
    }
    if report.backward.is_some() || (report.forward_mass - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(
            "instance is not normalized: all mass must cross the toll left to right".into(),
        ));
    }

    let eps = opts.epsilon_h.unwrap_or(1e-3 * h);
    let mut h_cur = h;
    let mut hit_cap = false;
    for _ in 0..=opts.max_h_retries {
        let p = planner.with_h(h_cur);
        match p.construct() {
            Ok((intervals, iterations)) => return finish(p, intervals, iterations, h, hit_cap),
            Err(Error::CapExceeded(_)) => {
                hit_cap = true;
                h_cur -= eps;
                if !(h_cur > report.omega_mass) {
                    break;
                }
            }
            Err(e) => return Err(e),
        }
    }
    Err(Error::CapExceeded(opts.max_intervals))
}

fn finish(
    p: Planner,
    intervals: Vec<SaturationInterval>,
    iterations: usize,
    h_requested: f64,
    terminated_by_cap: bool,
) -> Result<TransportPlan> {
    let mut plan = TransportPlan {
        rho0: p.map.source().clone(),
        rho1: p.map.target().clone(),
        x0: p.x0,
        h: p.h,
        h_requested,
        map: p.map,
        intervals,
        gamma0: 0.0,
        gamma1: 0.0,
        cost_j: p.w2,
        w2_sq: p.w2,
        iterations,
        terminated_by_cap,
    };
    let (a0, b0) = plan.rho0.support();
    let (a1, b1) = plan.rho1.support();
    plan.gamma0 = plan.x0 - plan.toll(a0) * (a1 - a0);
    plan.gamma1 = plan.x0 - plan.toll(b0) * (b1 - b0);
    if !plan.intervals.is_empty() {
        let kinks = plan.kinks();
        plan.cost_j = cost_j_with_breaks(&plan, &plan.map, plan.x0, &kinks)?;
    }
    Ok(plan)
}

/// Plan for an arbitrary instance, including the pieces that map it to and
/// from the normalized problem.
#[derive(Debug, Clone)]
pub struct Solution {
    pub feasibility: FeasibilityReport,
    /// Crossing part of the instance; `None` when nothing crosses.
    pub instance: Option<NormalizedInstance>,
    pub plan: Option<TransportPlan>,
    /// Unconstrained map of the original instance.
    pub map: TransportMap,
    pub x0: f64,
    pub h: f64,
}

impl Solution {
    /// Total cost in original units: the crossing mass pays the plan cost,
    /// the rest moves in straight lines.
    pub fn total_cost(&self) -> f64 {
        let w2 = wasserstein2_sq(&self.map);
        match (&self.instance, &self.plan) {
            (Some(inst), Some(plan)) => w2 + inst.mass * (plan.cost_j - plan.w2_sq),
            _ => w2,
        }
    }
}

pub fn solve(
    rho0: &Density1D,
    rho1: &Density1D,
    x0: f64,
    h: f64,
    opts: &PlanOptions,
) -> Result<Solution> {
    let map = optimal_map(rho0, rho1);
    let report = feasibility(&map, x0, h);
    if !report.feasible {
        return Err(Error::Infeasible {
            h,
            omega_mass: report.omega_mass,
        });
    }
    let instance = normalize_instance(&map, x0)?;
    let plan = match &instance {
        Some(inst) => Some(build_plan(&inst.rho0, &inst.rho1, x0, h / inst.mass, opts)?),
        None => None,
    };
    Ok(Solution {
        feasibility: report,
        instance,
        plan,
        map,
        x0,
        h,
    })
}
