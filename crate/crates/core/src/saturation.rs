//! Backward integration of the saturation ODE
//!
//! ```text
//! v' = (v^2 rho0 - h v) / (h (x0 - x)),    v(y) = T(y) - y
//! ```
//!
//! and the points where the saturated curve leaves the unconstrained speed
//! `T - Id`.
//!
//! The curve is integrated in the reciprocal `u = 1/v`, for which the
//! equation is linear, `u' = (u - rho0 / h) / (x0 - x)`.

use crate::constraint::VelocityProfile;
use crate::error::{Error, Result};
use crate::unconstrained::TransportMap;

/// RK4 steps across the width of the source support.
pub const DEFAULT_ODE_STEPS: usize = 4096;
/// Admissible speed range; leaving it is reported as a blow-up.
pub const V_FLOOR: f64 = 1e-12;
pub const V_CAP: f64 = 1e12;
/// Anchors closer than this to the toll are rejected.
pub const TOLL_GUARD: f64 = 1e-9;

const ROOT_TOL: f64 = 1e-10;

/// Solution `v_y` of the saturation ODE anchored at `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityCurve {
    anchor: f64,
    x0: f64,
    h: f64,
    /// Ascending nodes of the stretch integrated inside the source support.
    nodes: Vec<f64>,
    recip: Vec<f64>,
    recip_slope: Vec<f64>,
    /// Toll at the anchor; constant on the density-free stretch right of
    /// the support.
    toll_anchor: f64,
    /// Integrated stretch `[lo, hi]`.
    lo: f64,
    hi: f64,
    /// Integration reached the left end of the support, so the curve
    /// continues as `v = (x0 - x) / toll(alpha0)` beyond it.
    reaches_start: bool,
    alpha0: f64,
    /// Richardson estimate of the relative error in `v`.
    pub error_estimate: f64,
}

fn rhs(rho0: &crate::density::Density1D, x0: f64, h: f64, x: f64, u: f64) -> f64 {
    (u - rho0.pdf(x) / h) / (x0 - x)
}

/// RK4 from `hi` down to `lo` in `n` steps; returns values at the n + 1
/// equally spaced nodes, descending.
fn rk4_leg(
    rho0: &crate::density::Density1D,
    x0: f64,
    h: f64,
    hi: f64,
    lo: f64,
    u_hi: f64,
    n: usize,
) -> Vec<f64> {
    let step = -(hi - lo) / n as f64;
    let mut out = Vec::with_capacity(n + 1);
    let mut u = u_hi;
    out.push(u);
    for k in 0..n {
        let x = hi + k as f64 * step;
        let x_next = if k + 1 == n {
            lo
        } else {
            hi + (k + 1) as f64 * step
        };
        let xm = 0.5 * (x + x_next);
        let k1 = rhs(rho0, x0, h, x, u);
        let k2 = rhs(rho0, x0, h, xm, u + 0.5 * step * k1);
        let k3 = rhs(rho0, x0, h, xm, u + 0.5 * step * k2);
        let k4 = rhs(rho0, x0, h, x_next, u + step * k3);
        u += step / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        out.push(u);
    }
    out
}

/// Integrates `v_y` from the anchor `y` down to `x_stop` (or to the left end
/// of the support, whichever comes first). `steps` RK4 steps span the
/// support width.
pub fn solve_vy(
    map: &TransportMap,
    x0: f64,
    h: f64,
    y: f64,
    x_stop: f64,
    steps: usize,
) -> Result<VelocityCurve> {
    if y >= x0 - TOLL_GUARD {
        return Err(Error::SingularToll(y));
    }
    if !(x_stop < y) {
        return Err(Error::InvalidArgument(format!(
            "x_stop {x_stop} must lie left of the anchor {y}"
        )));
    }
    let v_y = map.prolonged_eval(y) - y;
    if !(v_y > V_FLOOR && v_y < V_CAP) {
        return Err(Error::BlowUp { x: y, v: v_y });
    }
    let rho0 = map.source();
    let (a0, b0) = rho0.support();
    let toll_anchor = (x0 - y) / v_y;
    let hi = y.min(b0);
    let lo = x_stop.max(a0);

    let mut curve = VelocityCurve {
        anchor: y,
        x0,
        h,
        nodes: Vec::new(),
        recip: Vec::new(),
        recip_slope: Vec::new(),
        toll_anchor,
        lo: hi,
        hi,
        reaches_start: false,
        alpha0: a0,
        error_estimate: 0.0,
    };
    if !(lo < hi) {
        curve.lo = hi.max(lo).min(hi);
        curve.reaches_start = hi <= a0;
        if curve.reaches_start {
            curve.lo = a0;
        }
        return Ok(curve);
    }

    let dx = (b0 - a0) / steps.max(1) as f64;
    let mut cuts: Vec<f64> = rho0
        .breakpoints()
        .into_iter()
        .filter(|b| *b > lo && *b < hi)
        .collect();
    cuts.push(lo);
    cuts.push(hi);
    cuts.sort_by(|a, b| b.partial_cmp(a).unwrap());

    let mut xs = vec![hi];
    let mut us = vec![toll_anchor / (x0 - hi)];
    let mut err: f64 = 0.0;
    for w in cuts.windows(2) {
        let (top, bottom) = (w[0], w[1]);
        let n = ((top - bottom) / dx).ceil().max(1.0) as usize;
        let u_top = *us.last().unwrap();
        let coarse = rk4_leg(rho0, x0, h, top, bottom, u_top, n);
        let fine = rk4_leg(rho0, x0, h, top, bottom, u_top, 2 * n);
        for k in 1..=n {
            let uf = fine[2 * k];
            err = err.max((coarse[k] - uf).abs() / 15.0 / uf.abs());
            let x = if k == n {
                bottom
            } else {
                top - (top - bottom) * k as f64 / n as f64
            };
            xs.push(x);
            us.push(uf);
        }
    }
    for (x, u) in xs.iter().zip(&us) {
        let v = 1.0 / u;
        if !(v > V_FLOOR && v < V_CAP) {
            return Err(Error::BlowUp { x: *x, v });
        }
    }
    xs.reverse();
    us.reverse();
    curve.recip_slope = xs
        .iter()
        .zip(&us)
        .map(|(x, u)| rhs(rho0, x0, h, *x, *u))
        .collect();
    curve.nodes = xs;
    curve.recip = us;
    curve.lo = lo;
    curve.reaches_start = lo <= a0;
    curve.error_estimate = err;
    Ok(curve)
}

impl VelocityCurve {
    pub fn anchor(&self) -> f64 {
        self.anchor
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Left end of the range on which the curve is known.
    pub fn left_end(&self) -> f64 {
        if self.reaches_start {
            f64::NEG_INFINITY
        } else {
            self.lo
        }
    }

    pub fn reaches_start(&self) -> bool {
        self.reaches_start
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// `v_y` at the nodes.
    pub fn values(&self) -> Vec<f64> {
        self.recip.iter().map(|u| 1.0 / u).collect()
    }

    /// Toll at the left end of the integrated stretch.
    pub fn toll_left(&self) -> f64 {
        match self.recip.first() {
            Some(u) => u * (self.x0 - self.lo),
            None => self.toll_anchor,
        }
    }

    pub fn toll_at_anchor(&self) -> f64 {
        self.toll_anchor
    }

    /// `(1/v, (1/v)')` inside the integrated stretch by cubic Hermite
    /// interpolation.
    fn recip_at(&self, x: f64) -> (f64, f64) {
        let n = self.nodes.len();
        let i = self.nodes.partition_point(|p| *p <= x).clamp(1, n - 1) - 1;
        let (xa, xb) = (self.nodes[i], self.nodes[i + 1]);
        let w = xb - xa;
        let s = (x - xa) / w;
        let (ua, ub) = (self.recip[i], self.recip[i + 1]);
        let (ma, mb) = (self.recip_slope[i] * w, self.recip_slope[i + 1] * w);
        // cubic Hermite, expanded about the nearer node
        let c3 = 2.0 * (ua - ub) + ma + mb;
        let (u0, m0, c2, t) = if s <= 0.5 {
            (ua, ma, 3.0 * (ub - ua) - 2.0 * ma - mb, s)
        } else {
            (ub, mb, 3.0 * (ua - ub) + ma + 2.0 * mb, s - 1.0)
        };
        let val = u0 + t * (m0 + t * (c2 + t * c3));
        let der = (m0 + t * (2.0 * c2 + 3.0 * t * c3)) / w;
        (val, der)
    }

    /// Toll time of the mass starting at `x`.
    pub fn toll(&self, x: f64) -> f64 {
        if x >= self.hi || self.nodes.is_empty() {
            if x >= self.hi {
                return self.toll_anchor;
            }
            return self.toll_left();
        }
        if x <= self.lo {
            return self.toll_left();
        }
        self.recip_at(x).0 * (self.x0 - x)
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.x0 - x) / self.toll(x)
    }

    pub fn slope(&self, x: f64) -> f64 {
        if x >= self.hi || x <= self.lo || self.nodes.is_empty() {
            return -1.0 / self.toll(x);
        }
        let (u, du) = self.recip_at(x);
        -du / (u * u)
    }
}

impl VelocityProfile for VelocityCurve {
    fn speed(&self, x: f64) -> f64 {
        self.eval(x)
    }

    fn speed_slope(&self, x: f64) -> f64 {
        self.slope(x)
    }

    fn toll(&self, _x0: f64, x: f64) -> f64 {
        VelocityCurve::toll(self, x)
    }
}

/// Where the saturated curve leaves `T - Id` going left from the violation
/// point: `v_y >= T - Id` on `(w, x_start)` and `v_y < T - Id` on `(z, w)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Departure {
    pub w: f64,
    pub z: f64,
}

fn refine(d: &impl Fn(f64) -> f64, mut neg: f64, mut nonneg: f64) -> f64 {
    while (nonneg - neg).abs() > ROOT_TOL * 1e-2 {
        let m = 0.5 * (neg + nonneg);
        if m == neg || m == nonneg {
            break;
        }
        if d(m) < 0.0 {
            neg = m;
        } else {
            nonneg = m;
        }
    }
    0.5 * (neg + nonneg)
}

pub fn find_departure_points(
    curve: &VelocityCurve,
    map: &TransportMap,
    x_start: f64,
) -> Result<Departure> {
    let d = |x: f64| curve.eval(x) - (map.prolonged_eval(x) - x);
    let tol = |x: f64| ROOT_TOL * (1.0 + (map.prolonged_eval(x) - x).abs());

    let mut pts = vec![x_start];
    pts.extend(curve.nodes.iter().rev().cloned().filter(|p| *p < x_start));

    // phase 1: first point where the curve drops below T - Id
    let mut w = None;
    let mut idx = 0;
    if d(x_start) < -tol(x_start) {
        w = Some(x_start);
    } else {
        for k in 1..pts.len() {
            if d(pts[k]) < -tol(pts[k]) {
                w = Some(refine(&d, pts[k], pts[k - 1]));
                idx = k;
                break;
            }
        }
    }
    let Some(w) = w else {
        return Err(Error::NoDeparture(curve.left_end().max(curve.alpha0)));
    };

    // phase 2: first point left of w where it is back above
    for k in idx + 1..pts.len() {
        if d(pts[k]) >= 0.0 {
            let z = refine(&d, pts[k - 1].min(w), pts[k]);
            return Ok(Departure { w, z: z.min(w) });
        }
    }
    if curve.reaches_start {
        // v = (x0 - x) / toll_left against T^+ - x = alpha1 - alpha0
        let (a0, _) = map.source().support();
        let (a1, _) = map.target().support();
        let z = curve.x0 - curve.toll_left() * (a1 - a0);
        return Ok(Departure { w, z: z.min(w) });
    }
    Err(Error::NoDeparture(curve.lo))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraint::flux_alt_at;
    use crate::density::Density1D;
    use crate::unconstrained::{optimal_map, prolong_map};
    use approx::assert_abs_diff_eq;

    fn u(a: f64, b: f64) -> Density1D {
        Density1D::uniform(a, b).unwrap()
    }

    fn example_map() -> TransportMap {
        prolong_map(&optimal_map(&u(0.0, 1.0), &u(2.0, 3.0)))
    }

    fn closed_form(x: f64) -> f64 {
        1.5 * (2.0 * x - 3.0) / (2.0 * x - 2.5)
    }

    /// toll = toll(y) + (F0(y) - F0(x)) / h solves the same equation.
    fn exact_toll(map: &TransportMap, x0: f64, h: f64, y: f64, x: f64) -> f64 {
        let r = map.source();
        (x0 - y) / (map.prolonged_eval(y) - y) + (r.cdf(y) - r.cdf(x)) / h
    }

    #[test]
    fn reproduces_closed_form() {
        let m = example_map();
        let c = solve_vy(&m, 1.5, 1.5, 7.0 / 6.0, -1.0, DEFAULT_ODE_STEPS).unwrap();
        for k in 0..=1000 {
            let x = k as f64 / 1000.0;
            assert_abs_diff_eq!(c.eval(x), closed_form(x), epsilon = 1e-7);
        }
        assert_abs_diff_eq!(c.eval(1.0), 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.eval(0.5), 2.0, epsilon = 1e-10);
        assert_abs_diff_eq!(c.eval(7.0 / 6.0), 2.0, epsilon = 1e-14);
    }

    #[test]
    fn zero_density_branch_is_linear() {
        let m = example_map();
        let y = 1.3;
        let c = solve_vy(&m, 1.5, 1.5, y, -1.0, DEFAULT_ODE_STEPS).unwrap();
        for x in [1.0, 1.1, 1.25, 1.3] {
            let want = (m.prolonged_eval(y) - y) * (1.5 - x) / (1.5 - y);
            assert_abs_diff_eq!(c.eval(x), want, epsilon = 1e-12);
        }
        // left of the support, same law from toll(alpha0)
        let k = 1.0 / c.toll(0.0);
        assert_abs_diff_eq!(c.eval(-0.4), k * 1.9, epsilon = 1e-12);
    }

    #[test]
    fn constant_solution() {
        // T - Id = h / rho0 at the anchor: the right-hand side vanishes
        let m = prolong_map(&optimal_map(&u(0.0, 1.0), &u(1.5, 2.5)));
        let c = solve_vy(&m, 1.6, 1.5, 0.8, -1.0, DEFAULT_ODE_STEPS).unwrap();
        for x in [0.0, 0.3, 0.6, 0.8] {
            assert_abs_diff_eq!(c.eval(x), 1.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn matches_cdf_solution_on_grid_density() {
        let r0 = Density1D::grid(&[0.0, 0.3, 0.6, 1.0], &[0.5, 2.0, 0.8, 1.2]).unwrap();
        let m = prolong_map(&optimal_map(&r0, &u(2.0, 4.0)));
        for (h, y) in [(1.3, 1.0), (1.8, 0.7), (1.2, 1.4)] {
            let c = solve_vy(&m, 1.5, h, y, -1.0, DEFAULT_ODE_STEPS).unwrap();
            for k in 0..=400 {
                let x = y.min(1.0) * k as f64 / 400.0;
                let want = exact_toll(&m, 1.5, h, y, x);
                assert!((c.toll(x) - want).abs() < 1e-11, "h={h} y={y} x={x}");
            }
            assert!(c.error_estimate < 1e-10);
        }
    }

    #[test]
    fn saturation_residual_and_trapping() {
        let r0 = Density1D::grid(&[0.0, 0.5, 1.0], &[0.6, 1.6, 0.9]).unwrap();
        let m = prolong_map(&optimal_map(&r0, &u(2.0, 3.5)));
        let (h, y) = (1.4, 0.95);
        let c = solve_vy(&m, 1.5, h, y, -1.0, DEFAULT_ODE_STEPS).unwrap();
        let nodes = c.nodes().to_vec();
        for w in nodes.windows(2) {
            let x = 0.5 * (w[0] + w[1]);
            assert!((flux_alt_at(&c, &r0, 1.5, h, x) - h).abs() < 1e-7, "x={x}");
        }
        let vy = m.eval(y) - y;
        let lo = vy.min(h / r0.max_density()) * (1.0 - 1e-9);
        let hi = vy.max(h / r0.interior_min()) * (1.0 + 1e-9);
        for v in c.values() {
            assert!(v >= lo && v <= hi);
        }
    }

    #[test]
    fn stable_near_the_toll() {
        let m = example_map();
        let c = solve_vy(&m, 1.5, 1.5, 1.5 - 1e-6, -1.0, DEFAULT_ODE_STEPS).unwrap();
        for k in 0..=100 {
            let x = k as f64 / 100.0;
            let want = (1.5 - x) / exact_toll(&m, 1.5, 1.5, 1.5 - 1e-6, x);
            assert!((c.eval(x) / want - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn guards() {
        let m = example_map();
        assert!(matches!(
            solve_vy(&m, 1.5, 1.5, 1.5, 0.0, 100),
            Err(Error::SingularToll(_))
        ));
        assert!(matches!(
            solve_vy(&m, 1.5, 1.5, 0.5, 0.6, 100),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn departure_points_of_the_example() {
        let m = example_map();
        let c = solve_vy(&m, 1.5, 1.5, 7.0 / 6.0, -1.0, DEFAULT_ODE_STEPS).unwrap();
        let dep = find_departure_points(&c, &m, 1.0).unwrap();
        assert_abs_diff_eq!(dep.w, 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(dep.z, -1.0 / 6.0, epsilon = 1e-9);
        for k in 1..200 {
            let x = dep.w + (1.0 - dep.w) * k as f64 / 200.0;
            assert!(c.eval(x) >= m.eval(x) - x);
            let x = dep.z + (dep.w - dep.z) * k as f64 / 200.0;
            assert!(c.eval(x) < m.prolonged_eval(x) - x);
        }
    }

    #[test]
    fn departure_in_the_prolonged_tail() {
        // anchor pushed right: the curve stays above T - Id on the support
        let m = example_map();
        let c = solve_vy(&m, 1.5, 1.5, 1.4, -1.0, DEFAULT_ODE_STEPS).unwrap();
        assert_eq!(
            find_departure_points(&c, &m, 1.0),
            Err(Error::NoDeparture(0.0))
        );
        // anchor pulled left: curve drops below at once, root in the tail
        let c = solve_vy(&m, 1.5, 1.5, 1.0, -1.0, DEFAULT_ODE_STEPS).unwrap();
        let dep = find_departure_points(&c, &m, 1.0).unwrap();
        let k = 1.0 / c.toll(0.0);
        let want = 1.5 - 2.0 / k;
        assert_abs_diff_eq!(dep.z, want, epsilon = 1e-12);
        assert!(dep.z < 0.0);
    }

    #[test]
    fn truncated_curve_does_not_resolve() {
        let m = example_map();
        let c = solve_vy(&m, 1.5, 1.5, 7.0 / 6.0, 0.8, DEFAULT_ODE_STEPS).unwrap();
        assert_eq!(
            find_departure_points(&c, &m, 1.0),
            Err(Error::NoDeparture(0.8))
        );
    }
}
