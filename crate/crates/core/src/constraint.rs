//! Flux functionals at the toll, the feasibility gate and instance
//! normalization.
//!
//! A velocity profile `v(x)` is the constant pre-toll speed of the mass that
//! starts at `x`; it crosses `x0` at `toll(x) = (x0 - x) / v(x)`. For smooth
//! profiles the flux through the toll while `x` crosses is
//!
//! ```text
//! C_x(v) = v rho0 / (1 + (x0 - x) v' / v)
//! ```
//!
//! and the equivalent form used to define prolongations where `rho0 = 0` is
//!
//! ```text
//! C^alt_x(v) = (v^2 rho0 - h (x0 - x) v') / v.
//! ```

use serde::Serialize;

use crate::density::Density1D;
use crate::error::{Error, Result};
use crate::unconstrained::TransportMap;

/// Below this the flux denominator is treated as vanished.
pub const DENOMINATOR_EPS: f64 = 1e-12;

/// Initial speed as a function of the starting point.
pub trait VelocityProfile {
    fn speed(&self, x: f64) -> f64;

    /// Spatial derivative of `speed`.
    fn speed_slope(&self, x: f64) -> f64;

    fn toll(&self, x0: f64, x: f64) -> f64 {
        (x0 - x) / self.speed(x)
    }
}

/// `v = T^+ - Id`, the speed of the unconstrained plan.
#[derive(Debug, Clone, Copy)]
pub struct UnconstrainedProfile<'a> {
    pub map: &'a TransportMap,
}

impl VelocityProfile for UnconstrainedProfile<'_> {
    fn speed(&self, x: f64) -> f64 {
        self.map.prolonged_eval(x) - x
    }

    fn speed_slope(&self, x: f64) -> f64 {
        self.map.derivative(x) - 1.0
    }
}

/// Profile given by closures; the slope falls back to a centered difference
/// with step `fd_step`.
pub struct FnProfile<F> {
    speed: F,
    slope: Option<Box<dyn Fn(f64) -> f64 + Send + Sync>>,
    fd_step: f64,
}

impl<F: Fn(f64) -> f64> FnProfile<F> {
    pub fn new(speed: F, fd_step: f64) -> Self {
        Self {
            speed,
            slope: None,
            fd_step,
        }
    }

    pub fn with_slope(speed: F, slope: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            speed,
            slope: Some(Box::new(slope)),
            fd_step: 0.0,
        }
    }
}

impl<F: Fn(f64) -> f64> VelocityProfile for FnProfile<F> {
    fn speed(&self, x: f64) -> f64 {
        (self.speed)(x)
    }

    fn speed_slope(&self, x: f64) -> f64 {
        match &self.slope {
            Some(s) => s(x),
            None => {
                let h = self.fd_step;
                ((self.speed)(x + h) - (self.speed)(x - h)) / (2.0 * h)
            }
        }
    }
}

/// `C_x(v)`.
pub fn flux_at<P: VelocityProfile + ?Sized>(
    p: &P,
    rho0: &Density1D,
    x0: f64,
    x: f64,
) -> Result<f64> {
    let v = p.speed(x);
    let denom = 1.0 + (x0 - x) / v * p.speed_slope(x);
    if !(denom > DENOMINATOR_EPS) {
        return Err(Error::DegenerateDenominator(x));
    }
    Ok(v * rho0.pdf(x) / denom)
}

/// `C^alt_x(v)`.
pub fn flux_alt_at<P: VelocityProfile + ?Sized>(
    p: &P,
    rho0: &Density1D,
    x0: f64,
    h: f64,
    x: f64,
) -> f64 {
    let v = p.speed(x);
    (v * v * rho0.pdf(x) - h * (x0 - x) * p.speed_slope(x)) / v
}

/// Verdict of the `h > rho0(Omega)` gate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeasibilityReport {
    /// Mass that has to cross the toll, in either direction.
    pub omega_mass: f64,
    pub h: f64,
    pub feasible: bool,
    /// Left-to-right crossing set and its mass.
    pub forward: Option<(f64, f64)>,
    pub forward_mass: f64,
    /// Right-to-left crossing set and its mass.
    pub backward: Option<(f64, f64)>,
    pub backward_mass: f64,
}

impl FeasibilityReport {
    /// The crossing set `Omega` (the larger direction when both exist).
    pub fn crossing_support(&self) -> Option<(f64, f64)> {
        if self.forward_mass >= self.backward_mass {
            self.forward.or(self.backward)
        } else {
            self.backward
        }
    }
}

/// Smallest point of `[lo, hi]` where the nondecreasing `f` exceeds `level`,
/// by bisection (`hi` when it never does).
fn first_above(f: impl Fn(f64) -> f64, lo: f64, hi: f64, level: f64) -> f64 {
    if f(lo) > level {
        return lo;
    }
    if f(hi) <= level {
        return hi;
    }
    let (mut a, mut b) = (lo, hi);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        if f(m) > level {
            b = m;
        } else {
            a = m;
        }
    }
    b
}

/// Last point of `[lo, hi]` where the nondecreasing `f` is below `level`.
fn last_below(f: impl Fn(f64) -> f64, lo: f64, hi: f64, level: f64) -> f64 {
    if f(hi) < level {
        return hi;
    }
    if f(lo) >= level {
        return lo;
    }
    let (mut a, mut b) = (lo, hi);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        if f(m) < level {
            a = m;
        } else {
            b = m;
        }
    }
    a
}

pub fn feasibility(map: &TransportMap, x0: f64, h: f64) -> FeasibilityReport {
    let rho0 = map.source();
    let (a0, b0) = rho0.support();
    let t = |x: f64| map.eval(x.clamp(a0, b0));

    // x < x0 < T(x)
    let mut forward = None;
    let mut forward_mass = 0.0;
    if a0 < x0 {
        let lo = first_above(t, a0, b0, x0);
        let hi = b0.min(x0);
        if lo < hi {
            forward = Some((lo, hi));
            forward_mass = rho0.cdf(hi) - rho0.cdf(lo);
        }
    }
    // T(x) < x0 < x
    let mut backward = None;
    let mut backward_mass = 0.0;
    if b0 > x0 {
        let hi = last_below(t, a0, b0, x0);
        let lo = a0.max(x0);
        if lo < hi {
            backward = Some((lo, hi));
            backward_mass = rho0.cdf(hi) - rho0.cdf(lo);
        }
    }
    if forward_mass <= 0.0 {
        forward = None;
        forward_mass = 0.0;
    }
    if backward_mass <= 0.0 {
        backward = None;
        backward_mass = 0.0;
    }
    let omega_mass = forward_mass + backward_mass;
    FeasibilityReport {
        omega_mass,
        h,
        feasible: h > omega_mass,
        forward,
        forward_mass,
        backward,
        backward_mass,
    }
}

/// Unit-mass, left-to-right instance that carries exactly the crossing mass.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedInstance {
    pub rho0: Density1D,
    pub rho1: Density1D,
    pub x0: f64,
    /// `rho0(Omega)`; the flux bound of the restricted problem is `h / mass`.
    pub mass: f64,
    /// The instance was mirrored about `x0` (right-to-left crossing).
    pub reflected: bool,
    /// Crossing set in original coordinates.
    pub omega: (f64, f64),
}

impl NormalizedInstance {
    pub fn to_original(&self, x: f64) -> f64 {
        if self.reflected {
            2.0 * self.x0 - x
        } else {
            x
        }
    }

    pub fn from_original(&self, x: f64) -> f64 {
        self.to_original(x)
    }
}

/// Restricts to the crossing mass and its image, renormalizes both and
/// mirrors right-to-left instances. Returns `None` when nothing crosses;
/// mass outside `Omega` keeps the straight-line plan `x + t (T(x) - x)`.
pub fn normalize_instance(map: &TransportMap, x0: f64) -> Result<Option<NormalizedInstance>> {
    let report = feasibility(map, x0, f64::INFINITY);
    if report.forward.is_some() && report.backward.is_some() {
        return Err(Error::BidirectionalCrossing);
    }
    let (omega, reflected) = match (report.forward, report.backward) {
        (Some(w), None) => (w, false),
        (None, Some(w)) => (w, true),
        _ => return Ok(None),
    };
    let (rho0, mass) = map.source().restrict(omega.0, omega.1)?;
    let (rho1, _) = map
        .target()
        .restrict(map.eval(omega.0), map.eval(omega.1))?;
    let (rho0, rho1) = if reflected {
        (rho0.reflect(x0), rho1.reflect(x0))
    } else {
        (rho0, rho1)
    };
    Ok(Some(NormalizedInstance {
        rho0,
        rho1,
        x0,
        mass,
        reflected,
        omega,
    }))
}

/// Density of crossing times `toll_# rho0` sampled at `t_grid`; zero outside
/// the crossing window `[toll(beta0), toll(alpha0)]`.
pub fn transit_density<P: VelocityProfile + ?Sized>(
    p: &P,
    rho0: &Density1D,
    x0: f64,
    t_grid: &[f64],
) -> Vec<f64> {
    let (a0, b0) = rho0.support();
    let t_first = p.toll(x0, b0);
    let t_last = p.toll(x0, a0);
    t_grid
        .iter()
        .map(|&t| {
            if !(t >= t_first && t <= t_last) {
                return 0.0;
            }
            let x = inverse_toll(p, x0, a0, b0, t);
            flux_at(p, rho0, x0, x).unwrap_or(f64::INFINITY)
        })
        .collect()
}

/// Starting point whose mass crosses at time `t` (toll is decreasing).
pub fn inverse_toll<P: VelocityProfile + ?Sized>(p: &P, x0: f64, a: f64, b: f64, t: f64) -> f64 {
    let (mut lo, mut hi) = (a, b);
    for _ in 0..200 {
        let m = 0.5 * (lo + hi);
        if m <= lo || m >= hi {
            break;
        }
        if p.toll(x0, m) > t {
            lo = m;
        } else {
            hi = m;
        }
    }
    0.5 * (lo + hi)
}
