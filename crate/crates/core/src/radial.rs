//! Reduction of a single-constriction problem in `R^d` to the line: only
//! the mass in each sphere around the toll point matters.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::density::Density1D;
use crate::error::{Error, Result};

/// Grid points of a sampled profile.
pub const DEFAULT_RADIAL_GRID: usize = 2048;
/// Allowed deviation of the sampled mass from one.
pub const MASS_TOL: f64 = 1e-6;

/// Radially symmetric density about the toll point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum RadialSpec {
    /// Uniform on the ball of the given radius.
    Ball { radius: f64 },
    /// Uniform on `inner <= |x| <= outer`.
    Shell { inner: f64, outer: f64 },
    /// Density as a function of the radius, linear between samples.
    Grid { alpha: Vec<f64>, values: Vec<f64> },
}

/// `|S^{d-1}|`, the area of the unit sphere in `R^d`.
pub fn sphere_area(d: usize) -> f64 {
    2.0 * PI.powf(d as f64 / 2.0) / gamma_half(d)
}

/// `Gamma(d / 2)` for a positive integer `d`.
fn gamma_half(d: usize) -> f64 {
    let (mut g, mut x) = if d.is_multiple_of(2) {
        (1.0, 1.0)
    } else {
        (PI.sqrt(), 0.5)
    };
    while x < d as f64 / 2.0 {
        g *= x;
        x += 1.0;
    }
    g
}

fn ball_volume(d: usize, r: f64) -> f64 {
    sphere_area(d) * r.powi(d as i32) / d as f64
}

impl RadialSpec {
    /// Radial interval carrying the mass.
    pub fn range(&self) -> Result<(f64, f64)> {
        let r = match self {
            RadialSpec::Ball { radius } => (0.0, *radius),
            RadialSpec::Shell { inner, outer } => (*inner, *outer),
            RadialSpec::Grid { alpha, values } => {
                if alpha.len() < 2 || alpha.len() != values.len() {
                    return Err(Error::InvalidDensity(
                        "radial grid needs matching alpha and values, at least 2 points".into(),
                    ));
                }
                (alpha[0], alpha[alpha.len() - 1])
            }
        };
        if !(r.0 >= 0.0 && r.0 < r.1 && r.1.is_finite()) {
            return Err(Error::InvalidDensity(format!(
                "radial range [{}, {}] is invalid",
                r.0, r.1
            )));
        }
        Ok(r)
    }

    /// Density at radius `alpha` for the ambient dimension `d`.
    pub fn density(&self, d: usize, alpha: f64) -> f64 {
        match self {
            RadialSpec::Ball { radius } => {
                if alpha >= 0.0 && alpha <= *radius {
                    1.0 / ball_volume(d, *radius)
                } else {
                    0.0
                }
            }
            RadialSpec::Shell { inner, outer } => {
                if alpha >= *inner && alpha <= *outer {
                    1.0 / (ball_volume(d, *outer) - ball_volume(d, *inner))
                } else {
                    0.0
                }
            }
            RadialSpec::Grid { alpha: a, values } => {
                if alpha < a[0] || alpha > a[a.len() - 1] {
                    return 0.0;
                }
                let j = a.partition_point(|p| *p <= alpha).clamp(1, a.len() - 1);
                let (x0, x1) = (a[j - 1], a[j]);
                let s = (alpha - x0) / (x1 - x0);
                values[j - 1] + s * (values[j] - values[j - 1])
            }
        }
    }

    pub fn profile(&self, d: usize, n_grid: usize) -> Result<RadialProfile> {
        let (lo, hi) = self.range()?;
        if let RadialSpec::Grid { alpha, .. } = self {
            if alpha.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::InvalidDensity(
                    "radial grid must be strictly ascending".into(),
                ));
            }
        }
        if d == 1 {
            // symmetric on the line: both half-lines fold onto alpha
            radial_profile_on(&|a: f64| self.density(1, a.abs()), 1, lo, hi, n_grid)
        } else {
            radial_profile_on(&|a: f64| self.density(d, a), d, lo, hi, n_grid)
        }
    }
}

/// Sphere-integrated density `nu(alpha)` on a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RadialProfile {
    pub d: usize,
    pub alpha: Vec<f64>,
    pub nu: Vec<f64>,
}

impl RadialProfile {
    /// Trapezoid integral of `nu`, exact for the linear interpolant.
    pub fn mass(&self) -> f64 {
        self.alpha
            .windows(2)
            .zip(self.nu.windows(2))
            .map(|(a, v)| 0.5 * (a[1] - a[0]) * (v[0] + v[1]))
            .sum()
    }

    pub fn to_density(&self) -> Result<Density1D> {
        Density1D::grid(&self.alpha, &self.nu)
    }
}

/// `nu(alpha) = |S^{d-1}| alpha^{d-1} f(alpha)` on `[0, alpha_max]`; for
/// `d = 1` the two half-lines fold: `nu(alpha) = f(alpha) + f(-alpha)`, with
/// `nu(0)` taken as the limit from the right.
pub fn radial_profile(
    f: &dyn Fn(f64) -> f64,
    d: usize,
    alpha_max: f64,
    n_grid: usize,
) -> Result<RadialProfile> {
    radial_profile_on(f, d, 0.0, alpha_max, n_grid)
}

/// `radial_profile` sampled on `[alpha_min, alpha_max]`.
pub fn radial_profile_on(
    f: &dyn Fn(f64) -> f64,
    d: usize,
    alpha_min: f64,
    alpha_max: f64,
    n_grid: usize,
) -> Result<RadialProfile> {
    if d == 0 {
        return Err(Error::InvalidArgument(
            "dimension must be at least 1".into(),
        ));
    }
    if !(alpha_min >= 0.0 && alpha_min < alpha_max) || n_grid < 2 {
        return Err(Error::InvalidArgument(format!(
            "radial grid [{alpha_min}, {alpha_max}] with {n_grid} points"
        )));
    }
    let area = sphere_area(d);
    let alpha: Vec<f64> = (0..n_grid)
        .map(|k| {
            if k + 1 == n_grid {
                alpha_max
            } else {
                alpha_min + (alpha_max - alpha_min) * k as f64 / (n_grid - 1) as f64
            }
        })
        .collect();
    let nu: Vec<f64> = alpha
        .iter()
        .map(|&a| {
            let v = if d == 1 {
                let a = a.max(f64::MIN_POSITIVE);
                f(a) + f(-a)
            } else {
                area * a.powi(d as i32 - 1) * f(a)
            };
            v.max(0.0)
        })
        .collect();
    let p = RadialProfile { d, alpha, nu };
    let m = p.mass();
    if (m - 1.0).abs() > MASS_TOL {
        return Err(Error::NotNormalized(m));
    }
    Ok(p)
}

/// One-dimensional instance: `nu0` mirrored onto the negative half-line,
/// `nu1` on the positive one, toll at the origin.
pub fn reduce_to_1d(
    nu0: &RadialProfile,
    nu1: &RadialProfile,
) -> Result<(Density1D, Density1D, f64)> {
    let rho0 = nu0.to_density()?.reflect(0.0);
    let rho1 = nu1.to_density()?;
    Ok((rho0, rho1, 0.0))
}
