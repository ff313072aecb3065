//! One-dimensional probability densities with closed-form CDF and quantile.
//!
//! Three families are supported: uniform, truncated power laws
//! (`|x - origin|^k`, which covers the sphere-integrated profiles of uniform
//! balls) and piecewise-linear grid densities. Grid CDFs are the exact
//! piecewise-quadratic integral of the interpolant, so quantiles are exact
//! up to rounding as well.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default relative floor for the "bounded below on the interior" check.
pub const DEFAULT_FLOOR: f64 = 1e-6;

/// User-facing description of a density, as found in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum DensitySpec {
    Uniform {
        a: f64,
        b: f64,
    },
    /// Density proportional to `(x - a)^exponent` (increasing) or
    /// `(b - x)^exponent` (decreasing) on `[a, b]`.
    Power {
        a: f64,
        b: f64,
        exponent: f64,
        #[serde(default = "default_true")]
        increasing: bool,
    },
    Grid {
        nodes: Vec<f64>,
        values: Vec<f64>,
    },
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    Uniform {
        a: f64,
        b: f64,
    },
    Power {
        lo: f64,
        hi: f64,
        origin: f64,
        exponent: f64,
        rising: bool,
        g_lo: f64,
        mass: f64,
    },
    Grid {
        nodes: Vec<f64>,
        values: Vec<f64>,
        cum: Vec<f64>,
    },
}

/// A compactly supported probability density on the real line.
#[derive(Debug, Clone, PartialEq)]
pub struct Density1D {
    kind: Kind,
}

/// What `build_density` did to the input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuildReport {
    /// Factor the raw values were multiplied by to reach unit mass.
    pub factor: f64,
    /// Smallest density value on the open support (grid nodes only).
    pub interior_min: f64,
    /// `interior_min` fell below `DEFAULT_FLOOR * max density`.
    pub below_floor: bool,
}

pub fn build_density(spec: &DensitySpec) -> Result<(Density1D, BuildReport)> {
    let (density, factor) = match spec {
        DensitySpec::Uniform { a, b } => (Density1D::uniform(*a, *b)?, 1.0),
        DensitySpec::Power {
            a,
            b,
            exponent,
            increasing,
        } => (Density1D::power(*a, *b, *exponent, *increasing)?, 1.0),
        DensitySpec::Grid { nodes, values } => Density1D::grid_with_factor(nodes, values)?,
    };
    let interior_min = density.interior_min();
    let below_floor = !density.is_bounded_below(DEFAULT_FLOOR);
    Ok((
        density,
        BuildReport {
            factor,
            interior_min,
            below_floor,
        },
    ))
}

impl Density1D {
    pub fn uniform(a: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::InvalidDensity(format!(
                "uniform support [{a}, {b}] is empty"
            )));
        }
        Ok(Self {
            kind: Kind::Uniform { a, b },
        })
    }

    /// Density proportional to `(x - a)^k` (or `(b - x)^k` when `increasing`
    /// is false) on `[a, b]`.
    pub fn power(a: f64, b: f64, exponent: f64, increasing: bool) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::InvalidDensity(format!(
                "power support [{a}, {b}] is empty"
            )));
        }
        if !(exponent.is_finite() && exponent >= 0.0) {
            return Err(Error::InvalidDensity(format!(
                "power exponent {exponent} must be finite and >= 0"
            )));
        }
        let origin = if increasing { a } else { b };
        Self::truncated_power(a, b, origin, exponent, increasing)
    }

    fn truncated_power(lo: f64, hi: f64, origin: f64, exponent: f64, rising: bool) -> Result<Self> {
        let g = |x: f64| power_antiderivative(x, origin, exponent, rising);
        let g_lo = g(lo);
        let mass = g(hi) - g_lo;
        if !(mass > 0.0) {
            return Err(Error::NonPositiveMass(mass));
        }
        Ok(Self {
            kind: Kind::Power {
                lo,
                hi,
                origin,
                exponent,
                rising,
                g_lo,
                mass,
            },
        })
    }

    /// Piecewise-linear density through `(nodes[i], values[i])`, normalized
    /// to unit mass.
    pub fn grid(nodes: &[f64], values: &[f64]) -> Result<Self> {
        Self::grid_with_factor(nodes, values).map(|(d, _)| d)
    }

    fn grid_with_factor(nodes: &[f64], values: &[f64]) -> Result<(Self, f64)> {
        if nodes.len() != values.len() {
            return Err(Error::InvalidDensity(format!(
                "{} nodes but {} values",
                nodes.len(),
                values.len()
            )));
        }
        if nodes.len() < 2 {
            return Err(Error::InvalidDensity("grid needs at least 2 nodes".into()));
        }
        if nodes.iter().any(|x| !x.is_finite()) || nodes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidDensity(
                "grid nodes must be finite and strictly ascending".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidDensity(
                "grid values must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = nodes
            .windows(2)
            .zip(values.windows(2))
            .map(|(x, v)| 0.5 * (v[0] + v[1]) * (x[1] - x[0]))
            .sum();
        if !(total > 0.0) {
            return Err(Error::NonPositiveMass(total));
        }
        let factor = 1.0 / total;
        let values: Vec<f64> = values.iter().map(|v| v * factor).collect();
        let mut cum = Vec::with_capacity(nodes.len());
        cum.push(0.0);
        for i in 1..nodes.len() {
            let cell = 0.5 * (values[i - 1] + values[i]) * (nodes[i] - nodes[i - 1]);
            cum.push(cum[i - 1] + cell);
        }
        let last = *cum.last().unwrap();
        for c in cum.iter_mut() {
            *c /= last;
        }
        Ok((
            Self {
                kind: Kind::Grid {
                    nodes: nodes.to_vec(),
                    values,
                    cum,
                },
            },
            factor,
        ))
    }

    /// `(inf supp, sup supp)`.
    pub fn support(&self) -> (f64, f64) {
        match &self.kind {
            Kind::Uniform { a, b } => (*a, *b),
            Kind::Power { lo, hi, .. } => (*lo, *hi),
            Kind::Grid { nodes, .. } => (nodes[0], *nodes.last().unwrap()),
        }
    }

    pub fn is_grid(&self) -> bool {
        matches!(self.kind, Kind::Grid { .. })
    }

    /// Density value; the support is closed, zero outside.
    pub fn pdf(&self, x: f64) -> f64 {
        let (lo, hi) = self.support();
        if !(x >= lo && x <= hi) {
            return 0.0;
        }
        match &self.kind {
            Kind::Uniform { a, b } => 1.0 / (b - a),
            Kind::Power {
                origin,
                exponent,
                mass,
                ..
            } => (x - origin).abs().powf(*exponent) / mass,
            Kind::Grid { nodes, values, .. } => {
                let i = cell_index(nodes, x);
                let t = (x - nodes[i]) / (nodes[i + 1] - nodes[i]);
                values[i] + t * (values[i + 1] - values[i])
            }
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let (lo, hi) = self.support();
        if x <= lo {
            return 0.0;
        }
        if x >= hi {
            return 1.0;
        }
        let p = match &self.kind {
            Kind::Uniform { a, b } => (x - a) / (b - a),
            Kind::Power {
                origin,
                exponent,
                rising,
                g_lo,
                mass,
                ..
            } => (power_antiderivative(x, *origin, *exponent, *rising) - g_lo) / mass,
            Kind::Grid { nodes, values, cum } => {
                let i = cell_index(nodes, x);
                let u = x - nodes[i];
                let slope = (values[i + 1] - values[i]) / (nodes[i + 1] - nodes[i]);
                cum[i] + values[i] * u + 0.5 * slope * u * u
            }
        };
        p.clamp(0.0, 1.0)
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::OutOfRange(p));
        }
        Ok(self.quantile_unchecked(p))
    }

    /// Quantile with `p` clamped into `[0, 1]`.
    pub fn quantile_unchecked(&self, p: f64) -> f64 {
        let (lo, hi) = self.support();
        let p = p.clamp(0.0, 1.0);
        if p <= 0.0 {
            return lo;
        }
        if p >= 1.0 {
            return hi;
        }
        let x = match &self.kind {
            Kind::Uniform { a, b } => a + p * (b - a),
            Kind::Power {
                origin,
                exponent,
                rising,
                g_lo,
                mass,
                ..
            } => {
                let g = g_lo + p * mass;
                let e = exponent + 1.0;
                if *rising {
                    origin + (e * g).max(0.0).powf(1.0 / e)
                } else {
                    origin - (-e * g).max(0.0).powf(1.0 / e)
                }
            }
            Kind::Grid { nodes, values, cum } => {
                // first cell whose upper cumulative mass reaches p
                let j = cum.partition_point(|c| *c < p).clamp(1, cum.len() - 1);
                let i = j - 1;
                let r = p - cum[i];
                let width = nodes[i + 1] - nodes[i];
                let slope = (values[i + 1] - values[i]) / width;
                let disc = (values[i] * values[i] + 2.0 * slope * r).max(0.0);
                let denom = values[i] + disc.sqrt();
                let u = if denom > 0.0 { 2.0 * r / denom } else { 0.0 };
                nodes[i] + u.clamp(0.0, width)
            }
        };
        x.clamp(lo, hi)
    }

    /// Largest density value on the support.
    pub fn max_density(&self) -> f64 {
        match &self.kind {
            Kind::Uniform { a, b } => 1.0 / (b - a),
            Kind::Power { lo, hi, .. } => self.pdf(*lo).max(self.pdf(*hi)),
            Kind::Grid { values, .. } => values.iter().cloned().fold(0.0, f64::max),
        }
    }

    /// Smallest density value over the open support (grid interior nodes
    /// and cell midpoints; analytic kinds are positive on the interior).
    pub fn interior_min(&self) -> f64 {
        match &self.kind {
            Kind::Uniform { .. } => self.max_density(),
            Kind::Power { lo, hi, .. } => {
                let (a, b) = (*lo, *hi);
                // monotone: the interior infimum is the endpoint limit, which
                // is only zero at the power-law origin itself
                let m = self.pdf(a).min(self.pdf(b));
                if m > 0.0 {
                    m
                } else {
                    self.pdf(a + 1e-9 * (b - a))
                        .min(self.pdf(b - 1e-9 * (b - a)))
                        .max(f64::MIN_POSITIVE)
                }
            }
            Kind::Grid { values, .. } => {
                let n = values.len();
                let mut m = f64::INFINITY;
                for i in 0..n - 1 {
                    // midpoint of each cell
                    m = m.min(0.5 * (values[i] + values[i + 1]));
                    if i > 0 {
                        m = m.min(values[i]);
                    }
                }
                m
            }
        }
    }

    /// True when the density stays above `rel_floor * max` on the interior.
    pub fn is_bounded_below(&self, rel_floor: f64) -> bool {
        self.interior_min() >= rel_floor * self.max_density()
    }

    /// Interior points where the density is not smooth (grid nodes).
    pub fn breakpoints(&self) -> Vec<f64> {
        match &self.kind {
            Kind::Grid { nodes, .. } => nodes[1..nodes.len() - 1].to_vec(),
            _ => Vec::new(),
        }
    }

    /// Law of `scale * X + shift` for `X` with this density.
    pub fn affine(&self, scale: f64, shift: f64) -> Result<Self> {
        if !(scale.is_finite() && scale != 0.0 && shift.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "affine map with scale {scale}, shift {shift}"
            )));
        }
        let map = |x: f64| scale * x + shift;
        match &self.kind {
            Kind::Uniform { a, b } => {
                let (p, q) = (map(*a), map(*b));
                Self::uniform(p.min(q), p.max(q))
            }
            Kind::Power {
                lo,
                hi,
                origin,
                exponent,
                rising,
                ..
            } => {
                let (p, q) = (map(*lo), map(*hi));
                let rising = if scale > 0.0 { *rising } else { !*rising };
                Self::truncated_power(p.min(q), p.max(q), map(*origin), *exponent, rising)
            }
            Kind::Grid { nodes, values, .. } => {
                let mut pts: Vec<(f64, f64)> = nodes
                    .iter()
                    .zip(values)
                    .map(|(x, v)| (map(*x), v / scale.abs()))
                    .collect();
                if scale < 0.0 {
                    pts.reverse();
                }
                let (n, v): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
                Self::grid(&n, &v)
            }
        }
    }

    /// Mirror image about `x0`.
    pub fn reflect(&self, x0: f64) -> Self {
        self.affine(-1.0, 2.0 * x0)
            .expect("reflection of a valid density is valid")
    }

    /// Conditional density on `[lo, hi]` together with the mass it carried.
    pub fn restrict(&self, lo: f64, hi: f64) -> Result<(Self, f64)> {
        let (a, b) = self.support();
        let lo = lo.max(a);
        let hi = hi.min(b);
        if !(lo < hi) {
            return Err(Error::InvalidArgument(format!(
                "restriction window [{lo}, {hi}] misses the support"
            )));
        }
        let mass = self.cdf(hi) - self.cdf(lo);
        if !(mass > 0.0) {
            return Err(Error::NonPositiveMass(mass));
        }
        let restricted = match &self.kind {
            Kind::Uniform { .. } => Self::uniform(lo, hi)?,
            Kind::Power {
                origin,
                exponent,
                rising,
                ..
            } => Self::truncated_power(lo, hi, *origin, *exponent, *rising)?,
            Kind::Grid { nodes, .. } => {
                let mut xs = vec![lo];
                xs.extend(nodes.iter().cloned().filter(|x| *x > lo && *x < hi));
                xs.push(hi);
                let vs: Vec<f64> = xs.iter().map(|x| self.pdf(*x)).collect();
                Self::grid(&xs, &vs)?
            }
        };
        Ok((restricted, mass))
    }
}

fn power_antiderivative(x: f64, origin: f64, exponent: f64, rising: bool) -> f64 {
    let e = exponent + 1.0;
    if rising {
        (x - origin).max(0.0).powf(e) / e
    } else {
        -(origin - x).max(0.0).powf(e) / e
    }
}

fn cell_index(nodes: &[f64], x: f64) -> usize {
    let j = nodes.partition_point(|n| *n <= x);
    j.clamp(1, nodes.len() - 1) - 1
}
