//! Unconstrained monotone transport map `T = F1^{-1} o F0` and its slope-one
//! prolongation outside the source support.

use crate::density::Density1D;
use crate::quadrature::integrate_pieces;

/// Absolute quadrature tolerance for costs.
pub const COST_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct TransportMap {
    rho0: Density1D,
    rho1: Density1D,
    identical: bool,
    prolonged: bool,
}

pub fn optimal_map(rho0: &Density1D, rho1: &Density1D) -> TransportMap {
    TransportMap {
        identical: rho0 == rho1,
        rho0: rho0.clone(),
        rho1: rho1.clone(),
        prolonged: false,
    }
}

/// Same map with `eval` extended by slope-one lines outside `[alpha0, beta0]`.
pub fn prolong_map(map: &TransportMap) -> TransportMap {
    TransportMap {
        prolonged: true,
        ..map.clone()
    }
}

impl TransportMap {
    pub fn source(&self) -> &Density1D {
        &self.rho0
    }

    pub fn target(&self) -> &Density1D {
        &self.rho1
    }

    pub fn is_prolonged(&self) -> bool {
        self.prolonged
    }

    /// `T(x)`; outside the source support this is the prolongation when the
    /// map is prolonged and the nearest endpoint image otherwise.
    pub fn eval(&self, x: f64) -> f64 {
        if self.prolonged {
            return self.prolonged_eval(x);
        }
        let (a0, b0) = self.rho0.support();
        self.core(x.clamp(a0, b0))
    }

    /// `T^+`, defined on the whole line.
    pub fn prolonged_eval(&self, x: f64) -> f64 {
        let (a0, b0) = self.rho0.support();
        let (a1, b1) = self.rho1.support();
        if x >= b0 {
            b1 + x - b0
        } else if x <= a0 {
            a1 + x - a0
        } else {
            self.core(x)
        }
    }

    fn core(&self, x: f64) -> f64 {
        if self.identical {
            x
        } else {
            self.rho1.quantile_unchecked(self.rho0.cdf(x))
        }
    }

    /// Derivative of `T^+`.
    pub fn derivative(&self, x: f64) -> f64 {
        let (a0, b0) = self.rho0.support();
        if x > b0 || x < a0 || self.identical {
            return 1.0;
        }
        let p0 = self.rho0.pdf(x);
        let p1 = self.rho1.pdf(self.core(x));
        if p1 > 0.0 && p0 > 0.0 {
            return p0 / p1;
        }
        // vanishing target density: fall back to a difference quotient
        let step = 1e-7 * (b0 - a0);
        let lo = (x - step).max(a0);
        let hi = (x + step).min(b0);
        (self.core(hi) - self.core(lo)) / (hi - lo)
    }

    /// Points inside the source support where `T` or `rho0` is not smooth.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut pts = self.rho0.breakpoints();
        if !self.identical {
            pts.extend(
                self.rho1
                    .breakpoints()
                    .into_iter()
                    .map(|y| self.rho0.quantile_unchecked(self.rho1.cdf(y))),
            );
        }
        pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        pts.dedup();
        pts
    }
}

/// `W_2^2 = \int (T(x) - x)^2 rho0(x) dx`.
pub fn wasserstein2_sq(map: &TransportMap) -> f64 {
    if map.identical {
        return 0.0;
    }
    let (a0, b0) = map.rho0.support();
    let f = |x: f64| {
        let d = map.eval(x) - x;
        d * d * map.rho0.pdf(x)
    };
    integrate_pieces(&f, a0, b0, &map.breakpoints(), COST_TOL).max(0.0)
}
