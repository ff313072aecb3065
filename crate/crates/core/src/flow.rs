//! Trajectories `Y_t`, push-forward snapshots and the flux through the toll.

use serde::Serialize;

use crate::constraint::transit_density;
use crate::planner::TransportPlan;

/// Snapshot times used by default: sixths of the unit interval.
pub const DEFAULT_TIMES: [f64; 7] = [0.0, 1.0 / 6.0, 1.0 / 3.0, 0.5, 2.0 / 3.0, 5.0 / 6.0, 1.0];

/// `Y_t(x)`: constant speed `v*(x)` up to the toll, then constant speed to
/// `T(x)`.
pub fn flow_map(plan: &TransportPlan, t: f64, x: f64) -> f64 {
    let tau = plan.toll(x);
    if t <= tau {
        x + t * plan.v_star(x)
    } else {
        let tx = plan.target_of(x);
        plan.x0 + (t - tau) * (tx - plan.x0) / (1.0 - tau)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowSnapshot {
    pub t: f64,
    /// Images of the quantiles `j / n`, `j = 0..=n`.
    pub sample_x: Vec<f64>,
    /// Density on each cell between consecutive images.
    pub density_est: Vec<f64>,
    pub mass: f64,
}

impl FlowSnapshot {
    /// Cell midpoints matching `density_est`.
    pub fn cell_centers(&self) -> Vec<f64> {
        self.sample_x
            .windows(2)
            .map(|w| 0.5 * (w[0] + w[1]))
            .collect()
    }
}

pub fn snapshot(plan: &TransportPlan, t: f64, n: usize) -> FlowSnapshot {
    let n = n.max(1);
    let sample_x: Vec<f64> = (0..=n)
        .map(|j| {
            let x = plan.rho0.quantile_unchecked(j as f64 / n as f64);
            flow_map(plan, t, x)
        })
        .collect();
    let dm = 1.0 / n as f64;
    let density_est: Vec<f64> = sample_x.windows(2).map(|w| dm / (w[1] - w[0])).collect();
    let mass = density_est
        .iter()
        .zip(sample_x.windows(2))
        .map(|(d, w)| d * (w[1] - w[0]))
        .sum();
    FlowSnapshot {
        t,
        sample_x,
        density_est,
        mass,
    }
}

/// Flux through `x0` at `n_times` equally spaced times in `[0, 1]`.
pub fn flux_profile(plan: &TransportPlan, n_times: usize) -> (Vec<f64>, Vec<f64>) {
    let n = n_times.max(2);
    let ts: Vec<f64> = (0..n).map(|k| k as f64 / (n - 1) as f64).collect();
    let flux = transit_density(plan, &plan.rho0, plan.x0, &ts);
    (ts, flux)
}
