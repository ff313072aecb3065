#![allow(dead_code)]

use proptest::prelude::*;
use tollflow::constraint::{flux_at, UnconstrainedProfile};
use tollflow::flow::{snapshot, DEFAULT_TIMES};
use tollflow::planner::{build_plan, PlanOptions, TransportPlan};
use tollflow::Density1D;

#[derive(Debug, Clone)]
pub struct Instance {
    pub rho0: Density1D,
    pub rho1: Density1D,
    pub x0: f64,
}

pub fn uniform(a: f64, b: f64) -> Density1D {
    Density1D::uniform(a, b).unwrap()
}

pub fn grid_on(a: f64, b: f64, values: &[f64]) -> Density1D {
    let k = values.len();
    let nodes: Vec<f64> = (0..k)
        .map(|j| a + (b - a) * j as f64 / (k - 1) as f64)
        .collect();
    Density1D::grid(&nodes, values).unwrap()
}

pub fn two_bump() -> (Density1D, Density1D) {
    let nodes = [0.0, 0.1, 0.2, 0.3, 0.6, 0.7, 0.8, 1.0];
    let values = [0.6, 0.6, 1.6, 0.6, 0.6, 1.6, 0.6, 0.6];
    let rho0 = Density1D::grid(&nodes, &values).unwrap();
    let rho1 = rho0.affine(1.0, 2.0).unwrap();
    (rho0, rho1)
}

pub fn example_plan(h: f64) -> TransportPlan {
    build_plan(
        &uniform(0.0, 1.0),
        &uniform(2.0, 3.0),
        1.5,
        h,
        &PlanOptions::default(),
    )
    .unwrap()
}

/// Random piecewise-linear source on `[0, 1]` and target right of the toll.
pub fn instances() -> impl Strategy<Value = Instance> {
    (
        prop::collection::vec(0.5f64..2.0, 3..6),
        prop::collection::vec(0.5f64..2.0, 3..6),
        2.0f64..2.5,
        0.6f64..2.0,
        1.1f64..1.9,
    )
        .prop_map(|(v0, v1, s, len, x0)| Instance {
            rho0: grid_on(0.0, 1.0, &v0),
            rho1: grid_on(s, s + len, &v1),
            x0,
        })
}

pub fn support_grid(plan: &TransportPlan, n: usize) -> Vec<f64> {
    let (a, b) = plan.support();
    (0..=n).map(|k| a + (b - a) * k as f64 / n as f64).collect()
}

fn near_kink(plan: &TransportPlan, x: f64) -> bool {
    plan.intervals
        .iter()
        .flat_map(|i| [i.z, i.w, i.y])
        .any(|k| (x - k).abs() < 1e-6)
}

/// Saturated points carry flux `h`; free points move along `T - Id`
/// without violating the bound.
pub fn check_dichotomy(plan: &TransportPlan) -> Result<(), TestCaseError> {
    let h = plan.h;
    let xs = support_grid(plan, 400);
    for &x in &xs[1..xs.len() - 1] {
        if near_kink(plan, x) {
            continue;
        }
        if plan.is_saturated(x) {
            let c = flux_at(plan, &plan.rho0, plan.x0, x).unwrap();
            prop_assert!(
                (c - h).abs() <= 1e-5 * h,
                "saturated at {x} but C = {c}, h = {h}"
            );
        } else {
            let tx = plan.target_of(x);
            prop_assert!((plan.v_star(x) - (tx - x)).abs() <= 1e-12 * tx.abs().max(1.0));
            let c = flux_at(
                &UnconstrainedProfile { map: &plan.map },
                &plan.rho0,
                plan.x0,
                x,
            )
            .unwrap();
            prop_assert!(
                c <= h * (1.0 + 1e-6),
                "free at {x} but C(T - Id) = {c} > h = {h}"
            );
        }
    }
    Ok(())
}

pub fn check_toll_decreasing(plan: &TransportPlan) -> Result<(), TestCaseError> {
    let xs = support_grid(plan, 2000);
    for w in xs.windows(2) {
        prop_assert!(
            plan.toll(w[1]) < plan.toll(w[0]),
            "toll not decreasing at {}",
            w[0]
        );
    }
    Ok(())
}

pub fn check_snapshots(plan: &TransportPlan) -> Result<(), TestCaseError> {
    for &t in &DEFAULT_TIMES {
        let s = snapshot(plan, t, 500);
        prop_assert!(
            s.sample_x.windows(2).all(|w| w[1] > w[0]),
            "trajectories cross at t = {t}"
        );
        prop_assert!(
            (s.mass - 1.0).abs() <= 1e-9,
            "snapshot mass {} at t = {t}",
            s.mass
        );
    }
    Ok(())
}

pub fn check_plan(plan: &TransportPlan) -> Result<(), TestCaseError> {
    prop_assert!(plan.cost_j >= plan.w2_sq - 1e-9);
    check_dichotomy(plan)?;
    check_toll_decreasing(plan)?;
    check_snapshots(plan)
}

/// Costs along five increasing flux bounds never increase.
pub fn check_cost_monotone(inst: &Instance, lo: f64) -> Result<(), TestCaseError> {
    let opts = PlanOptions::default();
    let mut last = f64::INFINITY;
    for k in 0..5 {
        let h = lo * (1.0 + 0.3 * k as f64);
        let j = build_plan(&inst.rho0, &inst.rho1, inst.x0, h, &opts)
            .unwrap()
            .cost_j;
        prop_assert!(j <= last + 1e-9, "J({h}) = {j} > {last}");
        last = j;
    }
    Ok(())
}

/// Two runs, and a run with the scans reversed, agree bit for bit.
pub fn check_deterministic(inst: &Instance, h: f64) -> Result<(), TestCaseError> {
    let opts = PlanOptions::default();
    let rev = PlanOptions {
        reverse_scan: true,
        ..PlanOptions::default()
    };
    let a = build_plan(&inst.rho0, &inst.rho1, inst.x0, h, &opts).unwrap();
    let b = build_plan(&inst.rho0, &inst.rho1, inst.x0, h, &opts).unwrap();
    let c = build_plan(&inst.rho0, &inst.rho1, inst.x0, h, &rev).unwrap();
    for p in [&b, &c] {
        prop_assert_eq!(a.cost_j.to_bits(), p.cost_j.to_bits());
        prop_assert_eq!(a.intervals.len(), p.intervals.len());
        for (i, j) in a.intervals.iter().zip(&p.intervals) {
            prop_assert_eq!(i.y.to_bits(), j.y.to_bits());
            prop_assert_eq!(i.z.to_bits(), j.z.to_bits());
        }
        for x in support_grid(&a, 100) {
            prop_assert_eq!(a.toll(x).to_bits(), p.toll(x).to_bits());
        }
    }
    Ok(())
}

/// `toll(x) + toll(1 - x) = 1` on the instance symmetric about the toll.
pub fn check_time_symmetry(plan: &TransportPlan) -> Result<(), TestCaseError> {
    for k in 0..=200 {
        let x = k as f64 / 200.0;
        let s = plan.toll(x) + plan.toll(1.0 - x);
        prop_assert!(
            (s - 1.0).abs() <= 1e-6,
            "toll(x) + toll(1 - x) = {s} at x = {x}"
        );
    }
    Ok(())
}
