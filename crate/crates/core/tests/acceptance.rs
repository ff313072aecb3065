mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::{Command, ExitCode};
use std::time::Instant;

use common::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use tollflow::config::RunConfig;
use tollflow::flow::flux_profile;
use tollflow::oracle::run_oracle;
use tollflow::planner::{build_plan, PlanOptions, TransportPlan};
use tollflow::radial::RadialSpec;
use tollflow::Error;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, msg: String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg)
    }
}

fn closed_v(x: f64) -> f64 {
    1.5 * (2.0 * x - 3.0) / (2.0 * x - 2.5)
}

fn closed_toll(x: f64) -> f64 {
    (2.5 - 2.0 * x) / 3.0
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let dx = (b - a) / n as f64;
    (0..n)
        .map(|k| {
            let x = a + k as f64 * dx;
            dx / 6.0 * (f(x) + 4.0 * f(x + 0.5 * dx) + f(x + dx))
        })
        .sum()
}

fn closed_form() -> Outcome {
    let start = Instant::now();
    let plan = example_plan(1.5);
    let worst = (0..1000)
        .map(|k| {
            let x = k as f64 / 999.0;
            (plan.v_star(x) - closed_v(x)).abs()
        })
        .fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    ensure(
        worst <= 1e-6,
        format!("max |v* - closed form| = {worst:.3e}"),
    )?;
    ensure(secs <= 5.0, format!("took {secs:.2} s"))?;
    Ok(format!("max |v* - closed form| = {worst:.3e}, {secs:.2} s"))
}

fn cost_values() -> Outcome {
    let plan = example_plan(1.5);
    let integrand = |x: f64| {
        let (v, tau) = (closed_v(x), closed_toll(x));
        v * (1.5 - x) + (x + 0.5).powi(2) / (1.0 - tau)
    };
    let quad = simpson(integrand, 0.0, 1.0, 20_000);
    let analytic = 0.75 * (5.0 + 5f64.ln() / 4.0);
    ensure(
        (quad - analytic).abs() <= 1e-9,
        format!("quadrature {quad} vs analytic {analytic}"),
    )?;
    ensure(
        (plan.cost_j - 4.051770).abs() <= 1e-3 && (plan.cost_j - quad).abs() <= 1e-3,
        format!("cost_J = {} vs {quad}", plan.cost_j),
    )?;
    ensure(plan.w2_sq == 4.0, format!("W2^2 = {}", plan.w2_sq))?;
    ensure(plan.cost_j >= plan.w2_sq, "cost_J < W2^2".into())?;
    Ok(format!(
        "cost_J = {:.9}, quadrature {quad:.9}, W2^2 = {}",
        plan.cost_j, plan.w2_sq
    ))
}

/// Flux equals `h` on `(t_lo + delta, t_hi - delta)` and never exceeds it.
fn plateau(
    plan: &TransportPlan,
    t_lo: f64,
    t_hi: f64,
    delta: f64,
    tol: f64,
) -> Result<f64, String> {
    let (ts, flux) = flux_profile(plan, 6001);
    let mut worst: f64 = 0.0;
    for (t, c) in ts.iter().zip(&flux) {
        ensure(
            *c <= plan.h * (1.0 + 1e-6),
            format!("flux {c} > h at t = {t}"),
        )?;
        if *t >= t_lo + delta && *t <= t_hi - delta {
            worst = worst.max((c - plan.h).abs());
        }
    }
    ensure(worst <= tol, format!("plateau deviation {worst:.3e}"))?;
    Ok(worst)
}

fn transit_saturation() -> Outcome {
    let plan = example_plan(1.5);
    let worst = plateau(&plan, 1.0 / 6.0, 5.0 / 6.0, 1e-3, 1e-4)?;
    let span = plan.toll(0.0) - plan.toll(1.0);
    ensure(
        (span - 2.0 / 3.0).abs() <= 1e-6,
        format!("toll(a0) - toll(b0) = {span}"),
    )?;
    Ok(format!(
        "plateau deviation {worst:.3e}, toll span {span:.9}"
    ))
}

fn oracle_agreement() -> Outcome {
    let start = Instant::now();
    let (bump0, bump1) = two_bump();
    let cases = [
        ("uniform", example_plan(1.5)),
        (
            "stretched",
            build_plan(
                &uniform(0.0, 1.0),
                &uniform(2.0, 4.0),
                1.5,
                1.3,
                &PlanOptions::default(),
            )
            .unwrap(),
        ),
        (
            "two-bump",
            build_plan(&bump0, &bump1, 1.5, 2.5, &PlanOptions::default()).unwrap(),
        ),
    ];
    let mut notes = Vec::new();
    for (name, plan) in &cases {
        let (_, r200) = run_oracle(plan, 200).map_err(|e| e.to_string())?;
        let (_, r400) = run_oracle(plan, 400).map_err(|e| e.to_string())?;
        ensure(
            r200.sup_toll_gap <= 5e-3,
            format!("{name}: sup toll gap {:.3e}", r200.sup_toll_gap),
        )?;
        ensure(
            r200.cost_gap <= 1e-2,
            format!("{name}: cost gap {:.3e}", r200.cost_gap),
        )?;
        let ratio = r400.cost_gap / r200.cost_gap;
        ensure(ratio <= 0.6 * 1.2, format!("{name}: gap ratio {ratio:.3}"))?;
        notes.push(format!(
            "{name} sup {:.1e} ratio {ratio:.3}",
            r200.sup_toll_gap
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs <= 30.0, format!("took {secs:.2} s"))?;
    Ok(format!("{}, {secs:.2} s", notes.join("; ")))
}

fn two_particles() -> Outcome {
    let plan = example_plan(1.5);
    let (ps, _) = run_oracle(&plan, 2).map_err(|e| e.to_string())?;
    let expect = [closed_toll(0.25), closed_toll(0.75)];
    ensure(
        (expect[0] - 2.0 / 3.0).abs() <= 1e-12 && (expect[1] - 1.0 / 3.0).abs() <= 1e-12,
        "closed form".into(),
    )?;
    for (t, e) in ps.t.iter().zip(expect) {
        ensure((t - e).abs() <= 1e-9, format!("t = {:?}", ps.t))?;
    }
    Ok(format!("t = ({:.12}, {:.12})", ps.t[0], ps.t[1]))
}

fn degeneracy() -> Outcome {
    let plan = example_plan(2.5);
    ensure(
        plan.intervals.is_empty(),
        format!("{} saturation intervals", plan.intervals.len()),
    )?;
    for k in 0..1000 {
        let x = k as f64 / 999.0;
        let free = plan.target_of(x) - x;
        ensure(
            (plan.v_star(x) - free).abs() <= 1e-12,
            format!("v*({x}) = {}", plan.v_star(x)),
        )?;
    }
    ensure(
        (plan.cost_j - 4.0).abs() <= 1e-8,
        format!("cost_J = {}", plan.cost_j),
    )?;
    Ok(format!("E empty, cost_J = {:.12}", plan.cost_j))
}

fn feasibility_gate() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = Command::new(env!("CARGO_BIN_EXE_tollflow"))
        .args([
            "solve",
            "--preset",
            "uniform-example",
            "--h",
            "0.9",
            "--out",
        ])
        .arg(dir.path())
        .output()
        .map_err(|e| e.to_string())?;
    ensure(
        out.status.code() == Some(2),
        format!("exit code {:?}", out.status.code()),
    )?;
    let lib = build_plan(
        &uniform(0.0, 1.0),
        &uniform(2.0, 3.0),
        1.5,
        0.9,
        &PlanOptions::default(),
    );
    ensure(
        matches!(lib, Err(Error::Infeasible { .. })),
        format!("library returned {lib:?}"),
    )?;
    Ok("exit code 2".into())
}

fn runner(cases: u32) -> TestRunner {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn invariant_suite() -> Outcome {
    let strategy = (instances(), 1.05f64..3.0);
    runner(16)
        .run(&strategy, |(inst, factor)| {
            let plan = build_plan(
                &inst.rho0,
                &inst.rho1,
                inst.x0,
                factor,
                &PlanOptions::default(),
            )
            .unwrap();
            check_plan(&plan)
        })
        .map_err(|e| format!("dichotomy / toll / snapshots: {e}"))?;
    runner(8)
        .run(&(1.05f64..2.4), |h| check_time_symmetry(&example_plan(h)))
        .map_err(|e| format!("time symmetry: {e}"))?;
    runner(8)
        .run(&(instances(), 1.05f64..1.5), |(inst, lo)| {
            check_cost_monotone(&inst, lo)
        })
        .map_err(|e| format!("monotone cost: {e}"))?;
    runner(8)
        .run(&(instances(), 1.05f64..2.0), |(inst, h)| {
            check_deterministic(&inst, h)
        })
        .map_err(|e| format!("determinism: {e}"))?;
    Ok("all seven properties hold".into())
}

fn radial_reduction() -> Outcome {
    let profile = RadialSpec::Ball { radius: 1.0 }
        .profile(2, 2048)
        .map_err(|e| e.to_string())?;
    let worst = profile
        .alpha
        .iter()
        .zip(&profile.nu)
        .map(|(a, v)| (v - 2.0 * a).abs())
        .fold(0.0, f64::max);
    ensure(worst <= 1e-6, format!("max |nu - 2 alpha| = {worst:.3e}"))?;

    let cfg = RunConfig::preset("disk").map_err(|e| e.to_string())?;
    let inst = cfg.instance().map_err(|e| e.to_string())?;
    let plan = build_plan(
        &inst.rho0,
        &inst.rho1,
        inst.x0,
        cfg.h,
        &PlanOptions::default(),
    )
    .map_err(|e| e.to_string())?;

    let (a0, b0) = plan.support();
    let mut worst_plateau = 0.0;
    for i in &plan.intervals {
        let (lo, hi) = (i.z.max(a0), i.y.min(b0));
        let span = plan.toll(lo) - plan.toll(hi);
        let mass = plan.rho0.cdf(hi) - plan.rho0.cdf(lo);
        ensure(
            (span - mass / plan.h).abs() <= 1e-6,
            format!("saturated window spans {span}"),
        )?;
        let w = plateau(&plan, plan.toll(hi), plan.toll(lo), 1e-3, 1e-4)?;
        worst_plateau = f64::max(worst_plateau, w);
    }
    ensure(
        !plan.intervals.is_empty(),
        "disk plan never saturates".into(),
    )?;
    check_plan(&plan).map_err(|e| e.to_string())?;
    let line = Instance {
        rho0: inst.rho0.clone(),
        rho1: inst.rho1.clone(),
        x0: inst.x0,
    };
    check_cost_monotone(&line, 1.5).map_err(|e| e.to_string())?;
    check_deterministic(&line, cfg.h).map_err(|e| e.to_string())?;
    Ok(format!(
        "max |nu - 2 alpha| = {worst:.1e}, cost_J = {:.9}, plateau deviation {worst_plateau:.1e}",
        plan.cost_j
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("closed-form speed", closed_form),
        ("cost values", cost_values),
        ("transit saturation", transit_saturation),
        ("oracle agreement", oracle_agreement),
        ("two-particle oracle", two_particles),
        ("degeneracy", degeneracy),
        ("feasibility gate", feasibility_gate),
        ("invariant suite", invariant_suite),
        ("radial reduction", radial_reduction),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS {} {name}: {detail}", k + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {} {name}: {detail}", k + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
