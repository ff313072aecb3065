//! Command-line driver: solve, oracle, radial and snapshots.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::config::{ConfigError, Instance, RunConfig};
use crate::error::Error;
use crate::flow::{flux_profile, snapshot};
use crate::oracle::{reconstruct_flux, run_oracle};
use crate::planner::{solve, Solution, TransportPlan};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_CAP: i32 = 3;
pub const EXIT_ORACLE: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "tollflow",
    version,
    about = "Optimal transport through a toll with bounded flux"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the plan; write plan.csv, plan.json, flux.csv, snapshots.csv.
    Solve(RunArgs),
    /// Compare the plan with the particle oracle; write oracle.csv, report.json.
    Oracle(RunArgs),
    /// Reduce a radial instance to the line, write reduced.json, then solve.
    Radial(RunArgs),
    /// Write snapshots.csv and flux.csv only.
    Snapshots(RunArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in instance: uniform-example, stretched, two-bump, disk.
    #[arg(long)]
    preset: Option<String>,
    /// Flux bound.
    #[arg(long)]
    h: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Oracle particles.
    #[arg(long)]
    n: Option<usize>,
    /// Solver grid points.
    #[arg(long)]
    grid: Option<usize>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Model(Error),
    #[error("oracle: sup toll gap {gap:e} exceeds tolerance {tol:e}")]
    Oracle { gap: f64, tol: f64 },
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Model(e)
    }
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Model(Error::Infeasible { .. } | Error::InfeasibleDiscrete(_)) => {
                EXIT_INFEASIBLE
            }
            CliError::Model(Error::CapExceeded(_)) => EXIT_CAP,
            CliError::Oracle { .. } => EXIT_ORACLE,
            _ => EXIT_CONFIG,
        }
    }

    pub fn message(&self) -> String {
        match self {
            CliError::Model(Error::Infeasible { h, omega_mass }) => {
                format!(
                    "infeasible: h ≤ ρ0(Ω) = {} (h = {})",
                    fmt_num(*omega_mass),
                    fmt_num(*h)
                )
            }
            e => e.to_string(),
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("{}", f.message());
            f.code()
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Solve(a) => cmd_solve(&load(&a)?),
        Command::Oracle(a) => cmd_oracle(&load(&a)?),
        Command::Radial(a) => cmd_radial(&load(&a)?),
        Command::Snapshots(a) => cmd_snapshots(&load(&a)?),
    }
}

fn load(a: &RunArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match (&a.config, &a.preset) {
        (Some(p), _) => RunConfig::from_file(p)?,
        (None, Some(name)) => RunConfig::preset(name)?,
        (None, None) => RunConfig::preset("uniform-example")?,
    };
    if let Some(h) = a.h {
        cfg.h = h;
    }
    if let Some(out) = &a.out {
        cfg.out = out.clone();
    }
    if let Some(n) = a.n {
        cfg.oracle.n = n;
    }
    if let Some(g) = a.grid {
        cfg.solver.grid = g;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn solve_instance(cfg: &RunConfig, inst: &Instance) -> Result<Solution, CliError> {
    Ok(solve(&inst.rho0, &inst.rho1, inst.x0, cfg.h, &cfg.solver)?)
}

pub fn cmd_solve(cfg: &RunConfig) -> Result<(), CliError> {
    let inst = cfg.instance()?;
    let sol = solve_instance(cfg, &inst)?;
    write_solution(cfg, &sol)
}

pub fn cmd_radial(cfg: &RunConfig) -> Result<(), CliError> {
    let inst = cfg.radial_instance()?;
    let r = inst
        .reduced
        .as_ref()
        .expect("radial instance carries its profiles");
    let mirrored = |p: &crate::radial::RadialProfile| {
        let nodes: Vec<f64> = p.alpha.iter().rev().map(|a| inst.x0 - a).collect();
        let values: Vec<f64> = p.nu.iter().rev().copied().collect();
        json!({"type": "grid", "nodes": nodes, "values": values})
    };
    let doc = json!({
        "d": r.d,
        "x0": inst.x0,
        "nu0": {"alpha": r.nu0.alpha, "nu": r.nu0.nu, "mass": r.nu0.mass()},
        "nu1": {"alpha": r.nu1.alpha, "nu": r.nu1.nu, "mass": r.nu1.mass()},
        "rho0": mirrored(&r.nu0),
        "rho1": {"type": "grid", "nodes": r.nu1.alpha, "values": r.nu1.nu},
    });
    write_json(&cfg.out.join("reduced.json"), &doc)?;
    let sol = solve_instance(cfg, &inst)?;
    write_solution(cfg, &sol)
}

pub fn cmd_snapshots(cfg: &RunConfig) -> Result<(), CliError> {
    let inst = cfg.instance()?;
    let sol = solve_instance(cfg, &inst)?;
    if let Some(plan) = &sol.plan {
        write_flow(cfg, plan)?;
    }
    Ok(())
}

pub fn cmd_oracle(cfg: &RunConfig) -> Result<(), CliError> {
    let inst = cfg.instance()?;
    let sol = solve_instance(cfg, &inst)?;
    let plan = sol.plan.as_ref().ok_or_else(|| {
        ConfigError::Invalid("no mass crosses the toll; nothing to compare".into())
    })?;
    let (ps, report) = run_oracle(plan, cfg.oracle.n)?;

    let mut csv = String::from("i,x,T,t_oracle,t_plan\n");
    for i in 0..ps.n {
        row(
            &mut csv,
            &[i as f64, ps.x[i], ps.target[i], ps.t[i], plan.toll(ps.x[i])],
        );
    }
    write_atomic(&cfg.out.join("oracle.csv"), csv.as_bytes())?;

    let pass = report.sup_toll_gap <= cfg.oracle.tolerance;
    let doc = json!({
        "report": report,
        "tolerance": cfg.oracle.tolerance,
        "pass": pass,
        "h": plan.h,
        "particle_mass": ps.mass,
        "min_gap_slack": ps.min_gap_slack(),
        "flux_histogram": reconstruct_flux(&ps, cfg.oracle.bins.max(1)),
    });
    write_json(&cfg.out.join("report.json"), &doc)?;
    if pass {
        Ok(())
    } else {
        Err(CliError::Oracle {
            gap: report.sup_toll_gap,
            tol: cfg.oracle.tolerance,
        })
    }
}

fn write_solution(cfg: &RunConfig, sol: &Solution) -> Result<(), CliError> {
    let mut doc = json!({
        "x0": sol.x0,
        "h": sol.h,
        "omega_mass": sol.feasibility.omega_mass,
        "total_cost": sol.total_cost(),
        "crossing": sol.plan.is_some(),
    });
    if let (Some(inst), Some(plan)) = (&sol.instance, &sol.plan) {
        doc["normalization"] = json!({
            "mass": inst.mass,
            "reflected": inst.reflected,
            "omega": [inst.omega.0, inst.omega.1],
        });
        doc["plan"] = plan_json(plan);
        write_plan_csv(cfg, plan)?;
        write_flow(cfg, plan)?;
    }
    write_json(&cfg.out.join("plan.json"), &doc)
}

fn plan_json(plan: &TransportPlan) -> Value {
    let (a0, b0) = plan.support();
    let intervals: Vec<Value> = plan
        .intervals
        .iter()
        .map(|i| json!({"z": i.z, "w": i.w, "y": i.y, "merged": i.merged}))
        .collect();
    json!({
        "h": plan.h,
        "h_requested": plan.h_requested,
        "cost_J": plan.cost_j,
        "W2_sq": plan.w2_sq,
        "intervals": intervals,
        "gamma0": plan.gamma0,
        "gamma1": plan.gamma1,
        "toll_alpha0": plan.toll(a0),
        "toll_beta0": plan.toll(b0),
        "iterations": plan.iterations,
        "unconstrained": plan.is_unconstrained(),
        "terminated_by_cap": plan.terminated_by_cap,
    })
}

fn write_plan_csv(cfg: &RunConfig, plan: &TransportPlan) -> Result<(), CliError> {
    let (a, b) = plan.support();
    let n = cfg.solver.grid;
    let mut csv = String::from("x,v_star,toll,T,saturated\n");
    for k in 0..n {
        let x = if k + 1 == n {
            b
        } else {
            a + (b - a) * k as f64 / (n - 1) as f64
        };
        let sat = if plan.is_saturated(x) { 1.0 } else { 0.0 };
        row(
            &mut csv,
            &[x, plan.v_star(x), plan.toll(x), plan.target_of(x), sat],
        );
    }
    write_atomic(&cfg.out.join("plan.csv"), csv.as_bytes())
}

fn write_flow(cfg: &RunConfig, plan: &TransportPlan) -> Result<(), CliError> {
    let mut csv = String::from("t,x,density\n");
    for &t in &cfg.output.times {
        let s = snapshot(plan, t, cfg.output.snapshot_cells);
        for (x, d) in s.cell_centers().iter().zip(&s.density_est) {
            row(&mut csv, &[t, *x, *d]);
        }
    }
    write_atomic(&cfg.out.join("snapshots.csv"), csv.as_bytes())?;

    let (ts, flux) = flux_profile(plan, cfg.output.flux_times);
    let mut csv = String::from("t,flux\n");
    for (t, f) in ts.iter().zip(&flux) {
        row(&mut csv, &[*t, *f]);
    }
    write_atomic(&cfg.out.join("flux.csv"), csv.as_bytes())
}

fn row(out: &mut String, vals: &[f64]) {
    for (k, v) in vals.iter().enumerate() {
        if k > 0 {
            out.push(',');
        }
        out.push_str(&fmt_num(*v));
    }
    out.push('\n');
}

/// Twelve significant digits, plain notation for moderate exponents,
/// trailing zeros dropped.
pub fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.11e}");
    let (mant, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..12).contains(&exp) {
        let mut s = String::new();
        let _ = write!(s, "{:.*}", (11 - exp) as usize, v);
        trim_zeros(&s).to_string()
    } else {
        format!("{}e{}", trim_zeros(mant), exp)
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn write_json(path: &Path, v: &Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(v).expect("json values serialize");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Writes through a temporary sibling and renames it into place.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let io = |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(io)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(bytes).map_err(io)?;
    f.sync_all().map_err(io)?;
    drop(f);
    fs::rename(&tmp, path).map_err(io)
}
