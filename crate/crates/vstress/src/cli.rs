//! The `vstress` command line: analyze, optimize, place, sweep, simulate.
//!
//! Every command writes CSV tables into `--out` and prints a short
//! summary. Exit codes are listed in [`crate::error::exit`].

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use vstress_core::controller::{
    build_xproblem, run_online, step_size_bound, CoupledPlant, LinearizedPlant, LoadProfile, OnlineOptions, Plant,
    RoundExecutor, ScenarioTrace, Schedule, Sequential, Termination, XProblem,
};
use vstress_core::linalg::{inf_norm, two_norm};
use vstress_core::power_flow::{linearized_voltages, nose_curve, solve_rpfe};
use vstress_core::smooth::SmoothCfg;
use vstress_core::stress::{
    build_problem, default_gamma_grid, default_reweight_eps, fraction_capacities, polish, solve_sparse_placement,
    solve_stress_lp, sweep_point, StressProblem, StressSolution, SweepRow,
};
use vstress_core::{build_model, GridCase, NetworkModel};

use crate::error::{exit, AppError, CaseError};
use crate::exec::Parallel;
use crate::fmt::num;
use crate::studies::{jump_schedule, random_scalings};
use crate::tables::{parse_capacities, parse_schedule, write_csv};
use crate::{parse_matpower_case, parse_native_case};

#[derive(Debug, Parser)]
#[command(name = "vstress", version, about = "Reactive power stress analysis, compensator placement and distributed voltage control")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the reactive model, check its assumptions and report the collapse margin.
    Analyze(RunConfig),
    /// Minimize voltage stress with compensation at every allowed bus.
    Optimize(RunConfig),
    /// Sparse compensator placement for one gamma.
    Place(RunConfig),
    /// Placement over a grid of gamma values.
    Sweep(RunConfig),
    /// Closed-loop run of the distributed controller.
    Simulate(RunConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Matpower,
    Native,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlantKind {
    Linearized,
    Coupled,
}

#[derive(Debug, Clone, Args)]
pub struct RunConfig {
    /// Case file (.m for MATPOWER, .toml for the native format).
    #[arg(long)]
    pub case: PathBuf,
    /// Overrides the format guessed from the file extension.
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Nominal voltage V_N (p.u.).
    #[arg(long, default_value_t = 1.0)]
    pub vn: f64,
    /// Allowed relative deviation from V_N.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Symmetric compensator capacity as a fraction of the largest reactive load.
    #[arg(long, default_value_t = 0.5)]
    pub cap_frac: f64,
    /// CSV with bus_id,q_min,q_max in MVAr; replaces --cap-frac.
    #[arg(long)]
    pub cap_file: Option<PathBuf>,
    /// Load bus ids that carry compensators (default: all load buses).
    #[arg(long, value_delimiter = ',')]
    pub compensators: Vec<u32>,
    /// Sparsity weight for optimize and place.
    #[arg(long, default_value_t = 0.0)]
    pub gamma: f64,
    /// Sweep grid, either "lo:hi:count" (zero plus log spacing) or a comma list.
    #[arg(long, default_value = "1e-6:1e-1:40")]
    pub gamma_grid: String,
    /// Offset of the reweighting rule (default 1e-3 max(1, |Q_L|_inf)).
    #[arg(long)]
    pub reweight_eps: Option<f64>,
    #[arg(long, default_value_t = 10)]
    pub reweight_rounds: usize,
    /// Softmax sharpness a of the smooth cost.
    #[arg(long, default_value_t = 50.0)]
    pub sharpness: f64,
    /// Exponent offset of the smooth cost (1 gives the closed-form update).
    #[arg(long, default_value_t = 1.0)]
    pub eps: f64,
    /// Dual step size (default 0.9 of the convergence bound).
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long, default_value_t = 4_000_000)]
    pub rounds: usize,
    #[arg(long, value_enum, default_value_t = PlantKind::Linearized)]
    pub plant: PlantKind,
    /// CSV of demand overrides t,bus_id,p_demand,q_demand (MW, MVAr).
    #[arg(long)]
    pub schedule: Option<PathBuf>,
    /// Demand multiplier applied at half horizon when no schedule is given.
    #[arg(long, default_value_t = crate::studies::JUMP_FACTOR)]
    pub jump: f64,
    /// Trace sampling period in rounds (default rounds / 2000).
    #[arg(long)]
    pub record_every: Option<usize>,
    /// Run agent updates on the thread pool.
    #[arg(long)]
    pub parallel: bool,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Seed for the random load scalings of analyze.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of random load scalings to test in analyze.
    #[arg(long, default_value_t = 0)]
    pub scalings: usize,
    /// Points on the nose curve written by analyze (0 disables it).
    #[arg(long, default_value_t = 0)]
    pub nose_steps: usize,
}

/// Parses arguments, runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(summary) => {
            print!("{summary}");
            exit::OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs one command and returns its printed summary.
pub fn execute(cmd: &Command) -> Result<String, AppError> {
    match cmd {
        Command::Analyze(c) => cmd_analyze(c),
        Command::Optimize(c) => cmd_optimize(c),
        Command::Place(c) => cmd_place(c),
        Command::Sweep(c) => cmd_sweep(c),
        Command::Simulate(c) => cmd_simulate(c),
    }
}

pub fn load_case(path: &Path, format: Option<Format>) -> Result<GridCase, AppError> {
    let text = std::fs::read_to_string(path).map_err(|source| AppError::Input {
        path: path.to_path_buf(),
        source,
    })?;
    let format = format.unwrap_or(match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => Format::Native,
        _ => Format::Matpower,
    });
    let parsed: Result<GridCase, CaseError> = match format {
        Format::Matpower => parse_matpower_case(&text),
        Format::Native => parse_native_case(&text),
    };
    parsed.map_err(|source| AppError::Case {
        path: path.to_path_buf(),
        source,
    })
}

fn read_table(path: &Path) -> Result<String, AppError> {
    std::fs::read_to_string(path).map_err(|source| AppError::Input {
        path: path.to_path_buf(),
        source,
    })
}

fn prepare_out(cfg: &RunConfig) -> Result<(), AppError> {
    std::fs::create_dir_all(&cfg.out).map_err(|source| AppError::Output {
        path: cfg.out.clone(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> Result<(), AppError> {
    std::fs::write(path, text).map_err(|source| AppError::Output {
        path: path.to_path_buf(),
        source,
    })
}

/// Parsed case, model and capacity boxes shared by the optimization commands.
struct Setup {
    case: GridCase,
    model: NetworkModel,
    q_load: Vec<f64>,
    q_min: Vec<f64>,
    q_max: Vec<f64>,
}

fn check_config(cfg: &RunConfig) -> Result<(), AppError> {
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(AppError::Usage(format!("--alpha must lie in (0, 1), got {}", cfg.alpha)));
    }
    if !(cfg.vn > 0.0 && cfg.vn.is_finite()) {
        return Err(AppError::Usage(format!("--vn must be positive, got {}", cfg.vn)));
    }
    if !(cfg.cap_frac >= 0.0 && cfg.cap_frac.is_finite()) {
        return Err(AppError::Usage(format!("--cap-frac must be nonnegative, got {}", cfg.cap_frac)));
    }
    Ok(())
}

fn setup(cfg: &RunConfig) -> Result<Setup, AppError> {
    check_config(cfg)?;
    let case = load_case(&cfg.case, cfg.format)?;
    let model = build_model(&case, None)?;
    let q_load = case.load_q_injections();
    let compensators = if cfg.compensators.is_empty() {
        None
    } else {
        let mut idx = Vec::with_capacity(cfg.compensators.len());
        for id in &cfg.compensators {
            idx.push(
                model
                    .load_index(*id)
                    .ok_or_else(|| AppError::Usage(format!("--compensators: bus {id} is not a load bus")))?,
            );
        }
        Some(idx)
    };
    let (q_min, q_max) = match &cfg.cap_file {
        Some(path) => {
            let text = read_table(path)?;
            let (lo, hi) = parse_capacities(&text, &case, &model).map_err(|message| AppError::Table {
                path: path.clone(),
                message,
            })?;
            match &compensators {
                // the capacity file wins, but buses outside the list get nothing
                Some(idx) => {
                    let keep = |i: usize, v: f64| if idx.contains(&i) { v } else { 0.0 };
                    (
                        lo.iter().enumerate().map(|(i, v)| keep(i, *v)).collect(),
                        hi.iter().enumerate().map(|(i, v)| keep(i, *v)).collect(),
                    )
                }
                None => (lo, hi),
            }
        }
        None => fraction_capacities(&q_load, cfg.cap_frac, compensators.as_deref()),
    };
    Ok(Setup {
        case,
        model,
        q_load,
        q_min,
        q_max,
    })
}

fn cmd_analyze(cfg: &RunConfig) -> Result<String, AppError> {
    check_config(cfg)?;
    let case = load_case(&cfg.case, cfg.format)?;
    let model = build_model(&case, None)?;
    prepare_out(cfg)?;
    let q_load = case.load_q_injections();
    let margin = model.collapse_margin(&q_load)?;
    let exact = solve_rpfe(&model, &q_load, None)?;
    let lin = model.denormalize_voltages(&linearized_voltages(&model, &q_load)?)?;
    let v_open = model.v_open();

    let mut s = String::new();
    let _ = writeln!(s, "buses = {}", case.buses.len());
    let _ = writeln!(s, "branches = {}", case.branches.len());
    let _ = writeln!(s, "load_buses = {}", model.n_load());
    let _ = writeln!(s, "generator_buses = {}", model.n_gen());
    let _ = writeln!(s, "assumptions = ok (Metzler load block, Hurwitz, connected load graph)");
    let _ = writeln!(s, "collapse_margin = {}", num(margin));
    let _ = writeln!(
        s,
        "solvability = {}",
        if margin < 1.0 { "certified (margin < 1)" } else { "not certified (margin >= 1)" }
    );
    let _ = writeln!(s, "v_open_min = {}", num(v_open.iter().copied().fold(f64::INFINITY, f64::min)));
    let _ = writeln!(s, "v_open_max = {}", num(v_open.iter().copied().fold(f64::NEG_INFINITY, f64::max)));
    let _ = writeln!(s, "base_load_flow_converged = {}", exact.converged);

    let ids = model.load_bus_ids();
    write_csv(
        &cfg.out.join("loads.csv"),
        &["bus_id", "q_load", "v_open", "v_exact", "v_linear"],
        (0..model.n_load()).map(|i| {
            let v_exact = if exact.converged { exact.v_load[i] } else { f64::NAN };
            vec![ids[i].to_string(), num(q_load[i]), num(v_open[i]), num(v_exact), num(lin[i])]
        }),
    )?;

    if cfg.nose_steps > 0 {
        if q_load.iter().all(|q| *q == 0.0) {
            log::warn!("no reactive load; nose curve skipped");
        } else {
            let curve = nose_curve(&model, &q_load, cfg.nose_steps)?;
            let _ = writeln!(s, "nose_tip_scale = {}", num(curve.tip_scale));
            let mut rows = Vec::new();
            for p in &curve.points {
                for i in 0..model.n_load() {
                    let low = p.low.map_or(String::new(), |l| num(l * v_open[i]));
                    rows.push(vec![num(p.scale), ids[i].to_string(), num(p.high.v_load[i]), low]);
                }
            }
            write_csv(&cfg.out.join("nose.csv"), &["scale", "bus_id", "v_high", "v_low"], rows)?;
        }
    }

    if cfg.scalings > 0 {
        let rows = random_scalings(&model, &q_load, cfg.scalings, 1.2, cfg.seed)?;
        let certified = rows.iter().filter(|r| r.margin < 1.0).count();
        let solved = rows.iter().filter(|r| r.margin < 1.0 && r.converged).count();
        let _ = writeln!(s, "scalings_certified = {certified}");
        let _ = writeln!(s, "scalings_certified_and_solved = {solved}");
        write_csv(
            &cfg.out.join("scalings.csv"),
            &["k", "margin", "converged", "iterations", "residual"],
            rows.iter().map(|r| {
                vec![
                    r.k.to_string(),
                    num(r.margin),
                    r.converged.to_string(),
                    r.iterations.to_string(),
                    num(r.residual),
                ]
            }),
        )?;
    }
    write_text(&cfg.out.join("summary.txt"), &s)?;
    Ok(s)
}

fn problem<'a>(su: &'a Setup, cfg: &RunConfig) -> Result<StressProblem<'a>, AppError> {
    Ok(build_problem(&su.model, &su.q_load, &su.q_min, &su.q_max, cfg.vn, cfg.alpha)?)
}

fn reweight_eps(cfg: &RunConfig, q_load: &[f64]) -> f64 {
    cfg.reweight_eps.unwrap_or_else(|| default_reweight_eps(q_load))
}

/// Placement for `cfg.gamma` polished on its support; plain LP at zero.
fn placed(p: &StressProblem, cfg: &RunConfig) -> Result<StressSolution, AppError> {
    if cfg.gamma == 0.0 {
        return Ok(solve_stress_lp(p)?);
    }
    let s = solve_sparse_placement(p, cfg.gamma, reweight_eps(cfg, &p.q_load), cfg.reweight_rounds)?;
    Ok(polish(p, &s.support)?)
}

fn solution_summary(s: &mut String, p: &StressProblem, sol: &StressSolution) {
    let base = p.baseline_stress();
    let _ = writeln!(s, "stress_before = {}", num(base));
    let _ = writeln!(s, "stress_after = {}", num(sol.cost));
    let _ = writeln!(s, "cost_ratio = {}", num(if base > 0.0 { sol.cost / base } else { 0.0 }));
    let _ = writeln!(s, "devices = {}", sol.support.len());
    let absorbing = sol.support.iter().filter(|i| sol.q_opt[**i] < 0.0).count();
    let _ = writeln!(s, "absorbing_devices = {absorbing}");
    let _ = writeln!(s, "kkt_residual = {}", num(sol.kkt.max()));
    let _ = writeln!(s, "active_constraints = {}", sol.active_set.len());
}

fn cmd_optimize(cfg: &RunConfig) -> Result<String, AppError> {
    let su = setup(cfg)?;
    let p = problem(&su, cfg)?;
    let sol = placed(&p, cfg)?;
    prepare_out(cfg)?;
    let m = &su.model;
    let n = m.n_load();
    let lo = cfg.vn * (1.0 - cfg.alpha);
    let hi = cfg.vn * (1.0 + cfg.alpha);
    let total: Vec<f64> = su.q_load.iter().zip(&sol.q_opt).map(|(a, b)| a + b).collect();
    let before = m.denormalize_voltages(&linearized_voltages(m, &su.q_load)?)?;
    let after = m.denormalize_voltages(&linearized_voltages(m, &total)?)?;
    let exact = solve_rpfe(m, &total, None)?;
    let ids = m.load_bus_ids();

    write_csv(
        &cfg.out.join("optimize.csv"),
        &["bus_id", "q_load", "q_opt", "v_hat", "secure_lo", "secure_hi"],
        (0..n).map(|i| {
            vec![ids[i].to_string(), num(su.q_load[i]), num(sol.q_opt[i]), num(after[i]), num(lo), num(hi)]
        }),
    )?;
    write_csv(
        &cfg.out.join("voltage_profile.csv"),
        &["bus_id", "v_before", "v_after", "v_exact_after", "secure_lo", "secure_hi"],
        (0..n).map(|i| {
            let v_exact = if exact.converged { exact.v_load[i] } else { f64::NAN };
            vec![ids[i].to_string(), num(before[i]), num(after[i]), num(v_exact), num(lo), num(hi)]
        }),
    )?;

    let mut s = String::new();
    solution_summary(&mut s, &p, &sol);
    let out_of_band = |v: &[f64]| v.iter().filter(|x| **x < lo - 1e-9 || **x > hi + 1e-9).count();
    let _ = writeln!(s, "linearized_out_of_band = {}", out_of_band(&after));
    if exact.converged {
        let _ = writeln!(s, "exact_out_of_band = {}", out_of_band(&exact.v_load));
    } else {
        let _ = writeln!(s, "exact_out_of_band = unknown (decoupled flow did not converge)");
    }
    write_text(&cfg.out.join("summary.txt"), &s)?;
    Ok(s)
}

fn sign_label(q: f64, on: bool) -> &'static str {
    if !on {
        "none"
    } else if q > 0.0 {
        "injection"
    } else {
        "absorption"
    }
}

fn cmd_place(cfg: &RunConfig) -> Result<String, AppError> {
    let su = setup(cfg)?;
    let p = problem(&su, cfg)?;
    let sol = placed(&p, cfg)?;
    prepare_out(cfg)?;
    let ids = su.model.load_bus_ids();
    write_csv(
        &cfg.out.join("placement.csv"),
        &["bus_id", "device", "q_opt", "sign"],
        (0..su.model.n_load()).map(|i| {
            let on = sol.support.contains(&i);
            vec![
                ids[i].to_string(),
                u8::from(on).to_string(),
                num(sol.q_opt[i]),
                sign_label(sol.q_opt[i], on).to_string(),
            ]
        }),
    )?;
    let mut s = String::new();
    let _ = writeln!(s, "gamma = {}", num(cfg.gamma));
    solution_summary(&mut s, &p, &sol);
    write_text(&cfg.out.join("summary.txt"), &s)?;
    Ok(s)
}

/// Parses "lo:hi:count" or a comma-separated list.
pub fn parse_gamma_grid(text: &str) -> Result<Vec<f64>, AppError> {
    let bad = || AppError::Usage(format!("--gamma-grid: cannot parse '{text}'"));
    let parts: Vec<&str> = text.split(':').collect();
    let grid = if parts.len() == 3 {
        let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
        let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
        let count: usize = parts[2].trim().parse().map_err(|_| bad())?;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(AppError::Usage("--gamma-grid: need 0 < lo <= hi".into()));
        }
        default_gamma_grid(lo, hi, count)
    } else if parts.len() == 1 {
        text.split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<Vec<_>, _>>()?
    } else {
        return Err(bad());
    };
    if grid.iter().any(|g| !(*g >= 0.0 && g.is_finite())) || grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(AppError::Usage("--gamma-grid: values must be nonnegative and sorted".into()));
    }
    Ok(grid)
}

/// Sweep points run independently on the thread pool, in grid order.
pub fn parallel_sweep(p: &StressProblem, gammas: &[f64], reweight_eps: f64, rounds: usize) -> Vec<SweepRow> {
    gammas.par_iter().map(|&g| sweep_point(p, g, reweight_eps, rounds)).collect()
}

fn cmd_sweep(cfg: &RunConfig) -> Result<String, AppError> {
    let grid = parse_gamma_grid(&cfg.gamma_grid)?;
    let su = setup(cfg)?;
    let p = problem(&su, cfg)?;
    let rows = parallel_sweep(&p, &grid, reweight_eps(cfg, &su.q_load), cfg.reweight_rounds);
    prepare_out(cfg)?;
    let ids = su.model.load_bus_ids();
    let support = |r: &SweepRow| r.support.iter().map(|i| ids[*i].to_string()).collect::<Vec<_>>().join(" ");
    write_csv(
        &cfg.out.join("sweep.csv"),
        &["gamma", "n_devices", "cost_ratio", "feasible", "support"],
        rows.iter().map(|r| {
            vec![num(r.gamma), r.n_devices.to_string(), num(r.cost_ratio), r.feasible.to_string(), support(r)]
        }),
    )?;
    let mut s = String::new();
    let _ = writeln!(s, "gamma,n_devices,cost_ratio");
    for r in &rows {
        let _ = writeln!(s, "{:.3e},{},{:.6}", r.gamma, r.n_devices, r.cost_ratio);
    }
    if rows.iter().all(|r| !r.feasible) {
        // every point failing means the base problem itself is infeasible
        solve_stress_lp(&p)?;
    }
    write_text(&cfg.out.join("summary.txt"), &s)?;
    Ok(s)
}

fn simulate_with<P: Plant>(
    xp: &XProblem,
    cfg: SmoothCfg,
    rho: f64,
    schedule: &Schedule,
    plant: &mut P,
    parallel: bool,
    opts: OnlineOptions,
) -> vstress_core::Result<ScenarioTrace> {
    fn go<P: Plant, E: RoundExecutor>(
        xp: &XProblem,
        cfg: SmoothCfg,
        rho: f64,
        schedule: &Schedule,
        plant: &mut P,
        exec: &E,
        opts: OnlineOptions,
    ) -> vstress_core::Result<ScenarioTrace> {
        run_online(xp, cfg, rho, schedule, plant, exec, opts)
    }
    if parallel {
        go(xp, cfg, rho, schedule, plant, &Parallel, opts)
    } else {
        go(xp, cfg, rho, schedule, plant, &Sequential, opts)
    }
}

/// Relative error target used in the simulate summary.
pub const CONVERGENCE_TOLERANCE: f64 = 1e-3;

fn cmd_simulate(cfg: &RunConfig) -> Result<String, AppError> {
    let su = setup(cfg)?;
    let m = &su.model;
    let xp = build_xproblem(m, &su.q_load, &su.q_min, &su.q_max, cfg.vn, cfg.alpha)?;
    let smooth = SmoothCfg::new(cfg.sharpness, cfg.eps).map_err(|e| AppError::Usage(e.to_string()))?;
    let rho = match cfg.rho {
        Some(r) if r > 0.0 && r.is_finite() => r,
        Some(r) => return Err(AppError::Usage(format!("--rho must be positive, got {r}"))),
        None => {
            0.9 * step_size_bound(m, &smooth).map_err(|e| AppError::Usage(format!("{e}; pass --rho explicitly")))?
        }
    };
    let schedule = match &cfg.schedule {
        Some(path) => parse_schedule(&read_table(path)?, &su.case, m).map_err(|message| AppError::Table {
            path: path.clone(),
            message,
        })?,
        None => jump_schedule(LoadProfile::from_case(&su.case), cfg.rounds, cfg.jump),
    };
    let mut opts = OnlineOptions::new(cfg.rounds);
    opts.record_every = cfg.record_every.unwrap_or((cfg.rounds / 2000).max(1));
    let trace = match cfg.plant {
        PlantKind::Linearized => {
            simulate_with(&xp, smooth, rho, &schedule, &mut LinearizedPlant { model: m }, cfg.parallel, opts)?
        }
        PlantKind::Coupled => {
            let mut plant = CoupledPlant::new(&su.case, m)?;
            simulate_with(&xp, smooth, rho, &schedule, &mut plant, cfg.parallel, opts)?
        }
    };
    prepare_out(cfg)?;
    write_trace(&cfg.out.join("trace.csv"), m, &trace)?;
    let s = simulate_summary(cfg, rho, &trace);
    write_text(&cfg.out.join("summary.txt"), &s)?;
    match &trace.termination {
        Termination::Completed => Ok(s),
        Termination::PlantDiverged { round, reason } => {
            print!("{s}");
            Err(AppError::PlantDiverged { round: *round, reason: reason.clone() })
        }
        Termination::ControllerDiverged { round, residual } => {
            print!("{s}");
            Err(AppError::ControllerDiverged { round: *round, residual: *residual })
        }
    }
}

pub fn write_trace(path: &Path, model: &NetworkModel, trace: &ScenarioTrace) -> Result<(), AppError> {
    let ids = model.load_bus_ids();
    write_csv(
        path,
        &["t", "bus_id", "q_load", "y", "q", "x", "v_coupled", "err_norm"],
        trace.rows.iter().flat_map(|r| {
            (0..ids.len()).map(move |i| {
                vec![
                    r.t.to_string(),
                    ids[i].to_string(),
                    num(r.q_load[i]),
                    num(r.y[i]),
                    num(r.q[i]),
                    num(r.x[i]),
                    num(r.v_load[i]),
                    num(r.err_norm),
                ]
            })
        }),
    )
}

/// First recorded round of each segment after which the error stays
/// within `CONVERGENCE_TOLERANCE * max(|q_opt|, 1e-12)`.
pub fn rounds_to_tolerance(trace: &ScenarioTrace) -> Vec<(usize, Option<usize>)> {
    let mut out = Vec::new();
    for (k, (start, opt)) in trace.q_opt.iter().enumerate() {
        let end = trace.q_opt.get(k + 1).map_or(usize::MAX, |s| s.0);
        let tol = CONVERGENCE_TOLERANCE * two_norm(opt).max(1e-12);
        let mut hit = None;
        for r in trace.rows.iter().filter(|r| r.t >= *start && r.t < end) {
            if r.err_norm <= tol {
                hit.get_or_insert(r.t - start);
            } else {
                hit = None;
            }
        }
        out.push((*start, hit));
    }
    out
}

fn simulate_summary(cfg: &RunConfig, rho: f64, trace: &ScenarioTrace) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "rho = {}", num(rho));
    let _ = writeln!(s, "rounds = {}", cfg.rounds);
    let termination = match &trace.termination {
        Termination::Completed => "completed".to_string(),
        Termination::PlantDiverged { round, .. } => format!("plant diverged at round {round}"),
        Termination::ControllerDiverged { round, .. } => format!("controller diverged at round {round}"),
    };
    let _ = writeln!(s, "termination = {termination}");
    if let Some(last) = trace.last() {
        let dev = |v: &[f64]| inf_norm(&v.iter().map(|x| x - cfg.vn).collect::<Vec<_>>());
        let worst = trace.rows.iter().map(|r| dev(&r.v_load)).fold(0.0, f64::max);
        let gap = last
            .v_load
            .iter()
            .zip(&last.v_linear)
            .map(|(a, b)| ((a - b) / b).abs())
            .fold(0.0, f64::max);
        let _ = writeln!(s, "final_round = {}", last.t);
        let _ = writeln!(s, "final_err_norm = {}", num(last.err_norm));
        let _ = writeln!(s, "final_max_voltage_deviation = {}", num(dev(&last.v_load)));
        let _ = writeln!(s, "max_voltage_deviation = {}", num(worst));
        let _ = writeln!(s, "final_linear_gap = {}", num(gap));
        let _ = writeln!(s, "final_in_band = {}", last.in_band);
    }
    for (start, hit) in rounds_to_tolerance(trace) {
        match hit {
            Some(r) => {
                let _ = writeln!(s, "rounds_to_1e-3[segment {start}] = {r}");
            }
            None => {
                let _ = writeln!(s, "rounds_to_1e-3[segment {start}] = not reached");
            }
        }
    }
    s
}
