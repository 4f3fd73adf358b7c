//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero when any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vstress::cli::{execute, parallel_sweep, Command, Format, PlantKind, RunConfig};
use vstress::studies::{jump_schedule, random_scalings, JUMP_FACTOR};
use vstress::{parse_matpower_case, Parallel};
use vstress_core::cases::{two_bus, IEEE30_COMPENSATOR_BUSES};
use vstress_core::controller::{
    build_xproblem, run_online, step_size_bound, CoupledPlant, LinearizedPlant, LoadProfile, OnlineOptions,
    Schedule, Sequential, Termination,
};
use vstress_core::linalg::two_norm;
use vstress_core::power_flow::{linearized_voltages, nose_curve, solve_rpfe};
use vstress_core::smooth::{f_tilde, grad_f, hessian_diag, lambert_w0, primal_update, SmoothCfg};
use vstress_core::stress::{
    build_problem, default_gamma_grid, default_reweight_eps, fraction_capacities, polish, solve_sparse_placement,
    solve_stress_lp, DEFAULT_REWEIGHT_ROUNDS,
};
use vstress_core::{BranchRecord, BusKind, BusRecord, Error, GenRecord, GridCase, NetworkModel};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn ieee30() -> GridCase {
    parse_matpower_case(&std::fs::read_to_string(data("case_ieee30.m")).unwrap()).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

// 1 ------------------------------------------------------------------------

fn two_bus_analytics() -> Check {
    let file = parse_matpower_case(&std::fs::read_to_string(data("case2bus.m")).unwrap()).unwrap();
    ensure(file == two_bus(0.0, 0.5), || "case2bus.m differs from the reference 2-bus case".into())?;
    let plain = file.model().unwrap();
    let shunt = two_bus(2.4, 0.5).model().unwrap();
    let checks = [
        ("Q_crit no shunt", plain.q_crit()[(0, 0)], -1.0),
        ("V_L* no shunt", plain.v_open()[0], 1.0),
        ("Q_crit shunt 2.4", shunt.q_crit()[(0, 0)], -2.5),
        ("V_L* shunt 2.4", shunt.v_open()[0], 2.5),
    ];
    for (what, got, want) in checks {
        ensure((got - want).abs() <= 1e-12, || format!("{what}: {got} vs {want}"))?;
    }
    let mut tips = Vec::new();
    for (m, want) in [(&plain, 1.0), (&shunt, 2.5)] {
        let tip = nose_curve(m, &[-1.0], 20).unwrap().tip_scale;
        ensure(rel(tip, want) <= 1e-6, || format!("nose tip {tip} vs {want}"))?;
        tips.push(tip);
    }
    Ok(format!("nose tips {:.9} and {:.9}", tips[0], tips[1]))
}

// 2 ------------------------------------------------------------------------

fn bisect(mut lo: f64, mut hi: f64, ok: impl Fn(f64) -> bool) -> f64 {
    while hi - lo > 1e-9 {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

fn solvability() -> Check {
    let case = ieee30();
    let m = case.model().unwrap();
    let rows = random_scalings(&m, &case.load_q_injections(), 200, 1.2, 2024).unwrap();
    let certified: Vec<_> = rows.iter().filter(|r| r.margin < 1.0).collect();
    ensure(certified.len() >= 100, || format!("only {} certified draws", certified.len()))?;
    if let Some(bad) = certified.iter().find(|r| !r.converged) {
        return Err(format!("draw {} with margin {} did not converge", bad.k, bad.margin));
    }
    let mut edges = Vec::new();
    for shunt in [0.0, 2.4] {
        let m = two_bus(shunt, 0.0).model().unwrap();
        let by_margin = bisect(0.0, 10.0, |s| m.collapse_margin(&[-s]).unwrap() < 1.0);
        let by_solution = bisect(0.0, 10.0, |s| {
            // real roots of -4 Q_crit v (v - 1) = -s exist iff the discriminant is nonnegative
            let qc = m.q_crit()[(0, 0)];
            let disc = 16.0 * qc * qc - 16.0 * qc * s;
            disc >= 0.0 && solve_rpfe(&m, &[-s], None).unwrap().converged
        });
        ensure((by_margin - by_solution).abs() <= 1e-6, || {
            format!("margin edge {by_margin} vs solvability edge {by_solution}")
        })?;
        edges.push(by_solution);
    }
    Ok(format!(
        "{}/{} certified draws solved; 2-bus edges {:.7} and {:.7}",
        certified.len(),
        rows.len(),
        edges[0],
        edges[1]
    ))
}

// 3 ------------------------------------------------------------------------

fn linearization_gap(m: &NetworkModel, q: &[f64]) -> f64 {
    let exact = solve_rpfe(m, q, None).unwrap().ok().unwrap();
    let lin = linearized_voltages(m, q).unwrap();
    exact.v_norm.iter().zip(&lin).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

fn linearization_order() -> Check {
    let mut out = Vec::new();
    for (name, case) in [("2-bus", two_bus(0.0, 0.5)), ("IEEE30", ieee30())] {
        let m = case.model().unwrap();
        let base = case.load_q_injections();
        let errs: Vec<f64> = [0.1, 0.05, 0.025]
            .iter()
            .map(|e| linearization_gap(&m, &base.iter().map(|q| q * e).collect::<Vec<_>>()))
            .collect();
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            ensure(ratio >= 3.5, || format!("{name}: error ratio {ratio}"))?;
            out.push(format!("{name} {ratio:.3}"));
        }
    }
    Ok(format!("halving ratios {}", out.join(", ")))
}

// 4 ------------------------------------------------------------------------

struct Small {
    name: &'static str,
    case: GridCase,
    q_min: Vec<f64>,
    q_max: Vec<f64>,
}

fn small_case(gens: &[(u32, f64)], loads: &[(u32, f64, f64)], lines: &[(u32, u32, f64)]) -> GridCase {
    let mut buses: Vec<BusRecord> = gens
        .iter()
        .map(|&(id, v)| BusRecord { id, kind: BusKind::Generator, p_demand: 0.0, q_demand: 0.0, shunt_b: 0.0, v_setpoint: v })
        .collect();
    buses.extend(loads.iter().map(|&(id, qd, b)| BusRecord {
        id,
        kind: BusKind::Load,
        p_demand: 0.0,
        q_demand: qd,
        shunt_b: b,
        v_setpoint: 1.0,
    }));
    GridCase {
        base_mva: 100.0,
        buses,
        branches: lines
            .iter()
            .map(|&(from, to, x)| BranchRecord { from, to, reactance_x: x, charging_b: 0.0 })
            .collect(),
        gens: gens.iter().map(|&(bus, v)| GenRecord { bus, p_gen: 0.0, v_setpoint: v }).collect(),
    }
}

fn small_instances() -> Vec<Small> {
    vec![
        Small { name: "2-bus capped", case: two_bus(0.0, 0.5), q_min: vec![0.0], q_max: vec![0.4] },
        Small { name: "2-bus wide", case: two_bus(0.0, 0.5), q_min: vec![-1.0], q_max: vec![1.0] },
        Small { name: "2-bus shunt", case: two_bus(1.0, 0.9), q_min: vec![-0.5], q_max: vec![0.5] },
        Small { name: "2-bus short", case: two_bus(0.0, 0.5), q_min: vec![0.0], q_max: vec![0.2] },
        Small {
            name: "chain",
            case: small_case(&[(1, 1.02)], &[(2, 0.3, 0.0), (3, 0.4, 0.0)], &[(1, 2, 0.1), (2, 3, 0.15)]),
            q_min: vec![-0.3, -0.3],
            q_max: vec![0.3, 0.3],
        },
        Small {
            name: "chain one device",
            case: small_case(&[(1, 1.0)], &[(2, 0.2, 0.0), (3, 0.3, 0.0)], &[(1, 2, 0.1), (2, 3, 0.1)]),
            q_min: vec![0.0, -0.4],
            q_max: vec![0.0, 0.4],
        },
        Small {
            name: "two generators",
            case: small_case(
                &[(1, 1.03), (4, 0.98)],
                &[(2, 0.5, 0.1), (3, -0.1, 0.0)],
                &[(1, 2, 0.2), (2, 3, 0.1), (3, 4, 0.25)],
            ),
            q_min: vec![-0.2, -0.2],
            q_max: vec![0.6, 0.2],
        },
        Small {
            name: "mesh",
            case: small_case(
                &[(1, 1.0)],
                &[(2, 0.3, 0.0), (3, 0.2, 0.05), (4, 0.25, 0.0)],
                &[(1, 2, 0.08), (1, 3, 0.12), (2, 3, 0.1), (3, 4, 0.09), (2, 4, 0.2)],
            ),
            q_min: vec![-0.3, -0.3, -0.3],
            q_max: vec![0.3, 0.3, 0.3],
        },
        Small {
            name: "mesh asymmetric",
            case: small_case(
                &[(1, 1.05), (5, 1.0)],
                &[(2, 0.4, 0.0), (3, 0.1, 0.0), (4, 0.3, 0.0)],
                &[(1, 2, 0.1), (2, 3, 0.1), (3, 4, 0.1), (4, 5, 0.1), (1, 4, 0.3)],
            ),
            q_min: vec![0.0, -0.2, -0.1],
            q_max: vec![0.5, 0.2, 0.1],
        },
    ]
}

fn inv(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    // Gauss-Jordan without pivoting is enough for the diagonally dominant blocks here
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut row = r.clone();
            row.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            row
        })
        .collect();
    for c in 0..n {
        let p = m[c][c];
        for v in m[c].iter_mut() {
            *v /= p;
        }
        for r in 0..n {
            if r != c {
                let f = m[r][c];
                let pivot = m[c].clone();
                for (v, pv) in m[r].iter_mut().zip(pivot) {
                    *v -= f * pv;
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

/// Stress and band feasibility straight from the case data.
struct Oracle {
    m_inv: Vec<Vec<f64>>,
    q_load: Vec<f64>,
    x_lo: Vec<f64>,
    x_hi: Vec<f64>,
}

impl Oracle {
    fn new(case: &GridCase, vn: f64, alpha: f64) -> Self {
        let loads: Vec<&BusRecord> = case.buses.iter().filter(|b| b.kind == BusKind::Load).collect();
        let n = loads.len();
        let li = |id: u32| loads.iter().position(|b| b.id == id);
        let mut b_ll = vec![vec![0.0; n]; n];
        let mut drive = vec![0.0; n];
        for (i, b) in loads.iter().enumerate() {
            b_ll[i][i] += b.shunt_b;
        }
        for br in &case.branches {
            let y = 1.0 / br.reactance_x;
            for (a, c) in [(br.from, br.to), (br.to, br.from)] {
                if let Some(i) = li(a) {
                    b_ll[i][i] -= y;
                    match li(c) {
                        Some(j) => b_ll[i][j] += y,
                        None => drive[i] += y * case.bus(c).unwrap().v_setpoint,
                    }
                }
            }
        }
        let binv = inv(&b_ll);
        let v_open: Vec<f64> = (0..n).map(|i| -(0..n).map(|j| binv[i][j] * drive[j]).sum::<f64>()).collect();
        let qc: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| 0.25 * v_open[i] * b_ll[i][j] * v_open[j]).collect())
            .collect();
        Oracle {
            m_inv: inv(&qc),
            q_load: loads.iter().map(|b| -b.q_demand).collect(),
            x_lo: v_open.iter().map(|v| 4.0 * (vn * (1.0 - alpha) / v - 1.0)).collect(),
            x_hi: v_open.iter().map(|v| 4.0 * (vn * (1.0 + alpha) / v - 1.0)).collect(),
        }
    }

    /// `(stress, feasible)` for injection `q`.
    fn eval(&self, q: &[f64]) -> (f64, bool) {
        let n = q.len();
        let mut stress = 0.0_f64;
        let mut feasible = true;
        for i in 0..n {
            let x = -(0..n).map(|j| self.m_inv[i][j] * (self.q_load[j] + q[j])).sum::<f64>();
            stress = stress.max(x.abs());
            feasible &= x >= self.x_lo[i] && x <= self.x_hi[i];
        }
        (stress, feasible)
    }

    fn lipschitz(&self) -> f64 {
        self.m_inv.iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
    }
}

/// Smallest stress over feasible points of a uniform grid on the capacity box.
fn grid_search(o: &Oracle, lo: &[f64], hi: &[f64], points: usize) -> (Option<f64>, f64) {
    let n = lo.len();
    let steps: Vec<usize> = (0..n).map(|i| if hi[i] > lo[i] { points } else { 1 }).collect();
    let h = (0..n).map(|i| if steps[i] > 1 { (hi[i] - lo[i]) / (steps[i] - 1) as f64 } else { 0.0 }).fold(0.0, f64::max);
    let mut best: Option<f64> = None;
    let mut idx = vec![0usize; n];
    let mut q = vec![0.0; n];
    loop {
        for i in 0..n {
            q[i] = if steps[i] > 1 { lo[i] + (hi[i] - lo[i]) * idx[i] as f64 / (steps[i] - 1) as f64 } else { lo[i] };
        }
        let (s, ok) = o.eval(&q);
        if ok && best.is_none_or(|b| s < b) {
            best = Some(s);
        }
        let mut k = 0;
        while k < n {
            idx[k] += 1;
            if idx[k] < steps[k] {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if k == n {
            break;
        }
    }
    (best, h)
}

fn lp_oracle() -> Check {
    let mut worst_kkt = 0.0_f64;
    let mut lines = Vec::new();
    for inst in small_instances() {
        let m = inst.case.model().unwrap();
        let q_load = inst.case.load_q_injections();
        let p = build_problem(&m, &q_load, &inst.q_min, &inst.q_max, 1.0, 0.05).unwrap();
        let oracle = Oracle::new(&inst.case, 1.0, 0.05);
        let points = match q_load.len() {
            1 => 20001,
            2 => 801,
            _ => 121,
        };
        let (best, h) = grid_search(&oracle, &inst.q_min, &inst.q_max, points);
        match (solve_stress_lp(&p), best) {
            (Ok(sol), Some(grid)) => {
                worst_kkt = worst_kkt.max(sol.kkt.max());
                let (s, ok) = oracle.eval(&sol.q_opt);
                ensure(ok || p.violation(&sol.q_opt) <= 1e-8, || format!("{}: LP point outside the band", inst.name))?;
                ensure((s - sol.cost).abs() <= 1e-9, || format!("{}: cost {} vs oracle stress {s}", inst.name, sol.cost))?;
                let slack = oracle.lipschitz() * h;
                ensure(sol.cost <= grid + 1e-9 && grid - sol.cost <= slack, || {
                    format!("{}: LP {} vs grid {grid} (resolution {slack:.2e})", inst.name, sol.cost)
                })?;
                lines.push(format!("{} {:.2e}", inst.name, grid - sol.cost));
            }
            (Err(Error::Infeasible(_)), None) => lines.push(format!("{} infeasible", inst.name)),
            (lp, grid) => {
                return Err(format!(
                    "{}: LP {:?} but grid {:?}",
                    inst.name,
                    lp.map(|s| s.cost),
                    grid
                ))
            }
        }
    }
    // IEEE30: plain LP, placement rounds and polished solutions
    let case = ieee30();
    let m = case.model().unwrap();
    let q_load = case.load_q_injections();
    let (lo, hi) = fraction_capacities(&q_load, 0.5, None);
    let p = build_problem(&m, &q_load, &lo, &hi, 1.0, 0.05).unwrap();
    worst_kkt = worst_kkt.max(solve_stress_lp(&p).unwrap().kkt.max());
    let eps = default_reweight_eps(&q_load);
    for g in [1e-5, 1e-4, 1e-3] {
        let s = solve_sparse_placement(&p, g, eps, DEFAULT_REWEIGHT_ROUNDS).unwrap();
        worst_kkt = worst_kkt.max(s.kkt.max());
        worst_kkt = worst_kkt.max(polish(&p, &s.support).unwrap().kkt.max());
    }
    ensure(worst_kkt <= 1e-8, || format!("KKT residual {worst_kkt:e}"))?;
    Ok(format!("grid gaps [{}]; worst KKT {worst_kkt:.1e}", lines.join("; ")))
}

// 5 ------------------------------------------------------------------------

fn placement_study() -> Check {
    let case = ieee30();
    let m = case.model().unwrap();
    let q_load = case.load_q_injections();
    let (lo, hi) = fraction_capacities(&q_load, 0.5, None);
    let p = build_problem(&m, &q_load, &lo, &hi, 1.0, 0.05).unwrap();
    let base = solve_stress_lp(&p).unwrap();
    ensure(base.support.len() == 24, || format!("gamma = 0 support {}", base.support.len()))?;
    let negative = base.q_opt.iter().filter(|q| **q < 0.0).count();
    ensure(negative >= 1, || "no absorbing compensator at gamma = 0".into())?;
    let grid = default_gamma_grid(1e-6, 1e-1, 40);
    let rows = parallel_sweep(&p, &grid, default_reweight_eps(&q_load), DEFAULT_REWEIGHT_ROUNDS);
    ensure(rows.iter().all(|r| r.feasible), || "infeasible sweep point".into())?;
    ensure(rows[0].n_devices == 24, || "sweep starts below 24 devices".into())?;
    for w in rows.windows(2) {
        ensure(w[1].n_devices <= w[0].n_devices, || {
            format!("support grows from {} to {} at gamma {:e}", w[0].n_devices, w[1].n_devices, w[1].gamma)
        })?;
    }
    let r0 = rows[0].cost_ratio;
    let best = rows
        .iter()
        .filter(|r| (10..=12).contains(&r.n_devices) && rel(r.cost_ratio, r0) <= 0.02)
        .min_by_key(|r| (r.n_devices as i64 - 11).abs())
        .ok_or("no gamma with 10 to 12 devices within 2% of the dense ratio")?;
    Ok(format!(
        "gamma 0: 24 devices, {negative} absorbing, ratio {r0:.4}; gamma {:.2e}: {} devices, ratio {:.4} ({:+.2}%)",
        best.gamma,
        best.n_devices,
        best.cost_ratio,
        100.0 * (best.cost_ratio - r0) / r0
    ))
}

// 6 ------------------------------------------------------------------------

fn smooth_suite() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst_fd = 0.0_f64;
    let mut worst_rt = 0.0_f64;
    for _ in 0..500 {
        let a = rng.gen_range(1.0..100.0);
        let eps = if rng.gen_bool(0.5) { 1.0 } else { rng.gen_range(0.05..1.0) };
        let cfg = SmoothCfg::new(a, eps).unwrap();
        let n = rng.gen_range(1..30);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.6..0.6)).collect();
        let mx = x.iter().map(|v| v.abs().powf(1.0 + eps)).fold(0.0, f64::max);
        let ft = f_tilde(&cfg, &x);
        ensure(mx - (n as f64).ln() / a <= ft + 1e-12 && ft <= mx + 1e-12, || {
            format!("sandwich fails: {mx} vs {ft} (a {a}, n {n})")
        })?;
        // central differences on one coordinate, scaled to the curvature
        let i = rng.gen_range(0..n);
        let g = grad_f(&cfg, &x)[i];
        let h = 1e-5 / a.sqrt();
        let f1 = |d: f64| (a * (x[i] + d).abs().powf(1.0 + eps)).exp();
        let fd = (f1(h) - f1(-h)) / (2.0 * h);
        let e = (fd - g).abs() / g.abs().max(1.0);
        worst_fd = worst_fd.max(e);
        if eps == 1.0 {
            let hd = hessian_diag(&cfg, &x);
            ensure(hd.iter().all(|v| *v >= 2.0 * a), || "Hessian diagonal below 2a".into())?;
        }
        let zeta = rng.gen_range(-1e3..1e3);
        let xs = primal_update(&cfg, zeta);
        let back = grad_f(&cfg, &[xs])[0];
        worst_rt = worst_rt.max((back - zeta).abs() / zeta.abs().max(1.0));
    }
    ensure(worst_fd <= 1e-6, || format!("gradient vs finite differences {worst_fd:e}"))?;
    ensure(worst_rt <= 1e-10, || format!("primal round trip {worst_rt:e}"))?;
    let w0 = lambert_w0(0.0).unwrap();
    let we = lambert_w0(std::f64::consts::E).unwrap();
    let omega = lambert_w0(1.0).unwrap();
    ensure(w0 == 0.0, || format!("W(0) = {w0}"))?;
    ensure((we - 1.0).abs() <= 1e-14, || format!("W(e) = {we}"))?;
    ensure((omega - 0.567_143_290_409_783_8).abs() <= 1e-12, || format!("W(1) = {omega}"))?;
    Ok(format!("500 random draws; finite-difference error {worst_fd:.1e}, round trip {worst_rt:.1e}"))
}

// 7 ------------------------------------------------------------------------

/// Softmax sharpness for the IEEE30 controller runs.
const SHARPNESS: f64 = 50.0;
/// Round budget of the constant-load IEEE30 run.
const CONVERGENCE_ROUNDS: usize = 2_000_000;
/// Round budget of the load-jump run (jump at half).
const JUMP_ROUNDS: usize = 3_000_000;
const RECORD_EVERY: usize = 1000;

fn dual_ascent() -> Check {
    // two buses against the LP optimum
    let m2 = two_bus(0.0, 0.5).model().unwrap();
    let p2 = build_problem(&m2, &[-0.5], &[0.0], &[0.4], 1.0, 0.05).unwrap();
    let lp = solve_stress_lp(&p2).unwrap().q_opt[0];
    let xp2 = build_xproblem(&m2, &[-0.5], &[0.0], &[0.4], 1.0, 0.05).unwrap();
    let cfg2 = SmoothCfg::new(1.0, 1.0).unwrap();
    let rho2 = 0.9 * step_size_bound(&m2, &cfg2).unwrap();
    let mut o2 = OnlineOptions::new(5000);
    o2.monitor_dual = true;
    let prof2 = LoadProfile { p_load: vec![0.0], q_load: vec![-0.5] };
    let t2 = run_online(&xp2, cfg2, rho2, &Schedule::constant(prof2), &mut LinearizedPlant { model: &m2 }, &Sequential, o2)
        .unwrap();
    let q2 = t2.last().unwrap().q[0];
    ensure((q2 - lp).abs() <= 1e-4, || format!("2-bus limit {q2} vs LP {lp}"))?;
    let drop2 = t2.dual_worst_drop.unwrap();
    ensure(drop2 <= 1e-10, || format!("2-bus dual decreased by {drop2:e}"))?;

    // IEEE30 with six compensators
    let case = ieee30();
    let m = case.model().unwrap();
    let prof = LoadProfile::from_case(&case);
    let comp: Vec<usize> = IEEE30_COMPENSATOR_BUSES.iter().map(|b| m.load_index(*b).unwrap()).collect();
    let (lo, hi) = fraction_capacities(&prof.q_load, 0.5, Some(&comp));
    let xp = build_xproblem(&m, &prof.q_load, &lo, &hi, 1.0, 0.05).unwrap();
    let cfg = SmoothCfg::new(SHARPNESS, 1.0).unwrap();
    let rho = 0.9 * step_size_bound(&m, &cfg).unwrap();
    let mut opts = OnlineOptions::new(CONVERGENCE_ROUNDS);
    opts.record_every = RECORD_EVERY;
    opts.monitor_dual = true;
    let tr = run_online(&xp, cfg, rho, &Schedule::constant(prof), &mut LinearizedPlant { model: &m }, &Sequential, opts)
        .unwrap();
    ensure(tr.termination == Termination::Completed, || format!("{:?}", tr.termination))?;
    let q_opt = &tr.q_opt[0].1;
    let target = 1e-3 * two_norm(q_opt);
    let last = tr.last().unwrap();
    ensure(last.err_norm <= target, || format!("final error {:e} above {target:e}", last.err_norm))?;
    let reached = tr.rows.iter().find(|r| r.err_norm <= target).map(|r| r.t).unwrap();
    // monotone decrease after the transient (first half of the budget)
    let tail: Vec<_> = tr.rows.iter().filter(|r| r.t >= CONVERGENCE_ROUNDS / 2).collect();
    for w in tail.windows(2) {
        ensure(w[1].err_norm <= w[0].err_norm * (1.0 + 1e-12), || {
            format!("error rises from {:e} to {:e} at round {}", w[0].err_norm, w[1].err_norm, w[1].t)
        })?;
    }
    let drop = tr.dual_worst_drop.unwrap();
    ensure(drop <= 1e-10, || format!("IEEE30 dual decreased by {drop:e}"))?;
    Ok(format!(
        "2-bus q = {q2:.6} (LP {lp}); IEEE30 rho {rho:.4}, |q - q_opt| <= 1e-3 |q_opt| at round {reached}, final {:.2e}; worst dual drop {:.1e}",
        last.err_norm / two_norm(q_opt),
        drop.max(drop2)
    ))
}

// 8 ------------------------------------------------------------------------

fn load_jump() -> Check {
    let case = ieee30();
    let m = case.model().unwrap();
    let prof = LoadProfile::from_case(&case);
    let comp: Vec<usize> = IEEE30_COMPENSATOR_BUSES.iter().map(|b| m.load_index(*b).unwrap()).collect();
    let (lo, hi) = fraction_capacities(&prof.q_load, 0.5, Some(&comp));
    let xp = build_xproblem(&m, &prof.q_load, &lo, &hi, 1.0, 0.05).unwrap();
    let cfg = SmoothCfg::new(SHARPNESS, 1.0).unwrap();
    let rho = 0.9 * step_size_bound(&m, &cfg).unwrap();
    let schedule = jump_schedule(prof, JUMP_ROUNDS, JUMP_FACTOR);
    let mut opts = OnlineOptions::new(JUMP_ROUNDS);
    opts.record_every = RECORD_EVERY;
    let mut plant = CoupledPlant::new(&case, &m).unwrap();
    let tr = run_online(&xp, cfg, rho, &schedule, &mut plant, &Sequential, opts).unwrap();
    ensure(tr.termination == Termination::Completed, || format!("{:?}", tr.termination))?;
    let jump = JUMP_ROUNDS / 2;
    let opt_after = &tr.q_opt[1].1;
    let at_jump = tr.rows.iter().find(|r| r.t == jump).unwrap().err_norm;
    let last = tr.last().unwrap();
    let rel_final = last.err_norm / two_norm(opt_after);
    ensure(last.err_norm < 1e-2 * at_jump && rel_final <= 1e-3, || {
        format!("post-jump error {at_jump:e} -> {:e}", last.err_norm)
    })?;
    // steady state: last fifth of each load segment
    let settled = |t: usize| (t >= jump * 4 / 5 && t < jump) || t >= jump + jump * 4 / 5;
    let mut gap = 0.0_f64;
    let (mut vmin, mut vmax) = (f64::INFINITY, f64::NEG_INFINITY);
    for r in tr.rows.iter().filter(|r| settled(r.t)) {
        for (v, vl) in r.v_load.iter().zip(&r.v_linear) {
            gap = gap.max(((v - vl) / vl).abs());
            vmin = vmin.min(*v);
            vmax = vmax.max(*v);
        }
    }
    ensure(vmin >= 0.95 && vmax <= 1.05, || format!("settled voltages span [{vmin}, {vmax}]"))?;
    ensure(gap <= 0.02, || format!("linearized vs coupled gap {:.3}%", 100.0 * gap))?;
    Ok(format!(
        "error {at_jump:.3e} at the jump -> {:.3e} ({rel_final:.1e} relative); settled voltages [{vmin:.4}, {vmax:.4}]; gap {:.2}%",
        last.err_norm,
        100.0 * gap
    ))
}

// 9 ------------------------------------------------------------------------

fn config(case: PathBuf, out: PathBuf) -> RunConfig {
    RunConfig {
        case,
        format: Some(Format::Matpower),
        vn: 1.0,
        alpha: 0.05,
        cap_frac: 0.5,
        cap_file: None,
        compensators: Vec::new(),
        gamma: 0.0,
        gamma_grid: "1e-6:1e-1:12".into(),
        reweight_eps: None,
        reweight_rounds: DEFAULT_REWEIGHT_ROUNDS,
        sharpness: SHARPNESS,
        eps: 1.0,
        rho: None,
        rounds: 20_000,
        plant: PlantKind::Coupled,
        schedule: None,
        jump: JUMP_FACTOR,
        record_every: Some(50),
        parallel: false,
        out,
        seed: 99,
        scalings: 150,
        nose_steps: 10,
    }
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn determinism() -> Check {
    let tmp = tempfile::tempdir().unwrap();
    let case = data("case_ieee30.m");
    let mut compared = 0;
    let variants: [(&str, fn(RunConfig) -> Command, &[bool]); 4] = [
        ("analyze", Command::Analyze, &[false, false]),
        ("sweep", Command::Sweep, &[false, false]),
        ("place", Command::Place, &[false, false]),
        ("simulate", Command::Simulate, &[false, true, true]),
    ];
    for (name, make, runs) in variants {
        let mut outputs = Vec::new();
        for (k, parallel) in runs.iter().enumerate() {
            let out = tmp.path().join(format!("{name}-{k}"));
            let mut cfg = config(case.clone(), out.clone());
            cfg.parallel = *parallel;
            if name == "simulate" {
                cfg.compensators = IEEE30_COMPENSATOR_BUSES.to_vec();
            }
            execute(&make(cfg)).map_err(|e| format!("{name}: {e}"))?;
            outputs.push(csv_files(&out));
        }
        ensure(!outputs[0].is_empty(), || format!("{name} wrote no CSV"))?;
        for o in &outputs[1..] {
            ensure(*o == outputs[0], || format!("{name}: CSV output differs between runs"))?;
        }
        compared += outputs[0].len();
    }
    // parallel agent execution against sequential, directly on the traces
    let c = ieee30();
    let m = c.model().unwrap();
    let prof = LoadProfile::from_case(&c);
    let (lo, hi) = fraction_capacities(&prof.q_load, 0.5, None);
    let xp = build_xproblem(&m, &prof.q_load, &lo, &hi, 1.0, 0.05).unwrap();
    let cfg = SmoothCfg::new(SHARPNESS, 1.0).unwrap();
    let rho = 0.9 * step_size_bound(&m, &cfg).unwrap();
    let sched = jump_schedule(prof, 4000, JUMP_FACTOR);
    let seq = run_online(&xp, cfg, rho, &sched, &mut LinearizedPlant { model: &m }, &Sequential, OnlineOptions::new(4000)).unwrap();
    let par = run_online(&xp, cfg, rho, &sched, &mut LinearizedPlant { model: &m }, &Parallel, OnlineOptions::new(4000)).unwrap();
    ensure(seq == par, || "parallel trace differs from sequential".into())?;
    Ok(format!("{compared} CSV files bit-identical across repeated and parallel runs"))
}

fn main() {
    let criteria: [(u32, &str, fn() -> Check, Option<Duration>); 9] = [
        (1, "two-bus analytics", two_bus_analytics, Some(Duration::from_secs(1))),
        (2, "solvability condition", solvability, Some(Duration::from_secs(30))),
        (3, "linearization order", linearization_order, None),
        (4, "LP oracle equivalence", lp_oracle, None),
        (5, "IEEE30 placement study", placement_study, Some(Duration::from_secs(120))),
        (6, "smooth-norm suite", smooth_suite, None),
        (7, "dual-ascent convergence", dual_ascent, None),
        (8, "online feedback with load jump", load_jump, Some(Duration::from_secs(300))),
        (9, "determinism", determinism, None),
    ];
    let only: Option<u32> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (id, name, check, limit) in criteria {
        if only.is_some_and(|o| o != id) {
            continue;
        }
        let t0 = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let took = t0.elapsed();
        let result = match (result, limit) {
            (Ok(_), Some(l)) if took > l => Err(format!("took {took:.2?}, limit {l:?}")),
            (r, _) => r,
        };
        match result {
            Ok(detail) => println!("PASS criterion {id} ({name}) [{took:.2?}]: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {id} ({name}) [{took:.2?}]: {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
