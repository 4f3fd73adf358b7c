//! Centralized stress minimization: security thresholds, the stress LP,
//! reweighted-l1 sparse placement, polishing and gamma sweeps.
//!
//! With `M = Q_crit^-1` the stress of an injection `q` is
//! `||M (Q_L + q)||_inf` and the linearized voltages stay inside the secure
//! band iff `xi_min <= -M q <= xi_max`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{check_len, Error, Result};
use crate::linalg::{self, Matrix};
use crate::lp::{KktResiduals, LinearProgram};
use crate::network::NetworkModel;

/// Slack below which a constraint counts as binding.
pub const ACTIVE_TOLERANCE: f64 = 1e-7;
/// Constraint violation tolerated on returned solutions.
pub const FEASIBILITY_TOLERANCE: f64 = 1e-8;
/// Relative size below which an injection is treated as zero.
pub const SUPPORT_THRESHOLD: f64 = 1e-6;
pub const DEFAULT_REWEIGHT_ROUNDS: usize = 10;

#[derive(Debug, Clone)]
pub struct StressProblem<'a> {
    pub model: &'a NetworkModel,
    pub q_load: Vec<f64>,
    pub q_min: Vec<f64>,
    pub q_max: Vec<f64>,
    pub v_nominal: f64,
    pub dev_alpha: f64,
    pub xi_min: Vec<f64>,
    pub xi_max: Vec<f64>,
    q_crit_inv: Matrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Constraint {
    CapacityUpper(usize),
    CapacityLower(usize),
    /// Linearized voltage at its lower band edge (`-M q = xi_min`).
    SecurityLower(usize),
    SecurityUpper(usize),
    /// Load bus attaining the infinity norm of the stress.
    StressPositive(usize),
    StressNegative(usize),
}

#[derive(Debug, Clone)]
pub struct StressSolution {
    pub q_opt: Vec<f64>,
    /// `||Q_crit^-1 (Q_L + q_opt)||_inf`
    pub cost: f64,
    pub active_set: Vec<Constraint>,
    /// Load-bus indices with a nonzero injection.
    pub support: Vec<usize>,
    pub kkt: KktResiduals,
}

/// Secure-band deviation bounds `4 (V_N (1 -/+ alpha) / v_open - 1)`.
pub fn deviation_bounds(model: &NetworkModel, v_nominal: f64, dev_alpha: f64) -> (Vec<f64>, Vec<f64>) {
    let lo = model
        .v_open()
        .iter()
        .map(|vo| 4.0 * (v_nominal * (1.0 - dev_alpha) / vo - 1.0))
        .collect();
    let hi = model
        .v_open()
        .iter()
        .map(|vo| 4.0 * (v_nominal * (1.0 + dev_alpha) / vo - 1.0))
        .collect();
    (lo, hi)
}

pub(crate) fn check_settings(v_nominal: f64, dev_alpha: f64, q_min: &[f64], q_max: &[f64]) -> Result<()> {
    if !(v_nominal > 0.0 && v_nominal.is_finite()) {
        return Err(Error::Domain(format!("nominal voltage must be positive, got {v_nominal}")));
    }
    if !(0.0..1.0).contains(&dev_alpha) {
        return Err(Error::Domain(format!("deviation must lie in [0, 1), got {dev_alpha}")));
    }
    for (i, (lo, hi)) in q_min.iter().zip(q_max).enumerate() {
        if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Domain(format!("capacity box at load index {i} is [{lo}, {hi}]")));
        }
    }
    Ok(())
}

pub fn build_problem<'a>(
    model: &'a NetworkModel,
    q_load: &[f64],
    q_min: &[f64],
    q_max: &[f64],
    v_nominal: f64,
    dev_alpha: f64,
) -> Result<StressProblem<'a>> {
    let n = model.n_load();
    check_len(n, q_load.len())?;
    check_len(n, q_min.len())?;
    check_len(n, q_max.len())?;
    check_settings(v_nominal, dev_alpha, q_min, q_max)?;
    let mut p = StressProblem {
        model,
        q_load: Vec::new(),
        q_min: q_min.to_vec(),
        q_max: q_max.to_vec(),
        v_nominal,
        dev_alpha,
        xi_min: Vec::new(),
        xi_max: Vec::new(),
        q_crit_inv: model.q_crit_inverse()?,
    };
    p.set_load(q_load)?;
    Ok(p)
}

impl StressProblem<'_> {
    pub fn n(&self) -> usize {
        self.q_load.len()
    }

    /// Replaces `Q_L` and recomputes the thresholds.
    pub fn set_load(&mut self, q_load: &[f64]) -> Result<()> {
        check_len(self.model.n_load(), q_load.len())?;
        let shift = self.model.solve_q_crit(q_load)?;
        let (lo, hi) = deviation_bounds(self.model, self.v_nominal, self.dev_alpha);
        let xi_min: Vec<f64> = lo.iter().zip(&shift).map(|(a, b)| a + b).collect();
        let xi_max: Vec<f64> = hi.iter().zip(&shift).map(|(a, b)| a + b).collect();
        for i in 0..xi_min.len() {
            if xi_min[i] > xi_max[i] {
                return Err(Error::InfeasibleBox { index: i, lower: xi_min[i], upper: xi_max[i] });
            }
        }
        self.q_load = q_load.to_vec();
        self.xi_min = xi_min;
        self.xi_max = xi_max;
        Ok(())
    }

    /// Same problem with capacities forced to zero outside `support`.
    pub fn restricted(&self, support: &[usize]) -> Self {
        let mut p = self.clone();
        for i in 0..p.n() {
            if !support.contains(&i) {
                p.q_min[i] = 0.0;
                p.q_max[i] = 0.0;
            }
        }
        p
    }

    pub fn q_crit_inverse(&self) -> &Matrix {
        &self.q_crit_inv
    }

    /// `||Q_crit^-1 (Q_L + q)||_inf`
    pub fn stress(&self, q: &[f64]) -> f64 {
        let total: Vec<f64> = self.q_load.iter().zip(q).map(|(a, b)| a + b).collect();
        linalg::inf_norm(&linalg::mat_vec(&self.q_crit_inv, &total))
    }

    /// Stress with no compensation, the denominator of cost ratios.
    pub fn baseline_stress(&self) -> f64 {
        linalg::inf_norm(&linalg::mat_vec(&self.q_crit_inv, &self.q_load))
    }

    /// Largest violation of the capacity and security constraints.
    pub fn violation(&self, q: &[f64]) -> f64 {
        let mq = linalg::mat_vec(&self.q_crit_inv, q);
        let mut worst = 0.0_f64;
        for i in 0..self.n() {
            worst = worst
                .max(q[i] - self.q_max[i])
                .max(self.q_min[i] - q[i])
                .max(self.xi_min[i] + mq[i])
                .max(-mq[i] - self.xi_max[i]);
        }
        worst
    }

    fn active_set(&self, q: &[f64], cost: f64) -> Vec<Constraint> {
        let mq = linalg::mat_vec(&self.q_crit_inv, q);
        let total: Vec<f64> = self.q_load.iter().zip(q).map(|(a, b)| a + b).collect();
        let s = linalg::mat_vec(&self.q_crit_inv, &total);
        let tol = ACTIVE_TOLERANCE;
        let mut out = Vec::new();
        for i in 0..self.n() {
            if self.q_min[i] < self.q_max[i] {
                if self.q_max[i] - q[i] <= tol {
                    out.push(Constraint::CapacityUpper(i));
                }
                if q[i] - self.q_min[i] <= tol {
                    out.push(Constraint::CapacityLower(i));
                }
            }
            if -mq[i] - self.xi_min[i] <= tol {
                out.push(Constraint::SecurityLower(i));
            }
            if self.xi_max[i] + mq[i] <= tol {
                out.push(Constraint::SecurityUpper(i));
            }
            if cost - s[i] <= tol {
                out.push(Constraint::StressPositive(i));
            }
            if cost + s[i] <= tol {
                out.push(Constraint::StressNegative(i));
            }
        }
        out
    }

    fn bus_label(&self, i: usize) -> u32 {
        self.model.load_bus_ids()[i]
    }
}

/// Support of `q`: entries above `SUPPORT_THRESHOLD * max(1, ||q||_inf)`.
pub fn support_of(q: &[f64]) -> Vec<usize> {
    let thr = SUPPORT_THRESHOLD * linalg::inf_norm(q).max(1.0);
    q.iter().enumerate().filter(|(_, v)| v.abs() > thr).map(|(i, _)| i).collect()
}

/// How the LP variables map onto the injections.
struct Layout {
    free: Vec<usize>,
    split: bool,
}

impl Layout {
    fn n_vars(&self) -> usize {
        self.free.len() * if self.split { 2 } else { 1 } + 1
    }

    fn t_col(&self) -> usize {
        self.n_vars() - 1
    }

    /// Columns holding `q_free[k]` and their signs.
    fn cols(&self, k: usize) -> impl Iterator<Item = (usize, f64)> {
        let nf = self.free.len();
        let split = self.split;
        core::iter::once((k, 1.0)).chain(split.then_some((nf + k, -1.0)))
    }

    fn injections(&self, p: &StressProblem, x: &[f64]) -> Vec<f64> {
        let mut q: Vec<f64> = (0..p.n()).map(|i| if p.q_min[i] == p.q_max[i] { p.q_min[i] } else { 0.0 }).collect();
        for (k, &i) in self.free.iter().enumerate() {
            let v: f64 = self.cols(k).map(|(c, s)| s * x[c]).sum();
            q[i] = v.clamp(p.q_min[i], p.q_max[i]);
        }
        q
    }
}

fn build_lp(p: &StressProblem, weights: Option<(&[f64], f64)>) -> (LinearProgram, Layout) {
    let n = p.n();
    let layout = Layout {
        free: (0..n).filter(|&i| p.q_min[i] < p.q_max[i]).collect(),
        split: weights.is_some(),
    };
    let nv = layout.n_vars();
    let t = layout.t_col();
    let m_inv = &p.q_crit_inv;

    let q_fixed: Vec<f64> = (0..n).map(|i| if p.q_min[i] == p.q_max[i] { p.q_min[i] } else { 0.0 }).collect();
    let m_fixed = linalg::mat_vec(m_inv, &q_fixed);
    let base: Vec<f64> = linalg::mat_vec(m_inv, &p.q_load).iter().zip(&m_fixed).map(|(a, b)| a + b).collect();

    let mut rows: Vec<(Vec<(usize, f64)>, f64, String)> = Vec::new();
    let mq_row = |i: usize, sign: f64| -> Vec<(usize, f64)> {
        let mut r = Vec::new();
        for (k, &j) in layout.free.iter().enumerate() {
            for (c, s) in layout.cols(k) {
                r.push((c, sign * s * m_inv[(i, j)]));
            }
        }
        r
    };
    for i in 0..n {
        let bus = p.bus_label(i);
        let mut r = mq_row(i, 1.0);
        r.push((t, -1.0));
        rows.push((r, -base[i], format!("stress+ bus {bus}")));
        let mut r = mq_row(i, -1.0);
        r.push((t, -1.0));
        rows.push((r, base[i], format!("stress- bus {bus}")));
        rows.push((mq_row(i, -1.0), p.xi_max[i] + m_fixed[i], format!("voltage low bus {bus}")));
        rows.push((mq_row(i, 1.0), -p.xi_min[i] - m_fixed[i], format!("voltage high bus {bus}")));
    }
    for (k, &i) in layout.free.iter().enumerate() {
        let bus = p.bus_label(i);
        let cols: Vec<(usize, f64)> = layout.cols(k).collect();
        rows.push((cols.clone(), p.q_max[i], format!("capacity max bus {bus}")));
        rows.push((cols.iter().map(|(c, s)| (*c, -s)).collect(), -p.q_min[i], format!("capacity min bus {bus}")));
        if layout.split {
            let nf = layout.free.len();
            rows.push((vec![(k, -1.0)], 0.0, format!("q+ sign bus {bus}")));
            rows.push((vec![(nf + k, -1.0)], 0.0, format!("q- sign bus {bus}")));
            rows.push((vec![(k, 1.0)], p.q_max[i].max(0.0), format!("q+ cap bus {bus}")));
            rows.push((vec![(nf + k, 1.0)], (-p.q_min[i]).max(0.0), format!("q- cap bus {bus}")));
        }
    }

    let mut g = Matrix::zeros(rows.len(), nv);
    let mut h = Vec::with_capacity(rows.len());
    let mut labels = Vec::with_capacity(rows.len());
    for (r, (entries, rhs, label)) in rows.into_iter().enumerate() {
        for (c, v) in entries {
            g[(r, c)] += v;
        }
        h.push(rhs);
        labels.push(label);
    }
    let mut c = vec![0.0; nv];
    c[t] = 1.0;
    if let Some((w, gamma)) = weights {
        let nf = layout.free.len();
        for (k, &i) in layout.free.iter().enumerate() {
            c[k] = gamma * w[i];
            c[nf + k] = gamma * w[i];
        }
    }
    (LinearProgram::new(c, g, h).with_labels(labels), layout)
}

fn finish(p: &StressProblem, q: Vec<f64>, kkt: KktResiduals) -> Result<StressSolution> {
    let worst = p.violation(&q);
    if worst > FEASIBILITY_TOLERANCE {
        return Err(Error::Internal(format!("LP solution violates constraints by {worst:e}")));
    }
    let cost = p.stress(&q);
    let active_set = p.active_set(&q, cost);
    let support = support_of(&q);
    Ok(StressSolution { q_opt: q, cost, active_set, support, kkt })
}

/// Minimizes `||Q_crit^-1 (Q_L + q)||_inf` over the capacity box and the
/// secure band. Equally optimal injections are resolved toward the
/// interior of the optimal face, which the interior-point solver reaches
/// deterministically.
pub fn solve_stress_lp(p: &StressProblem) -> Result<StressSolution> {
    let (lp, layout) = build_lp(p, None);
    let sol = lp.solve()?;
    let q = layout.injections(p, &sol.x);
    finish(p, q, sol.kkt)
}

#[derive(Debug, Clone)]
pub struct PlacementTrace {
    pub solution: StressSolution,
    /// LP solves performed.
    pub rounds: usize,
    /// `t + gamma sum ln(|q_h| + eps)` after each round.
    pub surrogate: Vec<f64>,
    pub supports: Vec<Vec<usize>>,
}

/// Default reweighting offset `1e-3 max(1, ||Q_L||_inf)`.
pub fn default_reweight_eps(q_load: &[f64]) -> f64 {
    1e-3 * linalg::inf_norm(q_load).max(1.0)
}

/// Reweighted-l1 sparse placement. Each round solves the stress LP with an
/// extra `gamma sum w_h |q_h|` and sets `w_h = 1 / (|q_h| + eps)`; it stops
/// once the support repeats.
pub fn solve_sparse_placement(p: &StressProblem, gamma: f64, reweight_eps: f64, max_rounds: usize) -> Result<StressSolution> {
    solve_sparse_placement_traced(p, gamma, reweight_eps, max_rounds).map(|t| t.solution)
}

pub fn solve_sparse_placement_traced(
    p: &StressProblem,
    gamma: f64,
    reweight_eps: f64,
    max_rounds: usize,
) -> Result<PlacementTrace> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::Domain(format!("gamma must be nonnegative, got {gamma}")));
    }
    if !(reweight_eps > 0.0) {
        return Err(Error::Domain(format!("reweight eps must be positive, got {reweight_eps}")));
    }
    if gamma == 0.0 {
        let solution = solve_stress_lp(p)?;
        let supports = vec![solution.support.clone()];
        return Ok(PlacementTrace { surrogate: vec![solution.cost], solution, rounds: 1, supports });
    }
    let mut w = vec![1.0 / reweight_eps; p.n()];
    let mut surrogate = Vec::new();
    let mut supports: Vec<Vec<usize>> = Vec::new();
    let mut last = None;
    for _ in 0..max_rounds.max(1) {
        let (lp, layout) = build_lp(p, Some((&w, gamma)));
        let sol = lp.solve()?;
        let q = layout.injections(p, &sol.x);
        let s = finish(p, q, sol.kkt)?;
        surrogate.push(s.cost + gamma * s.q_opt.iter().map(|v| (v.abs() + reweight_eps).ln()).sum::<f64>());
        for (wi, qi) in w.iter_mut().zip(&s.q_opt) {
            *wi = 1.0 / (qi.abs() + reweight_eps);
        }
        let repeated = supports.last().is_some_and(|prev| *prev == s.support);
        supports.push(s.support.clone());
        last = Some(s);
        if repeated {
            break;
        }
    }
    let solution = last.expect("at least one round runs");
    Ok(PlacementTrace { solution, rounds: surrogate.len(), surrogate, supports })
}

/// Re-solves the stress LP with compensation allowed only on `support`.
pub fn polish(p: &StressProblem, support: &[usize]) -> Result<StressSolution> {
    if let Some(&bad) = support.iter().find(|&&i| i >= p.n()) {
        return Err(Error::Domain(format!("support index {bad} out of range")));
    }
    solve_stress_lp(&p.restricted(support))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub gamma: f64,
    pub n_devices: usize,
    /// Polished stress over uncompensated stress; NaN when infeasible.
    pub cost_ratio: f64,
    pub feasible: bool,
    pub support: Vec<usize>,
}

/// One gamma point: placement, then polishing on the found support.
pub fn sweep_point(p: &StressProblem, gamma: f64, reweight_eps: f64, max_rounds: usize) -> SweepRow {
    let placed = solve_sparse_placement(p, gamma, reweight_eps, max_rounds);
    let polished = placed.and_then(|s| polish(p, &s.support).map(|pol| (s.support, pol)));
    let base = p.baseline_stress();
    match polished {
        Ok((support, pol)) => SweepRow {
            gamma,
            n_devices: support.len(),
            cost_ratio: if base > 0.0 { pol.cost / base } else { 0.0 },
            feasible: true,
            support,
        },
        Err(_) => SweepRow { gamma, n_devices: 0, cost_ratio: f64::NAN, feasible: false, support: Vec::new() },
    }
}

pub fn gamma_sweep(p: &StressProblem, gammas: &[f64], reweight_eps: f64, max_rounds: usize) -> Result<Vec<SweepRow>> {
    if gammas.iter().any(|g| !(*g >= 0.0)) || gammas.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Domain("gammas must be nonnegative and sorted".into()));
    }
    Ok(gammas.iter().map(|&g| sweep_point(p, g, reweight_eps, max_rounds)).collect())
}

/// Zero followed by `count` log-spaced values in `[lo, hi]`.
pub fn default_gamma_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let mut g = vec![0.0];
    if count == 1 {
        g.push(lo);
    } else if count > 1 {
        let (a, b) = (lo.ln(), hi.ln());
        g.extend((0..count).map(|k| (a + (b - a) * k as f64 / (count - 1) as f64).exp()));
    }
    g
}

/// Symmetric capacity boxes `+-fraction * ||Q_L||_inf` on the listed load
/// indices (all of them when `None`), zero elsewhere.
pub fn fraction_capacities(q_load: &[f64], fraction: f64, compensators: Option<&[usize]>) -> (Vec<f64>, Vec<f64>) {
    let cap = fraction * linalg::inf_norm(q_load);
    let on = |i: usize| compensators.is_none_or(|c| c.contains(&i));
    let q_max: Vec<f64> = (0..q_load.len()).map(|i| if on(i) { cap } else { 0.0 }).collect();
    let q_min = q_max.iter().map(|v| -v).collect();
    (q_min, q_max)
}
