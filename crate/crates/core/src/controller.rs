//! Distributed online stress minimization by dual ascent.
//!
//! Every load bus hosts an agent. Agents work on the deviation variable
//! `x = -Q_crit^-1 (Q_L + q)` and minimize `sum exp(a |x_i|^(1+eps))`
//! subject to the secure band on `x` and the capacity box on the implied
//! injection `q(x) = -(Q_crit x + Q_L)`. Each synchronous round has two
//! message exchanges between `Q_crit` neighbors: capacity multipliers
//! first, then the fresh primal values.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::case::GridCase;
use crate::error::{check_len, Error, Result};
use crate::linalg::{self, Lu, Matrix};
use crate::lp::LinearProgram;
use crate::network::NetworkModel;
use crate::power_flow::{CoupledPfSolution, CoupledSystem};
use crate::smooth::{self, SmoothCfg};
use crate::stress::{check_settings, deviation_bounds};

/// Fraction of the convergence bound used when no step size is given.
pub const DEFAULT_STEP_FRACTION: f64 = 0.9;
/// Rounds between two watchdog checks.
pub const WATCHDOG_WINDOW: usize = 100;
/// Residual growth over one window that counts as divergence.
pub const WATCHDOG_GROWTH: f64 = 10.0;

#[derive(Debug, Clone)]
pub struct XProblem<'a> {
    pub model: &'a NetworkModel,
    pub q_load: Vec<f64>,
    pub q_min: Vec<f64>,
    pub q_max: Vec<f64>,
    pub x_min: Vec<f64>,
    pub x_max: Vec<f64>,
    pub v_nominal: f64,
    pub dev_alpha: f64,
}

pub fn build_xproblem<'a>(
    model: &'a NetworkModel,
    q_load: &[f64],
    q_min: &[f64],
    q_max: &[f64],
    v_nominal: f64,
    dev_alpha: f64,
) -> Result<XProblem<'a>> {
    let n = model.n_load();
    check_len(n, q_load.len())?;
    check_len(n, q_min.len())?;
    check_len(n, q_max.len())?;
    check_settings(v_nominal, dev_alpha, q_min, q_max)?;
    let (x_min, x_max) = deviation_bounds(model, v_nominal, dev_alpha);
    for i in 0..n {
        if x_min[i] > x_max[i] {
            return Err(Error::InfeasibleBox { index: i, lower: x_min[i], upper: x_max[i] });
        }
    }
    Ok(XProblem {
        model,
        q_load: q_load.to_vec(),
        q_min: q_min.to_vec(),
        q_max: q_max.to_vec(),
        x_min,
        x_max,
        v_nominal,
        dev_alpha,
    })
}

impl XProblem<'_> {
    pub fn n(&self) -> usize {
        self.q_load.len()
    }

    pub fn set_load(&mut self, q_load: &[f64]) -> Result<()> {
        check_len(self.n(), q_load.len())?;
        self.q_load = q_load.to_vec();
        Ok(())
    }

    /// `x = -Q_crit^-1 (Q_L + q)`
    pub fn x_of_q(&self, q: &[f64]) -> Result<Vec<f64>> {
        check_len(self.n(), q.len())?;
        let total: Vec<f64> = self.q_load.iter().zip(q).map(|(a, b)| a + b).collect();
        Ok(self.model.solve_q_crit(&total)?.into_iter().map(|v| -v).collect())
    }

    /// Control law `q = -(Q_crit x + Q_L)`, before saturation.
    pub fn q_of_x(&self, x: &[f64]) -> Vec<f64> {
        linalg::mat_vec(self.model.q_crit(), x)
            .iter()
            .zip(&self.q_load)
            .map(|(a, b)| -(a + b))
            .collect()
    }

    /// Largest violation of the band and capacity constraints at `x`.
    pub fn violation(&self, x: &[f64]) -> f64 {
        let q = self.q_of_x(x);
        let mut worst = 0.0_f64;
        for i in 0..self.n() {
            worst = worst
                .max(x[i] - self.x_max[i])
                .max(self.x_min[i] - x[i])
                .max(q[i] - self.q_max[i])
                .max(self.q_min[i] - q[i]);
        }
        worst
    }
}

/// Convergence bound `2 / L` on the step size with
/// `L = sigma_max(A)^2 / (2a)` and `A = [I; -I; -Q_crit; Q_crit]`.
pub fn step_size_bound(model: &NetworkModel, cfg: &SmoothCfg) -> Result<f64> {
    cfg.validate()?;
    if !cfg.is_quadratic() {
        return Err(Error::Domain("step size bound needs exponent_eps = 1".into()));
    }
    let n = model.n_load();
    if n == 0 {
        return Err(Error::Domain("no load buses".into()));
    }
    let mut a = Matrix::zeros(4 * n, n);
    let qc = model.q_crit();
    for i in 0..n {
        a[(i, i)] = 1.0;
        a[(n + i, i)] = -1.0;
        for j in 0..n {
            a[(2 * n + i, j)] = -qc[(i, j)];
            a[(3 * n + i, j)] = qc[(i, j)];
        }
    }
    let sigma = a.singular_values().iter().copied().fold(0.0, f64::max);
    let lipschitz = sigma * sigma / (2.0 * cfg.sharpness);
    Ok(2.0 / lipschitz)
}

/// Local state of one agent. It only knows its own row of `Q_crit`.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentView {
    pub index: usize,
    pub neighbors: Vec<usize>,
    /// `Q_crit[i][i]`
    pub diag: f64,
    /// `Q_crit[i][j]` for `j` in `neighbors`, same order.
    pub row: Vec<f64>,
    pub x: f64,
    pub lambda_upper: f64,
    pub lambda_lower: f64,
    pub mu_upper: f64,
    pub mu_lower: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    /// Local reactive load, recovered from measurements.
    pub q_load: f64,
    /// Saturated injection currently applied.
    pub q: f64,
}

/// Multiplier values after one dual step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualUpdate {
    pub lambda_upper: f64,
    pub lambda_lower: f64,
    pub mu_upper: f64,
    pub mu_lower: f64,
    /// `q_i(x)` before saturation.
    pub q_raw: f64,
}

impl AgentView {
    /// Published in the first exchange.
    pub fn capacity_multiplier(&self) -> f64 {
        self.mu_upper - self.mu_lower
    }

    /// `zeta_i = -(lambda+_i - lambda-_i) + sum_j Q_crit[i][j] (mu+_j - mu-_j)`
    /// over the closed neighborhood; `inbox[k]` holds neighbor `k`'s value.
    pub fn zeta(&self, inbox: &[f64]) -> f64 {
        let coupled: f64 = self.row.iter().zip(inbox).map(|(q, nu)| q * nu).sum();
        -(self.lambda_upper - self.lambda_lower) + self.diag * self.capacity_multiplier() + coupled
    }

    pub fn primal_step(&self, cfg: &SmoothCfg, inbox: &[f64]) -> f64 {
        smooth::primal_update(cfg, self.zeta(inbox))
    }

    /// Injection implied by the neighbors' primal values `inbox`.
    pub fn local_injection(&self, inbox: &[f64]) -> f64 {
        let coupled: f64 = self.row.iter().zip(inbox).map(|(q, x)| q * x).sum();
        -(self.diag * self.x + coupled + self.q_load)
    }

    /// Projected ascent on the four local multipliers.
    pub fn dual_step(&self, rho: f64, inbox: &[f64]) -> DualUpdate {
        let q = self.local_injection(inbox);
        DualUpdate {
            lambda_upper: (self.lambda_upper + rho * (self.x - self.x_max)).max(0.0),
            lambda_lower: (self.lambda_lower + rho * (self.x_min - self.x)).max(0.0),
            mu_upper: (self.mu_upper + rho * (q - self.q_max)).max(0.0),
            mu_lower: (self.mu_lower + rho * (self.q_min - q)).max(0.0),
            q_raw: q,
        }
    }
}

/// Runs the per-agent work of one phase. Implementations must return
/// results in agent order.
pub trait RoundExecutor {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl RoundExecutor for Sequential {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..n).map(f).collect()
    }
}

/// Counts of delivered messages, `sent[i][j]` from agent `i` to agent `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MessageLog {
    pub sent: Vec<Vec<u64>>,
}

impl MessageLog {
    fn new(n: usize) -> Self {
        Self { sent: vec![vec![0; n]; n] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualState {
    pub x: Vec<f64>,
    /// Upper box multipliers followed by lower ones.
    pub lambda: Vec<f64>,
    /// Upper capacity multipliers followed by lower ones.
    pub mu: Vec<f64>,
    pub q: Vec<f64>,
    pub t: u64,
}

#[derive(Debug, Clone)]
pub struct Controller {
    agents: Vec<AgentView>,
    cfg: SmoothCfg,
    rho: f64,
    round: u64,
    log: Option<MessageLog>,
    /// Infinity norm of the last multiplier change divided by `rho`.
    residual: f64,
}

impl Controller {
    /// Agents start at `x = 0`, `q = 0` with zero multipliers.
    pub fn new(xp: &XProblem, cfg: SmoothCfg, rho: f64) -> Result<Self> {
        cfg.validate()?;
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::Domain(format!("step size must be positive, got {rho}")));
        }
        let qc = xp.model.q_crit();
        let agents = (0..xp.n())
            .map(|i| {
                let neighbors = xp.model.neighbors(i).to_vec();
                let row = neighbors.iter().map(|&j| qc[(i, j)]).collect();
                AgentView {
                    index: i,
                    neighbors,
                    diag: qc[(i, i)],
                    row,
                    x: 0.0,
                    lambda_upper: 0.0,
                    lambda_lower: 0.0,
                    mu_upper: 0.0,
                    mu_lower: 0.0,
                    x_min: xp.x_min[i],
                    x_max: xp.x_max[i],
                    q_min: xp.q_min[i],
                    q_max: xp.q_max[i],
                    q_load: xp.q_load[i],
                    q: 0.0,
                }
            })
            .collect();
        Ok(Self { agents, cfg, rho, round: 0, log: None, residual: f64::INFINITY })
    }

    /// Starts counting delivered messages.
    pub fn enable_message_log(&mut self) {
        self.log = Some(MessageLog::new(self.agents.len()));
    }

    pub fn message_log(&self) -> Option<&MessageLog> {
        self.log.as_ref()
    }

    pub fn agents(&self) -> &[AgentView] {
        &self.agents
    }

    pub fn agents_mut(&mut self) -> &mut [AgentView] {
        &mut self.agents
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn cfg(&self) -> &SmoothCfg {
        &self.cfg
    }

    pub fn round_count(&self) -> u64 {
        self.round
    }

    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn applied(&self) -> Vec<f64> {
        self.agents.iter().map(|a| a.q).collect()
    }

    pub fn x(&self) -> Vec<f64> {
        self.agents.iter().map(|a| a.x).collect()
    }

    pub fn state(&self) -> DualState {
        let a = &self.agents;
        DualState {
            x: self.x(),
            lambda: a.iter().map(|g| g.lambda_upper).chain(a.iter().map(|g| g.lambda_lower)).collect(),
            mu: a.iter().map(|g| g.mu_upper).chain(a.iter().map(|g| g.mu_lower)).collect(),
            q: self.applied(),
            t: self.round,
        }
    }

    /// Each agent recovers its load from its own measurement `y_i = Q_L,i + q_i`.
    pub fn observe(&mut self, y: &[f64]) -> Result<()> {
        check_len(self.agents.len(), y.len())?;
        for (a, yi) in self.agents.iter_mut().zip(y) {
            a.q_load = yi - a.q;
        }
        Ok(())
    }

    fn deliver<F: Fn(&AgentView) -> f64>(&mut self, publish: F) -> Vec<Vec<f64>> {
        let published: Vec<f64> = self.agents.iter().map(publish).collect();
        let inboxes = self
            .agents
            .iter()
            .map(|a| a.neighbors.iter().map(|&j| published[j]).collect())
            .collect();
        if let Some(log) = self.log.as_mut() {
            for a in &self.agents {
                for &j in &a.neighbors {
                    log.sent[j][a.index] += 1;
                }
            }
        }
        inboxes
    }

    /// One synchronous round: multiplier exchange, primal updates, primal
    /// exchange, dual updates, saturation of the new control input.
    pub fn agent_round<E: RoundExecutor>(&mut self, exec: &E) {
        let cfg = self.cfg;
        let rho = self.rho;

        let inboxes = self.deliver(AgentView::capacity_multiplier);
        let agents = &self.agents;
        let xs = exec.map(agents.len(), |i| agents[i].primal_step(&cfg, &inboxes[i]));
        for (a, x) in self.agents.iter_mut().zip(xs) {
            a.x = x;
        }

        let inboxes = self.deliver(|a| a.x);
        let agents = &self.agents;
        let updates = exec.map(agents.len(), |i| agents[i].dual_step(rho, &inboxes[i]));
        let mut residual = 0.0_f64;
        for (a, u) in self.agents.iter_mut().zip(updates) {
            residual = residual
                .max((u.lambda_upper - a.lambda_upper).abs())
                .max((u.lambda_lower - a.lambda_lower).abs())
                .max((u.mu_upper - a.mu_upper).abs())
                .max((u.mu_lower - a.mu_lower).abs());
            a.lambda_upper = u.lambda_upper;
            a.lambda_lower = u.lambda_lower;
            a.mu_upper = u.mu_upper;
            a.mu_lower = u.mu_lower;
            a.q = if u.q_raw.is_nan() { u.q_raw } else { u.q_raw.clamp(a.q_min, a.q_max) };
        }
        self.residual = residual / rho;
        self.round += 1;
    }

    /// Lagrangian dual value at the current multipliers and local loads,
    /// evaluated centrally for monitoring.
    pub fn dual_value(&self, q_crit: &Matrix) -> f64 {
        let n = self.agents.len();
        let nu: Vec<f64> = self.agents.iter().map(|a| a.capacity_multiplier()).collect();
        let qnu = linalg::mat_vec(q_crit, &nu);
        let x: Vec<f64> = (0..n)
            .map(|i| {
                let a = &self.agents[i];
                smooth::primal_update(&self.cfg, -(a.lambda_upper - a.lambda_lower) + qnu[i])
            })
            .collect();
        let qx = linalg::mat_vec(q_crit, &x);
        let mut value: f64 = x
            .iter()
            .map(|xi| (self.cfg.sharpness * xi.abs().powf(1.0 + self.cfg.exponent_eps)).exp())
            .sum();
        for (i, a) in self.agents.iter().enumerate() {
            let q = -(qx[i] + a.q_load);
            value += a.lambda_upper * (x[i] - a.x_max)
                + a.lambda_lower * (a.x_min - x[i])
                + a.mu_upper * (q - a.q_max)
                + a.mu_lower * (a.q_min - q);
        }
        value
    }
}

/// Centralized solution of the smooth problem
/// `min f(x)` over the band and the capacity box, returned as injections.
/// Solved in the free injections with a log-barrier Newton method started
/// from the most interior point of the feasible set.
pub fn smooth_optimum(xp: &XProblem, cfg: &SmoothCfg) -> Result<Vec<f64>> {
    cfg.validate()?;
    let n = xp.n();
    let free: Vec<usize> = (0..n).filter(|&i| xp.q_min[i] < xp.q_max[i]).collect();
    let nf = free.len();
    let q_fixed: Vec<f64> = (0..n).map(|i| if xp.q_min[i] == xp.q_max[i] { xp.q_min[i] } else { 0.0 }).collect();
    let inv = xp.model.q_crit_inverse()?;
    // x = x0 + D z
    let x0: Vec<f64> = {
        let t: Vec<f64> = xp.q_load.iter().zip(&q_fixed).map(|(a, b)| a + b).collect();
        linalg::mat_vec(&inv, &t).into_iter().map(|v| -v).collect()
    };
    let mut d = Matrix::zeros(n, nf);
    for (k, &j) in free.iter().enumerate() {
        for i in 0..n {
            d[(i, k)] = -inv[(i, j)];
        }
    }
    let assemble = |z: &[f64]| -> Vec<f64> {
        let mut q = q_fixed.clone();
        for (k, &j) in free.iter().enumerate() {
            q[j] = z[k];
        }
        q
    };
    let band_violation = |x: &[f64]| -> f64 {
        (0..n).map(|i| (x[i] - xp.x_max[i]).max(xp.x_min[i] - x[i])).fold(f64::NEG_INFINITY, f64::max)
    };
    if nf == 0 {
        if band_violation(&x0) > 1e-10 {
            return Err(Error::Infeasible(crate::error::InfeasibilityReport {
                infeasibility: band_violation(&x0),
                binding: Vec::new(),
            }));
        }
        return Ok(q_fixed);
    }

    // Constraint rows g_k z <= h_k.
    let m = 2 * n + 2 * nf;
    let mut g = Matrix::zeros(m, nf);
    let mut h = vec![0.0; m];
    for i in 0..n {
        for k in 0..nf {
            g[(i, k)] = d[(i, k)];
            g[(n + i, k)] = -d[(i, k)];
        }
        h[i] = xp.x_max[i] - x0[i];
        h[n + i] = x0[i] - xp.x_min[i];
    }
    for (k, &j) in free.iter().enumerate() {
        g[(2 * n + k, k)] = 1.0;
        h[2 * n + k] = xp.q_max[j];
        g[(2 * n + nf + k, k)] = -1.0;
        h[2 * n + nf + k] = -xp.q_min[j];
    }

    // Most interior point: maximize s with G z + s <= h, s <= 1.
    let mut gi = Matrix::zeros(m + 1, nf + 1);
    gi.view_mut((0, 0), (m, nf)).copy_from(&g);
    for r in 0..=m {
        gi[(r, nf)] = 1.0;
    }
    let mut hi = h.clone();
    hi.push(1.0);
    let mut ci = vec![0.0; nf + 1];
    ci[nf] = -1.0;
    let start = LinearProgram::new(ci, gi, hi).solve()?;
    let margin = start.x[nf];
    if !(margin > 1e-12) {
        return Err(Error::Infeasible(crate::error::InfeasibilityReport {
            infeasibility: -margin,
            binding: Vec::new(),
        }));
    }
    let mut z: Vec<f64> = start.x[..nf].to_vec();

    let xz = |z: &[f64]| -> Vec<f64> {
        let dz = linalg::mat_vec(&d, z);
        x0.iter().zip(&dz).map(|(a, b)| a + b).collect()
    };
    let slacks = |z: &[f64]| -> Vec<f64> {
        let gz = linalg::mat_vec(&g, z);
        h.iter().zip(&gz).map(|(a, b)| a - b).collect()
    };
    let f_of = |z: &[f64]| -> f64 {
        xz(z).iter().map(|xi| (cfg.sharpness * xi.abs().powf(1.0 + cfg.exponent_eps)).exp()).sum()
    };
    let scale = f_of(&z).max(1.0);
    let objective = |z: &[f64], tau: f64| -> f64 {
        let s = slacks(z);
        if s.iter().any(|v| *v <= 0.0) {
            return f64::INFINITY;
        }
        tau * f_of(z) / scale - s.iter().map(|v| v.ln()).sum::<f64>()
    };

    let mut tau = 1.0;
    loop {
        for _ in 0..200 {
            let x = xz(&z);
            let s = slacks(&z);
            let gx: Vec<f64> = smooth::grad_f(cfg, &x).iter().map(|v| v * tau / scale).collect();
            let hx: Vec<f64> = smooth::hessian_diag(cfg, &x).iter().map(|v| v * tau / scale).collect();
            let mut grad = d.transpose() * nalgebra::DVector::from_column_slice(&gx);
            let mut hess = Matrix::zeros(nf, nf);
            for i in 0..n {
                for a in 0..nf {
                    for b in 0..nf {
                        hess[(a, b)] += d[(i, a)] * hx[i] * d[(i, b)];
                    }
                }
            }
            for r in 0..m {
                let inv_s = 1.0 / s[r];
                for a in 0..nf {
                    grad[a] += g[(r, a)] * inv_s;
                    for b in 0..nf {
                        hess[(a, b)] += g[(r, a)] * g[(r, b)] * inv_s * inv_s;
                    }
                }
            }
            let step = match hess.clone().cholesky() {
                Some(ch) => ch.solve(&grad),
                None => hess.lu().solve(&grad).ok_or(Error::SingularSystem)?,
            };
            let decrement = grad.dot(&step);
            if !(decrement > 1e-20) {
                break;
            }
            let f0 = objective(&z, tau);
            let mut t = 1.0;
            let mut moved = false;
            for _ in 0..60 {
                let trial: Vec<f64> = z.iter().zip(step.iter()).map(|(a, b)| a - t * b).collect();
                let ft = objective(&trial, tau);
                if ft <= f0 - 0.25 * t * decrement {
                    z = trial;
                    moved = true;
                    break;
                }
                t *= 0.5;
            }
            if !moved || decrement < 1e-18 {
                break;
            }
        }
        if (m as f64) / tau < 1e-13 {
            break;
        }
        tau *= 10.0;
    }
    Ok(assemble(&z))
}

/// Active and reactive load injections at load buses, in model order.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadProfile {
    pub p_load: Vec<f64>,
    pub q_load: Vec<f64>,
}

impl LoadProfile {
    pub fn from_case(case: &GridCase) -> Self {
        Self { p_load: case.load_p_injections(), q_load: case.load_q_injections() }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            p_load: self.p_load.iter().map(|v| v * factor).collect(),
            q_load: self.q_load.iter().map(|v| v * factor).collect(),
        }
    }
}

/// Piecewise-constant load schedule; segment `k` holds from its start
/// round until the next segment starts.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    segments: Vec<(usize, LoadProfile)>,
}

impl Schedule {
    pub fn constant(profile: LoadProfile) -> Self {
        Self { segments: vec![(0, profile)] }
    }

    /// `base` until round `at`, then every demand multiplied by `factor`.
    pub fn jump(base: LoadProfile, factor: f64, at: usize) -> Self {
        let after = base.scaled(factor);
        Self::from_segments(vec![(0, base), (at, after)]).expect("segments start at zero")
    }

    pub fn from_segments(mut segments: Vec<(usize, LoadProfile)>) -> Result<Self> {
        segments.sort_by_key(|s| s.0);
        segments.dedup_by(|later, earlier| {
            if later.0 == earlier.0 {
                core::mem::swap(later, earlier);
                true
            } else {
                false
            }
        });
        match segments.first() {
            Some((0, _)) => Ok(Self { segments }),
            _ => Err(Error::Domain("schedule must define round 0".into())),
        }
    }

    pub fn segment_index(&self, t: usize) -> usize {
        self.segments.partition_point(|s| s.0 <= t) - 1
    }

    pub fn at(&self, t: usize) -> &LoadProfile {
        &self.segments[self.segment_index(t)].1
    }

    pub fn segments(&self) -> &[(usize, LoadProfile)] {
        &self.segments
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    /// `Q_L + q` at every load bus.
    pub y: Vec<f64>,
    pub v_load: Vec<f64>,
}

pub trait Plant {
    /// Applies `q` under the given loads and measures the grid.
    fn measure(&mut self, load: &LoadProfile, q: &[f64]) -> Result<Measurement>;
}

/// The linearized decoupled grid: `v = v_open (1 - Q_crit^-1 (Q_L + q) / 4)`.
#[derive(Debug, Clone)]
pub struct LinearizedPlant<'a> {
    pub model: &'a NetworkModel,
}

impl Plant for LinearizedPlant<'_> {
    fn measure(&mut self, load: &LoadProfile, q: &[f64]) -> Result<Measurement> {
        let y: Vec<f64> = load.q_load.iter().zip(q).map(|(a, b)| a + b).collect();
        let v = crate::power_flow::linearized_voltages(self.model, &y)?;
        let v_load = self.model.denormalize_voltages(&v)?;
        Ok(Measurement { y, v_load })
    }
}

/// Full lossless AC power flow, warm-started from the previous round.
#[derive(Debug, Clone)]
pub struct CoupledPlant {
    system: CoupledSystem,
    last: Option<CoupledPfSolution>,
    factor: Option<Lu>,
}

impl CoupledPlant {
    pub fn new(case: &GridCase, model: &NetworkModel) -> Result<Self> {
        Ok(Self { system: CoupledSystem::new(case, model)?, last: None, factor: None })
    }

    pub fn last_solution(&self) -> Option<&CoupledPfSolution> {
        self.last.as_ref()
    }
}

impl Plant for CoupledPlant {
    fn measure(&mut self, load: &LoadProfile, q: &[f64]) -> Result<Measurement> {
        let q_inj: Vec<f64> = load.q_load.iter().zip(q).map(|(a, b)| a + b).collect();
        let sol = self.system.solve_cached(&load.p_load, &q_inj, self.last.as_ref(), &mut self.factor)?;
        let sol = if sol.converged {
            sol
        } else {
            self.factor = None;
            self.system.solve(&load.p_load, &q_inj, None)?.ok()?
        };
        let m = Measurement { y: sol.q_load_measured.clone(), v_load: sol.v_load.clone() };
        self.last = Some(sol);
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: usize,
    /// True reactive loads.
    pub q_load: Vec<f64>,
    pub y: Vec<f64>,
    pub q: Vec<f64>,
    pub x: Vec<f64>,
    /// Load voltages reported by the plant.
    pub v_load: Vec<f64>,
    /// Linearized prediction of the same voltages.
    pub v_linear: Vec<f64>,
    /// `||q - q_opt||_2` against the centralized optimum for the current loads.
    pub err_norm: f64,
    pub dual_value: Option<f64>,
    pub in_band: bool,
    pub x_feasible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Termination {
    Completed,
    PlantDiverged { round: usize, reason: Error },
    ControllerDiverged { round: usize, residual: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioTrace {
    pub rows: Vec<TraceRow>,
    pub termination: Termination,
    /// Centralized optimum for each schedule segment, keyed by start round.
    pub q_opt: Vec<(usize, Vec<f64>)>,
    /// Largest relative decrease `(d_t - d_{t+1}) / max(1, |d_t|)` of the
    /// dual value between consecutive rounds with equal loads, when
    /// monitored. Non-positive means the dual never decreased.
    pub dual_worst_drop: Option<f64>,
}

impl ScenarioTrace {
    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OnlineOptions {
    pub rounds: usize,
    /// Keep every `record_every`-th round (plus segment starts and the end).
    pub record_every: usize,
    /// Evaluate the dual value every round (not only on recorded rows).
    pub monitor_dual: bool,
    pub watchdog: bool,
    /// Tolerance for the band check on recorded voltages.
    pub band_tolerance: f64,
}

impl OnlineOptions {
    pub fn new(rounds: usize) -> Self {
        Self { rounds, record_every: 1, monitor_dual: false, watchdog: true, band_tolerance: 1e-9 }
    }
}

/// Closed-loop simulation: measure, recover loads, run one round, actuate.
/// Rows are recorded before the round that follows them, so row `t` shows
/// the injection applied during round `t`; a final row follows the last
/// round. A failed plant solve ends the run with
/// [`Termination::PlantDiverged`] and the rows gathered so far.
pub fn run_online<P: Plant, E: RoundExecutor>(
    xp: &XProblem,
    cfg: SmoothCfg,
    rho: f64,
    schedule: &Schedule,
    plant: &mut P,
    exec: &E,
    opts: OnlineOptions,
) -> Result<ScenarioTrace> {
    let model = xp.model;
    let n = xp.n();
    for (_, prof) in schedule.segments() {
        check_len(n, prof.q_load.len())?;
        check_len(n, prof.p_load.len())?;
    }
    let mut ctrl = Controller::new(xp, cfg, rho)?;
    let mut local = xp.clone();
    let mut q_opt: Vec<(usize, Vec<f64>)> = Vec::new();
    let mut rows = Vec::new();
    let every = opts.record_every.max(1);
    let lo: Vec<f64> = model.v_open().iter().map(|_| xp.v_nominal * (1.0 - xp.dev_alpha)).collect();
    let hi: Vec<f64> = model.v_open().iter().map(|_| xp.v_nominal * (1.0 + xp.dev_alpha)).collect();

    let mut segment = usize::MAX;
    let mut watch_ref = f64::INFINITY;
    let mut prev_dual: Option<f64> = None;
    let mut worst_drop = f64::NEG_INFINITY;
    let mut termination = Termination::Completed;
    let floor = 1e-3 * (1.0 + linalg::inf_norm(&xp.x_max).max(linalg::inf_norm(&xp.q_max)));

    for t in 0..=opts.rounds {
        let seg = schedule.segment_index(t);
        let load = schedule.at(t);
        let changed = seg != segment;
        if changed {
            segment = seg;
            local.set_load(&load.q_load)?;
            q_opt.push((schedule.segments()[seg].0.max(t), smooth_optimum(&local, &cfg)?));
            watch_ref = f64::INFINITY;
            prev_dual = None;
        }
        let q = ctrl.applied();
        let meas = match plant.measure(load, &q) {
            Ok(m) => m,
            Err(reason) => {
                termination = Termination::PlantDiverged { round: t, reason };
                break;
            }
        };
        ctrl.observe(&meas.y)?;
        let dual = opts.monitor_dual.then(|| ctrl.dual_value(model.q_crit()));
        if let Some(d) = dual {
            if let Some(p) = prev_dual {
                worst_drop = worst_drop.max((p - d) / p.abs().max(1.0));
            }
            prev_dual = Some(d);
        }

        if changed || t % every == 0 || t == opts.rounds {
            let opt = &q_opt.last().expect("pushed at segment start").1;
            let err_norm = linalg::two_norm(&q.iter().zip(opt).map(|(a, b)| a - b).collect::<Vec<_>>());
            let v_lin = crate::power_flow::linearized_voltages(model, &meas.y)?;
            let v_linear = model.denormalize_voltages(&v_lin)?;
            let in_band = meas
                .v_load
                .iter()
                .enumerate()
                .all(|(i, v)| *v >= lo[i] - opts.band_tolerance && *v <= hi[i] + opts.band_tolerance);
            let x = ctrl.x();
            rows.push(TraceRow {
                t,
                q_load: load.q_load.clone(),
                y: meas.y,
                q,
                x_feasible: local.violation(&x) <= 1e-9,
                x,
                v_load: meas.v_load,
                v_linear,
                err_norm,
                dual_value: dual,
                in_band,
            });
        }
        if t == opts.rounds {
            break;
        }
        ctrl.agent_round(exec);

        let r = ctrl.residual();
        if !r.is_finite() || ctrl.agents().iter().any(|a| !a.x.is_finite() || !a.q.is_finite()) {
            termination = Termination::ControllerDiverged { round: t + 1, residual: r };
            break;
        }
        if opts.watchdog && (t + 1) % WATCHDOG_WINDOW == 0 {
            if r > WATCHDOG_GROWTH * watch_ref.max(floor) && watch_ref.is_finite() {
                termination = Termination::ControllerDiverged { round: t + 1, residual: r };
                break;
            }
            watch_ref = r;
        }
    }
    let dual_worst_drop = opts.monitor_dual.then_some(worst_drop.max(f64::MIN));
    Ok(ScenarioTrace { rows, termination, q_opt, dual_worst_drop })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cases::two_bus;
    use approx::assert_relative_eq;

    #[test]
    fn two_bus_bounds_and_step() {
        let m = two_bus(0.0, 0.5).model().unwrap();
        let xp = build_xproblem(&m, &[-0.5], &[0.0], &[0.4], 1.0, 0.05).unwrap();
        assert_relative_eq!(xp.x_min[0], -0.2, epsilon = 1e-12);
        assert_relative_eq!(xp.x_max[0], 0.2, epsilon = 1e-12);
        let cfg = SmoothCfg::new(1.0, 1.0).unwrap();
        assert_relative_eq!(step_size_bound(&m, &cfg).unwrap(), 1.0, epsilon = 1e-12);
        let cfg2 = SmoothCfg::new(2.0, 1.0).unwrap();
        assert_relative_eq!(step_size_bound(&m, &cfg2).unwrap(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_multipliers_give_zero_primal() {
        let m = two_bus(0.0, 0.5).model().unwrap();
        let xp = build_xproblem(&m, &[-0.5], &[0.0], &[0.4], 1.0, 0.05).unwrap();
        let c = Controller::new(&xp, SmoothCfg::default(), 0.1).unwrap();
        assert_eq!(c.agents()[0].primal_step(&SmoothCfg::default(), &[]), 0.0);
    }

    #[test]
    fn smooth_optimum_on_two_bus() {
        let m = two_bus(0.0, 0.5).model().unwrap();
        let xp = build_xproblem(&m, &[-0.5], &[0.0], &[0.4], 1.0, 0.05).unwrap();
        let q = smooth_optimum(&xp, &SmoothCfg::new(1.0, 1.0).unwrap()).unwrap();
        assert_relative_eq!(q[0], 0.4, epsilon = 1e-9);
    }

    #[test]
    fn two_bus_dual_ascent_reaches_lp_optimum() {
        let m = two_bus(0.0, 0.5).model().unwrap();
        let xp = build_xproblem(&m, &[-0.5], &[0.0], &[0.4], 1.0, 0.05).unwrap();
        let cfg = SmoothCfg::new(1.0, 1.0).unwrap();
        let rho = 0.9 * step_size_bound(&m, &cfg).unwrap();
        let mut c = Controller::new(&xp, cfg, rho).unwrap();
        for _ in 0..2000 {
            c.agent_round(&Sequential);
        }
        assert!((c.applied()[0] - 0.4).abs() <= 1e-4, "{:?}", c.state());
    }

    #[test]
    fn schedule_lookup() {
        let base = LoadProfile { p_load: vec![-1.0], q_load: vec![-0.5] };
        let s = Schedule::jump(base, 1.4, 10);
        assert_eq!(s.at(9).q_load, [-0.5]);
        assert_relative_eq!(s.at(10).q_load[0], -0.7, epsilon = 1e-15);
        assert_relative_eq!(s.at(1000).p_load[0], -1.4, epsilon = 1e-15);
        assert!(Schedule::from_segments(vec![(3, LoadProfile { p_load: vec![], q_load: vec![] })]).is_err());
    }
}
