//! Decoupled reactive power flow (exact and linearized), nose curves and
//! the coupled lossless AC power flow used as a validation plant.

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use nalgebra::DVector;

use crate::case::GridCase;
use crate::error::{check_len, Error, Result};
use crate::linalg::{self, Lu, Matrix};
use crate::network::{assemble_susceptance, NetworkModel};

pub const RPFE_TOLERANCE: f64 = 1e-10;
pub const MAX_NEWTON_ITERATIONS: usize = 50;
const MAX_HALVINGS: usize = 40;

#[derive(Debug, Clone, PartialEq)]
pub struct RpfeSolution {
    pub v_norm: Vec<f64>,
    pub v_load: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Infinity norm of the reactive power mismatch (p.u.).
    pub residual: f64,
}

impl RpfeSolution {
    /// Turns a non-converged solve into [`Error::NotConverged`].
    pub fn ok(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NotConverged {
                iterations: self.iterations,
                residual: self.residual,
            })
        }
    }
}

fn rpfe_residual(q_crit: &Matrix, v: &[f64], q_injected: &[f64]) -> Vec<f64> {
    let dv: Vec<f64> = v.iter().map(|x| x - 1.0).collect();
    let qd = linalg::mat_vec(q_crit, &dv);
    v.iter()
        .zip(&qd)
        .zip(q_injected)
        .map(|((vi, qi), inj)| 4.0 * vi * qi + inj)
        .collect()
}

/// Newton solve of `q_injected = -4 [v] Q_crit (v - 1)` for the normalized
/// voltages. Starting from `v = 1` selects the high-voltage branch.
/// Steps are halved while the mismatch does not decrease; when no halving
/// helps the best iterate is returned with `converged = false`.
pub fn solve_rpfe(
    model: &NetworkModel,
    q_injected: &[f64],
    init: Option<&[f64]>,
) -> Result<RpfeSolution> {
    let n = model.n_load();
    check_len(n, q_injected.len())?;
    let q_crit = model.q_crit();
    let mut v = match init {
        Some(v0) => {
            check_len(n, v0.len())?;
            v0.to_vec()
        }
        None => vec![1.0; n],
    };
    let mut f = rpfe_residual(q_crit, &v, q_injected);
    let mut res = linalg::inf_norm(&f);
    let mut iterations = 0;
    let mut converged = res < RPFE_TOLERANCE;
    while !converged && iterations < MAX_NEWTON_ITERATIONS {
        iterations += 1;
        // J = 4 diag(Q_crit (v - 1)) + 4 diag(v) Q_crit
        let dv: Vec<f64> = v.iter().map(|x| x - 1.0).collect();
        let qd = linalg::mat_vec(q_crit, &dv);
        let mut jac = q_crit.clone();
        for i in 0..n {
            for j in 0..n {
                jac[(i, j)] *= 4.0 * v[i];
            }
            jac[(i, i)] += 4.0 * qd[i];
        }
        let step = match jac.lu().solve(&DVector::from_column_slice(&f)) {
            Some(s) if s.iter().all(|x| x.is_finite()) => s,
            _ => break,
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let trial: Vec<f64> = v
                .iter()
                .zip(step.iter())
                .map(|(vi, si)| vi - t * si)
                .collect();
            let ft = rpfe_residual(q_crit, &trial, q_injected);
            let rt = linalg::inf_norm(&ft);
            if rt < res {
                v = trial;
                f = ft;
                res = rt;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
        converged = res < RPFE_TOLERANCE;
    }
    let v_load = model.denormalize_voltages(&v)?;
    Ok(RpfeSolution {
        v_norm: v,
        v_load,
        converged,
        iterations,
        residual: res,
    })
}

/// Linearization of the reactive flow around `v = 1`:
/// `1 - (1/4) Q_crit^-1 q_injected`.
pub fn linearized_voltages(model: &NetworkModel, q_injected: &[f64]) -> Result<Vec<f64>> {
    let y = model.solve_q_crit(q_injected)?;
    Ok(y.into_iter().map(|yi| 1.0 - 0.25 * yi).collect())
}

/// Both roots of the scalar decoupled equation `q = -4 q_crit v (v - 1)`,
/// `(high, low)`, or `None` past the nose.
pub fn scalar_roots(q_crit: f64, q_injected: f64) -> Option<(f64, f64)> {
    let disc = 1.0 - q_injected / q_crit;
    if disc < 0.0 {
        return None;
    }
    let r = 0.5 * disc.sqrt();
    Some((0.5 + r, 0.5 - r))
}

#[derive(Debug, Clone)]
pub struct NosePoint {
    pub scale: f64,
    pub high: RpfeSolution,
    /// Low-voltage branch in normalized coordinates; only for one load bus.
    pub low: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct NoseCurve {
    pub points: Vec<NosePoint>,
    /// Largest scale with a converged high-voltage solution.
    pub tip_scale: f64,
    /// Smallest scale found without one.
    pub failed_scale: f64,
}

impl NoseCurve {
    pub fn tip(&self) -> &NosePoint {
        self.points
            .last()
            .expect("nose curve always has a tip point")
    }
}

pub const NOSE_RELATIVE_WIDTH: f64 = 1e-6;

/// Sweeps `q_injected = s * direction` from `s = 0` to the nose tip. The
/// tip is bracketed by doubling and refined by bisection to relative width
/// [`NOSE_RELATIVE_WIDTH`]; `steps + 1` evenly spaced points up to the tip
/// are returned, the last one at the tip itself.
pub fn nose_curve(model: &NetworkModel, direction: &[f64], steps: usize) -> Result<NoseCurve> {
    check_len(model.n_load(), direction.len())?;
    if direction.iter().all(|d| *d == 0.0) {
        return Err(Error::Domain("nose curve direction must be nonzero".into()));
    }
    let converges = |s: f64| -> Result<bool> {
        let q: Vec<f64> = direction.iter().map(|d| s * d).collect();
        Ok(solve_rpfe(model, &q, None)?.converged)
    };
    let margin = model.collapse_margin(direction)?;
    let mut lo = 0.0;
    let mut hi = if margin > 0.0 { 1.0 / margin } else { 1.0 };
    while converges(hi)? {
        lo = hi;
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::Internal(
                "nose curve did not terminate; direction injects power".into(),
            ));
        }
    }
    while (hi - lo) > NOSE_RELATIVE_WIDTH * hi {
        let mid = 0.5 * (lo + hi);
        if converges(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let steps = steps.max(1);
    let scalar = model.n_load() == 1;
    let mut points = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let s = lo * k as f64 / steps as f64;
        let q: Vec<f64> = direction.iter().map(|d| s * d).collect();
        let high = solve_rpfe(model, &q, None)?;
        let low = if scalar {
            scalar_roots(model.q_crit()[(0, 0)], q[0]).map(|(_, l)| l)
        } else {
            None
        };
        points.push(NosePoint {
            scale: s,
            high,
            low,
        });
    }
    Ok(NoseCurve {
        points,
        tip_scale: lo,
        failed_scale: hi,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledPfSolution {
    /// Bus angles (rad) in model order: load buses, then generator buses.
    /// The slack angle is zero.
    pub theta: Vec<f64>,
    pub v_load: Vec<f64>,
    /// Reactive injections at generator buses.
    pub q_gen: Vec<f64>,
    /// Reactive injections at load buses evaluated from the solved state.
    pub q_load_measured: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub residual: f64,
}

impl CoupledPfSolution {
    pub fn ok(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NotConverged {
                iterations: self.iterations,
                residual: self.residual,
            })
        }
    }

    /// Angle difference `theta_from - theta_to` for every branch of `case`,
    /// suitable as an angle embedding for [`crate::network::build_model`].
    pub fn branch_angles(&self, case: &GridCase, model: &NetworkModel) -> Vec<f64> {
        let pos = |id: u32| -> usize {
            model
                .load_index(id)
                .or_else(|| {
                    model
                        .gen_bus_ids()
                        .iter()
                        .position(|g| *g == id)
                        .map(|g| g + model.n_load())
                })
                .expect("branch endpoint is a model bus")
        };
        case.branches
            .iter()
            .map(|b| self.theta[pos(b.from)] - self.theta[pos(b.to)])
            .collect()
    }
}

/// Lossless AC power flow in polar coordinates. Unknowns are all non-slack
/// angles and the load-bus magnitudes; generator magnitudes are fixed.
#[derive(Debug, Clone)]
pub struct CoupledSystem {
    b: Matrix,
    /// Nonzero off-diagonal entries of `b` per row.
    adj: Vec<Vec<(usize, f64)>>,
    n_load: usize,
    slack: usize,
    v_gen: Vec<f64>,
    p_gen: Vec<f64>,
}

impl CoupledSystem {
    /// Prepares the plant from the raw (flat-angle) susceptances of `case`.
    /// The slack is the lowest-id generator bus.
    pub fn new(case: &GridCase, model: &NetworkModel) -> Result<Self> {
        let sus = assemble_susceptance(case, None)?;
        if sus.load_bus_ids != model.load_bus_ids() || sus.gen_bus_ids != model.gen_bus_ids() {
            return Err(Error::Internal("model does not belong to this case".into()));
        }
        let n_load = model.n_load();
        let slack_gen = model
            .gen_bus_ids()
            .iter()
            .enumerate()
            .min_by_key(|(_, id)| **id)
            .map(|(i, _)| i)
            .ok_or_else(|| Error::InvalidTopology("no generator bus".into()))?;
        let n = sus.b.nrows();
        let adj = (0..n)
            .map(|h| {
                (0..n)
                    .filter(|&k| k != h && sus.b[(h, k)] != 0.0)
                    .map(|k| (k, sus.b[(h, k)]))
                    .collect()
            })
            .collect();
        Ok(Self {
            b: sus.b,
            adj,
            n_load,
            slack: n_load + slack_gen,
            v_gen: model.v_gen().to_vec(),
            p_gen: case.gen_p_injections(),
        })
    }

    pub fn n_bus(&self) -> usize {
        self.b.nrows()
    }

    pub fn slack(&self) -> usize {
        self.slack
    }

    fn voltages(&self, v_load: &[f64]) -> Vec<f64> {
        v_load.iter().chain(self.v_gen.iter()).copied().collect()
    }

    /// Active and reactive injections implied by `(theta, V)`.
    pub fn injections(&self, theta: &[f64], v: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.n_bus();
        let mut p = vec![0.0; n];
        let mut q = vec![0.0; n];
        for h in 0..n {
            q[h] -= self.b[(h, h)] * v[h] * v[h];
            for &(k, bhk) in &self.adj[h] {
                let d = theta[h] - theta[k];
                let (sn, cs) = d.sin_cos();
                p[h] += bhk * v[h] * v[k] * sn;
                q[h] -= bhk * v[h] * v[k] * cs;
            }
        }
        (p, q)
    }

    /// Solves for the operating point given load-bus active and reactive
    /// injections. `warm` seeds Newton; otherwise a flat start is used.
    pub fn solve(
        &self,
        p_load: &[f64],
        q_load: &[f64],
        warm: Option<&CoupledPfSolution>,
    ) -> Result<CoupledPfSolution> {
        self.solve_cached(p_load, q_load, warm, &mut None)
    }

    /// Like [`Self::solve`] but reuses the factored Jacobian in `cache` as
    /// long as it keeps halving the mismatch, refreshing it otherwise.
    /// Worth it when consecutive solves move the operating point little.
    pub fn solve_cached(
        &self,
        p_load: &[f64],
        q_load: &[f64],
        warm: Option<&CoupledPfSolution>,
        cache: &mut Option<Lu>,
    ) -> Result<CoupledPfSolution> {
        let nl = self.n_load;
        let n = self.n_bus();
        check_len(nl, p_load.len())?;
        check_len(nl, q_load.len())?;
        let p_spec: Vec<f64> = p_load.iter().chain(self.p_gen.iter()).copied().collect();
        let angle_idx: Vec<usize> = (0..n).filter(|&h| h != self.slack).collect();
        let na = angle_idx.len();
        let dim = na + nl;

        let (mut theta, mut v_load) = match warm {
            Some(w) if w.theta.len() == n && w.v_load.len() == nl => {
                (w.theta.clone(), w.v_load.clone())
            }
            _ => (vec![0.0; n], vec![1.0; nl]),
        };
        let mismatch = |theta: &[f64], v_load: &[f64]| -> Vec<f64> {
            let v = self.voltages(v_load);
            let (p, q) = self.injections(theta, &v);
            let mut f = Vec::with_capacity(dim);
            f.extend(angle_idx.iter().map(|&h| p[h] - p_spec[h]));
            f.extend((0..nl).map(|h| q[h] - q_load[h]));
            f
        };
        let mut f = mismatch(&theta, &v_load);
        let mut res = linalg::inf_norm(&f);
        let mut iterations = 0;
        let mut converged = res < RPFE_TOLERANCE;
        let mut col_of = vec![usize::MAX; n];
        for (c, &h) in angle_idx.iter().enumerate() {
            col_of[h] = c;
        }
        let mut fresh = cache.is_none();
        while !converged && iterations < MAX_NEWTON_ITERATIONS {
            iterations += 1;
            if fresh || cache.is_none() {
                let v = self.voltages(&v_load);
                *cache = Some(self.jacobian(&theta, &v, &angle_idx, &col_of).lu());
            }
            let lu = cache.as_ref().expect("factor was just stored");
            let step = match lu.solve(&DVector::from_column_slice(&f)) {
                Some(s) if s.iter().all(|x| x.is_finite()) => s,
                _ if !fresh => {
                    fresh = true;
                    continue;
                }
                _ => break,
            };
            let before = res;
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..MAX_HALVINGS {
                let mut th = theta.clone();
                for (c, &h) in angle_idx.iter().enumerate() {
                    th[h] -= t * step[c];
                }
                let vl: Vec<f64> = (0..nl).map(|h| v_load[h] - t * step[na + h]).collect();
                let ft = mismatch(&th, &vl);
                let rt = linalg::inf_norm(&ft);
                if rt < res {
                    theta = th;
                    v_load = vl;
                    f = ft;
                    res = rt;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            converged = res < RPFE_TOLERANCE;
            if !fresh && (!accepted || res > 0.5 * before) {
                // stale factor: refresh and retry
                fresh = true;
                continue;
            }
            if !accepted {
                break;
            }
        }
        let v = self.voltages(&v_load);
        let (_, q) = self.injections(&theta, &v);
        Ok(CoupledPfSolution {
            theta,
            q_gen: q[nl..].to_vec(),
            q_load_measured: q[..nl].to_vec(),
            v_load,
            converged,
            iterations,
            residual: res,
        })
    }

    fn jacobian(&self, theta: &[f64], v: &[f64], angle_idx: &[usize], col_of: &[usize]) -> Matrix {
        let nl = self.n_load;
        let na = angle_idx.len();
        let mut jac = Matrix::zeros(na + nl, na + nl);
        // P rows for non-slack buses.
        for (r, &h) in angle_idx.iter().enumerate() {
            for &(k, bhk) in &self.adj[h] {
                let d = theta[h] - theta[k];
                let (s, c) = d.sin_cos();
                let dth = bhk * v[h] * v[k] * c;
                jac[(r, col_of[h])] += dth;
                if col_of[k] != usize::MAX {
                    jac[(r, col_of[k])] -= dth;
                }
                if h < nl {
                    jac[(r, na + h)] += bhk * v[k] * s;
                }
                if k < nl {
                    jac[(r, na + k)] += bhk * v[h] * s;
                }
            }
        }
        // Q rows for load buses.
        for h in 0..nl {
            let r = na + h;
            jac[(r, na + h)] -= 2.0 * self.b[(h, h)] * v[h];
            for &(k, bhk) in &self.adj[h] {
                let d = theta[h] - theta[k];
                let (s, c) = d.sin_cos();
                let dth = bhk * v[h] * v[k] * s;
                if col_of[h] != usize::MAX {
                    jac[(r, col_of[h])] += dth;
                }
                if col_of[k] != usize::MAX {
                    jac[(r, col_of[k])] -= dth;
                }
                jac[(r, na + h)] -= bhk * v[k] * c;
                if k < nl {
                    jac[(r, na + k)] -= bhk * v[h] * c;
                }
            }
        }
        jac
    }
}

/// Coupled power flow at the case's own demands with compensator
/// injections `q_comp` added at load buses.
pub fn solve_coupled_pf(
    case: &GridCase,
    model: &NetworkModel,
    q_comp: &[f64],
) -> Result<CoupledPfSolution> {
    check_len(model.n_load(), q_comp.len())?;
    let sys = CoupledSystem::new(case, model)?;
    let q: Vec<f64> = case
        .load_q_injections()
        .iter()
        .zip(q_comp)
        .map(|(a, b)| a + b)
        .collect();
    sys.solve(&case.load_p_injections(), &q, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case::fixtures::two_bus;
    use crate::network::build_model;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_injection_is_open_circuit() {
        let m = build_model(&two_bus(0.0, 0.0), None).unwrap();
        let s = solve_rpfe(&m, &[0.0], None).unwrap();
        assert_eq!(s.v_norm, [1.0]);
        assert!(s.converged && s.iterations <= 1);
    }

    #[test]
    fn two_bus_high_root() {
        let m = build_model(&two_bus(0.0, 0.5), None).unwrap();
        let s = solve_rpfe(&m, &[-0.5], None).unwrap().ok().unwrap();
        assert_abs_diff_eq!(s.v_norm[0], 0.5 + 0.5 * 0.5_f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(s.v_norm[0], 0.853553, epsilon = 1e-6);
    }

    #[test]
    fn two_bus_past_nose_fails() {
        let m = build_model(&two_bus(0.0, 0.5), None).unwrap();
        let s = solve_rpfe(&m, &[-1.2], None).unwrap();
        assert!(!s.converged);
        assert!(matches!(s.ok(), Err(Error::NotConverged { .. })));
    }

    #[test]
    fn linearized_two_bus() {
        let m = build_model(&two_bus(0.0, 0.5), None).unwrap();
        assert_eq!(linearized_voltages(&m, &[0.0]).unwrap(), [1.0]);
        assert_abs_diff_eq!(
            linearized_voltages(&m, &[-0.5]).unwrap()[0],
            0.875,
            epsilon = 1e-15
        );
    }

    #[test]
    fn nose_tips() {
        let m = build_model(&two_bus(0.0, 0.5), None).unwrap();
        let nc = nose_curve(&m, &[-1.0], 20).unwrap();
        assert!((nc.tip_scale - 1.0).abs() <= 1e-6);
        assert_eq!(nc.points[0].high.v_norm, [1.0]);
        assert!((nc.tip().high.v_norm[0] - 0.5).abs() < 2e-3);

        let m = build_model(&two_bus(2.4, 0.5), None).unwrap();
        let nc = nose_curve(&m, &[-1.0], 20).unwrap();
        assert!((nc.tip_scale - 2.5).abs() <= 2.5e-6);
        assert!((nc.tip().high.v_load[0] - 1.25).abs() < 5e-3);
    }

    #[test]
    fn coupled_flat_no_load() {
        let c = two_bus(0.0, 0.0);
        let m = build_model(&c, None).unwrap();
        let s = solve_coupled_pf(&c, &m, &[0.0]).unwrap().ok().unwrap();
        assert_eq!(s.theta, [0.0, 0.0]);
        assert_eq!(s.v_load, [1.0]);
        assert!(s.residual < 1e-12);
    }

    #[test]
    fn coupled_matches_decoupled_without_active_power() {
        let c = two_bus(0.0, 0.5);
        let m = build_model(&c, None).unwrap();
        let s = solve_coupled_pf(&c, &m, &[0.0]).unwrap().ok().unwrap();
        assert_abs_diff_eq!(s.v_load[0], 0.5 + 0.5 * 0.5_f64.sqrt(), epsilon = 1e-9);
        // generator reactive output balances line absorption
        assert!(s.q_gen[0] > 0.5);
    }

    #[test]
    fn coupled_jacobian_matches_finite_differences() {
        let mut c = two_bus(0.3, 0.4);
        c.buses[1].p_demand = 0.6;
        c.buses.push(crate::case::BusRecord {
            id: 3,
            kind: crate::case::BusKind::Load,
            p_demand: 0.2,
            q_demand: 0.1,
            shunt_b: 0.0,
            v_setpoint: 1.0,
        });
        c.branches.push(crate::case::BranchRecord {
            from: 2,
            to: 3,
            reactance_x: 0.1,
            charging_b: 0.02,
        });
        c.branches.push(crate::case::BranchRecord {
            from: 1,
            to: 3,
            reactance_x: 0.3,
            charging_b: 0.0,
        });
        let m = build_model(&c, None).unwrap();
        let sys = CoupledSystem::new(&c, &m).unwrap();
        let n = sys.n_bus();
        let theta = [0.1, -0.2, 0.0];
        let v = [0.97, 1.02, 1.0];
        let angle_idx: Vec<usize> = (0..n).filter(|&h| h != sys.slack()).collect();
        let mut col_of = vec![usize::MAX; n];
        for (c, &h) in angle_idx.iter().enumerate() {
            col_of[h] = c;
        }
        let jac = sys.jacobian(&theta, &v, &angle_idx, &col_of);
        let f = |th: &[f64], vv: &[f64]| {
            let (p, q) = sys.injections(th, vv);
            let mut out: Vec<f64> = angle_idx.iter().map(|&h| p[h]).collect();
            out.extend_from_slice(&q[..2]);
            out
        };
        let h = 1e-6;
        for (c, &bus) in angle_idx.iter().enumerate() {
            let (mut tp, mut tm) = (theta, theta);
            tp[bus] += h;
            tm[bus] -= h;
            let (fp, fm) = (f(&tp, &v), f(&tm, &v));
            for r in 0..fp.len() {
                assert_abs_diff_eq!(jac[(r, c)], (fp[r] - fm[r]) / (2.0 * h), epsilon = 1e-7);
            }
        }
        for l in 0..2 {
            let (mut vp, mut vm) = (v, v);
            vp[l] += h;
            vm[l] -= h;
            let (fp, fm) = (f(&theta, &vp), f(&theta, &vm));
            for r in 0..fp.len() {
                assert_abs_diff_eq!(
                    jac[(r, angle_idx.len() + l)],
                    (fp[r] - fm[r]) / (2.0 * h),
                    epsilon = 1e-7
                );
            }
        }
    }
}
