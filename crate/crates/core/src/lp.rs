//! Dense primal-dual interior-point solver for
//!
//! ```text
//! minimize  c^T x   subject to  G x <= h
//! ```
//!
//! with free `x`. Mehrotra predictor-corrector steps on the normal
//! equations `G^T diag(z/s) G`. Infeasibility is confirmed with a phase-one
//! problem whose dual yields a Farkas certificate.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use nalgebra::DVector;

use crate::error::{Error, InfeasibilityReport, Result};
use crate::linalg::{inf_norm, Matrix};

#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub c: Vec<f64>,
    pub g: Matrix,
    pub h: Vec<f64>,
    /// Optional human-readable row names used in infeasibility reports.
    pub row_labels: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    /// `||G x + s - h||_inf / (1 + ||h||_inf)`
    pub primal: f64,
    /// `||c + G^T z||_inf / (1 + ||c||_inf)`
    pub dual: f64,
    /// `|c^T x + h^T z| / max(1, |c^T x|)`
    pub gap: f64,
    /// Largest constraint violation `max(G x - h)^+`.
    pub violation: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.primal.max(self.dual).max(self.gap).max(self.violation)
    }
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    /// Dual multipliers, one per row, nonnegative.
    pub z: Vec<f64>,
    pub primal_objective: f64,
    /// `-h^T z`.
    pub dual_objective: f64,
    pub kkt: KktResiduals,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct IpmSettings {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for IpmSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 120,
        }
    }
}

impl LinearProgram {
    pub fn new(c: Vec<f64>, g: Matrix, h: Vec<f64>) -> Self {
        Self {
            c,
            g,
            h,
            row_labels: Vec::new(),
        }
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Self {
        self.row_labels = labels;
        self
    }

    pub fn n_vars(&self) -> usize {
        self.c.len()
    }

    pub fn n_rows(&self) -> usize {
        self.h.len()
    }

    pub fn residuals(&self, x: &[f64], z: &[f64]) -> KktResiduals {
        let gx = &self.g * DVector::from_column_slice(x);
        let gtz = self.g.transpose() * DVector::from_column_slice(z);
        let primal_obj: f64 = self.c.iter().zip(x).map(|(a, b)| a * b).sum();
        let dual_obj: f64 = -self.h.iter().zip(z).map(|(a, b)| a * b).sum::<f64>();
        let violation = gx
            .iter()
            .zip(&self.h)
            .map(|(a, b)| (a - b).max(0.0))
            .fold(0.0, f64::max);
        let dual_res: Vec<f64> = self.c.iter().zip(gtz.iter()).map(|(a, b)| a + b).collect();
        let neg_z = z.iter().map(|v| (-v).max(0.0)).fold(0.0, f64::max);
        KktResiduals {
            primal: violation / (1.0 + inf_norm(&self.h)),
            dual: (inf_norm(&dual_res) / (1.0 + inf_norm(&self.c))).max(neg_z),
            gap: (primal_obj - dual_obj).abs() / primal_obj.abs().max(1.0),
            violation,
        }
    }

    /// Solves to optimality or reports infeasibility with a certificate.
    pub fn solve(&self) -> Result<LpSolution> {
        self.solve_with(IpmSettings::default())
    }

    pub fn solve_with(&self, settings: IpmSettings) -> Result<LpSolution> {
        match ipm(&self.c, &self.g, &self.h, settings) {
            Ok(sol) => Ok(sol),
            Err(primary) => match self.phase_one(settings)? {
                Some(report) => Err(Error::Infeasible(report)),
                None => Err(primary),
            },
        }
    }

    /// `minimize tau  s.t.  G x - tau <= h,  -tau <= 1`. Returns a report
    /// when the optimal relaxation is positive.
    pub fn phase_one(&self, settings: IpmSettings) -> Result<Option<InfeasibilityReport>> {
        let (m, n) = (self.n_rows(), self.n_vars());
        let mut g = Matrix::zeros(m + 1, n + 1);
        g.view_mut((0, 0), (m, n)).copy_from(&self.g);
        for i in 0..m {
            g[(i, n)] = -1.0;
        }
        g[(m, n)] = -1.0;
        let mut h = self.h.clone();
        h.push(1.0);
        let mut c = vec![0.0; n + 1];
        c[n] = 1.0;
        let sol = ipm(&c, &g, &h, settings)?;
        let tau = sol.x[n];
        let tol = settings.tolerance.sqrt() * 1e-2 * (1.0 + inf_norm(&self.h));
        if tau <= tol {
            return Ok(None);
        }
        let mut rows: Vec<(usize, f64)> = sol.z[..m]
            .iter()
            .copied()
            .enumerate()
            .filter(|(_, w)| *w > 1e-9)
            .collect();
        rows.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(core::cmp::Ordering::Equal)
                .then(a.0.cmp(&b.0))
        });
        let binding = rows
            .into_iter()
            .take(8)
            .map(|(i, w)| {
                let label = self
                    .row_labels
                    .get(i)
                    .cloned()
                    .unwrap_or_else(|| alloc::format!("row {i}"));
                (label, w)
            })
            .collect();
        Ok(Some(InfeasibilityReport {
            infeasibility: tau,
            binding,
        }))
    }
}

fn max_step(v: &[f64], dv: &[f64]) -> f64 {
    v.iter()
        .zip(dv)
        .filter(|(_, d)| **d < 0.0)
        .map(|(x, d)| -x / d)
        .fold(f64::INFINITY, f64::min)
}

fn solve_normal(m: Matrix, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = m.clone().cholesky() {
        return Some(ch.solve(rhs));
    }
    let n = m.nrows();
    let reg = m
        .diagonal()
        .iter()
        .fold(0.0_f64, |a, d| a.max(d.abs()))
        .max(1.0)
        * 1e-13;
    let mut m = m;
    for i in 0..n {
        m[(i, i)] += reg;
    }
    m.lu().solve(rhs)
}

fn ipm(c: &[f64], g: &Matrix, h: &[f64], settings: IpmSettings) -> Result<LpSolution> {
    let (m, n) = (g.nrows(), g.ncols());
    let gt = g.transpose();
    let c_vec = DVector::from_column_slice(c);
    let h_vec = DVector::from_column_slice(h);

    // Least-squares start, then push slacks and multipliers inside.
    let gtg = &gt * g;
    let mut x = solve_normal(gtg, &(&gt * &h_vec)).unwrap_or_else(|| DVector::zeros(n));
    let mut s: DVector<f64> = &h_vec - g * &x;
    let mut z = DVector::from_element(m, 1.0);
    let shift = s.iter().copied().fold(f64::INFINITY, f64::min);
    let floor = 1.0_f64.max(0.1 * inf_norm(h));
    if shift < floor {
        s.add_scalar_mut(floor - shift.min(0.0));
    }
    for v in s.iter_mut() {
        *v = v.max(1e-2);
    }

    let scale_h = 1.0 + inf_norm(h);
    let scale_c = 1.0 + inf_norm(c);
    let mut best: Option<(f64, LpSolution)> = None;
    for iter in 0..settings.max_iterations {
        let r_d: DVector<f64> = &c_vec + &gt * &z;
        let r_p: DVector<f64> = g * &x + &s - &h_vec;
        let mu = s.dot(&z) / m as f64;
        let pobj = c_vec.dot(&x);
        let dobj = -h_vec.dot(&z);
        let res_p = r_p.amax() / scale_h;
        let res_d = r_d.amax() / scale_c;
        let gap = (pobj - dobj).abs() / pobj.abs().max(1.0);
        let merit = res_p.max(res_d).max(gap);
        if merit.is_finite() && best.as_ref().is_none_or(|(b, _)| merit < *b) {
            let sol = LpSolution {
                x: x.as_slice().to_vec(),
                z: z.as_slice().to_vec(),
                primal_objective: pobj,
                dual_objective: dobj,
                kkt: KktResiduals {
                    primal: res_p,
                    dual: res_d,
                    gap,
                    violation: 0.0,
                },
                iterations: iter,
            };
            best = Some((merit, sol));
        }
        if res_p <= settings.tolerance && res_d <= settings.tolerance && gap <= settings.tolerance {
            break;
        }
        if !merit.is_finite() || x.amax() > 1e12 || z.amax() > 1e14 {
            break;
        }

        let w: DVector<f64> = z.component_div(&s);
        let mut gw = g.clone();
        for i in 0..m {
            let wi = w[i];
            for j in 0..n {
                gw[(i, j)] *= wi;
            }
        }
        let normal = &gt * &gw;

        // Newton direction for a given complementarity target r_c:
        //   G^T dz = -r_d,  G dx + ds = -r_p,  Z ds + S dz = -r_c
        let direction = |r_c: &DVector<f64>| -> Option<(DVector<f64>, DVector<f64>, DVector<f64>)> {
            // dz = S^-1 (-r_c + Z r_p + Z G dx)
            let t: DVector<f64> = (-r_c + z.component_mul(&r_p)).component_div(&s);
            let rhs = -&r_d - &gt * &t;
            let dx = solve_normal(normal.clone(), &rhs)?;
            let dz: DVector<f64> = &t + w.component_mul(&(g * &dx));
            let ds: DVector<f64> = -&r_p - g * &dx;
            Some((dx, ds, dz))
        };

        let r_c_aff = s.component_mul(&z);
        let Some((dx_a, ds_a, dz_a)) = direction(&r_c_aff) else {
            break;
        };
        let a_p = max_step(s.as_slice(), ds_a.as_slice()).min(1.0);
        let a_d = max_step(z.as_slice(), dz_a.as_slice()).min(1.0);
        let a_aff = a_p.min(a_d);
        let s_aff: DVector<f64> = &s + a_aff * &ds_a;
        let z_aff: DVector<f64> = &z + a_aff * &dz_a;
        let mu_aff = s_aff.dot(&z_aff) / m as f64;
        let sigma = (mu_aff / mu).powi(3).clamp(0.0, 1.0);
        let _ = dx_a;

        let r_c: DVector<f64> =
            s.component_mul(&z) + ds_a.component_mul(&dz_a) - DVector::from_element(m, sigma * mu);
        let Some((dx, ds, dz)) = direction(&r_c) else {
            break;
        };
        let alpha = (0.99
            * max_step(s.as_slice(), ds.as_slice()).min(max_step(z.as_slice(), dz.as_slice())))
        .min(1.0);
        x += alpha * dx;
        s += alpha * ds;
        z += alpha * dz;
    }

    let Some((_, mut sol)) = best else {
        return Err(Error::Internal(
            "interior point produced no finite iterate".into(),
        ));
    };
    let ok = sol.kkt.primal <= settings.tolerance
        && sol.kkt.dual <= settings.tolerance
        && sol.kkt.gap <= settings.tolerance;
    let lp = LinearProgram::new(c.to_vec(), g.clone(), h.to_vec());
    sol.kkt = lp.residuals(&sol.x, &sol.z);
    if ok {
        Ok(sol)
    } else {
        Err(Error::NotConverged {
            iterations: settings.max_iterations,
            residual: sol.kkt.max(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn lp(c: &[f64], rows: &[&[f64]], h: &[f64]) -> LinearProgram {
        let n = c.len();
        let g = Matrix::from_fn(rows.len(), n, |i, j| rows[i][j]);
        LinearProgram::new(c.to_vec(), g, h.to_vec())
    }

    #[test]
    fn small_textbook_lp() {
        // max x + y s.t. x + 2y <= 4, 3x + y <= 6, x, y >= 0  ->  (1.6, 1.2)
        let p = lp(
            &[-1.0, -1.0],
            &[&[1.0, 2.0], &[3.0, 1.0], &[-1.0, 0.0], &[0.0, -1.0]],
            &[4.0, 6.0, 0.0, 0.0],
        );
        let s = p.solve().unwrap();
        assert_abs_diff_eq!(s.x[0], 1.6, epsilon = 1e-8);
        assert_abs_diff_eq!(s.x[1], 1.2, epsilon = 1e-8);
        assert!(s.kkt.max() <= 1e-8, "{:?}", s.kkt);
        assert_abs_diff_eq!(s.primal_objective, s.dual_objective, epsilon = 1e-8);
    }

    #[test]
    fn infeasible_gives_certificate() {
        // x <= 1 and x >= 2
        let p = lp(&[1.0], &[&[1.0], &[-1.0]], &[1.0, -2.0])
            .with_labels(vec!["upper".into(), "lower".into()]);
        match p.solve() {
            Err(Error::Infeasible(r)) => {
                assert_abs_diff_eq!(r.infeasibility, 0.5, epsilon = 1e-7);
                assert_eq!(r.binding.len(), 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn abs_value_epigraph() {
        // minimize t s.t. |x - 3| <= t, x <= 1  ->  t = 2
        let p = lp(
            &[0.0, 1.0],
            &[&[1.0, -1.0], &[-1.0, -1.0], &[1.0, 0.0]],
            &[3.0, -3.0, 1.0],
        );
        let s = p.solve().unwrap();
        assert_abs_diff_eq!(s.x[1], 2.0, epsilon = 1e-8);
        assert_abs_diff_eq!(s.x[0], 1.0, epsilon = 1e-8);
    }

    #[test]
    fn degenerate_equality_pair() {
        // x == 0.5 written as two inequalities, minimize |x - 1| via epigraph.
        let p = lp(
            &[0.0, 1.0],
            &[&[1.0, 0.0], &[-1.0, 0.0], &[1.0, -1.0], &[-1.0, -1.0]],
            &[0.5, -0.5, 1.0, -1.0],
        );
        let s = p.solve().unwrap();
        assert_abs_diff_eq!(s.x[0], 0.5, epsilon = 1e-8);
        assert_abs_diff_eq!(s.x[1], 0.5, epsilon = 1e-8);
    }
}
