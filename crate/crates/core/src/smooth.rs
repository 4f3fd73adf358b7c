//! Smooth, decomposable surrogate of the infinity norm.
//!
//! `f_tilde(x) = (1/a) ln((1/n) sum exp(a |x_i|^(1+eps)))` tends to
//! `max |x_i|` as `a` grows and `eps` shrinks. Since `ln` is monotone it has
//! the same minimizers as `f(x) = sum exp(a |x_i|^(1+eps))`, which splits
//! over coordinates and is what the distributed controller minimizes.

use alloc::format;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};

/// Largest exponent `f_cost` accepts before refusing to evaluate.
pub const MAX_EXPONENT: f64 = 700.0;
/// Stand-in for the unbounded curvature at the origin when `eps < 1`.
pub const HESSIAN_SENTINEL: f64 = 1e300;

const LAMBERT_TOL: f64 = 1e-15;
const MAX_ROOT_ITERATIONS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothCfg {
    /// Softmax sharpness `a`.
    pub sharpness: f64,
    /// Exponent offset: the cost uses `|x|^(1 + exponent_eps)`.
    pub exponent_eps: f64,
}

impl Default for SmoothCfg {
    fn default() -> Self {
        Self {
            sharpness: 50.0,
            exponent_eps: 1.0,
        }
    }
}

impl SmoothCfg {
    pub fn new(sharpness: f64, exponent_eps: f64) -> Result<Self> {
        let cfg = Self {
            sharpness,
            exponent_eps,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sharpness >= 1.0 && self.sharpness.is_finite()) {
            return Err(Error::Domain(format!(
                "sharpness must be >= 1, got {}",
                self.sharpness
            )));
        }
        if !(self.exponent_eps > 0.0 && self.exponent_eps <= 1.0) {
            return Err(Error::Domain(format!(
                "exponent_eps must lie in (0, 1], got {}",
                self.exponent_eps
            )));
        }
        Ok(())
    }

    /// True when the closed-form Lambert-W update applies.
    pub fn is_quadratic(&self) -> bool {
        self.exponent_eps == 1.0
    }

    fn exponent(&self, xi: f64) -> f64 {
        self.sharpness * xi.abs().powf(1.0 + self.exponent_eps)
    }
}

fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Log-sum-exp smooth maximum of `|x_i|^(1+eps)`. Zero for an empty vector.
pub fn f_tilde(cfg: &SmoothCfg, x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let e: Vec<f64> = x.iter().map(|xi| cfg.exponent(*xi)).collect();
    let m = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = e.iter().map(|ei| (ei - m).exp()).sum();
    (m + (s / x.len() as f64).ln()) / cfg.sharpness
}

/// `sum exp(a |x_i|^(1+eps))`.
pub fn f_cost(cfg: &SmoothCfg, x: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for xi in x {
        let e = cfg.exponent(*xi);
        if e > MAX_EXPONENT {
            return Err(Error::Overflow { exponent: e });
        }
        total += e.exp();
    }
    Ok(total)
}

/// Gradient of [`f_cost`]; component `i` depends on `x_i` alone.
pub fn grad_f(cfg: &SmoothCfg, x: &[f64]) -> Vec<f64> {
    x.iter().map(|xi| grad_component(cfg, *xi)).collect()
}

fn grad_component(cfg: &SmoothCfg, xi: f64) -> f64 {
    if xi == 0.0 {
        return 0.0;
    }
    let a = cfg.sharpness;
    let eps = cfg.exponent_eps;
    a * (1.0 + eps) * cfg.exponent(xi).exp() * xi.abs().powf(eps) * sgn(xi)
}

/// Diagonal of the Hessian of [`f_cost`]. At `x_i = 0` the value is `2a`
/// for `eps = 1` and [`HESSIAN_SENTINEL`] otherwise.
pub fn hessian_diag(cfg: &SmoothCfg, x: &[f64]) -> Vec<f64> {
    let a = cfg.sharpness;
    let eps = cfg.exponent_eps;
    x.iter()
        .map(|xi| {
            if cfg.is_quadratic() {
                let s = a * xi * xi;
                return 2.0 * a * s.exp() * (1.0 + 2.0 * s);
            }
            if *xi == 0.0 {
                return HESSIAN_SENTINEL;
            }
            let r = xi.abs();
            a * (1.0 + eps)
                * cfg.exponent(*xi).exp()
                * (eps * r.powf(eps - 1.0) + a * (1.0 + eps) * r.powf(2.0 * eps))
        })
        .collect()
}

/// Principal branch of the Lambert W function, `w e^w = z`, `w >= -1`.
pub fn lambert_w0(z: f64) -> Result<f64> {
    let branch = -(-1.0_f64).exp();
    if z.is_nan() || z < branch {
        return Err(Error::Domain(format!(
            "lambert_w0 needs z >= -1/e, got {z}"
        )));
    }
    if z == 0.0 {
        return Ok(0.0);
    }
    if z == branch {
        return Ok(-1.0);
    }
    if z == f64::INFINITY {
        return Ok(f64::INFINITY);
    }
    if z > 1e300 {
        return Ok(lambert_w0_from_ln(z.ln()));
    }
    let mut w = if z >= 0.0 {
        (1.0 + z).ln()
    } else {
        // Series around the branch point.
        let p = (2.0 * (core::f64::consts::E * z + 1.0)).sqrt();
        -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p
    };
    for _ in 0..MAX_ROOT_ITERATIONS {
        let ew = w.exp();
        let f = w * ew - z;
        let wp1 = w + 1.0;
        if wp1 == 0.0 {
            break;
        }
        let denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1);
        if denom == 0.0 || !denom.is_finite() {
            break;
        }
        let step = f / denom;
        let next = (w - step).max(-1.0);
        let done = (next - w).abs() <= LAMBERT_TOL * (1.0 + next.abs());
        w = next;
        if done {
            break;
        }
    }
    Ok(w)
}

/// W(z) given `ln z`, for arguments too large to represent directly.
/// Newton on `w + ln w = ln z`.
fn lambert_w0_from_ln(ln_z: f64) -> f64 {
    let mut w = ln_z - ln_z.ln();
    for _ in 0..MAX_ROOT_ITERATIONS {
        let step = (w + w.ln() - ln_z) / (1.0 + 1.0 / w);
        w -= step;
        if step.abs() <= LAMBERT_TOL * w {
            break;
        }
    }
    w
}

/// Solves `2 a x e^(a x^2) = zeta` in closed form:
/// `x = sgn(zeta) sqrt(W(zeta^2 / (2a)) / (2a))`.
pub fn primal_update_scalar(cfg: &SmoothCfg, zeta: f64) -> f64 {
    if zeta == 0.0 {
        return 0.0;
    }
    let two_a = 2.0 * cfg.sharpness;
    let w = match lambert_w0(zeta * zeta / two_a) {
        Ok(w) if w.is_finite() => w,
        _ => lambert_w0_from_ln(2.0 * zeta.abs().ln() - two_a.ln()),
    };
    sgn(zeta) * (w / two_a).sqrt()
}

/// Solves `d f / d x_i = zeta` for any `eps` in (0, 1] by safeguarded
/// Newton on the logarithm of the gradient magnitude.
pub fn primal_update_general(cfg: &SmoothCfg, zeta: f64) -> f64 {
    if zeta == 0.0 || !zeta.is_finite() {
        return if zeta.is_nan() {
            zeta
        } else if zeta == 0.0 {
            0.0
        } else {
            sgn(zeta) * f64::INFINITY
        };
    }
    let a = cfg.sharpness;
    let eps = cfg.exponent_eps;
    let target = zeta.abs().ln() - (a * (1.0 + eps)).ln();
    // h is increasing on (0, inf) and runs from -inf to +inf.
    let h = |x: f64| a * x.powf(1.0 + eps) + eps * x.ln() - target;
    let dh = |x: f64| a * (1.0 + eps) * x.powf(eps) + eps / x;

    let (mut lo, mut hi) = (1.0, 1.0);
    while h(lo) > 0.0 {
        lo *= 0.5;
        if lo == 0.0 {
            return 0.0;
        }
    }
    while h(hi) < 0.0 {
        hi *= 2.0;
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..MAX_ROOT_ITERATIONS {
        let hx = h(x);
        if hx == 0.0 {
            break;
        }
        if hx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let newton = x - hx / dh(x);
        let next = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        let done =
            (next - x).abs() <= 1e-12 * next.abs().max(f64::MIN_POSITIVE) || hi - lo <= 1e-15 * hi;
        x = next;
        if done {
            break;
        }
    }
    sgn(zeta) * x
}

/// Exact minimizer of `f_i(x) - zeta x`: the closed form when `eps = 1`,
/// the numerical root otherwise.
pub fn primal_update(cfg: &SmoothCfg, zeta: f64) -> f64 {
    if cfg.is_quadratic() {
        primal_update_scalar(cfg, zeta)
    } else {
        primal_update_general(cfg, zeta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use core::f64::consts::E;

    fn cfg(a: f64, eps: f64) -> SmoothCfg {
        SmoothCfg::new(a, eps).unwrap()
    }

    #[test]
    fn f_tilde_at_zero_and_sandwich() {
        let c = cfg(50.0, 1e-6);
        assert_eq!(f_tilde(&c, &[0.0, 0.0, 0.0]), 0.0);
        let v = f_tilde(&c, &[1.0, 0.5]);
        assert!(v <= 1.0 && v >= 1.0 - 2.0_f64.ln() / 50.0, "{v}");
    }

    #[test]
    fn f_tilde_does_not_overflow() {
        let c = cfg(1e4, 1.0);
        let v = f_tilde(&c, &[1.0, -1.0, 0.2]);
        assert!(v.is_finite());
        assert_relative_eq!(v, 1.0 + (2.0_f64 / 3.0).ln() / 1e4, max_relative = 1e-12);
    }

    #[test]
    fn cost_and_gradient_hand_values() {
        let c = cfg(1.0, 1.0);
        assert_relative_eq!(f_cost(&c, &[1.0]).unwrap(), E, max_relative = 1e-15);
        assert_relative_eq!(grad_f(&c, &[1.0])[0], 2.0 * E, max_relative = 1e-15);
        assert_eq!(f_cost(&c, &[0.0, 0.0]).unwrap(), 2.0);
        assert_eq!(grad_f(&c, &[0.0]), [0.0]);
    }

    #[test]
    fn cost_overflow_is_flagged() {
        let c = cfg(50.0, 1.0);
        assert!(matches!(f_cost(&c, &[4.0]), Err(Error::Overflow { .. })));
        assert!(f_cost(&c, &[3.7]).is_ok());
    }

    #[test]
    fn hessian_hand_values() {
        let c = cfg(1.0, 1.0);
        let h = hessian_diag(&c, &[0.0, 1.0]);
        assert_eq!(h[0], 2.0);
        assert_relative_eq!(h[1], 6.0 * E, max_relative = 1e-14);
        assert_eq!(hessian_diag(&cfg(3.0, 0.5), &[0.0])[0], HESSIAN_SENTINEL);
    }

    #[test]
    fn lambert_identities() {
        assert_eq!(lambert_w0(0.0).unwrap(), 0.0);
        assert!((lambert_w0(E).unwrap() - 1.0).abs() <= 1e-14);
        assert!((lambert_w0(1.0).unwrap() - 0.567_143_290_409_783_8).abs() <= 1e-15);
        assert_eq!(lambert_w0(-(-1.0_f64).exp()).unwrap(), -1.0);
        assert!(matches!(lambert_w0(-0.4), Err(Error::Domain(_))));
    }

    #[test]
    fn lambert_negative_and_huge_arguments() {
        for z in [
            -0.367,
            -0.3,
            -0.1,
            -1e-8,
            1e-300,
            1e10,
            1e200,
            1e305,
            f64::MAX,
        ] {
            let w = lambert_w0(z).unwrap();
            // compare in log space for the big ones
            if z > 1.0 {
                assert_relative_eq!(w + w.ln(), z.ln(), max_relative = 1e-14);
            } else {
                assert_relative_eq!(w * w.exp(), z, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn closed_form_update() {
        let c = cfg(1.0, 1.0);
        assert_eq!(primal_update_scalar(&c, 0.0), 0.0);
        assert_relative_eq!(primal_update_scalar(&c, 2.0 * E), 1.0, max_relative = 1e-14);
        assert_relative_eq!(
            primal_update_scalar(&c, -2.0 * E),
            -1.0,
            max_relative = 1e-14
        );
        // huge zeta goes through the log form
        let x = primal_update_scalar(&c, 1e200);
        assert!(x.is_finite() && x > 20.0);
    }

    #[test]
    fn general_update_matches_closed_form() {
        for a in [1.0, 50.0] {
            let c = cfg(a, 1.0);
            for z in [-10.0, -1.0, -0.1, 1e-9, 0.1, 1.0, 10.0, 1e5] {
                let x = primal_update_general(&c, z);
                assert_relative_eq!(x, primal_update_scalar(&c, z), max_relative = 1e-10);
            }
        }
        assert_eq!(primal_update_general(&cfg(5.0, 0.3), 0.0), 0.0);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(SmoothCfg::new(0.5, 1.0).is_err());
        assert!(SmoothCfg::new(10.0, 0.0).is_err());
        assert!(SmoothCfg::new(10.0, 1.5).is_err());
        assert_eq!(
            SmoothCfg::default(),
            SmoothCfg {
                sharpness: 50.0,
                exponent_eps: 1.0
            }
        );
    }
}
