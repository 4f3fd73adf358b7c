//! Small dense helpers on top of nalgebra.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector, Dyn, LU};
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Lu = LU<f64, Dyn, Dyn>;

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

pub fn two_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn mat_inf_norm(m: &Matrix) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// LU factorization that reports exact or numerical singularity.
pub fn factor(m: &Matrix) -> Result<Lu> {
    let lu = m.clone().lu();
    let u = lu.u();
    let scale = m
        .iter()
        .fold(0.0_f64, |a, x| a.max(x.abs()))
        .max(f64::MIN_POSITIVE);
    let tiny = scale * 1e-14;
    if u.diagonal().iter().any(|d| d.abs() <= tiny) {
        return Err(Error::SingularSystem);
    }
    Ok(lu)
}

pub fn lu_solve(lu: &Lu, rhs: &[f64]) -> Result<Vec<f64>> {
    let b = DVector::from_column_slice(rhs);
    lu.solve(&b)
        .map(|x| x.as_slice().to_vec())
        .ok_or(Error::SingularSystem)
}

pub fn mat_vec(m: &Matrix, v: &[f64]) -> Vec<f64> {
    (m * DVector::from_column_slice(v)).as_slice().to_vec()
}
