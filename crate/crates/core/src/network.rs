//! Susceptance assembly, load/generator partition and the critical load
//! matrix.
//!
//! Conventions: `B_hk = +1/x_hk` off the diagonal and
//! `B_hh = -sum_k 1/x_hk + shunt_h + charging_h/2` on it, so the load block
//! is a Hurwitz Metzler matrix and absorbing loads carry `Q_L < 0`.
//! Matrix rows are ordered with load buses first, then generator buses,
//! each in case order.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use nalgebra::SymmetricEigen;

use crate::case::{BusKind, GridCase};
use crate::error::{check_len, Error, Result, Violation};
use crate::linalg::{self, Lu, Matrix};

/// Largest eigenvalue the load block may have.
pub const HURWITZ_MARGIN: f64 = -1e-9;

#[derive(Debug, Clone)]
pub struct NetworkModel {
    n_load: usize,
    n_gen: usize,
    b_ll: Matrix,
    b_lg: Matrix,
    b_gg: Matrix,
    v_gen: Vec<f64>,
    v_open: Vec<f64>,
    q_crit: Matrix,
    q_crit_lu: Lu,
    load_bus_ids: Vec<u32>,
    gen_bus_ids: Vec<u32>,
    neighbors: Vec<Vec<usize>>,
}

/// Full susceptance matrix in model order plus the ordering itself.
#[derive(Debug, Clone)]
pub struct Susceptance {
    pub b: Matrix,
    pub load_bus_ids: Vec<u32>,
    pub gen_bus_ids: Vec<u32>,
}

impl Susceptance {
    pub fn n_load(&self) -> usize {
        self.load_bus_ids.len()
    }
}

/// Assembles `B` from the case. `branch_angles[k]`, when given, is the
/// angle difference `theta_from - theta_to` of branch `k`; it scales that
/// branch's off-diagonal entries by its cosine while the diagonal keeps the
/// physical self-susceptance, so the result reproduces the reactive flow
/// equations at those angles.
pub fn assemble_susceptance(case: &GridCase, branch_angles: Option<&[f64]>) -> Result<Susceptance> {
    if let Some(angles) = branch_angles {
        check_len(case.branches.len(), angles.len())?;
    }
    let load_bus_ids = case.load_bus_ids();
    let gen_bus_ids = case.gen_bus_ids();
    let index: BTreeMap<u32, usize> = load_bus_ids
        .iter()
        .chain(gen_bus_ids.iter())
        .enumerate()
        .map(|(i, id)| (*id, i))
        .collect();
    let n = index.len();
    let mut b = Matrix::zeros(n, n);
    for (k, br) in case.branches.iter().enumerate() {
        let (h, j) = match (index.get(&br.from), index.get(&br.to)) {
            (Some(h), Some(j)) => (*h, *j),
            _ => {
                return Err(Error::InvalidTopology(
                    "branch references unknown bus".into(),
                ))
            }
        };
        let cos = match branch_angles {
            None => 1.0,
            Some(angles) => {
                let d = angles[k];
                if !(d.abs() < core::f64::consts::FRAC_PI_2) {
                    return Err(Error::AssumptionViolated(Violation::AngleOutOfRange {
                        from: br.from,
                        to: br.to,
                        difference: d,
                    }));
                }
                d.cos()
            }
        };
        let y = br.susceptance();
        b[(h, j)] += y * cos;
        b[(j, h)] += y * cos;
        b[(h, h)] += -y + 0.5 * br.charging_b;
        b[(j, j)] += -y + 0.5 * br.charging_b;
    }
    for bus in &case.buses {
        let h = index[&bus.id];
        b[(h, h)] += bus.shunt_b;
    }
    Ok(Susceptance {
        b,
        load_bus_ids,
        gen_bus_ids,
    })
}

/// Builds the decoupled reactive model and checks the load-block
/// assumptions (Metzler, Hurwitz, connected).
pub fn build_model(case: &GridCase, branch_angles: Option<&[f64]>) -> Result<NetworkModel> {
    let sus = assemble_susceptance(case, branch_angles)?;
    let n_load = sus.n_load();
    let n_gen = sus.gen_bus_ids.len();
    let b_ll = sus.b.view((0, 0), (n_load, n_load)).into_owned();
    let b_lg = sus.b.view((0, n_load), (n_load, n_gen)).into_owned();
    let b_gg = sus.b.view((n_load, n_load), (n_gen, n_gen)).into_owned();

    check_load_block(&b_ll, &sus.load_bus_ids)?;

    let v_gen: Vec<f64> = sus
        .gen_bus_ids
        .iter()
        .map(|id| {
            case.gens
                .iter()
                .find(|g| g.bus == *id)
                .map(|g| g.v_setpoint)
                .or_else(|| case.bus(*id).map(|b| b.v_setpoint))
                .unwrap_or(1.0)
        })
        .collect();

    let v_open = if n_load == 0 {
        Vec::new()
    } else {
        let lu = linalg::factor(&b_ll)?;
        let rhs = linalg::mat_vec(&b_lg, &v_gen);
        linalg::lu_solve(&lu, &rhs)?
            .into_iter()
            .map(|v| -v)
            .collect::<Vec<_>>()
    };
    for (i, v) in v_open.iter().enumerate() {
        if !(*v > 0.0) {
            return Err(Error::AssumptionViolated(
                Violation::NonPositiveOpenCircuit {
                    bus: sus.load_bus_ids[i],
                    value: *v,
                },
            ));
        }
    }

    let mut q_crit = b_ll.clone();
    for i in 0..n_load {
        for j in 0..n_load {
            q_crit[(i, j)] *= 0.25 * v_open[i] * v_open[j];
        }
    }
    let q_crit_lu = linalg::factor(&q_crit)?;
    let neighbors = (0..n_load)
        .map(|i| {
            (0..n_load)
                .filter(|&j| j != i && q_crit[(i, j)] != 0.0)
                .collect()
        })
        .collect();

    Ok(NetworkModel {
        n_load,
        n_gen,
        b_ll,
        b_lg,
        b_gg,
        v_gen,
        v_open,
        q_crit,
        q_crit_lu,
        load_bus_ids: sus.load_bus_ids,
        gen_bus_ids: sus.gen_bus_ids,
        neighbors,
    })
}

fn check_load_block(b_ll: &Matrix, ids: &[u32]) -> Result<()> {
    let n = b_ll.nrows();
    for i in 0..n {
        if !(b_ll[(i, i)] < 0.0) {
            return Err(Error::AssumptionViolated(Violation::NonNegativeDiagonal {
                bus: ids[i],
                value: b_ll[(i, i)],
            }));
        }
        for j in 0..n {
            if i != j && b_ll[(i, j)] < 0.0 {
                return Err(Error::AssumptionViolated(Violation::NotMetzler {
                    row_bus: ids[i],
                    col_bus: ids[j],
                    value: b_ll[(i, j)],
                }));
            }
        }
    }
    if n == 0 {
        return Ok(());
    }
    let eig = SymmetricEigen::new(b_ll.clone());
    let max_eigenvalue = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if !(max_eigenvalue < HURWITZ_MARGIN) {
        return Err(Error::AssumptionViolated(Violation::NotHurwitz {
            max_eigenvalue,
        }));
    }
    let components = load_components(b_ll, ids);
    if components.len() > 1 {
        return Err(Error::AssumptionViolated(Violation::Disconnected {
            components,
        }));
    }
    Ok(())
}

/// Connected components of the graph induced by nonzero off-diagonals,
/// as lists of bus ids.
pub fn load_components(b_ll: &Matrix, ids: &[u32]) -> Vec<Vec<u32>> {
    let n = b_ll.nrows();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if b_ll[(i, j)] != 0.0 || b_ll[(j, i)] != 0.0 {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<u32>> = BTreeMap::new();
    for i in 0..n {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(ids[i]);
    }
    groups.into_values().collect()
}

impl NetworkModel {
    pub fn n_load(&self) -> usize {
        self.n_load
    }

    pub fn n_gen(&self) -> usize {
        self.n_gen
    }

    pub fn b_ll(&self) -> &Matrix {
        &self.b_ll
    }

    pub fn b_lg(&self) -> &Matrix {
        &self.b_lg
    }

    pub fn b_gg(&self) -> &Matrix {
        &self.b_gg
    }

    pub fn v_gen(&self) -> &[f64] {
        &self.v_gen
    }

    /// Open-circuit load voltages `-B_LL^-1 B_LG V_G`.
    pub fn v_open(&self) -> &[f64] {
        &self.v_open
    }

    /// Critical load matrix `(1/4) [V_L*] B_LL [V_L*]`.
    pub fn q_crit(&self) -> &Matrix {
        &self.q_crit
    }

    pub fn load_bus_ids(&self) -> &[u32] {
        &self.load_bus_ids
    }

    pub fn gen_bus_ids(&self) -> &[u32] {
        &self.gen_bus_ids
    }

    /// Load-bus index of a case bus id.
    pub fn load_index(&self, bus_id: u32) -> Option<usize> {
        self.load_bus_ids.iter().position(|id| *id == bus_id)
    }

    /// Indices `j != i` with `Q_crit[i][j] != 0`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// Solves `Q_crit y = rhs`.
    pub fn solve_q_crit(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        check_len(self.n_load, rhs.len())?;
        linalg::lu_solve(&self.q_crit_lu, rhs)
    }

    /// Dense `Q_crit^-1`, built column by column from the factorization.
    pub fn q_crit_inverse(&self) -> Result<Matrix> {
        let n = self.n_load;
        let mut inv = Matrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = linalg::lu_solve(&self.q_crit_lu, &e)?;
            inv.set_column(j, &nalgebra::DVector::from_vec(col));
            e[j] = 0.0;
        }
        Ok(inv)
    }

    /// `v = [V_L*]^-1 V_L`.
    pub fn normalize_voltages(&self, v_load: &[f64]) -> Result<Vec<f64>> {
        check_len(self.n_load, v_load.len())?;
        Ok(v_load
            .iter()
            .zip(&self.v_open)
            .map(|(v, o)| v / o)
            .collect())
    }

    pub fn denormalize_voltages(&self, v_norm: &[f64]) -> Result<Vec<f64>> {
        check_len(self.n_load, v_norm.len())?;
        Ok(v_norm
            .iter()
            .zip(&self.v_open)
            .map(|(v, o)| v * o)
            .collect())
    }

    /// Distance-to-collapse measure `||Q_crit^-1 q_load||_inf`; values
    /// below one certify a unique high-voltage decoupled solution.
    pub fn collapse_margin(&self, q_load: &[f64]) -> Result<f64> {
        Ok(linalg::inf_norm(&self.solve_q_crit(q_load)?))
    }
}

impl GridCase {
    /// Convenience for [`build_model`] with flat angles.
    pub fn model(&self) -> Result<NetworkModel> {
        build_model(self, None)
    }

    /// Is `id` a load bus?
    pub fn is_load_bus(&self, id: u32) -> bool {
        self.bus(id).is_some_and(|b| b.kind == BusKind::Load)
    }
}
