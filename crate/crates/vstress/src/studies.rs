//! Reproducible studies shared by the command line and the test suites.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vstress_core::controller::{LoadProfile, Schedule};
use vstress_core::power_flow::solve_rpfe;
use vstress_core::{NetworkModel, Result};

/// Relative size of the demand step in the built-in scenario.
pub const JUMP_FACTOR: f64 = 1.4;

/// Constant loads, then every active and reactive demand multiplied by
/// `factor` from round `rounds / 2` on. A factor of one gives constant
/// loads.
pub fn jump_schedule(base: LoadProfile, rounds: usize, factor: f64) -> Schedule {
    if factor == 1.0 {
        Schedule::constant(base)
    } else {
        Schedule::jump(base, factor, rounds / 2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingRow {
    pub k: usize,
    pub q_load: Vec<f64>,
    pub margin: f64,
    pub converged: bool,
    pub iterations: usize,
    pub residual: f64,
}

/// Draws `count` random load patterns around `q_load` and solves the
/// decoupled flow from `v = 1` for each. Bus factors are uniform in
/// `[0.5, 1.5]`; the overall level is then drawn so that the collapse
/// margin is uniform in `[0, max_margin]`.
pub fn random_scalings(
    model: &NetworkModel,
    q_load: &[f64],
    count: usize,
    max_margin: f64,
    seed: u64,
) -> Result<Vec<ScalingRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(count);
    for k in 0..count {
        let shaped: Vec<f64> = q_load.iter().map(|q| q * rng.gen_range(0.5..1.5)).collect();
        let unit = model.collapse_margin(&shaped)?;
        let target = rng.gen_range(0.0..max_margin);
        let level = if unit > 0.0 { target / unit } else { 0.0 };
        let q: Vec<f64> = shaped.iter().map(|v| v * level).collect();
        let margin = model.collapse_margin(&q)?;
        let sol = solve_rpfe(model, &q, None)?;
        rows.push(ScalingRow {
            k,
            q_load: q,
            margin,
            converged: sol.converged,
            iterations: sol.iterations,
            residual: sol.residual,
        });
    }
    Ok(rows)
}
