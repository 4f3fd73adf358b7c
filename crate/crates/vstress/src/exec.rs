use rayon::prelude::*;
use vstress_core::controller::RoundExecutor;

/// Runs each controller phase on the rayon pool. Results come back in
/// agent order, so the outcome is identical to [`vstress_core::controller::Sequential`].
#[derive(Debug, Clone, Copy, Default)]
pub struct Parallel;

impl RoundExecutor for Parallel {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..n).into_par_iter().map(f).collect()
    }
}
