//! Replica-parallel execution with results in replica order.

use rayon::prelude::*;

use crate::error::Result;

/// Runs `job(replica_id)` for `0..n` on the current rayon pool.
///
/// Results come back in replica order and the first failing replica (by id)
/// determines the error, so the outcome is independent of scheduling.
pub fn run_replicas<T, F>(n: usize, job: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    let outcomes: Vec<Result<T>> = (0..n as u64).into_par_iter().map(&job).collect();
    outcomes.into_iter().collect()
}
