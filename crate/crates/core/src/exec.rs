//! Fan-out abstraction for independent tasks (multistart runs, lattice
//! levels, sample sets). The core ships a sequential executor; the `gammacell`
//! crate provides a thread-pool backed one.

use alloc::vec::Vec;

pub trait Executor: Sync {
    /// Evaluates `task(i)` for `i in 0..count` and returns the results in
    /// index order. Implementations may run tasks concurrently but must not
    /// reorder the output.
    fn map<T, F>(&self, count: usize, task: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;
}

/// Runs every task on the calling thread.
#[derive(Debug, Default, Clone, Copy)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<T, F>(&self, count: usize, task: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..count).map(task).collect()
    }
}

/// splitmix64 finalizer, used to derive per-task seeds from a global seed.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
