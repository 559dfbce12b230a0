//! Rayon-backed [`Executor`].

use gammacell_core::Executor;
use rayon::prelude::*;

use crate::error::{Error, Result};

pub struct Pool {
    inner: rayon::ThreadPool,
}

impl Pool {
    /// A pool with `workers` threads; `None` uses the available parallelism.
    pub fn new(workers: Option<usize>) -> Result<Self> {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(w) = workers {
            if w == 0 {
                return Err(Error::config("--workers must be at least 1"));
            }
            b = b.num_threads(w);
        }
        let inner = b
            .build()
            .map_err(|e| Error::config(format!("cannot start worker pool: {e}")))?;
        Ok(Pool { inner })
    }

    pub fn workers(&self) -> usize {
        self.inner.current_num_threads()
    }

    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        self.inner.install(f)
    }
}

impl Executor for Pool {
    fn map<T, F>(&self, count: usize, task: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        self.inner.install(|| (0..count).into_par_iter().map(task).collect())
    }
}
