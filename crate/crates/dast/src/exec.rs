use dast_core::trainer::{Executor, Sequential};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Runs trainer work on a private rayon pool. Results come back in index
/// order, so training output does not depend on the thread count.
pub struct Pool {
    pool: Option<rayon::ThreadPool>,
}

impl Pool {
    /// `threads == 1` runs inline on the calling thread.
    pub fn new(threads: usize) -> Result<Self> {
        if threads == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        if threads == 1 {
            return Ok(Self { pool: None });
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {threads} worker threads: {e}")))?;
        Ok(Self { pool: Some(pool) })
    }

    pub fn threads(&self) -> usize {
        self.pool.as_ref().map_or(1, rayon::ThreadPool::current_num_threads)
    }
}

impl Executor for Pool {
    fn run<T: Send, F: Fn(usize) -> T + Sync + Send>(&self, n: usize, f: F) -> Vec<T> {
        match &self.pool {
            None => Sequential.run(n, f),
            Some(pool) => pool.install(|| (0..n).into_par_iter().map(f).collect()),
        }
    }
}
