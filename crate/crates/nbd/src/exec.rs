//! Chunk-parallel execution on a rayon pool.

use nbd_core::ChunkExecutor;
use rayon::prelude::*;
use rayon::{ThreadPool, ThreadPoolBuilder};

/// Worker cap from `NBD_THREADS`; `None` means all cores.
pub fn threads_from_env() -> Result<Option<usize>, String> {
    match std::env::var("NBD_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(format!("NBD_THREADS must be a positive integer, got `{v}`")),
        },
        Err(_) => Ok(None),
    }
}

pub struct Rayon {
    pool: ThreadPool,
}

impl Rayon {
    pub fn new(threads: Option<usize>) -> Self {
        let mut b = ThreadPoolBuilder::new();
        if let Some(n) = threads {
            b = b.num_threads(n);
        }
        Rayon { pool: b.build().expect("thread pool") }
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl ChunkExecutor for Rayon {
    fn map_chunks<R, F>(&self, n_chunks: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        self.pool.install(|| (0..n_chunks).into_par_iter().map(&f).collect())
    }
}
