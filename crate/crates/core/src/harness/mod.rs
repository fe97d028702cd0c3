//! Experiment orchestration behind the command-line tool.

pub mod config;
pub mod goldens;
pub mod sweep;
pub mod train;

pub use config::{parse_snr_list, ExperimentConfig};

use crate::error::{Error, Result};

/// Runs `f` on a pool of `threads` workers (0: one per core).
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}
