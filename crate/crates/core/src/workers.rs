//! Worker-pool control. All parallel kernels in this crate produce results
//! that do not depend on the number of workers.

use crate::{Error, Result};

/// Runs `f` inside a dedicated rayon pool with `workers` threads.
/// `workers == 0` uses rayon's default sizing.
pub fn with_workers<T, F>(workers: usize, f: F) -> Result<T>
where
    F: FnOnce() -> T + Send,
    T: Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("cannot build worker pool: {e}")))?;
    Ok(pool.install(f))
}
