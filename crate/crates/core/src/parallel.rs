use crate::error::{CcaError, Result};

/// Run `f` on a dedicated rayon pool with `workers` threads, or on the global
/// pool when `workers` is `None`.
pub fn with_workers<T, F>(workers: Option<usize>, f: F) -> Result<T>
where
    T: Send,
    F: FnOnce() -> Result<T> + Send,
{
    match workers {
        None => f(),
        Some(0) => Err(CcaError::InvalidInput("worker count must be positive".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CcaError::InvalidInput(format!("cannot build thread pool: {e}")))?;
            pool.install(f)
        }
    }
}
