use mates_core::exec::Executor;
use rayon::prelude::*;

/// Runs maps on the global rayon pool. Output order matches input order, so
/// results are identical to [`mates_core::exec::Serial`].
#[derive(Debug, Clone, Copy, Default)]
pub struct Rayon;

impl Executor for Rayon {
    fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        items.par_iter().map(f).collect()
    }
}
