//! Data-parallel map over examples with a sequential fallback.
//!
//! Results always come back in input order, so downstream reductions are
//! performed in the same order whichever strategy ran them. This keeps
//! training bit-reproducible across thread counts.

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    /// Spread work over the rayon pool (sequential when built without the
    /// `parallel` feature).
    #[default]
    Parallel,
    Sequential,
}

impl Execution {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }

    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Execution::Parallel {
            use rayon::prelude::*;
            return items.par_iter().enumerate().map(|(i, x)| f(i, x)).collect();
        }
        items.iter().enumerate().map(|(i, x)| f(i, x)).collect()
    }
}
