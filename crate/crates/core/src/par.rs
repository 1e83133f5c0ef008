//! Data-parallel helpers. With the `parallel` feature the batch kernels fan
//! out over rayon; without it (or with [`ExecPolicy::Sequential`]) they run on
//! the calling thread. Results are always returned in input order, so both
//! policies produce identical output.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecPolicy {
    Sequential,
    #[default]
    Parallel,
}

impl ExecPolicy {
    /// True when the policy will actually use worker threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == ExecPolicy::Parallel
    }
}

/// Order-preserving map over a slice.
pub fn map_slice<T, R, F>(policy: ExecPolicy, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if policy.is_parallel() {
        return items.par_iter().map(f).collect();
    }
    let _ = policy;
    items.iter().map(f).collect()
}

/// Order-preserving map over `0..n`.
pub fn map_range<R, F>(policy: ExecPolicy, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if policy.is_parallel() {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = policy;
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policies_agree() {
        let xs: Vec<u64> = (0..10_000).collect();
        let a = map_slice(ExecPolicy::Sequential, &xs, |x| x * x);
        let b = map_slice(ExecPolicy::Parallel, &xs, |x| x * x);
        assert_eq!(a, b);
        let c = map_range(ExecPolicy::Parallel, 100, |i| i + 1);
        assert_eq!(c[0], 1);
        assert_eq!(c[99], 100);
    }
}
