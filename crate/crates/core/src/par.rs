//! Data-parallel helpers for replications and sweeps. Results always come
//! back in input order, so output does not depend on the thread count.
//! Without the `parallel` feature everything runs on the calling thread.

/// Runs `f(0..n)` one after another.
pub fn replicate_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn replicate_par<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

/// Parallel when the `parallel` feature is enabled.
pub fn replicate<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        replicate_par(n, f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        replicate_seq(n, f)
    }
}

/// `items.iter().map(f)`, in parallel when enabled.
pub fn map<I, T, F>(items: &[I], f: F) -> Vec<T>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> T + Sync + Send,
{
    replicate(items.len(), |i| f(&items[i]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_preserved() {
        let v = replicate(100, |i| i * i);
        assert_eq!(v, replicate_seq(100, |i| i * i));
        assert_eq!(map(&[3, 1, 2], |x| x + 1), vec![4, 2, 3]);
    }
}
