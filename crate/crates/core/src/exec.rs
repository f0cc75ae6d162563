//! Execution strategy for the data-parallel inner loops.
//!
//! Probing, benchmark runs, and batch retrieval are embarrassingly
//! parallel maps over question records. With the `parallel` feature
//! (default) they fan out over a rayon pool; without it they run
//! sequentially with identical results. The sequential variants stay
//! available under either feature so the bench suite can compare both.
//!
//! `workers` semantics: 0 means the default pool width, otherwise the
//! pool is capped at `workers` threads. This is also the bound on
//! in-flight generation requests during probing and runs.

/// Order-preserving map, parallel when the `parallel` feature is on.
#[cfg(feature = "parallel")]
pub fn map<T, U, F>(items: &[T], workers: usize, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Send + Sync,
{
    use rayon::prelude::*;
    match workers {
        0 => items.par_iter().map(f).collect(),
        1 => map_sequential(items, f),
        n => pool(n).install(|| items.par_iter().map(&f).collect()),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn map<T, U, F>(items: &[T], _workers: usize, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Send + Sync,
{
    map_sequential(items, f)
}

/// Order-preserving fallible map; the first error wins.
#[cfg(feature = "parallel")]
pub fn try_map<T, U, E, F>(items: &[T], workers: usize, f: F) -> Result<Vec<U>, E>
where
    T: Sync,
    U: Send,
    E: Send,
    F: Fn(&T) -> Result<U, E> + Send + Sync,
{
    use rayon::prelude::*;
    match workers {
        0 => items.par_iter().map(f).collect(),
        1 => try_map_sequential(items, f),
        n => pool(n).install(|| items.par_iter().map(&f).collect()),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn try_map<T, U, E, F>(items: &[T], _workers: usize, f: F) -> Result<Vec<U>, E>
where
    T: Sync,
    U: Send,
    E: Send,
    F: Fn(&T) -> Result<U, E> + Send + Sync,
{
    try_map_sequential(items, f)
}

/// Always-sequential map; the fallback path and the bench baseline.
pub fn map_sequential<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

pub fn try_map_sequential<T, U, E, F>(items: &[T], f: F) -> Result<Vec<U>, E>
where
    F: Fn(&T) -> Result<U, E>,
{
    items.iter().map(f).collect()
}

#[cfg(feature = "parallel")]
fn pool(workers: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("worker pool")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_input_order() {
        let items: Vec<u64> = (0..1000).collect();
        let doubled = map(&items, 4, |x| x * 2);
        assert_eq!(doubled, map_sequential(&items, |x| x * 2));
    }

    #[test]
    fn try_map_surfaces_errors() {
        let items: Vec<u64> = (0..100).collect();
        let result: Result<Vec<u64>, String> = try_map(&items, 2, |&x| {
            if x == 57 {
                Err("boom".to_string())
            } else {
                Ok(x)
            }
        });
        assert_eq!(result.unwrap_err(), "boom");
    }
}
