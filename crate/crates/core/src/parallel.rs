//! Row-block parallel evaluation on scoped threads.
//!
//! The worker count comes from `TCA_NUM_THREADS` (falling back to the
//! available parallelism). Rows are split into contiguous blocks and results
//! are concatenated in row order, so output never depends on the worker count.

use ndarray::{ArrayView2, Axis};

use crate::error::Result;

/// Worker count: `TCA_NUM_THREADS` if set to a positive integer, otherwise
/// the available parallelism.
pub fn num_threads() -> usize {
    std::env::var("TCA_NUM_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Apply `f` to contiguous row blocks of `data` and concatenate the per-row
/// outputs in order.
pub fn map_row_blocks<T, F>(data: ArrayView2<'_, f64>, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(ArrayView2<'_, f64>) -> Result<Vec<T>> + Sync,
{
    map_row_blocks_with(data, num_threads(), f)
}

pub(crate) fn map_row_blocks_with<T, F>(
    data: ArrayView2<'_, f64>,
    workers: usize,
    f: F,
) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(ArrayView2<'_, f64>) -> Result<Vec<T>> + Sync,
{
    let rows = data.nrows();
    let workers = workers.clamp(1, rows.max(1));
    if workers == 1 {
        return f(data);
    }
    let block = rows.div_ceil(workers);
    let parts: Vec<Result<Vec<T>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = data
            .axis_chunks_iter(Axis(0), block)
            .map(|chunk| {
                let f = &f;
                scope.spawn(move || f(chunk))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(rows);
    for part in parts {
        out.extend(part?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn order_independent_of_workers() {
        let data = Array2::from_shape_fn((37, 3), |(i, j)| (i * 3 + j) as f64);
        let row_sums =
            |b: ArrayView2<'_, f64>| Ok(b.rows().into_iter().map(|r| r.sum()).collect::<Vec<_>>());
        let one = map_row_blocks_with(data.view(), 1, row_sums).unwrap();
        for w in [2, 3, 8, 64] {
            assert_eq!(map_row_blocks_with(data.view(), w, row_sums).unwrap(), one);
        }
        assert_eq!(one.len(), 37);
    }

    #[test]
    fn errors_propagate() {
        let data = Array2::<f64>::zeros((10, 2));
        let r: Result<Vec<()>> = map_row_blocks_with(data.view(), 4, |_| {
            Err(crate::error::Error::invalid("boom"))
        });
        assert!(r.is_err());
    }
}
