//! Order-preserving parallel map over samples.
//!
//! Results are identical to the serial computation regardless of thread
//! count: items are split into contiguous index ranges and reassembled in
//! range order. `DIFCLUE_THREADS` caps the worker count.

pub fn thread_cap() -> usize {
    if let Ok(v) = std::env::var("DIFCLUE_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            return n.max(1);
        }
    }
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(8)
}

/// Apply `f` to every item, in parallel, preserving input order.
pub fn map_indexed<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(usize, &T) -> U + Sync,
{
    let workers = thread_cap().min(items.len().max(1));
    if workers <= 1 || items.len() < 2 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let chunk = items.len().div_ceil(workers);
    let mut out: Vec<Vec<U>> = Vec::new();
    std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .enumerate()
            .map(|(c, slice)| {
                let f = &f;
                scope.spawn(move || {
                    slice
                        .iter()
                        .enumerate()
                        .map(|(i, t)| f(c * chunk + i, t))
                        .collect::<Vec<U>>()
                })
            })
            .collect();
        out = handles.into_iter().map(|h| h.join().unwrap()).collect();
    });
    out.into_iter().flatten().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_order() {
        let items: Vec<u64> = (0..1000).collect();
        let got = map_indexed(&items, |i, &x| i as u64 * 1000 + x);
        let want: Vec<u64> = (0..1000).map(|i| i * 1000 + i).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn handles_empty_and_single() {
        let empty: Vec<u32> = vec![];
        assert!(map_indexed(&empty, |_, &x| x).is_empty());
        assert_eq!(map_indexed(&[7u32], |_, &x| x + 1), vec![8]);
    }
}
