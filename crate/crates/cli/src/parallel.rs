use std::thread;

use crate::error::{CliError, CliResult};

/// Maps `f` over `items` on up to `threads` workers in contiguous chunks.
/// Each worker builds its context once with `init`; results keep input order,
/// so the output never depends on the thread count.
pub fn par_map<Q, C, T, I, F>(items: &[Q], threads: usize, init: I, f: F) -> CliResult<Vec<T>>
where
    Q: Sync,
    T: Send,
    I: Fn() -> CliResult<C> + Sync,
    F: Fn(&C, usize, &Q) -> CliResult<T> + Sync,
{
    let run = |offset: usize, chunk: &[Q]| -> CliResult<Vec<T>> {
        let ctx = init()?;
        chunk.iter().enumerate().map(|(i, q)| f(&ctx, offset + i, q)).collect()
    };
    let threads = threads.max(1).min(items.len().max(1));
    if threads == 1 {
        return run(0, items);
    }
    let size = items.len().div_ceil(threads);
    thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(size)
            .enumerate()
            .map(|(k, chunk)| {
                let run = &run;
                s.spawn(move || run(k * size, chunk))
            })
            .collect();
        let mut out = Vec::with_capacity(items.len());
        for h in handles {
            let part = h.join().map_err(|_| CliError::Numerical("worker thread panicked".into()))??;
            out.extend(part);
        }
        Ok(out)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_thread_invariant() {
        let items: Vec<u64> = (0..103).collect();
        let f = |_: &(), i: usize, x: &u64| Ok(i as u64 * 1000 + x * x);
        let one = par_map(&items, 1, || Ok(()), f).unwrap();
        for t in [2, 3, 8, 200] {
            assert_eq!(par_map(&items, t, || Ok(()), f).unwrap(), one);
        }
    }

    #[test]
    fn errors_propagate() {
        let items = [1, 2, 3];
        let r = par_map(&items, 2, || Ok(()), |_, _, &x| if x == 3 { Err(CliError::Data("bad".into())) } else { Ok(x) });
        assert!(matches!(r, Err(CliError::Data(_))));
    }
}
