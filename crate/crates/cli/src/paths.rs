//! Input and output locations for single runs and seed sweeps.
//!
//! A sweep writes each seed under `<out>/seed-<s>/`. Inputs given as a directory are looked up
//! the same way, falling back to the file directly inside the directory.

use std::path::{Path, PathBuf};

use crate::commands::CliError;

pub const DATASET_FILE: &str = "dataset.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

pub fn seed_dir(out: &Path, seed: Option<u64>, sweep: bool) -> PathBuf {
    match seed {
        Some(s) if sweep => out.join(format!("seed-{s}")),
        _ => out.to_path_buf(),
    }
}

/// Resolves `base` to an existing file. `flag` names the option in diagnostics.
pub fn resolve_input(flag: &str, base: &Path, seed: Option<u64>, file: &str) -> Result<PathBuf, CliError> {
    let path = if base.is_dir() {
        seed.map(|s| base.join(format!("seed-{s}")).join(file))
            .filter(|p| p.is_file())
            .unwrap_or_else(|| base.join(file))
    } else {
        base.to_path_buf()
    };
    if !path.is_file() {
        return Err(CliError::invalid(format!("{flag}: no such file {}", path.display())));
    }
    Ok(path)
}

/// Positive worker cap from `WARMSTART_QP_THREADS`, else the machine's parallelism.
pub fn thread_cap() -> Result<usize, CliError> {
    match std::env::var("WARMSTART_QP_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(CliError::invalid(format!("WARMSTART_QP_THREADS: expected a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Maps `f` over `items` on up to `threads` workers; results keep the input order.
pub fn parallel_map<T: Sync, R: Send>(items: &[T], threads: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;

    let workers = threads.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                *slots[i].lock().expect("result slot") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("result slot").expect("every item is processed"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_map_keeps_order() {
        let items: Vec<u64> = (0..37).collect();
        for threads in [1, 3, 64] {
            assert_eq!(parallel_map(&items, threads, |x| x * x), items.iter().map(|x| x * x).collect::<Vec<_>>());
        }
    }

    #[test]
    fn seed_dirs() {
        let out = Path::new("out");
        assert_eq!(seed_dir(out, Some(3), true), Path::new("out/seed-3"));
        assert_eq!(seed_dir(out, Some(3), false), out);
        assert_eq!(seed_dir(out, None, true), out);
    }
}
