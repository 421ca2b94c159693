//! Batch plumbing: a bounded worker pool whose results are written in input
//! order by a single writer, to append-only line files that can be resumed.

use std::collections::{BTreeMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use serde_json::Value;

/// What a worker produced for one sample.
pub enum Outcome {
    Done {
        line: String,
        /// Optional line for a side file such as a search trace.
        aux: Option<String>,
        oracle_calls: usize,
    },
    Failed {
        error: String,
        backend: bool,
    },
}

#[derive(Debug, Default)]
pub struct JobSummary {
    pub total: usize,
    pub resumed: usize,
    pub succeeded: usize,
    /// (id, error, is backend failure)
    pub failures: Vec<(String, String, bool)>,
    pub oracle_calls: usize,
}

impl JobSummary {
    pub fn attempted(&self) -> usize {
        self.succeeded + self.failures.len()
    }

    /// 0 when at least `threshold` of attempted samples succeeded, 3 when
    /// every failure came from the backend, 4 otherwise.
    pub fn exit_code(&self, threshold: f64) -> i32 {
        if self.failures.is_empty() {
            return 0;
        }
        let rate = self.succeeded as f64 / self.attempted() as f64;
        if rate >= threshold {
            0
        } else if self.failures.iter().all(|(_, _, backend)| *backend) {
            3
        } else {
            4
        }
    }
}

/// Ids already present in a line file. A trailing partial line left by an
/// interrupted run is truncated away.
pub fn completed_ids(path: &Path) -> io::Result<HashSet<String>> {
    let mut ids = HashSet::new();
    if !path.exists() {
        return Ok(ids);
    }
    let bytes = std::fs::read(path)?;
    let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    if keep < bytes.len() {
        log::warn!("{}: dropping incomplete last line", path.display());
        OpenOptions::new().write(true).open(path)?.set_len(keep as u64)?;
    }
    for (i, line) in BufReader::new(&bytes[..keep]).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let id = serde_json::from_str::<Value>(&line)
            .ok()
            .and_then(|v| v.get("id").and_then(Value::as_str).map(str::to_string))
            .ok_or_else(|| {
                io::Error::new(
                    io::ErrorKind::InvalidData,
                    format!("{}:{}: line has no string `id`", path.display(), i + 1),
                )
            })?;
        ids.insert(id);
    }
    Ok(ids)
}

/// Appends whole lines, flushing after each so a line is never split.
pub struct LineWriter {
    file: File,
}

impl LineWriter {
    pub fn append(path: &Path) -> io::Result<Self> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(LineWriter { file })
    }

    pub fn write_line(&mut self, line: &str) -> io::Result<()> {
        debug_assert!(!line.contains('\n'));
        let mut buf = Vec::with_capacity(line.len() + 1);
        buf.extend_from_slice(line.as_bytes());
        buf.push(b'\n');
        self.file.write_all(&buf)?;
        self.file.flush()
    }
}

/// Runs `work` over `items` on up to `workers` threads and hands results to
/// `sink` strictly in item order.
pub fn run_ordered<T, R, W, S>(items: &[T], workers: usize, work: W, mut sink: S) -> io::Result<()>
where
    T: Sync,
    R: Send,
    W: Fn(&T) -> R + Sync,
    S: FnMut(usize, R) -> io::Result<()>,
{
    if items.is_empty() {
        return Ok(());
    }
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, R)>();
    std::thread::scope(|scope| {
        for _ in 0..workers.clamp(1, items.len()) {
            let tx = tx.clone();
            let (next, work) = (&next, &work);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                if tx.send((i, work(&items[i]))).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        let mut pending = BTreeMap::new();
        let mut expected = 0;
        for (i, r) in rx {
            pending.insert(i, r);
            while let Some(r) = pending.remove(&expected) {
                sink(expected, r)?;
                expected += 1;
            }
        }
        Ok(())
    })
}
