//! Create/sync latency measurement.
//!
//! One sample is the wall time, on a monotonic clock, from just before a
//! create of a one-thread family running [`crate::programs::empty`] to the
//! return of its sync.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::node::Node;
use crate::programs::empty_family;
use crate::svp::{CreateError, Place};

pub const DEFAULT_ITERATIONS: usize = 10_000;
pub const BUCKET_WIDTH: Duration = Duration::from_micros(10);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchMode {
    /// Reuse one connection for every iteration.
    Warm,
    /// Drop all connections after every iteration, so each create connects.
    Cold,
}

impl FromStr for BenchMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "warm" => Ok(BenchMode::Warm),
            "cold" => Ok(BenchMode::Cold),
            other => Err(format!("unknown mode {other:?}, expected warm or cold")),
        }
    }
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("iterations must be at least 1")]
    NoIterations,
    #[error(transparent)]
    Create(#[from] CreateError),
    #[error("raw sample file: {0}")]
    Io(#[from] io::Error),
    #[error("raw sample file line {line}: {text:?} is not a sample")]
    BadSample { line: usize, text: String },
}

/// Summary statistics; every field is derived from integer nanoseconds.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub n: usize,
    pub mean_ns: f64,
    pub min_ns: u64,
    pub max_ns: u64,
    pub p50_ns: u64,
    pub p99_ns: u64,
}

impl Summary {
    /// Percentiles by nearest rank. `None` for no samples.
    pub fn from_samples(samples: &[u64]) -> Option<Summary> {
        if samples.is_empty() {
            return None;
        }
        let mut sorted = samples.to_vec();
        sorted.sort_unstable();
        let n = sorted.len();
        let sum: u128 = sorted.iter().map(|&s| s as u128).sum();
        let rank = |p: u64| {
            let r = (p as usize * n).div_ceil(100);
            sorted[r.clamp(1, n) - 1]
        };
        Some(Summary {
            n,
            mean_ns: sum as f64 / n as f64,
            min_ns: sorted[0],
            max_ns: sorted[n - 1],
            p50_ns: rank(50),
            p99_ns: rank(99),
        })
    }
}

/// Fixed-width latency histogram.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Histogram {
    pub bucket_width_ns: u64,
    /// `counts[i]` holds samples in `[i*width, (i+1)*width)`.
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn from_samples(samples: &[u64], bucket_width: Duration) -> Histogram {
        let width = (bucket_width.as_nanos() as u64).max(1);
        let mut counts = Vec::new();
        for &s in samples {
            let b = (s / width) as usize;
            if b >= counts.len() {
                counts.resize(b + 1, 0);
            }
            counts[b] += 1;
        }
        Histogram {
            bucket_width_ns: width,
            counts,
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone)]
pub struct BenchRun {
    pub label: String,
    pub mode: BenchMode,
    pub samples: Vec<u64>,
    /// Set when a family did not complete and the run stopped early.
    pub aborted: Option<String>,
}

impl BenchRun {
    pub fn summary(&self) -> Option<Summary> {
        Summary::from_samples(&self.samples)
    }

    pub fn histogram(&self) -> Histogram {
        Histogram::from_samples(&self.samples, BUCKET_WIDTH)
    }

    /// Human-readable summary with one line per nonempty bucket.
    pub fn report(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# {}", self.header());
        match self.summary() {
            Some(s) => {
                let _ = writeln!(
                    out,
                    "n={} mean={:.3}us min={:.3}us p50={:.3}us p99={:.3}us max={:.3}us",
                    s.n,
                    s.mean_ns / 1e3,
                    s.min_ns as f64 / 1e3,
                    s.p50_ns as f64 / 1e3,
                    s.p99_ns as f64 / 1e3,
                    s.max_ns as f64 / 1e3
                );
            }
            None => out.push_str("n=0\n"),
        }
        if let Some(reason) = &self.aborted {
            let _ = writeln!(out, "ABORTED after {} samples: {reason}", self.samples.len());
        }
        let h = self.histogram();
        for (i, &c) in h.counts.iter().enumerate().filter(|(_, c)| **c > 0) {
            let lo = i as u64 * h.bucket_width_ns / 1000;
            let hi = (i as u64 + 1) * h.bucket_width_ns / 1000;
            let _ = writeln!(out, "{lo:>6}-{hi:<6}us {c}");
        }
        out
    }

    pub fn header(&self) -> String {
        format!(
            "place={} mode={:?} iterations={} host: {}",
            self.label,
            self.mode,
            self.samples.len(),
            host_topology()
        )
    }

    /// Writes one sample in nanoseconds per line, after `#` header lines.
    pub fn write_raw(&self, path: &Path) -> io::Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        writeln!(w, "# {}", self.header())?;
        if let Some(reason) = &self.aborted {
            writeln!(w, "# aborted: {reason}")?;
        }
        for s in &self.samples {
            writeln!(w, "{s}")?;
        }
        w.flush()
    }
}

/// Reads a raw sample file written by [`BenchRun::write_raw`].
pub fn read_raw(path: &Path) -> Result<Vec<u64>, BenchError> {
    let f = io::BufReader::new(fs::File::open(path)?);
    let mut samples = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        samples.push(t.parse().map_err(|_| BenchError::BadSample {
            line: i + 1,
            text: t.to_owned(),
        })?);
    }
    Ok(samples)
}

/// Logical CPU count and model, for the raw file header.
pub fn host_topology() -> String {
    let cpus = std::thread::available_parallelism().map_or(0, |n| n.get());
    let model = fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split_once(':'))
                .map(|(_, m)| m.trim().to_owned())
        })
        .unwrap_or_else(|| "unknown cpu".to_owned());
    format!("{cpus} logical cpus, {model}, {}", std::env::consts::ARCH)
}

/// Runs `warmup` unrecorded iterations, then `iterations` recorded ones.
pub fn run(
    node: &Node,
    label: &str,
    place: &Place,
    iterations: usize,
    warmup: usize,
    mode: BenchMode,
) -> Result<BenchRun, BenchError> {
    if iterations == 0 {
        return Err(BenchError::NoIterations);
    }
    let mut run = BenchRun {
        label: label.to_owned(),
        mode,
        samples: Vec::with_capacity(iterations),
        aborted: None,
    };
    for i in 0..warmup + iterations {
        let desc = empty_family(place.clone());
        let start = Instant::now();
        let mut handle = node.create(desc)?;
        let result = handle.sync().expect("fresh handle");
        let elapsed = start.elapsed();
        if mode == BenchMode::Cold {
            node.drop_connections();
        }
        if !result.status.is_completed() {
            run.aborted = Some(result.status.to_string());
            break;
        }
        if i >= warmup {
            run.samples.push(elapsed.as_nanos() as u64);
        }
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_sample() {
        let s = Summary::from_samples(&[4200]).unwrap();
        assert_eq!((s.n, s.min_ns, s.max_ns, s.p50_ns, s.p99_ns), (1, 4200, 4200, 4200, 4200));
        assert_eq!(s.mean_ns, 4200.0);
    }

    #[test]
    fn nearest_rank_percentiles() {
        let samples: Vec<u64> = (1..=100).collect();
        let s = Summary::from_samples(&samples).unwrap();
        assert_eq!(s.p50_ns, 50);
        assert_eq!(s.p99_ns, 99);
        assert_eq!(s.mean_ns, 50.5);
    }

    #[test]
    fn buckets_are_ten_microseconds() {
        let h = Histogram::from_samples(&[0, 9_999, 10_000, 35_000], BUCKET_WIDTH);
        assert_eq!(h.counts, vec![2, 1, 0, 1]);
    }

    proptest! {
        #[test]
        fn histogram_and_summary_invariants(samples in proptest::collection::vec(0u64..10_000_000, 1..500)) {
            let s = Summary::from_samples(&samples).unwrap();
            let h = Histogram::from_samples(&samples, BUCKET_WIDTH);
            prop_assert_eq!(h.total(), samples.len() as u64);
            prop_assert!(s.min_ns <= s.p50_ns && s.p50_ns <= s.p99_ns && s.p99_ns <= s.max_ns);
            prop_assert!(s.min_ns as f64 <= s.mean_ns && s.mean_ns <= s.max_ns as f64);
        }
    }
}
