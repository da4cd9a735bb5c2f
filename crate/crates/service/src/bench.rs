//! Latency and throughput measurement.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub requests: usize,
    pub completed: usize,
    pub errors: usize,
    pub qps: f64,
    pub avg_ms: f64,
    pub tp99_ms: f64,
    pub max_ms: f64,
}

/// Nearest-rank percentile: the `ceil(pct/100 · n)`-th smallest value.
pub fn nearest_rank(sample: &[f64], pct: u32) -> Option<f64> {
    if sample.is_empty() || pct == 0 || pct > 100 {
        return None;
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = (pct as usize * n).div_ceil(100);
    Some(sorted[rank - 1])
}

impl BenchReport {
    /// Report over recorded per-request latencies (ms) and the wall-clock
    /// time the run took.
    pub fn from_latencies(latencies_ms: &[f64], errors: usize, elapsed_s: f64) -> Result<Self, ServiceError> {
        let requests = latencies_ms.len() + errors;
        if requests == 0 {
            return Err(ServiceError::EmptyWorkload);
        }
        if latencies_ms.is_empty() {
            return Err(ServiceError::NoCompleted);
        }
        if latencies_ms.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(ServiceError::InvalidRequest("latencies must be finite and nonnegative".into()));
        }
        let n = latencies_ms.len();
        Ok(Self {
            requests,
            completed: n,
            errors,
            qps: if elapsed_s > 0.0 { n as f64 / elapsed_s } else { 0.0 },
            avg_ms: latencies_ms.iter().sum::<f64>() / n as f64,
            tp99_ms: nearest_rank(latencies_ms, 99).expect("non-empty"),
            max_ms: latencies_ms.iter().copied().fold(0.0, f64::max),
        })
    }

    /// Report over injected latencies, as if served back to back.
    pub fn from_injected(latencies_ms: &[f64]) -> Result<Self, ServiceError> {
        let elapsed = latencies_ms.iter().sum::<f64>() / 1000.0;
        Self::from_latencies(latencies_ms, 0, elapsed)
    }
}

/// Result of a measured run: the report and the raw latency sample.
#[derive(Clone, Debug)]
pub struct BenchRun {
    pub report: BenchReport,
    pub latencies_ms: Vec<f64>,
}

/// Runs `call` on every workload item from `concurrency` threads and times each call.
pub fn run_bench<T, E, F>(workload: &[T], concurrency: usize, call: F) -> Result<BenchRun, ServiceError>
where
    T: Sync,
    F: Fn(&T) -> Result<(), E> + Sync,
{
    if workload.is_empty() {
        return Err(ServiceError::EmptyWorkload);
    }
    let next = AtomicUsize::new(0);
    let latencies = Mutex::new(Vec::with_capacity(workload.len()));
    let errors = AtomicUsize::new(0);
    let start = Instant::now();
    std::thread::scope(|s| {
        for _ in 0..concurrency.clamp(1, workload.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(item) = workload.get(i) else { break };
                let t = Instant::now();
                match call(item) {
                    Ok(()) => latencies.lock().push(t.elapsed().as_secs_f64() * 1000.0),
                    Err(_) => {
                        errors.fetch_add(1, Ordering::Relaxed);
                    }
                }
            });
        }
    });
    let elapsed = start.elapsed().as_secs_f64();
    let latencies_ms = latencies.into_inner();
    let report = BenchReport::from_latencies(&latencies_ms, errors.into_inner(), elapsed)?;
    Ok(BenchRun { report, latencies_ms })
}
