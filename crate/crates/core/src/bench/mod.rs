//! Benchmark workloads: fork-join overhead, pipe latency and throughput,
//! Monte Carlo pi, three parallel sorts, blob read/write rates and a
//! scatter-gather record transform.

mod blobs;
mod forkjoin;
mod pi;
mod pipe;
mod scattergather;
mod schema;
mod sort;

pub use blobs::{bench_blobs, BlobsReport, BlobsRow};
pub use forkjoin::{bench_forkjoin, ForkjoinReport, ForkjoinRun, RampPoint};
pub use pi::{bench_pi, PiReport, PiRow};
pub use pipe::{bench_pipe, PipeParams, PipeReport, PipeRow};
pub use scattergather::{bench_scattergather, partition_sizes, synthetic_rows, transform, Row, ScatterGatherReport};
pub use schema::{validate_csv, ColType, CsvSchema, SCHEMAS};
pub use sort::{bench_sort, sort_input, SortReport, SortRow, SortStrategy};

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::faas::{DaemonBackend, FaasError, LatencyModel, Registry, SharedBackend, SimBackend};
use crate::ipc::IpcError;
use crate::objectfs::{FsError, SharedBlobStore, StoreBlobStore};
use crate::orchestrator::{Orchestrator, OrchestratorConfig, OrchestratorError};
use crate::procpool::PoolError;
use crate::store::{Engine, SharedStore, StoreError};
use crate::wire::DecodeError;

/// Bucket used for blobs by the CLI tools and the benchmarks.
pub const BENCH_BUCKET: &str = "faasproc";

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("checksum mismatch on message {index}")]
    ChecksumMismatch { index: usize },
    #[error("{strategy} sort output differs from the oracle")]
    SortMismatch { strategy: SortStrategy },
    #[error("content hash mismatch for object {path}")]
    HashMismatch { path: String },
    #[error("scatter-gather output differs from the local transform")]
    GatherMismatch,
    #[error("csv schema violation: {0}")]
    Schema(String),
    #[error(transparent)]
    Orchestrator(#[from] OrchestratorError),
    #[error(transparent)]
    Pool(#[from] PoolError),
    #[error(transparent)]
    Ipc(#[from] IpcError),
    #[error(transparent)]
    Faas(#[from] FaasError),
    #[error(transparent)]
    Fs(#[from] FsError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl BenchError {
    /// Failures of the data itself, as opposed to setup or transport.
    pub fn is_integrity_failure(&self) -> bool {
        matches!(
            self,
            BenchError::ChecksumMismatch { .. }
                | BenchError::SortMismatch { .. }
                | BenchError::HashMismatch { .. }
                | BenchError::GatherMismatch
                | BenchError::Schema(_)
        )
    }
}

pub type BenchResult<T> = Result<T, BenchError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    Sim,
    Daemons,
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sim" => Ok(BackendKind::Sim),
            "daemons" => Ok(BackendKind::Daemons),
            _ => Err(format!("unknown backend {s:?}, expected sim or daemons")),
        }
    }
}

/// Store, blob layer and backend choice shared by every benchmark run.
#[derive(Clone)]
pub struct BenchEnv {
    pub store: SharedStore,
    pub blobs: SharedBlobStore,
    pub registry: Arc<Registry>,
    pub backend: BackendKind,
    pub model: LatencyModel,
    pub config: OrchestratorConfig,
}

impl BenchEnv {
    pub fn new(store: SharedStore, backend: BackendKind) -> Self {
        let blobs: SharedBlobStore = Arc::new(StoreBlobStore::new(store.clone(), BENCH_BUCKET));
        BenchEnv {
            store,
            blobs,
            registry: Arc::new(Registry::builtin()),
            backend,
            model: LatencyModel::zero(),
            config: OrchestratorConfig::default(),
        }
    }

    /// Fresh in-process engine with the zero-latency simulator.
    pub fn embedded() -> Self {
        Self::new(Arc::new(Engine::new()), BackendKind::Sim)
    }

    pub fn with_model(mut self, model: LatencyModel) -> Self {
        self.model = model;
        self
    }

    pub fn with_blobs(mut self, blobs: SharedBlobStore) -> Self {
        self.blobs = blobs;
        self
    }

    pub fn with_config(mut self, config: OrchestratorConfig) -> Self {
        self.config = config;
        self
    }

    /// A new backend instance, so warm slots never leak between runs.
    pub fn launch(&self) -> Launched {
        self.launch_with(self.model.clone())
    }

    pub fn launch_with(&self, model: LatencyModel) -> Launched {
        let (backend, sim): (SharedBackend, _) = match self.backend {
            BackendKind::Sim => {
                let sim = SimBackend::new(model, self.registry.clone(), self.store.clone(), self.blobs.clone());
                (Arc::new(sim.clone()), Some(sim))
            }
            BackendKind::Daemons => (Arc::new(DaemonBackend::new(self.store.clone(), self.registry.clone())), None),
        };
        let orch = Orchestrator::new(backend, self.store.clone(), self.blobs.clone()).with_config(self.config.clone());
        Launched { orch, sim }
    }
}

pub struct Launched {
    pub orch: Orchestrator,
    /// Present for the simulated backend.
    pub sim: Option<SimBackend>,
}

/// Summary of one benchmark invocation: enough to re-run it.
#[derive(Debug, Clone, Default, Serialize)]
pub struct BenchRecord {
    pub bench: String,
    pub seed: u64,
    pub repetitions: u32,
    pub config: BTreeMap<String, String>,
    pub metrics: BTreeMap<String, f64>,
}

impl BenchRecord {
    pub fn new(bench: &str, seed: u64) -> Self {
        BenchRecord { bench: bench.to_owned(), seed, repetitions: 1, ..Default::default() }
    }

    pub fn config(mut self, key: &str, value: impl ToString) -> Self {
        self.config.insert(key.to_owned(), value.to_string());
        self
    }

    pub fn metric(mut self, key: &str, value: f64) -> Self {
        self.metrics.insert(key.to_owned(), value);
        self
    }
}

impl fmt::Display for BenchRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} (seed {}, repetitions {})", self.bench, self.seed, self.repetitions)?;
        for (k, v) in &self.config {
            writeln!(f, "  {k:<32} {v}")?;
        }
        for (k, v) in &self.metrics {
            writeln!(f, "  {k:<32} {v:.4}")?;
        }
        Ok(())
    }
}

/// Register every workload's task functions.
pub fn register_workloads(r: &mut Registry) {
    blobs::register(r);
    pi::register(r);
    pipe::register(r);
    scattergather::register(r);
    sort::register(r);
}

/// Seed for task `index` derived from a run seed.
pub(crate) fn task_seed(seed: u64, index: u64) -> u64 {
    seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Split `total` into `parts` contiguous ranges whose sizes differ by at most one.
pub(crate) fn balanced_ranges(total: usize, parts: usize) -> Vec<std::ops::Range<usize>> {
    let (base, extra) = (total / parts, total % parts);
    let mut start = 0;
    (0..parts)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_are_balanced_and_cover() {
        for (total, parts) in [(10, 3), (3, 8), (0, 2), (100, 7)] {
            let rs = balanced_ranges(total, parts);
            assert_eq!(rs.len(), parts);
            assert_eq!(rs.iter().map(|r| r.len()).sum::<usize>(), total);
            let (min, max) = (rs.iter().map(|r| r.len()).min().unwrap(), rs.iter().map(|r| r.len()).max().unwrap());
            assert!(max - min <= 1);
            assert!(rs.windows(2).all(|w| w[0].end == w[1].start));
        }
    }

    #[test]
    fn record_display_lists_config_and_metrics() {
        let r = BenchRecord::new("pi", 7).config("samples", 10).metric("estimate", 2.5);
        let text = r.to_string();
        assert!(text.contains("samples") && text.contains("2.5000") && text.contains("seed 7"));
    }
}
