use std::fmt;
use std::io;
use std::str::FromStr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{anyhow, Context};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::schema::{write_rows, SORT};
use super::{balanced_ranges, BenchEnv, BenchError, BenchRecord, BenchResult};
use crate::faas::{decode_u64, encode_u64, Registry, TaskContext};
use crate::ipc::{Array, Ipc, Queue, Resource, Scalar, ScalarTag, RESOURCE_PREFIX};
use crate::orchestrator::{Orchestrator, TaskSpec};
use crate::store::{CountingStore, SharedStore};
use crate::wire::{Decoder, Encoder};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SortStrategy {
    /// Workers touch the shared array one element at a time.
    InplaceShared,
    /// Workers copy their range out of the shared array and back in bulk.
    CopyShared,
    /// Sorted runs travel as queue messages; nothing is shared.
    MessagePassing,
}

impl SortStrategy {
    pub const ALL: [SortStrategy; 3] = [SortStrategy::InplaceShared, SortStrategy::CopyShared, SortStrategy::MessagePassing];

    pub fn name(self) -> &'static str {
        match self {
            SortStrategy::InplaceShared => "inplace_shared",
            SortStrategy::CopyShared => "copy_shared",
            SortStrategy::MessagePassing => "message_passing",
        }
    }
}

impl fmt::Display for SortStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SortStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL.into_iter().find(|st| st.name() == s).ok_or_else(|| format!("unknown sort strategy {s:?}"))
    }
}

pub(super) fn register(r: &mut Registry) {
    r.register("sort_leaf_inplace", |ctx, args| {
        counted(ctx, |ipc| {
            let (arr, start, _, stop) = array_args(ipc, args)?;
            let mut vals = (start..stop).map(|i| read_i64(&arr, i)).collect::<anyhow::Result<Vec<_>>>()?;
            vals.sort_unstable();
            for (i, v) in (start..stop).zip(vals) {
                arr.set(i, Scalar::Int64(v))?;
            }
            Ok(())
        })
    });
    r.register("sort_leaf_copy", |ctx, args| {
        counted(ctx, |ipc| {
            let (arr, start, _, stop) = array_args(ipc, args)?;
            let mut vals = to_i64s(arr.slice_get(start, stop)?)?;
            vals.sort_unstable();
            arr.slice_set(start, &vals.into_iter().map(Scalar::Int64).collect::<Vec<_>>())?;
            Ok(())
        })
    });
    r.register("sort_merge_inplace", |ctx, args| {
        counted(ctx, |ipc| {
            let (arr, start, mid, stop) = array_args(ipc, args)?;
            let left = (start..mid).map(|i| read_i64(&arr, i)).collect::<anyhow::Result<Vec<_>>>()?;
            let right = (mid..stop).map(|i| read_i64(&arr, i)).collect::<anyhow::Result<Vec<_>>>()?;
            for (i, v) in (start..stop).zip(merge(&left, &right)) {
                arr.set(i, Scalar::Int64(v))?;
            }
            Ok(())
        })
    });
    r.register("sort_merge_copy", |ctx, args| {
        counted(ctx, |ipc| {
            let (arr, start, mid, stop) = array_args(ipc, args)?;
            let vals = to_i64s(arr.slice_get(start, stop)?)?;
            let merged = merge(&vals[..mid - start], &vals[mid - start..]);
            arr.slice_set(start, &merged.into_iter().map(Scalar::Int64).collect::<Vec<_>>())?;
            Ok(())
        })
    });
    r.register("sort_leaf_msg", |ctx, args| {
        counted(ctx, |ipc| {
            let mut d = Decoder::new(args);
            let q: Queue = ipc.adopt(d.field()?)?;
            let mut vals = unpack(d.field()?)?;
            d.end()?;
            vals.sort_unstable();
            q.put(pack(&vals), None)?;
            Ok(())
        })
    });
    r.register("sort_merge_msg", |ctx, args| {
        counted(ctx, |ipc| {
            let mut d = Decoder::new(args);
            let q: Queue = ipc.adopt(d.field()?)?;
            d.end()?;
            let a = unpack(&q.get(None)?)?;
            let b = unpack(&q.get(None)?)?;
            q.put(pack(&merge(&a, &b)), None)?;
            Ok(())
        })
    });
}

/// Run `f` against a store view that counts resource round trips, returning
/// the count. Handles adopted inside `f` are released before counting stops.
fn counted(ctx: &TaskContext, f: impl FnOnce(&Ipc) -> anyhow::Result<()>) -> anyhow::Result<Vec<u8>> {
    let counter = Arc::new(CountingStore::with_prefix(ctx.store().clone(), RESOURCE_PREFIX));
    f(&Ipc::new(counter.clone()))?;
    Ok(encode_u64(counter.round_trips()))
}

fn array_args(ipc: &Ipc, args: &[u8]) -> anyhow::Result<(Array, usize, usize, usize)> {
    let mut d = Decoder::new(args);
    let arr: Array = ipc.adopt(d.field()?)?;
    let (start, mid, stop) = (d.u64()? as usize, d.u64()? as usize, d.u64()? as usize);
    d.end().context("sort task args")?;
    Ok((arr, start, mid, stop))
}

fn read_i64(arr: &Array, i: usize) -> anyhow::Result<i64> {
    arr.get(i)?.as_i64().ok_or_else(|| anyhow!("element {i} is not an integer"))
}

fn to_i64s(vals: Vec<Scalar>) -> anyhow::Result<Vec<i64>> {
    vals.into_iter().map(|s| s.as_i64().ok_or_else(|| anyhow!("non-integer element"))).collect()
}

fn pack(vals: &[i64]) -> Vec<u8> {
    vals.iter().flat_map(|v| v.to_be_bytes()).collect()
}

fn unpack(bytes: &[u8]) -> anyhow::Result<Vec<i64>> {
    if !bytes.len().is_multiple_of(8) {
        return Err(anyhow!("run length {} is not a multiple of 8", bytes.len()));
    }
    Ok(bytes.chunks_exact(8).map(|c| i64::from_be_bytes(c.try_into().unwrap())).collect())
}

fn merge(a: &[i64], b: &[i64]) -> Vec<i64> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            out.push(a[i]);
            i += 1;
        } else {
            out.push(b[j]);
            j += 1;
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

#[derive(Debug, Clone)]
pub struct SortRow {
    pub strategy: SortStrategy,
    pub array_len: usize,
    pub workers: usize,
    pub merges: usize,
    /// Store round trips touching resource keys, both sides together.
    pub round_trips: u64,
    pub wall: Duration,
}

#[derive(Debug, Clone)]
pub struct SortReport {
    pub seed: u64,
    pub rows: Vec<SortRow>,
}

impl SortReport {
    pub fn row(&self, strategy: SortStrategy) -> Option<&SortRow> {
        self.rows.iter().find(|r| r.strategy == strategy)
    }

    pub fn record(&self) -> BenchRecord {
        let mut rec = BenchRecord::new("sort", self.seed);
        if let Some(r) = self.rows.first() {
            rec = rec.config("array_len", r.array_len).config("workers", r.workers);
        }
        for r in &self.rows {
            rec = rec
                .metric(&format!("{}.round_trips", r.strategy), r.round_trips as f64)
                .metric(&format!("{}.wall_s", r.strategy), r.wall.as_secs_f64());
        }
        rec
    }

    pub fn write_csv<W: io::Write>(&self, out: W) -> BenchResult<()> {
        let rows: Vec<_> = self
            .rows
            .iter()
            .map(|r| (r.strategy.name(), r.array_len, r.workers, r.merges, r.round_trips, r.wall.as_secs_f64() * 1e3, true))
            .collect();
        write_rows(&SORT, out, &rows)
    }
}

/// Seeded input for the sort benchmark.
pub fn sort_input(len: usize, seed: u64) -> Vec<i64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random()).collect()
}

/// Sort `array_len` seeded integers with every strategy: one leaf task per
/// worker chunk, then a tree of pairwise merges. Each output is checked
/// against a sequential sort.
pub fn bench_sort(
    env: &BenchEnv,
    array_len: usize,
    workers: usize,
    strategies: &[SortStrategy],
    seed: u64,
) -> BenchResult<SortReport> {
    if array_len == 0 || workers == 0 {
        return Err(BenchError::InvalidArgument("array_len and workers must be at least 1".into()));
    }
    if array_len > u32::MAX as usize {
        return Err(BenchError::InvalidArgument("array_len exceeds the array size limit".into()));
    }
    let input = sort_input(array_len, seed);
    let mut oracle = input.clone();
    oracle.sort();
    let launched = env.launch();
    let mut rows = Vec::new();
    for &strategy in strategies {
        let counter = Arc::new(CountingStore::with_prefix(env.store.clone(), RESOURCE_PREFIX));
        let ipc = Ipc::new(counter.clone() as SharedStore).with_classes(env.registry.classes().clone());
        let started = Instant::now();
        let (output, merges, worker_trips) = match strategy {
            SortStrategy::MessagePassing => run_messages(&launched.orch, &ipc, &input, workers)?,
            _ => run_shared(&launched.orch, &ipc, &input, workers, strategy)?,
        };
        let wall = started.elapsed();
        if output != oracle {
            return Err(BenchError::SortMismatch { strategy });
        }
        rows.push(SortRow { strategy, array_len, workers, merges, round_trips: counter.round_trips() + worker_trips, wall });
    }
    Ok(SortReport { seed, rows })
}

fn run_job(orch: &Orchestrator, tasks: Vec<TaskSpec>) -> BenchResult<Vec<bytes::Bytes>> {
    let m = orch.submit_job(tasks)?;
    Ok(orch.join(&m)?)
}

fn sum_trips(results: Vec<bytes::Bytes>) -> BenchResult<u64> {
    results.iter().try_fold(0, |acc, r| {
        decode_u64(r).map(|n| acc + n).map_err(|e| BenchError::InvalidArgument(format!("sort task result: {e}")))
    })
}

fn run_shared(
    orch: &Orchestrator,
    ipc: &Ipc,
    input: &[i64],
    workers: usize,
    strategy: SortStrategy,
) -> BenchResult<(Vec<i64>, usize, u64)> {
    let (leaf, merge_fn) = match strategy {
        SortStrategy::InplaceShared => ("sort_leaf_inplace", "sort_merge_inplace"),
        _ => ("sort_leaf_copy", "sort_merge_copy"),
    };
    let arr = ipc.array(ScalarTag::Int64, input.len() as u32)?;
    arr.slice_set(0, &input.iter().copied().map(Scalar::Int64).collect::<Vec<_>>())?;
    let mut runs: Vec<_> = balanced_ranges(input.len(), workers).into_iter().filter(|r| !r.is_empty()).collect();
    let task = |f: &str, start: usize, mid: usize, stop: usize| -> BenchResult<TaskSpec> {
        let args = Encoder::new().field(&arr.share()?).u64(start as u64).u64(mid as u64).u64(stop as u64).finish();
        Ok(TaskSpec::new(f, args))
    };
    let leaves = runs.iter().map(|r| task(leaf, r.start, r.start, r.end)).collect::<BenchResult<Vec<_>>>()?;
    let mut trips = sum_trips(run_job(orch, leaves)?)?;
    let mut merges = 0;
    while runs.len() > 1 {
        let mut next = Vec::with_capacity(runs.len().div_ceil(2));
        let mut tasks = Vec::new();
        for pair in runs.chunks(2) {
            match pair {
                [a, b] => {
                    tasks.push(task(merge_fn, a.start, b.start, b.end)?);
                    next.push(a.start..b.end);
                }
                [a] => next.push(a.clone()),
                _ => unreachable!(),
            }
        }
        merges += tasks.len();
        trips += sum_trips(run_job(orch, tasks)?)?;
        runs = next;
    }
    let out = arr.to_vec()?.into_iter().map(|s| s.as_i64().unwrap_or_default()).collect();
    Ok((out, merges, trips))
}

fn run_messages(orch: &Orchestrator, ipc: &Ipc, input: &[i64], workers: usize) -> BenchResult<(Vec<i64>, usize, u64)> {
    let q = ipc.queue(None)?;
    let chunks: Vec<_> = balanced_ranges(input.len(), workers).into_iter().filter(|r| !r.is_empty()).collect();
    let leaves = chunks
        .iter()
        .map(|r| Ok(TaskSpec::new("sort_leaf_msg", Encoder::new().field(&q.share()?).field(&pack(&input[r.clone()])).finish())))
        .collect::<BenchResult<Vec<_>>>()?;
    let mut trips = sum_trips(run_job(orch, leaves)?)?;
    let mut runs = chunks.len();
    let mut merges = 0;
    while runs > 1 {
        let tasks = (0..runs / 2)
            .map(|_| Ok(TaskSpec::new("sort_merge_msg", Encoder::new().field(&q.share()?).finish())))
            .collect::<BenchResult<Vec<_>>>()?;
        merges += tasks.len();
        trips += sum_trips(run_job(orch, tasks)?)?;
        runs -= runs / 2;
    }
    let out = unpack(&q.get(Some(Duration::from_secs(60)))?).map_err(|e| BenchError::InvalidArgument(e.to_string()))?;
    Ok((out, merges, trips))
}
