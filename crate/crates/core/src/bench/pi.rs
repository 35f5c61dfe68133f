use std::io;
use std::time::{Duration, Instant};

use anyhow::Context;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::schema::{write_rows, PI};
use super::{balanced_ranges, task_seed, BenchEnv, BenchError, BenchRecord, BenchResult};
use crate::faas::{decode_u64, encode_u64, Registry};
use crate::wire::{Decoder, Encoder};

pub(super) fn register(r: &mut Registry) {
    r.register("pi_count", |_, args| {
        let mut d = Decoder::new(args);
        let (seed, samples) = (d.u64()?, d.u64()?);
        d.end().context("pi_count args")?;
        Ok(encode_u64(count_hits(seed, samples)))
    });
}

/// Points of the unit square falling inside the quarter circle.
fn count_hits(seed: u64, samples: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0;
    for _ in 0..samples {
        let (x, y): (f64, f64) = (rng.random(), rng.random());
        hits += u64::from(x * x + y * y <= 1.0);
    }
    hits
}

#[derive(Debug, Clone)]
pub struct PiRow {
    pub workers: usize,
    pub samples: u64,
    pub hits: u64,
    pub estimate: f64,
    pub wall: Duration,
    /// Wall time of the first row divided by this row's.
    pub speedup: f64,
}

impl PiRow {
    pub fn abs_error(&self) -> f64 {
        (self.estimate - std::f64::consts::PI).abs()
    }
}

#[derive(Debug, Clone)]
pub struct PiReport {
    pub seed: u64,
    pub rows: Vec<PiRow>,
}

impl PiReport {
    pub fn row(&self, workers: usize) -> Option<&PiRow> {
        self.rows.iter().find(|r| r.workers == workers)
    }

    pub fn record(&self) -> BenchRecord {
        let mut rec = BenchRecord::new("pi", self.seed);
        if let Some(r) = self.rows.first() {
            rec = rec.config("samples", r.samples);
        }
        for r in &self.rows {
            rec = rec
                .metric(&format!("w{}.estimate", r.workers), r.estimate)
                .metric(&format!("w{}.wall_s", r.workers), r.wall.as_secs_f64())
                .metric(&format!("w{}.speedup", r.workers), r.speedup);
        }
        rec
    }

    pub fn write_csv<W: io::Write>(&self, out: W) -> BenchResult<()> {
        let rows: Vec<_> = self
            .rows
            .iter()
            .map(|r| (r.workers, r.samples, r.hits, r.estimate, r.abs_error(), r.wall.as_secs_f64() * 1e3, r.speedup))
            .collect();
        write_rows(&PI, out, &rows)
    }
}

/// Estimate pi once per entry of `worker_counts`, splitting the samples
/// evenly over that many function invocations.
pub fn bench_pi(env: &BenchEnv, total_samples: u64, worker_counts: &[usize], seed: u64) -> BenchResult<PiReport> {
    if total_samples == 0 {
        return Err(BenchError::InvalidArgument("total_samples must be at least 1".into()));
    }
    if worker_counts.is_empty() || worker_counts.contains(&0) {
        return Err(BenchError::InvalidArgument("worker counts must be at least 1".into()));
    }
    let launched = env.launch();
    let mut rows: Vec<PiRow> = Vec::new();
    for &workers in worker_counts {
        let args: Vec<Vec<u8>> = balanced_ranges(total_samples as usize, workers)
            .into_iter()
            .enumerate()
            .map(|(i, r)| Encoder::new().u64(task_seed(seed, i as u64)).u64(r.len() as u64).finish())
            .collect();
        let started = Instant::now();
        let results = launched.orch.map("pi_count", args)?;
        let wall = started.elapsed();
        let mut hits = 0;
        for r in results {
            hits += decode_u64(&r).map_err(|e| BenchError::InvalidArgument(format!("pi_count result: {e}")))?;
        }
        let base = rows.first().map_or(wall, |r| r.wall);
        rows.push(PiRow {
            workers,
            samples: total_samples,
            hits,
            estimate: 4.0 * hits as f64 / total_samples as f64,
            wall,
            speedup: base.as_secs_f64() / wall.as_secs_f64().max(1e-9),
        });
    }
    Ok(PiReport { seed, rows })
}
