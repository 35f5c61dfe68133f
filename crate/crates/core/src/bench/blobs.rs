use std::io;
use std::time::{Duration, Instant};

use anyhow::Context;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uuid::Uuid;

use super::schema::{write_rows, BLOBS};
use super::{task_seed, BenchEnv, BenchError, BenchRecord, BenchResult};
use crate::faas::Registry;
use crate::objectfs::{etag_of, ObjectFs};
use crate::wire::{Decoder, Encoder};

pub(super) fn register(r: &mut Registry) {
    r.register("blob_write", |ctx, args| {
        let mut d = Decoder::new(args);
        let (path, size, seed) = (d.string()?, d.u64()?, d.u64()?);
        d.end().context("blob_write args")?;
        let data = content(seed, size as usize);
        let r = ctx.fs().write_all(&path, &data)?;
        Ok(r.etag.into_bytes())
    });
    r.register("blob_read", |ctx, args| {
        let mut d = Decoder::new(args);
        let path = d.string()?;
        d.end().context("blob_read args")?;
        let data = ctx.fs().read_all(&path)?;
        Ok(Encoder::new().str(&etag_of(&data)).u64(data.len() as u64).finish())
    });
}

fn content(seed: u64, size: usize) -> Vec<u8> {
    let mut data = vec![0u8; size];
    ChaCha8Rng::seed_from_u64(seed).fill_bytes(&mut data);
    data
}

#[derive(Debug, Clone)]
pub struct BlobsRow {
    pub workers: usize,
    pub object_mb: f64,
    pub write: Duration,
    pub read: Duration,
}

impl BlobsRow {
    fn total_mb(&self) -> f64 {
        self.workers as f64 * self.object_mb
    }

    pub fn write_mbps(&self) -> f64 {
        self.total_mb() / self.write.as_secs_f64().max(1e-9)
    }

    pub fn read_mbps(&self) -> f64 {
        self.total_mb() / self.read.as_secs_f64().max(1e-9)
    }
}

#[derive(Debug, Clone)]
pub struct BlobsReport {
    pub seed: u64,
    pub rows: Vec<BlobsRow>,
}

impl BlobsReport {
    pub fn record(&self) -> BenchRecord {
        let mut rec = BenchRecord::new("blobs", self.seed);
        if let Some(r) = self.rows.first() {
            rec = rec.config("object_mb", r.object_mb);
        }
        for r in &self.rows {
            rec = rec
                .metric(&format!("w{}.write_mbps", r.workers), r.write_mbps())
                .metric(&format!("w{}.read_mbps", r.workers), r.read_mbps());
        }
        rec
    }

    pub fn write_csv<W: io::Write>(&self, out: W) -> BenchResult<()> {
        let rows: Vec<_> = self
            .rows
            .iter()
            .map(|r| {
                let (w, rd) = (r.write.as_secs_f64() * 1e3, r.read.as_secs_f64() * 1e3);
                (r.workers, r.object_mb, w, rd, r.write_mbps(), r.read_mbps(), true)
            })
            .collect();
        write_rows(&BLOBS, out, &rows)
    }
}

/// For each worker count: every worker writes one object of `object_mb`
/// (10^6 bytes per MB), then every worker reads its object back. Read-back
/// hashes are compared with the written content.
pub fn bench_blobs(env: &BenchEnv, worker_counts: &[usize], object_mb: f64, seed: u64) -> BenchResult<BlobsReport> {
    if worker_counts.is_empty() || worker_counts.contains(&0) {
        return Err(BenchError::InvalidArgument("worker counts must be at least 1".into()));
    }
    if object_mb.is_nan() || object_mb <= 0.0 {
        return Err(BenchError::InvalidArgument("object size must be positive".into()));
    }
    let size = (object_mb * 1e6) as usize;
    let launched = env.launch();
    let fs = ObjectFs::new(env.blobs.clone());
    let mut rows = Vec::new();
    for &workers in worker_counts {
        let run = Uuid::new_v4();
        let paths: Vec<String> = (0..workers).map(|i| format!("bench/blobs/{run}/w{i}.bin")).collect();
        let seeds: Vec<u64> = (0..workers as u64).map(|i| task_seed(seed, i)).collect();

        let writes = paths.iter().zip(&seeds).map(|(p, s)| Encoder::new().str(p).u64(size as u64).u64(*s).finish());
        let started = Instant::now();
        let etags = launched.orch.map("blob_write", writes.collect::<Vec<_>>())?;
        let write = started.elapsed();

        let started = Instant::now();
        let reads = launched.orch.map("blob_read", paths.iter().map(|p| Encoder::new().str(p).finish()).collect::<Vec<_>>())?;
        let read = started.elapsed();

        for ((path, seed), (written, read_back)) in paths.iter().zip(&seeds).zip(etags.iter().zip(&reads)) {
            let expected = etag_of(&content(*seed, size));
            let mut d = Decoder::new(read_back);
            let (etag, len) = (d.string()?, d.u64()?);
            if written.as_ref() != expected.as_bytes() || etag != expected || len != size as u64 {
                return Err(BenchError::HashMismatch { path: path.clone() });
            }
            fs.remove(path)?;
        }
        rows.push(BlobsRow { workers, object_mb, write, read });
    }
    Ok(BlobsReport { seed, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::schema::validate_csv;
    use crate::objectfs::{SharedBlobStore, StoreBlobStore};
    use crate::orchestrator::OrchestratorConfig;
    use crate::store::Throttle;
    use std::sync::Arc;

    #[test]
    fn hashes_match_and_objects_removed() {
        let env = BenchEnv::embedded();
        let rep = bench_blobs(&env, &[1, 3], 0.2, 5).unwrap();
        assert_eq!(rep.rows.len(), 2);
        assert!(env.blobs.list("bench/").unwrap().is_empty());
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        assert_eq!(validate_csv(&BLOBS, buf.as_slice()).unwrap(), 2);
    }

    #[test]
    fn zero_workers_rejected() {
        assert!(matches!(bench_blobs(&BenchEnv::embedded(), &[0], 1.0, 0), Err(BenchError::InvalidArgument(_))));
    }

    #[test]
    fn aggregate_read_rate_grows_under_connection_cap() {
        let env = BenchEnv::embedded()
            .with_config(OrchestratorConfig { poll_interval: Duration::from_millis(2), ..Default::default() });
        let blobs: SharedBlobStore =
            Arc::new(StoreBlobStore::with_throttle(env.store.clone(), "capped", Throttle::new(Some(20.0), None)));
        let env = env.with_blobs(blobs);
        let rep = bench_blobs(&env, &[1, 4], 1.0, 9).unwrap();
        assert!(rep.rows[1].read_mbps() >= rep.rows[0].read_mbps(), "{:?}", rep.rows);
    }
}
