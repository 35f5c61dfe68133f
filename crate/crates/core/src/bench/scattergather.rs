use std::io;
use std::time::{Duration, Instant};

use anyhow::bail;
use bytes::Bytes;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::schema::{write_rows, SCATTERGATHER};
use super::{balanced_ranges, BenchEnv, BenchError, BenchRecord, BenchResult};
use crate::faas::Registry;
use crate::procpool::Pool;
use crate::wire::{decode_fields, encode_fields, Decoder, Encoder};

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub id: u64,
    pub value: i64,
    pub label: String,
}

impl Row {
    fn encode(&self) -> Vec<u8> {
        Encoder::new().u64(self.id).i64(self.value).str(&self.label).finish()
    }

    fn decode(bytes: &[u8]) -> anyhow::Result<Row> {
        let mut d = Decoder::new(bytes);
        let row = Row { id: d.u64()?, value: d.i64()?, label: d.string()? };
        d.end()?;
        Ok(row)
    }
}

/// Per-row transforms available to the workload.
pub fn transform(name: &str, row: Row) -> anyhow::Result<Row> {
    Ok(match name {
        "identity" => row,
        "scale" => Row { value: row.value.wrapping_mul(2).wrapping_add(1), ..row },
        "upper" => Row { label: row.label.to_uppercase(), ..row },
        _ => bail!("unknown transform {name:?}"),
    })
}

pub(super) fn register(r: &mut Registry) {
    r.register("sg_transform", |_, args| {
        let fields = decode_fields(args)?;
        let Some((name, rows)) = fields.split_first() else { bail!("missing transform name") };
        let name = std::str::from_utf8(name)?;
        let out = rows.iter().map(|b| Ok(transform(name, Row::decode(b)?)?.encode())).collect::<anyhow::Result<Vec<_>>>()?;
        Ok(encode_fields(out))
    });
}

pub fn synthetic_rows(n: usize, seed: u64) -> Vec<Row> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n as u64).map(|id| Row { id, value: rng.random_range(-1_000_000..1_000_000), label: format!("row-{id}") }).collect()
}

/// Partition sizes used for `n_rows` over `n_workers`.
pub fn partition_sizes(n_rows: usize, n_workers: usize) -> Vec<usize> {
    balanced_ranges(n_rows, n_workers).into_iter().map(|r| r.len()).collect()
}

#[derive(Debug, Clone)]
pub struct ScatterGatherReport {
    pub seed: u64,
    pub workers: usize,
    pub rows: usize,
    pub partitions: Vec<usize>,
    pub wall: Duration,
    pub output: Vec<Row>,
}

impl ScatterGatherReport {
    pub fn record(&self) -> BenchRecord {
        BenchRecord::new("scattergather", self.seed)
            .config("rows", self.rows)
            .config("workers", self.workers)
            .metric("wall_s", self.wall.as_secs_f64())
    }

    pub fn write_csv<W: io::Write>(&self, out: W) -> BenchResult<()> {
        Self::write_csv_all(std::slice::from_ref(self), out)
    }

    /// One row per report, under a single header.
    pub fn write_csv_all<W: io::Write>(reports: &[Self], out: W) -> BenchResult<()> {
        let rows: Vec<_> = reports
            .iter()
            .map(|r| {
                let min = r.partitions.iter().min().copied().unwrap_or(0);
                let max = r.partitions.iter().max().copied().unwrap_or(0);
                (r.workers, r.rows, min, max, r.wall.as_secs_f64() * 1e3, true)
            })
            .collect();
        write_rows(&SCATTERGATHER, out, &rows)
    }
}

/// Split a seeded table into one balanced partition per worker, transform
/// each partition in a pool map and reassemble in input order.
pub fn bench_scattergather(env: &BenchEnv, n_rows: usize, n_workers: usize, transform_name: &str, seed: u64) -> BenchResult<ScatterGatherReport> {
    if n_workers == 0 {
        return Err(BenchError::InvalidArgument("n_workers must be at least 1".into()));
    }
    let input = synthetic_rows(n_rows, seed);
    let expected = input
        .iter()
        .map(|r| transform(transform_name, r.clone()))
        .collect::<anyhow::Result<Vec<_>>>()
        .map_err(|e| BenchError::InvalidArgument(e.to_string()))?;
    let ranges = balanced_ranges(n_rows, n_workers);
    let partitions: Vec<Bytes> = ranges
        .iter()
        .map(|r| {
            let fields = std::iter::once(transform_name.as_bytes().to_vec()).chain(input[r.clone()].iter().map(Row::encode));
            Bytes::from(encode_fields(fields))
        })
        .collect();

    let launched = env.launch();
    let started = Instant::now();
    let pool = Pool::create(&launched.orch, n_workers, None)?;
    let results = pool.map("sg_transform", partitions)?;
    pool.close_join()?;
    let wall = started.elapsed();

    let mut output = Vec::with_capacity(n_rows);
    for part in results {
        for b in decode_fields(&part)? {
            output.push(Row::decode(&b).map_err(|_| BenchError::GatherMismatch)?);
        }
    }
    if output != expected {
        return Err(BenchError::GatherMismatch);
    }
    Ok(ScatterGatherReport {
        seed,
        workers: n_workers,
        rows: n_rows,
        partitions: ranges.iter().map(|r| r.len()).collect(),
        wall,
        output,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::schema::validate_csv;

    #[test]
    fn identity_returns_input() {
        let rep = bench_scattergather(&BenchEnv::embedded(), 100, 3, "identity", 4).unwrap();
        assert_eq!(rep.output, synthetic_rows(100, 4));
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        assert_eq!(validate_csv(&SCATTERGATHER, buf.as_slice()).unwrap(), 1);
    }

    #[test]
    fn order_kept_for_any_worker_count() {
        let env = BenchEnv::embedded();
        for w in [1, 2, 5, 8, 13] {
            let rep = bench_scattergather(&env, 50, w, "scale", 1).unwrap();
            assert!(rep.output.iter().enumerate().all(|(i, r)| r.id == i as u64));
            let sizes = partition_sizes(50, w);
            assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }
    }

    #[test]
    fn unknown_transform_rejected() {
        assert!(bench_scattergather(&BenchEnv::embedded(), 5, 2, "nope", 0).is_err());
        assert!(bench_scattergather(&BenchEnv::embedded(), 5, 0, "identity", 0).is_err());
    }
}
