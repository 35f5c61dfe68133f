use std::io;
use std::time::{Duration, Instant};

use anyhow::Context;
use bytes::{BufMut, Bytes, BytesMut};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::schema::{write_rows, PIPE};
use super::{BenchEnv, BenchError, BenchRecord, BenchResult};
use crate::faas::{decode_u64, encode_u64, Registry};
use crate::ipc::{Connection, Resource};
use crate::orchestrator::TaskSpec;
use crate::wire::{Decoder, Encoder};

const DIGEST_LEN: usize = 32;
const NO_FAILURE: u64 = u64::MAX;

pub(super) fn register(r: &mut Registry) {
    r.register("pipe_echo", |ctx, args| {
        let (conn, count) = worker_args(ctx, args)?;
        for _ in 0..count {
            let msg = conn.recv(None)?;
            conn.send(msg)?;
        }
        Ok(encode_u64(count))
    });
    r.register("pipe_sink", |ctx, args| {
        let (conn, count) = worker_args(ctx, args)?;
        let mut first_bad = NO_FAILURE;
        for i in 0..count {
            let msg = conn.recv(None)?;
            if !checksum_ok(&msg) && first_bad == NO_FAILURE {
                first_bad = i;
            }
        }
        conn.send(encode_u64(first_bad))?;
        Ok(Vec::new())
    });
}

fn worker_args(ctx: &crate::faas::TaskContext, args: &[u8]) -> anyhow::Result<(Connection, u64)> {
    let mut d = Decoder::new(args);
    let handle = d.field()?;
    let count = d.u64()?;
    d.end().context("pipe task args")?;
    Ok((ctx.ipc().adopt::<Connection>(handle)?, count))
}

/// `sha256(payload) || payload`, with the message index stamped into the
/// first bytes of the payload so every message differs.
fn framed(base: &[u8], index: u64) -> Bytes {
    let mut payload = base.to_vec();
    let stamp = index.to_be_bytes();
    let n = stamp.len().min(payload.len());
    payload[..n].copy_from_slice(&stamp[..n]);
    let mut out = BytesMut::with_capacity(DIGEST_LEN + payload.len());
    out.put_slice(&Sha256::digest(&payload));
    out.put_slice(&payload);
    out.freeze()
}

fn checksum_ok(msg: &[u8]) -> bool {
    msg.len() >= DIGEST_LEN && Sha256::digest(&msg[DIGEST_LEN..]).as_slice() == &msg[..DIGEST_LEN]
}

#[derive(Debug, Clone)]
pub struct PipeParams {
    /// Round trips measured per payload size.
    pub latency_messages: usize,
    pub payload_sizes: Vec<usize>,
    pub stream_messages: usize,
    pub stream_payload: usize,
}

impl Default for PipeParams {
    fn default() -> Self {
        PipeParams { latency_messages: 100, payload_sizes: vec![1 << 10, 64 << 10, 1 << 20], stream_messages: 1000, stream_payload: 1 << 20 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipeRow {
    /// `latency` or `stream`.
    pub mode: &'static str,
    pub payload_bytes: usize,
    pub messages: usize,
    pub mean_latency_us: f64,
    pub p50_latency_us: f64,
    pub p99_latency_us: f64,
    pub throughput_mbps: f64,
}

#[derive(Debug, Clone)]
pub struct PipeReport {
    pub seed: u64,
    pub rows: Vec<PipeRow>,
}

impl PipeReport {
    pub fn latency(&self, payload_bytes: usize) -> Option<&PipeRow> {
        self.rows.iter().find(|r| r.mode == "latency" && r.payload_bytes == payload_bytes)
    }

    pub fn stream(&self) -> Option<&PipeRow> {
        self.rows.iter().find(|r| r.mode == "stream")
    }

    pub fn record(&self) -> BenchRecord {
        let mut rec = BenchRecord::new("pipe", self.seed);
        for r in &self.rows {
            match r.mode {
                "stream" => {
                    rec = rec.config("stream_messages", r.messages).metric("stream.throughput_mbps", r.throughput_mbps)
                }
                _ => rec = rec.metric(&format!("latency_{}b.mean_us", r.payload_bytes), r.mean_latency_us),
            }
        }
        rec
    }

    pub fn write_csv<W: io::Write>(&self, out: W) -> BenchResult<()> {
        let rows: Vec<_> = self
            .rows
            .iter()
            .map(|r| {
                (r.mode, r.payload_bytes, r.messages, r.mean_latency_us, r.p50_latency_us, r.p99_latency_us, r.throughput_mbps, true)
            })
            .collect();
        write_rows(&PIPE, out, &rows)
    }
}

fn percentile(sorted: &[Duration], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx].as_secs_f64() * 1e6
}

/// Round-trip latency through an echoing worker for each payload size, then
/// one-way streaming throughput into a verifying sink. Every message carries
/// a checksum; any mismatch fails the run.
pub fn bench_pipe(env: &BenchEnv, params: &PipeParams, seed: u64) -> BenchResult<PipeReport> {
    let launched = env.launch();
    let orch = &launched.orch;
    let ipc = orch.ipc();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut index = 0u64;

    for &size in &params.payload_sizes {
        if params.latency_messages == 0 {
            break;
        }
        let mut base = vec![0u8; size];
        rng.fill_bytes(&mut base);
        let (local, remote) = ipc.pipe()?;
        let args = Encoder::new().field(&remote.share()?).u64(params.latency_messages as u64).finish();
        drop(remote);
        let job = orch.submit_job(vec![TaskSpec::new("pipe_echo", args)])?;
        let mut samples = Vec::with_capacity(params.latency_messages);
        for _ in 0..params.latency_messages {
            let msg = framed(&base, index);
            let started = Instant::now();
            local.send(msg.clone())?;
            let back = local.recv(None)?;
            samples.push(started.elapsed());
            if back != msg || !checksum_ok(&back) {
                return Err(BenchError::ChecksumMismatch { index: index as usize });
            }
            index += 1;
        }
        orch.join(&job)?;
        samples.sort();
        let mean = samples.iter().map(Duration::as_secs_f64).sum::<f64>() / samples.len() as f64 * 1e6;
        rows.push(PipeRow {
            mode: "latency",
            payload_bytes: size,
            messages: samples.len(),
            mean_latency_us: mean,
            p50_latency_us: percentile(&samples, 0.5),
            p99_latency_us: percentile(&samples, 0.99),
            throughput_mbps: 0.0,
        });
    }

    if params.stream_messages > 0 {
        let mut base = vec![0u8; params.stream_payload];
        rng.fill_bytes(&mut base);
        let msgs: Vec<Bytes> = (0..params.stream_messages as u64).map(|i| framed(&base, index + i)).collect();
        let (local, remote) = ipc.pipe()?;
        let args = Encoder::new().field(&remote.share()?).u64(msgs.len() as u64).finish();
        drop(remote);
        let job = orch.submit_job(vec![TaskSpec::new("pipe_sink", args)])?;
        let started = Instant::now();
        for m in msgs {
            local.send(m)?;
        }
        let ack = local.recv(None)?;
        let elapsed = started.elapsed();
        orch.join(&job)?;
        let first_bad = decode_u64(&ack).map_err(|e| BenchError::InvalidArgument(format!("sink ack: {e}")))?;
        if first_bad != NO_FAILURE {
            return Err(BenchError::ChecksumMismatch { index: (index + first_bad) as usize });
        }
        let mb = (params.stream_messages * params.stream_payload) as f64 / 1e6;
        rows.push(PipeRow {
            mode: "stream",
            payload_bytes: params.stream_payload,
            messages: params.stream_messages,
            mean_latency_us: elapsed.as_secs_f64() * 1e6 / params.stream_messages as f64,
            p50_latency_us: 0.0,
            p99_latency_us: 0.0,
            throughput_mbps: mb / elapsed.as_secs_f64().max(1e-9),
        });
    }
    Ok(PipeReport { seed, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::schema::validate_csv;
    use crate::store::{Engine, SharedStore, Throttle, ThrottledStore};
    use std::sync::Arc;

    fn small() -> PipeParams {
        PipeParams { latency_messages: 20, payload_sizes: vec![1024, 8192], stream_messages: 50, stream_payload: 16 << 10 }
    }

    #[test]
    fn framing_detects_corruption() {
        let m = framed(&[7u8; 100], 3);
        assert!(checksum_ok(&m));
        let mut bad = m.to_vec();
        bad[50] ^= 1;
        assert!(!checksum_ok(&bad));
        assert!(!checksum_ok(&[0u8; 5]));
        assert_ne!(framed(&[0u8; 16], 1), framed(&[0u8; 16], 2));
    }

    #[test]
    fn embedded_run_reports_every_size() {
        let rep = bench_pipe(&BenchEnv::embedded(), &small(), 1).unwrap();
        assert!(rep.latency(1024).is_some() && rep.latency(8192).is_some());
        assert!(rep.stream().unwrap().throughput_mbps > 0.0);
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        assert_eq!(validate_csv(&PIPE, buf.as_slice()).unwrap(), 3);
    }

    #[test]
    fn halving_the_cap_does_not_raise_throughput() {
        let run = |mbps: f64| {
            let store: SharedStore =
                Arc::new(ThrottledStore::new(Arc::new(Engine::new()), Throttle::new(Some(mbps), None)));
            let params = PipeParams { latency_messages: 0, stream_messages: 20, stream_payload: 64 << 10, ..small() };
            bench_pipe(&BenchEnv::new(store, super::super::BackendKind::Sim), &params, 2).unwrap().stream().unwrap().throughput_mbps
        };
        let (full, half) = (run(40.0), run(20.0));
        assert!(half <= full, "half {half} full {full}");
    }
}
