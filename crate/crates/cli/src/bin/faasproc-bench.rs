//! Benchmark harness.

use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use faasproc::bench::{
    bench_blobs, bench_forkjoin, bench_pi, bench_pipe, bench_scattergather, bench_sort, validate_csv, BackendKind,
    BenchEnv, BenchError, BenchRecord, CsvSchema, PipeParams, ScatterGatherReport, SortReport, SortStrategy,
    BENCH_BUCKET,
};
use faasproc::faas::{LatencyModel, Temperature};
use faasproc::net::STORE_ADDR_ENV;
use faasproc::objectfs::{SharedBlobStore, StoreBlobStore};
use faasproc::orchestrator::OrchestratorConfig;
use faasproc::store::{SharedStore, Throttle, ThrottledStore};

#[derive(Parser)]
#[command(version, about = "Micro-benchmarks and workloads over the process/pool runtime")]
struct Cli {
    /// Function backend.
    #[arg(long, default_value = "sim", value_parser = parse_backend, global = true)]
    backend: BackendKind,
    /// Store location: `embedded` or a server address.
    #[arg(long, env = STORE_ADDR_ENV, default_value = "embedded", global = true)]
    store: String,
    /// Worker counts, comma separated. Each bench has its own default.
    #[arg(long, value_delimiter = ',', global = true)]
    workers: Vec<usize>,
    #[arg(long, default_value_t = 0, global = true)]
    seed: u64,
    /// Write the bench's CSV here and validate it against its schema.
    #[arg(long, global = true)]
    csv: Option<PathBuf>,
    /// Latency model preset for the simulated backend.
    #[arg(long, value_enum, default_value_t = Preset::Zero, global = true)]
    latency: Preset,
    /// Latency model TOML file; overrides --latency.
    #[arg(long, global = true)]
    latency_config: Option<PathBuf>,
    /// Result polling period.
    #[arg(long, default_value_t = 50, global = true)]
    poll_ms: u64,
    /// Per-connection store bandwidth cap in MB/s.
    #[arg(long, global = true)]
    store_mbps: Option<f64>,
    /// Per-connection blob bandwidth cap in MB/s.
    #[arg(long, global = true)]
    blob_mbps: Option<f64>,
    #[command(subcommand)]
    bench: Bench,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Zero,
    Table1,
}

#[derive(Clone, Copy, ValueEnum)]
enum Temp {
    Cold,
    Warm,
    Both,
    Unset,
}

#[derive(Subcommand)]
enum Bench {
    /// Map sleep tasks and decompose the overhead by phase.
    Forkjoin {
        #[arg(long, default_value_t = 8)]
        tasks: usize,
        #[arg(long, default_value_t = 0.5)]
        sleep_s: f64,
        #[arg(long, value_enum, default_value_t = Temp::Both)]
        temperature: Temp,
        /// Per-task start and end offsets.
        #[arg(long)]
        ramp_csv: Option<PathBuf>,
    },
    /// Pipe round-trip latency and streaming throughput.
    Pipe {
        #[arg(long, default_value_t = 100)]
        messages: usize,
        #[arg(long, value_delimiter = ',', default_value = "1024,65536,1048576")]
        payload_bytes: Vec<usize>,
        #[arg(long, default_value_t = 1000)]
        stream_messages: usize,
        #[arg(long, default_value_t = 1 << 20)]
        stream_payload: usize,
    },
    /// Monte Carlo pi over a range of worker counts.
    Pi {
        #[arg(long, default_value_t = 10_000_000)]
        samples: u64,
    },
    /// Parallel sort with shared-array and message-passing strategies.
    Sort {
        #[arg(long, default_value_t = 100_000)]
        len: usize,
        #[arg(long, value_delimiter = ',', default_value = "inplace_shared,copy_shared,message_passing")]
        strategies: Vec<SortStrategy>,
    },
    /// Parallel object writes then reads.
    Blobs {
        #[arg(long, default_value_t = 16.0)]
        object_mb: f64,
    },
    /// Partition a record table, transform in a pool, gather in order.
    Scattergather {
        #[arg(long, default_value_t = 10_000)]
        rows: usize,
        #[arg(long, default_value = "scale")]
        transform: String,
    },
}

fn parse_backend(s: &str) -> Result<BackendKind, String> {
    s.parse()
}

fn main() -> ExitCode {
    faasproc_cli::init_logging();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<BenchError>() {
                Some(b) if b.is_integrity_failure() => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}

fn environment(cli: &Cli) -> anyhow::Result<BenchEnv> {
    let (mut store, _) = faasproc_cli::connect(&cli.store)?;
    if let Some(mbps) = cli.store_mbps {
        store = Arc::new(ThrottledStore::new(store, Throttle::new(Some(mbps), None))) as SharedStore;
    }
    let blob_throttle = cli.blob_mbps.map_or_else(Throttle::unlimited, |m| Throttle::new(Some(m), None));
    let blobs: SharedBlobStore = Arc::new(StoreBlobStore::with_throttle(store.clone(), BENCH_BUCKET, blob_throttle));
    let model = match (&cli.latency_config, cli.latency) {
        (Some(path), _) => LatencyModel::from_file(path)?,
        (None, Preset::Zero) => LatencyModel { seed: cli.seed, ..LatencyModel::zero() },
        (None, Preset::Table1) => LatencyModel { seed: cli.seed, ..LatencyModel::table1() },
    };
    let config = OrchestratorConfig { poll_interval: Duration::from_millis(cli.poll_ms.max(1)), ..Default::default() };
    Ok(BenchEnv::new(store, cli.backend).with_blobs(blobs).with_model(model).with_config(config))
}

fn workers_or(cli: &Cli, default: &[usize]) -> Vec<usize> {
    if cli.workers.is_empty() {
        default.to_vec()
    } else {
        cli.workers.clone()
    }
}

/// Write through `f`, then check the file against `schema`.
fn emit_csv(path: &Path, schema: &str, f: impl FnOnce(File) -> Result<(), BenchError>) -> anyhow::Result<()> {
    f(File::create(path).with_context(|| format!("creating {}", path.display()))?)?;
    let schema = CsvSchema::by_name(schema).expect("known schema");
    let rows = validate_csv(schema, File::open(path)?)?;
    println!("wrote {} ({rows} rows, schema {} ok)", path.display(), schema.name);
    Ok(())
}

fn print_record(rec: &BenchRecord) {
    print!("{rec}");
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let env = environment(&cli)?;
    let csv = cli.csv.clone();
    match &cli.bench {
        Bench::Forkjoin { tasks, sleep_s, temperature, ramp_csv } => {
            let temps: &[Temperature] = match temperature {
                Temp::Cold => &[Temperature::Cold],
                Temp::Warm => &[Temperature::Warm],
                Temp::Both => &[Temperature::Cold, Temperature::Warm],
                Temp::Unset => &[],
            };
            let rep = bench_forkjoin(&env, *tasks, Duration::from_secs_f64(*sleep_s), temps)?;
            print_record(&rep.record());
            print!("{}", rep.table());
            if let Some(p) = &csv {
                emit_csv(p, "forkjoin", |f| rep.write_csv(f))?;
            }
            if let Some(p) = ramp_csv {
                emit_csv(p, "forkjoin_ramp", |f| rep.write_ramp_csv(f))?;
            }
        }
        Bench::Pipe { messages, payload_bytes, stream_messages, stream_payload } => {
            let params = PipeParams {
                latency_messages: *messages,
                payload_sizes: payload_bytes.clone(),
                stream_messages: *stream_messages,
                stream_payload: *stream_payload,
            };
            let rep = bench_pipe(&env, &params, cli.seed)?;
            print_record(&rep.record());
            if let Some(p) = &csv {
                emit_csv(p, "pipe", |f| rep.write_csv(f))?;
            }
        }
        Bench::Pi { samples } => {
            let rep = bench_pi(&env, *samples, &workers_or(&cli, &[1, 2, 4, 8]), cli.seed)?;
            print_record(&rep.record());
            if let Some(p) = &csv {
                emit_csv(p, "pi", |f| rep.write_csv(f))?;
            }
        }
        Bench::Sort { len, strategies } => {
            let mut all = SortReport { seed: cli.seed, rows: Vec::new() };
            for w in workers_or(&cli, &[8]) {
                let rep = bench_sort(&env, *len, w, strategies, cli.seed)?;
                print_record(&rep.record());
                all.rows.extend(rep.rows);
            }
            if let Some(p) = &csv {
                emit_csv(p, "sort", |f| all.write_csv(f))?;
            }
        }
        Bench::Blobs { object_mb } => {
            let rep = bench_blobs(&env, &workers_or(&cli, &[1, 2, 4, 8]), *object_mb, cli.seed)?;
            print_record(&rep.record());
            if let Some(p) = &csv {
                emit_csv(p, "blobs", |f| rep.write_csv(f))?;
            }
        }
        Bench::Scattergather { rows, transform } => {
            let mut reps = Vec::new();
            for w in workers_or(&cli, &[1, 2, 4, 8]) {
                let rep = bench_scattergather(&env, *rows, w, transform, cli.seed)?;
                print_record(&rep.record());
                reps.push(rep);
            }
            if let Some(p) = &csv {
                emit_csv(p, "scattergather", |f| ScatterGatherReport::write_csv_all(&reps, f))?;
            }
        }
    }
    Ok(())
}
