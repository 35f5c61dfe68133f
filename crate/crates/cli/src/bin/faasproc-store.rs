//! Store server.

use std::time::Duration;

use clap::Parser;
use faasproc::net::serve;
use faasproc::store::{Engine, EngineConfig};

#[derive(Parser)]
#[command(version, about = "Serve an in-memory list/hash/counter store over TCP")]
struct Args {
    /// Listen address.
    #[arg(long, default_value = "127.0.0.1:6390")]
    bind: String,
    /// Expired-key sweep period; 0 leaves expiry to lazy checks.
    #[arg(long, default_value_t = 500)]
    sweep_interval_ms: u64,
}

fn main() -> anyhow::Result<()> {
    faasproc_cli::init_logging();
    let args = Args::parse();
    let sweep_interval = (args.sweep_interval_ms > 0).then(|| Duration::from_millis(args.sweep_interval_ms));
    let engine = Engine::with_config(EngineConfig { sweep_interval, ..Default::default() });
    let server = serve(&args.bind, engine)?;
    println!("listening on {}", server.local_addr());
    server.wait();
    Ok(())
}
