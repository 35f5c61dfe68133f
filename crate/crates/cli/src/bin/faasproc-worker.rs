//! Worker daemon.

use std::sync::Arc;

use anyhow::anyhow;
use clap::Parser;
use faasproc::faas::{DaemonConfig, Registry, WorkerDaemon};
use faasproc::net::STORE_ADDR_ENV;

#[derive(Parser)]
#[command(version, about = "Run function invocations dispatched through a store")]
struct Args {
    /// Store server address.
    #[arg(long, env = STORE_ADDR_ENV)]
    store: String,
    /// Address for the plain-text status listener.
    #[arg(long)]
    bind: Option<String>,
    /// Maximum invocations in flight.
    #[arg(long, default_value_t = 4)]
    concurrency: usize,
    /// Named function set to load.
    #[arg(long, default_value = "builtin")]
    registry: String,
    /// Daemon id; random when omitted.
    #[arg(long)]
    id: Option<String>,
}

fn main() -> anyhow::Result<()> {
    faasproc_cli::init_logging();
    let args = Args::parse();
    let registry = Registry::named(&args.registry).ok_or_else(|| anyhow!("unknown registry {:?}", args.registry))?;
    let (store, blobs) = faasproc_cli::connect(&args.store)?;
    let mut config = DaemonConfig { concurrency: args.concurrency, bind: args.bind, ..Default::default() };
    if let Some(id) = args.id {
        config.id = id;
    }
    let daemon = WorkerDaemon::start(store, blobs, Arc::new(registry), config)?;
    match daemon.status_addr() {
        Some(addr) => println!("worker {} ready, status on {addr}", daemon.id()),
        None => println!("worker {} ready", daemon.id()),
    }
    daemon.wait();
    Ok(())
}
