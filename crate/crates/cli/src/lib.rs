//! Shared plumbing for the command-line tools.

use std::sync::Arc;

use anyhow::Context;
use faasproc::bench::BENCH_BUCKET;
use faasproc::net::open_store;
use faasproc::objectfs::{SharedBlobStore, StoreBlobStore};
use faasproc::store::SharedStore;

/// Log to stderr, `info` unless `RUST_LOG` says otherwise.
pub fn init_logging() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
}

/// Store and blob layer for a location string (`embedded` or `host:port`).
pub fn connect(location: &str) -> anyhow::Result<(SharedStore, SharedBlobStore)> {
    let store = open_store(location).with_context(|| format!("opening store {location}"))?;
    let blobs: SharedBlobStore = Arc::new(StoreBlobStore::new(store.clone(), BENCH_BUCKET));
    Ok((store, blobs))
}
