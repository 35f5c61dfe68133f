//! Networked access to a store [`Engine`](crate::store::Engine).

mod client;
pub mod codec;
mod server;

pub use client::{RemoteStore, BLOCKING_TRANSPORT_MARGIN, DEFAULT_TRANSPORT_TIMEOUT};
pub use server::{serve, StoreServer};

use std::io;
use std::sync::Arc;

use crate::store::{Engine, SharedStore};

/// Environment variable naming the store server address.
pub const STORE_ADDR_ENV: &str = "FAASPROC_STORE_ADDR";

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error("cannot bind: {0}")]
    Bind(#[source] io::Error),
    #[error("cannot connect: {0}")]
    Connect(#[source] io::Error),
    #[error("no store address given and {STORE_ADDR_ENV} is unset")]
    MissingAddress,
}

/// Open a store from a location string: `embedded` starts a fresh
/// in-process engine, anything else is a server address.
pub fn open_store(location: &str) -> Result<SharedStore, NetError> {
    if location == "embedded" {
        Ok(Arc::new(Engine::new()))
    } else {
        Ok(Arc::new(RemoteStore::connect(location)?))
    }
}
