#![allow(dead_code)]

use std::sync::Arc;

use faasproc::net::{serve, RemoteStore, StoreServer};
use faasproc::store::{Engine, SharedStore};

/// A store reachable either in-process or through a loopback server.
pub enum Transport {
    Embedded(Engine),
    Loopback { server: StoreServer, client: RemoteStore },
}

impl Transport {
    pub fn embedded() -> Self {
        Transport::Embedded(Engine::new())
    }

    pub fn loopback() -> Self {
        Self::loopback_with(Engine::new())
    }

    pub fn loopback_with(engine: Engine) -> Self {
        let server = serve("127.0.0.1:0", engine).expect("bind loopback");
        let client = RemoteStore::connect(server.local_addr()).expect("connect loopback");
        Transport::Loopback { server, client }
    }

    pub fn both() -> [Transport; 2] {
        [Self::embedded(), Self::loopback()]
    }

    pub fn name(&self) -> &'static str {
        match self {
            Transport::Embedded(_) => "embedded",
            Transport::Loopback { .. } => "loopback",
        }
    }

    pub fn store(&self) -> SharedStore {
        match self {
            Transport::Embedded(e) => Arc::new(e.clone()),
            Transport::Loopback { client, .. } => Arc::new(client.clone()),
        }
    }

    /// A separate connection for loopback, the same engine otherwise.
    pub fn new_client(&self) -> SharedStore {
        match self {
            Transport::Embedded(e) => Arc::new(e.clone()),
            Transport::Loopback { server, .. } => Arc::new(RemoteStore::connect(server.local_addr()).unwrap()),
        }
    }

    pub fn engine(&self) -> &Engine {
        match self {
            Transport::Embedded(e) => e,
            Transport::Loopback { server, .. } => server.engine(),
        }
    }
}
