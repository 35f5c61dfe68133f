use std::sync::atomic::{AtomicU64, Ordering};

use super::{Command, Reply, SharedStore, Store, StoreResult};

/// Counts round trips made through it. With a key prefix set, only round
/// trips touching a matching key are counted.
pub struct CountingStore {
    inner: SharedStore,
    prefix: Option<String>,
    round_trips: AtomicU64,
    commands: AtomicU64,
}

impl CountingStore {
    pub fn new(inner: SharedStore) -> Self {
        CountingStore { inner, prefix: None, round_trips: AtomicU64::new(0), commands: AtomicU64::new(0) }
    }

    pub fn with_prefix(inner: SharedStore, prefix: impl Into<String>) -> Self {
        CountingStore { prefix: Some(prefix.into()), ..Self::new(inner) }
    }

    pub fn round_trips(&self) -> u64 {
        self.round_trips.load(Ordering::SeqCst)
    }

    pub fn commands(&self) -> u64 {
        self.commands.load(Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.round_trips.store(0, Ordering::SeqCst);
        self.commands.store(0, Ordering::SeqCst);
    }

    fn matches(&self, cmd: &Command) -> bool {
        match (&self.prefix, cmd.key()) {
            (None, _) => true,
            (Some(p), Some(k)) => k.starts_with(p.as_str()),
            (Some(_), None) => false,
        }
    }
}

impl Store for CountingStore {
    fn execute(&self, cmd: Command) -> StoreResult<Reply> {
        if self.matches(&cmd) {
            self.round_trips.fetch_add(1, Ordering::SeqCst);
            self.commands.fetch_add(1, Ordering::SeqCst);
        }
        self.inner.execute(cmd)
    }

    fn pipeline(&self, cmds: Vec<Command>) -> Vec<StoreResult<Reply>> {
        let matching = cmds.iter().filter(|c| self.matches(c)).count() as u64;
        if matching > 0 {
            self.round_trips.fetch_add(1, Ordering::SeqCst);
            self.commands.fetch_add(matching, Ordering::SeqCst);
        }
        self.inner.pipeline(cmds)
    }
}
