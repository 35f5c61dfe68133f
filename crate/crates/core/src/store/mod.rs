//! Typed in-memory list/hash/counter store.
//!
//! Every shared-state primitive in this crate is expressed as a sequence of
//! [`Command`]s against a [`Store`]. The embedded [`Engine`] applies commands
//! under a single sequencer; [`crate::net::RemoteStore`] forwards the same
//! commands over the wire, so callers cannot tell the two apart.

mod counting;
mod engine;
mod throttle;

pub use counting::CountingStore;
pub use engine::{Clock, Engine, EngineConfig, ManualClock, ParkedPop, PopCanceller, PopStart, SystemClock};
pub use throttle::{Throttle, ThrottledStore};
pub(crate) use engine::timeout_from_ms;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use bytes::Bytes;

/// Default interval of the background expiry sweep.
pub const DEFAULT_SWEEP_INTERVAL: Duration = Duration::from_millis(500);

/// A single store command. Durations travel as whole milliseconds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Command {
    /// Append one or more values at the tail of a list.
    PushTail { key: String, values: Vec<Bytes> },
    /// Remove the head of a list, parking up to `timeout_ms` (`None` = forever).
    PopHead { key: String, timeout_ms: Option<u64> },
    ListLen { key: String },
    ListIndexGet { key: String, index: i64 },
    ListIndexSet { key: String, index: i64, value: Bytes },
    /// Inclusive range, negative indices count from the tail.
    ListRange { key: String, start: i64, stop: i64 },
    HashSet { key: String, field: String, value: Bytes },
    HashGet { key: String, field: String },
    HashDel { key: String, field: String },
    HashGetAll { key: String },
    CounterAdd { key: String, delta: i64 },
    KeyDelete { key: String },
    KeyExpire { key: String, ttl_ms: u64 },
    KeyExists { key: String },
    /// Live keys starting with `prefix`, sorted.
    KeyScan { prefix: String },
    Ping,
}

impl Command {
    /// Key the command operates on, if any.
    pub fn key(&self) -> Option<&str> {
        use Command::*;
        match self {
            PushTail { key, .. }
            | PopHead { key, .. }
            | ListLen { key }
            | ListIndexGet { key, .. }
            | ListIndexSet { key, .. }
            | ListRange { key, .. }
            | HashSet { key, .. }
            | HashGet { key, .. }
            | HashDel { key, .. }
            | HashGetAll { key }
            | CounterAdd { key, .. }
            | KeyDelete { key }
            | KeyExpire { key, .. }
            | KeyExists { key } => Some(key),
            KeyScan { prefix } => Some(prefix),
            Ping => None,
        }
    }

    /// Payload bytes carried by the command (values only).
    pub fn payload_len(&self) -> usize {
        match self {
            Command::PushTail { values, .. } => values.iter().map(Bytes::len).sum(),
            Command::ListIndexSet { value, .. } | Command::HashSet { value, .. } => value.len(),
            _ => 0,
        }
    }

    pub fn name(&self) -> &'static str {
        use Command::*;
        match self {
            PushTail { .. } => "push_tail",
            PopHead { .. } => "pop_head_blocking",
            ListLen { .. } => "list_len",
            ListIndexGet { .. } => "list_index_get",
            ListIndexSet { .. } => "list_index_set",
            ListRange { .. } => "list_range",
            HashSet { .. } => "hash_set",
            HashGet { .. } => "hash_get",
            HashDel { .. } => "hash_del",
            HashGetAll { .. } => "hash_get_all",
            CounterAdd { .. } => "counter_add",
            KeyDelete { .. } => "key_delete",
            KeyExpire { .. } => "key_expire",
            KeyExists { .. } => "key_exists",
            KeyScan { .. } => "key_scan",
            Ping => "ping",
        }
    }
}

/// Successful outcome of a [`Command`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Reply {
    Ack,
    Int(i64),
    Flag(bool),
    Value(Bytes),
    MaybeValue(Option<Bytes>),
    Values(Vec<Bytes>),
    Map(BTreeMap<String, Bytes>),
    Keys(Vec<String>),
    Pong,
}

impl Reply {
    /// Payload bytes carried by the reply.
    pub fn payload_len(&self) -> usize {
        match self {
            Reply::Value(v) | Reply::MaybeValue(Some(v)) => v.len(),
            Reply::Values(vs) => vs.iter().map(Bytes::len).sum(),
            Reply::Map(m) => m.values().map(Bytes::len).sum(),
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StoreError {
    #[error("operation against a key holding the wrong kind of value")]
    WrongType,
    #[error("index out of range")]
    IndexOutOfRange,
    #[error("timed out waiting for an element")]
    Timeout,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
    #[error("transport timed out")]
    TransportTimeout,
    #[error("connection closed")]
    ConnectionClosed,
    #[error("unexpected reply to {0}")]
    UnexpectedReply(&'static str),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for StoreError {
    fn from(e: std::io::Error) -> Self {
        StoreError::Io(e.to_string())
    }
}

pub type StoreResult<T> = Result<T, StoreError>;

/// Anything that executes store commands: the embedded engine, a network
/// client, or a wrapper around either.
pub trait Store: Send + Sync {
    fn execute(&self, cmd: Command) -> StoreResult<Reply>;

    /// Submit several commands as one round trip. Commands are applied in
    /// order but not atomically as a group.
    fn pipeline(&self, cmds: Vec<Command>) -> Vec<StoreResult<Reply>> {
        cmds.into_iter().map(|c| self.execute(c)).collect()
    }
}

impl<S: Store + ?Sized> Store for Arc<S> {
    fn execute(&self, cmd: Command) -> StoreResult<Reply> {
        (**self).execute(cmd)
    }

    fn pipeline(&self, cmds: Vec<Command>) -> Vec<StoreResult<Reply>> {
        (**self).pipeline(cmds)
    }
}

pub type SharedStore = Arc<dyn Store>;

pub(crate) fn duration_ms(d: Duration) -> u64 {
    u64::try_from(d.as_millis()).unwrap_or(u64::MAX - 1)
}

macro_rules! expect_reply {
    ($reply:expr, $name:literal, $pat:pat => $out:expr) => {
        match $reply? {
            $pat => Ok($out),
            _ => Err(StoreError::UnexpectedReply($name)),
        }
    };
}

/// Typed wrappers over [`Store::execute`].
pub trait StoreExt: Store {
    fn push_tail(&self, key: &str, value: impl Into<Bytes>) -> StoreResult<i64> {
        self.push_tail_many(key, vec![value.into()])
    }

    fn push_tail_many(&self, key: &str, values: Vec<Bytes>) -> StoreResult<i64> {
        let cmd = Command::PushTail { key: key.to_owned(), values };
        expect_reply!(self.execute(cmd), "push_tail", Reply::Int(n) => n)
    }

    /// Blocking head-pop; `None` waits forever.
    fn pop_head(&self, key: &str, timeout: Option<Duration>) -> StoreResult<Bytes> {
        let cmd = Command::PopHead { key: key.to_owned(), timeout_ms: timeout.map(duration_ms) };
        expect_reply!(self.execute(cmd), "pop_head_blocking", Reply::Value(v) => v)
    }

    /// Non-blocking head-pop.
    fn try_pop_head(&self, key: &str) -> StoreResult<Option<Bytes>> {
        match self.pop_head(key, Some(Duration::ZERO)) {
            Ok(v) => Ok(Some(v)),
            Err(StoreError::Timeout) => Ok(None),
            Err(e) => Err(e),
        }
    }

    fn list_len(&self, key: &str) -> StoreResult<i64> {
        expect_reply!(self.execute(Command::ListLen { key: key.to_owned() }), "list_len", Reply::Int(n) => n)
    }

    fn list_index_get(&self, key: &str, index: i64) -> StoreResult<Bytes> {
        let cmd = Command::ListIndexGet { key: key.to_owned(), index };
        expect_reply!(self.execute(cmd), "list_index_get", Reply::Value(v) => v)
    }

    fn list_index_set(&self, key: &str, index: i64, value: impl Into<Bytes>) -> StoreResult<()> {
        let cmd = Command::ListIndexSet { key: key.to_owned(), index, value: value.into() };
        expect_reply!(self.execute(cmd), "list_index_set", Reply::Ack => ())
    }

    fn list_range(&self, key: &str, start: i64, stop: i64) -> StoreResult<Vec<Bytes>> {
        let cmd = Command::ListRange { key: key.to_owned(), start, stop };
        expect_reply!(self.execute(cmd), "list_range", Reply::Values(v) => v)
    }

    fn hash_set(&self, key: &str, field: &str, value: impl Into<Bytes>) -> StoreResult<bool> {
        let cmd = Command::HashSet { key: key.to_owned(), field: field.to_owned(), value: value.into() };
        expect_reply!(self.execute(cmd), "hash_set", Reply::Flag(f) => f)
    }

    fn hash_get(&self, key: &str, field: &str) -> StoreResult<Option<Bytes>> {
        let cmd = Command::HashGet { key: key.to_owned(), field: field.to_owned() };
        expect_reply!(self.execute(cmd), "hash_get", Reply::MaybeValue(v) => v)
    }

    fn hash_del(&self, key: &str, field: &str) -> StoreResult<bool> {
        let cmd = Command::HashDel { key: key.to_owned(), field: field.to_owned() };
        expect_reply!(self.execute(cmd), "hash_del", Reply::Flag(f) => f)
    }

    fn hash_get_all(&self, key: &str) -> StoreResult<BTreeMap<String, Bytes>> {
        let cmd = Command::HashGetAll { key: key.to_owned() };
        expect_reply!(self.execute(cmd), "hash_get_all", Reply::Map(m) => m)
    }

    fn counter_add(&self, key: &str, delta: i64) -> StoreResult<i64> {
        let cmd = Command::CounterAdd { key: key.to_owned(), delta };
        expect_reply!(self.execute(cmd), "counter_add", Reply::Int(n) => n)
    }

    fn key_delete(&self, key: &str) -> StoreResult<bool> {
        expect_reply!(self.execute(Command::KeyDelete { key: key.to_owned() }), "key_delete", Reply::Flag(f) => f)
    }

    fn key_expire(&self, key: &str, ttl: Duration) -> StoreResult<()> {
        let cmd = Command::KeyExpire { key: key.to_owned(), ttl_ms: duration_ms(ttl) };
        expect_reply!(self.execute(cmd), "key_expire", Reply::Ack => ())
    }

    fn key_exists(&self, key: &str) -> StoreResult<bool> {
        expect_reply!(self.execute(Command::KeyExists { key: key.to_owned() }), "key_exists", Reply::Flag(f) => f)
    }

    fn key_scan(&self, prefix: &str) -> StoreResult<Vec<String>> {
        expect_reply!(self.execute(Command::KeyScan { prefix: prefix.to_owned() }), "key_scan", Reply::Keys(k) => k)
    }

    fn ping(&self) -> StoreResult<()> {
        expect_reply!(self.execute(Command::Ping), "ping", Reply::Pong => ())
    }
}

impl<S: Store + ?Sized> StoreExt for S {}
