use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use super::{Command, Reply, SharedStore, Store, StoreResult};

/// Bandwidth model: each transfer is limited by a per-connection rate and
/// all transfers together share an aggregate rate.
#[derive(Debug)]
pub struct Throttle {
    per_connection: Option<f64>,
    aggregate: Option<f64>,
    next_free: Mutex<Option<Instant>>,
}

impl Throttle {
    /// Rates in MB/s (10^6 bytes per second). `None` means uncapped.
    pub fn new(per_connection_mbps: Option<f64>, aggregate_mbps: Option<f64>) -> Self {
        let bps = |r: Option<f64>| r.filter(|r| *r > 0.0).map(|r| r * 1e6);
        Throttle { per_connection: bps(per_connection_mbps), aggregate: bps(aggregate_mbps), next_free: Mutex::new(None) }
    }

    pub fn unlimited() -> Self {
        Self::new(None, None)
    }

    pub fn is_unlimited(&self) -> bool {
        self.per_connection.is_none() && self.aggregate.is_none()
    }

    /// Block the caller for as long as moving `bytes` takes under the caps.
    pub fn transfer(&self, bytes: usize) {
        if self.is_unlimited() || bytes == 0 {
            return;
        }
        let start = Instant::now();
        let mut finish = start;
        if let Some(rate) = self.per_connection {
            finish = start + Duration::from_secs_f64(bytes as f64 / rate);
        }
        if let Some(rate) = self.aggregate {
            let mut next = self.next_free.lock().unwrap();
            let begin = next.map_or(start, |n| n.max(start));
            let done = begin + Duration::from_secs_f64(bytes as f64 / rate);
            *next = Some(done);
            finish = finish.max(done);
        }
        let now = Instant::now();
        if finish > now {
            thread::sleep(finish - now);
        }
    }
}

/// Store wrapper applying a [`Throttle`] to value bytes in both directions.
pub struct ThrottledStore {
    inner: SharedStore,
    throttle: Throttle,
}

impl ThrottledStore {
    pub fn new(inner: SharedStore, throttle: Throttle) -> Self {
        ThrottledStore { inner, throttle }
    }
}

impl Store for ThrottledStore {
    fn execute(&self, cmd: Command) -> StoreResult<Reply> {
        self.throttle.transfer(cmd.payload_len());
        let reply = self.inner.execute(cmd)?;
        self.throttle.transfer(reply.payload_len());
        Ok(reply)
    }
}
