use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard, Weak};
use std::thread;
use std::time::{Duration, Instant};

use bytes::Bytes;

use super::{Command, Reply, Store, StoreError, StoreResult, DEFAULT_SWEEP_INTERVAL};

/// Millisecond clock driving key expiry.
pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
}

/// Monotonic wall time since the clock was created.
#[derive(Debug)]
pub struct SystemClock {
    origin: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        SystemClock { origin: Instant::now() }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        self.origin.elapsed().as_millis() as u64
    }
}

/// Hand-stepped clock for expiry tests.
#[derive(Debug, Default)]
pub struct ManualClock {
    now: AtomicU64,
}

impl ManualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn advance(&self, d: Duration) {
        self.now.fetch_add(d.as_millis() as u64, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> u64 {
        self.now.load(Ordering::SeqCst)
    }
}

#[derive(Clone)]
pub struct EngineConfig {
    /// `None` disables the background sweep; expiry is then lazy only.
    pub sweep_interval: Option<Duration>,
    pub clock: Arc<dyn Clock>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig { sweep_interval: Some(DEFAULT_SWEEP_INTERVAL), clock: Arc::new(SystemClock::new()) }
    }
}

enum Data {
    List(VecDeque<Bytes>),
    Hash(BTreeMap<String, Bytes>),
    Counter(i64),
}

struct Entry {
    data: Data,
    ttl_ms: Option<u64>,
    deadline_ms: Option<u64>,
}

impl Entry {
    fn new(data: Data) -> Self {
        Entry { data, ttl_ms: None, deadline_ms: None }
    }
}

enum SlotState {
    Empty,
    Delivered(Bytes),
    Cancelled,
}

impl SlotState {
    fn take(&mut self) -> Option<StoreResult<Bytes>> {
        match std::mem::replace(self, SlotState::Empty) {
            SlotState::Empty => None,
            SlotState::Delivered(v) => Some(Ok(v)),
            SlotState::Cancelled => {
                *self = SlotState::Cancelled;
                Some(Err(StoreError::ConnectionClosed))
            }
        }
    }
}

struct Slot {
    value: Mutex<SlotState>,
    ready: Condvar,
}

struct Waiter {
    seq: u64,
    slot: Arc<Slot>,
}

#[derive(Default)]
struct State {
    entries: HashMap<String, Entry>,
    waiters: HashMap<String, VecDeque<Waiter>>,
    next_seq: u64,
}

struct Shared {
    state: Mutex<State>,
    clock: Arc<dyn Clock>,
}

/// Embedded store. All commands pass through one mutex, which is the
/// sequencer; blocked pops park on their own slot outside it.
#[derive(Clone)]
pub struct Engine {
    shared: Arc<Shared>,
}

/// Result of starting a head-pop.
pub enum PopStart {
    Ready(Bytes),
    Parked(ParkedPop),
}

/// A registered waiter that has not yet received an element.
pub struct ParkedPop {
    shared: Arc<Shared>,
    key: String,
    seq: u64,
    slot: Arc<Slot>,
    deadline: Option<Instant>,
}

/// Withdraws a parked pop whose caller went away, so it cannot swallow a
/// later element.
#[derive(Clone)]
pub struct PopCanceller {
    shared: Arc<Shared>,
    key: String,
    seq: u64,
    slot: Arc<Slot>,
}

impl PopCanceller {
    /// Returns false if an element was already handed over.
    pub fn cancel(&self) -> bool {
        let mut state = self.shared.state.lock().unwrap();
        let mut slot = self.slot.value.lock().unwrap();
        if !matches!(*slot, SlotState::Empty) {
            return false;
        }
        *slot = SlotState::Cancelled;
        self.slot.ready.notify_all();
        state.remove_waiter(&self.key, self.seq);
        true
    }
}

impl ParkedPop {
    pub fn canceller(&self) -> PopCanceller {
        PopCanceller { shared: self.shared.clone(), key: self.key.clone(), seq: self.seq, slot: self.slot.clone() }
    }

    /// Park until an element is handed over or the deadline passes.
    pub fn wait(self) -> StoreResult<Bytes> {
        {
            let mut value = self.slot.value.lock().unwrap();
            loop {
                if let Some(v) = value.take() {
                    return v;
                }
                match self.deadline {
                    None => value = self.slot.ready.wait(value).unwrap(),
                    Some(deadline) => {
                        let now = Instant::now();
                        if now >= deadline {
                            break;
                        }
                        value = self.slot.ready.wait_timeout(value, deadline - now).unwrap().0;
                    }
                }
            }
        }
        // Deliveries happen under the state lock, so checking the slot again
        // while holding it decides between delivery and timeout exactly once.
        let mut state = self.shared.state.lock().unwrap();
        if let Some(v) = self.slot.value.lock().unwrap().take() {
            return v;
        }
        state.remove_waiter(&self.key, self.seq);
        Err(StoreError::Timeout)
    }

    pub fn arrival_seq(&self) -> u64 {
        self.seq
    }
}

impl Default for Engine {
    fn default() -> Self {
        Self::new()
    }
}

impl Engine {
    pub fn new() -> Self {
        Self::with_config(EngineConfig::default())
    }

    pub fn with_config(config: EngineConfig) -> Self {
        let shared = Arc::new(Shared { state: Mutex::new(State::default()), clock: config.clock });
        if let Some(interval) = config.sweep_interval {
            let weak = Arc::downgrade(&shared);
            thread::Builder::new()
                .name("store-sweep".into())
                .spawn(move || sweep_loop(weak, interval))
                .expect("spawn sweeper");
        }
        Engine { shared }
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.shared.state.lock().unwrap()
    }

    /// Remove every expired key now. Returns how many were removed.
    pub fn sweep(&self) -> usize {
        sweep_once(&self.shared)
    }

    /// Number of live keys.
    pub fn key_count(&self) -> usize {
        let now = self.shared.clock.now_ms();
        self.lock().entries.values().filter(|e| !expired(e, now)).count()
    }

    /// Number of parked waiters on `key`.
    pub fn waiter_count(&self, key: &str) -> usize {
        self.lock().waiters.get(key).map_or(0, VecDeque::len)
    }

    /// Pop the head of `key` or register a waiter for it. A zero timeout
    /// never parks.
    pub fn begin_pop(&self, key: &str, timeout: Option<Duration>) -> StoreResult<PopStart> {
        let now = self.shared.clock.now_ms();
        let mut state = self.lock();
        if let Some(v) = state.pop_now(key, now)? {
            return Ok(PopStart::Ready(v));
        }
        if timeout == Some(Duration::ZERO) {
            return Err(StoreError::Timeout);
        }
        let seq = state.next_seq;
        state.next_seq += 1;
        let slot = Arc::new(Slot { value: Mutex::new(SlotState::Empty), ready: Condvar::new() });
        state.waiters.entry(key.to_owned()).or_default().push_back(Waiter { seq, slot: slot.clone() });
        Ok(PopStart::Parked(ParkedPop {
            shared: self.shared.clone(),
            key: key.to_owned(),
            seq,
            slot,
            deadline: timeout.map(|t| Instant::now() + t),
        }))
    }

    fn apply(&self, cmd: Command) -> StoreResult<Reply> {
        let now = self.shared.clock.now_ms();
        let mut state = self.lock();
        state.apply(cmd, now)
    }
}

impl Store for Engine {
    fn execute(&self, cmd: Command) -> StoreResult<Reply> {
        match cmd {
            Command::PopHead { key, timeout_ms } => {
                let timeout = timeout_from_ms(timeout_ms);
                match self.begin_pop(&key, timeout)? {
                    PopStart::Ready(v) => Ok(Reply::Value(v)),
                    PopStart::Parked(p) => p.wait().map(Reply::Value),
                }
            }
            other => self.apply(other),
        }
    }

    fn pipeline(&self, cmds: Vec<Command>) -> Vec<StoreResult<Reply>> {
        cmds.into_iter().map(|c| self.execute(c)).collect()
    }
}

/// Wire convention: `u64::MAX` and `None` both mean "wait forever".
pub(crate) fn timeout_from_ms(ms: Option<u64>) -> Option<Duration> {
    match ms {
        None | Some(u64::MAX) => None,
        Some(ms) => Some(Duration::from_millis(ms)),
    }
}

fn expired(entry: &Entry, now: u64) -> bool {
    entry.deadline_ms.is_some_and(|d| d <= now)
}

fn sweep_once(shared: &Shared) -> usize {
    let now = shared.clock.now_ms();
    let mut state = shared.state.lock().unwrap();
    let before = state.entries.len();
    state.entries.retain(|_, e| !expired(e, now));
    before - state.entries.len()
}

fn sweep_loop(shared: Weak<Shared>, interval: Duration) {
    loop {
        thread::sleep(interval);
        match shared.upgrade() {
            Some(s) => {
                sweep_once(&s);
            }
            None => return,
        }
    }
}

fn normalize_index(index: i64, len: usize) -> Option<usize> {
    let len = len as i64;
    let idx = if index < 0 { len + index } else { index };
    (0..len).contains(&idx).then_some(idx as usize)
}

impl State {
    fn remove_waiter(&mut self, key: &str, seq: u64) {
        if let Some(queue) = self.waiters.get_mut(key) {
            queue.retain(|w| w.seq != seq);
            if queue.is_empty() {
                self.waiters.remove(key);
            }
        }
    }

    /// Live entry for `key`, dropping it first if it has expired.
    fn live(&mut self, key: &str, now: u64) -> Option<&mut Entry> {
        if self.entries.get(key).is_some_and(|e| expired(e, now)) {
            self.entries.remove(key);
        }
        self.entries.get_mut(key)
    }

    fn touch(&mut self, key: &str, now: u64) {
        if let Some(e) = self.entries.get_mut(key) {
            if let Some(ttl) = e.ttl_ms {
                e.deadline_ms = Some(now.saturating_add(ttl));
            }
        }
    }

    fn list_mut(&mut self, key: &str, now: u64) -> StoreResult<Option<&mut VecDeque<Bytes>>> {
        match self.live(key, now) {
            None => Ok(None),
            Some(Entry { data: Data::List(l), .. }) => Ok(Some(l)),
            Some(_) => Err(StoreError::WrongType),
        }
    }

    fn hash_mut(&mut self, key: &str, now: u64) -> StoreResult<Option<&mut BTreeMap<String, Bytes>>> {
        match self.live(key, now) {
            None => Ok(None),
            Some(Entry { data: Data::Hash(h), .. }) => Ok(Some(h)),
            Some(_) => Err(StoreError::WrongType),
        }
    }

    fn pop_now(&mut self, key: &str, now: u64) -> StoreResult<Option<Bytes>> {
        let Some(list) = self.list_mut(key, now)? else { return Ok(None) };
        let v = list.pop_front();
        if list.is_empty() {
            self.entries.remove(key);
        } else {
            self.touch(key, now);
        }
        Ok(v)
    }

    fn push_tail(&mut self, key: &str, values: Vec<Bytes>, now: u64) -> StoreResult<i64> {
        if self.list_mut(key, now)?.is_none() {
            self.entries.insert(key.to_owned(), Entry::new(Data::List(VecDeque::new())));
        }
        let list = self.list_mut(key, now)?.expect("list present");
        list.extend(values);
        let len = list.len() as i64;
        self.hand_off(key);
        if self.list_mut(key, now)?.is_some_and(|l| l.is_empty()) {
            self.entries.remove(key);
        } else {
            self.touch(key, now);
        }
        Ok(len)
    }

    /// Hand head elements to the oldest parked waiters.
    fn hand_off(&mut self, key: &str) {
        let Some(queue) = self.waiters.get_mut(key) else { return };
        let Some(Entry { data: Data::List(list), .. }) = self.entries.get_mut(key) else { return };
        while !list.is_empty() {
            let Some(waiter) = queue.pop_front() else { break };
            let v = list.pop_front().expect("nonempty");
            *waiter.slot.value.lock().unwrap() = SlotState::Delivered(v);
            waiter.slot.ready.notify_one();
        }
        if queue.is_empty() {
            self.waiters.remove(key);
        }
    }

    fn apply(&mut self, cmd: Command, now: u64) -> StoreResult<Reply> {
        // Successful data commands re-arm the key's TTL.
        let refresh = match &cmd {
            Command::ListLen { key }
            | Command::ListIndexGet { key, .. }
            | Command::ListIndexSet { key, .. }
            | Command::ListRange { key, .. }
            | Command::HashSet { key, .. }
            | Command::HashGet { key, .. }
            | Command::HashDel { key, .. }
            | Command::HashGetAll { key }
            | Command::CounterAdd { key, .. } => Some(key.clone()),
            _ => None,
        };
        let reply = match cmd {
            Command::PushTail { key, values } => {
                if values.is_empty() {
                    return Err(StoreError::InvalidArgument("push_tail needs at least one value".into()));
                }
                return self.push_tail(&key, values, now).map(Reply::Int);
            }
            Command::PopHead { key, .. } => {
                return self.pop_now(&key, now)?.map(Reply::Value).ok_or(StoreError::Timeout);
            }
            Command::ListLen { ref key } => Reply::Int(self.list_mut(key, now)?.map_or(0, |l| l.len() as i64)),
            Command::ListIndexGet { ref key, index } => {
                let list = self.list_mut(key, now)?.ok_or(StoreError::IndexOutOfRange)?;
                let i = normalize_index(index, list.len()).ok_or(StoreError::IndexOutOfRange)?;
                Reply::Value(list[i].clone())
            }
            Command::ListIndexSet { ref key, index, ref value } => {
                let list = self.list_mut(key, now)?.ok_or(StoreError::IndexOutOfRange)?;
                let i = normalize_index(index, list.len()).ok_or(StoreError::IndexOutOfRange)?;
                list[i] = value.clone();
                Reply::Ack
            }
            Command::ListRange { ref key, start, stop } => {
                let values = match self.list_mut(key, now)? {
                    None => Vec::new(),
                    Some(list) => {
                        let len = list.len() as i64;
                        let s = if start < 0 { (len + start).max(0) } else { start };
                        let e = if stop < 0 { len + stop } else { stop.min(len - 1) };
                        if s > e || s >= len {
                            Vec::new()
                        } else {
                            list.range(s as usize..=e as usize).cloned().collect()
                        }
                    }
                };
                Reply::Values(values)
            }
            Command::HashSet { ref key, field, value } => {
                if self.hash_mut(key, now)?.is_none() {
                    self.entries.insert(key.clone(), Entry::new(Data::Hash(BTreeMap::new())));
                }
                let hash = self.hash_mut(key, now)?.expect("hash present");
                Reply::Flag(hash.insert(field, value).is_none())
            }
            Command::HashGet { ref key, ref field } => {
                Reply::MaybeValue(self.hash_mut(key, now)?.and_then(|h| h.get(field).cloned()))
            }
            Command::HashDel { ref key, ref field } => {
                let Some(hash) = self.hash_mut(key, now)? else { return Ok(Reply::Flag(false)) };
                let removed = hash.remove(field).is_some();
                if hash.is_empty() {
                    self.entries.remove(key);
                }
                Reply::Flag(removed)
            }
            Command::HashGetAll { ref key } => Reply::Map(self.hash_mut(key, now)?.cloned().unwrap_or_default()),
            Command::CounterAdd { ref key, delta } => {
                let entry = match self.live(key, now) {
                    Some(e) => e,
                    None => self.entries.entry(key.clone()).or_insert(Entry::new(Data::Counter(0))),
                };
                let Data::Counter(n) = &mut entry.data else { return Err(StoreError::WrongType) };
                *n = n.wrapping_add(delta);
                Reply::Int(*n)
            }
            Command::KeyDelete { key } => {
                let existed = self.live(&key, now).is_some();
                self.entries.remove(&key);
                return Ok(Reply::Flag(existed));
            }
            Command::KeyExpire { key, ttl_ms } => {
                if let Some(e) = self.live(&key, now) {
                    e.ttl_ms = Some(ttl_ms);
                    e.deadline_ms = Some(now.saturating_add(ttl_ms));
                }
                return Ok(Reply::Ack);
            }
            Command::KeyExists { key } => return Ok(Reply::Flag(self.live(&key, now).is_some())),
            Command::KeyScan { prefix } => {
                let mut keys: Vec<String> = self
                    .entries
                    .iter()
                    .filter(|(k, e)| k.starts_with(&prefix) && !expired(e, now))
                    .map(|(k, _)| k.clone())
                    .collect();
                keys.sort();
                return Ok(Reply::Keys(keys));
            }
            Command::Ping => return Ok(Reply::Pong),
        };
        if let Some(key) = refresh {
            self.touch(&key, now);
        }
        Ok(reply)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::StoreExt;

    fn engine() -> Engine {
        Engine::with_config(EngineConfig { sweep_interval: None, ..Default::default() })
    }

    fn manual() -> (Engine, Arc<ManualClock>) {
        let clock = Arc::new(ManualClock::new());
        let e = Engine::with_config(EngineConfig { sweep_interval: None, clock: clock.clone() });
        (e, clock)
    }

    #[test]
    fn push_tail_on_absent_returns_one() {
        assert_eq!(engine().push_tail("q", "a").unwrap(), 1);
    }

    #[test]
    fn push_pop_is_fifo() {
        let e = engine();
        for v in ["a", "b", "c"] {
            e.push_tail("q", v).unwrap();
        }
        let got: Vec<_> = (0..3).map(|_| e.pop_head("q", Some(Duration::ZERO)).unwrap()).collect();
        assert_eq!(got, vec!["a", "b", "c"]);
        assert!(!e.key_exists("q").unwrap(), "empty list is deleted");
    }

    #[test]
    fn type_guard() {
        let e = engine();
        e.hash_set("h", "f", "1").unwrap();
        assert_eq!(e.push_tail("h", "x"), Err(StoreError::WrongType));
        assert_eq!(e.counter_add("h", 1), Err(StoreError::WrongType));
        assert_eq!(e.hash_get_all("h").unwrap().len(), 1, "failed command did not mutate");
        e.push_tail("l", "x").unwrap();
        assert_eq!(e.hash_set("l", "f", "1"), Err(StoreError::WrongType));
        assert_eq!(e.pop_head("h", Some(Duration::from_millis(1))), Err(StoreError::WrongType));
    }

    #[test]
    fn pop_timeout_on_absent() {
        let e = engine();
        let t0 = Instant::now();
        assert_eq!(e.pop_head("nothing", Some(Duration::from_millis(10))), Err(StoreError::Timeout));
        assert!(t0.elapsed() >= Duration::from_millis(10));
        assert_eq!(e.waiter_count("nothing"), 0);
    }

    #[test]
    fn pop_leaves_remainder() {
        let e = engine();
        e.push_tail_many("l", vec!["a".into(), "b".into()]).unwrap();
        assert_eq!(e.pop_head("l", None).unwrap(), "a");
        assert_eq!(e.list_range("l", 0, -1).unwrap(), vec![Bytes::from("b")]);
    }

    #[test]
    fn waiters_served_in_arrival_order() {
        let e = engine();
        let PopStart::Parked(w1) = e.begin_pop("k", None).unwrap() else { panic!() };
        let PopStart::Parked(w2) = e.begin_pop("k", Some(Duration::from_millis(50))).unwrap() else { panic!() };
        assert!(w1.arrival_seq() < w2.arrival_seq());
        assert_eq!(e.push_tail("k", "x").unwrap(), 1);
        assert_eq!(w1.wait().unwrap(), "x");
        assert_eq!(w2.wait(), Err(StoreError::Timeout));
        assert!(!e.key_exists("k").unwrap());
    }

    #[test]
    fn cancelled_waiter_does_not_consume() {
        let e = engine();
        let PopStart::Parked(w) = e.begin_pop("k", None).unwrap() else { panic!() };
        assert!(w.canceller().cancel());
        e.push_tail("k", "x").unwrap();
        assert_eq!(w.wait(), Err(StoreError::ConnectionClosed));
        assert_eq!(e.list_len("k").unwrap(), 1);
    }

    #[test]
    fn index_ops() {
        let e = engine();
        e.push_tail_many("l", vec!["a".into(), "b".into(), "c".into()]).unwrap();
        assert_eq!(e.list_index_get("l", 1).unwrap(), "b");
        assert_eq!(e.list_index_get("l", -1).unwrap(), "c");
        e.list_index_set("l", 0, "z").unwrap();
        assert_eq!(e.list_range("l", 0, -1).unwrap(), vec![Bytes::from("z"), "b".into(), "c".into()]);
        assert_eq!(e.list_index_get("l", 5), Err(StoreError::IndexOutOfRange));
        assert_eq!(e.list_index_set("l", -4, "q"), Err(StoreError::IndexOutOfRange));
        assert_eq!(e.list_index_get("absent", 0), Err(StoreError::IndexOutOfRange));
        assert_eq!(e.list_range("l", 1, 100).unwrap().len(), 2);
        assert!(e.list_range("l", 2, 1).unwrap().is_empty());
    }

    #[test]
    fn hash_ops() {
        let e = engine();
        assert!(e.hash_set("m", "x", "1").unwrap());
        assert!(!e.hash_set("m", "x", "1").unwrap());
        assert_eq!(e.hash_get("m", "y").unwrap(), None);
        e.hash_set("m", "y", "2").unwrap();
        let all = e.hash_get_all("m").unwrap();
        assert_eq!(all.get("x").unwrap(), "1");
        assert_eq!(all.get("y").unwrap(), "2");
        assert!(e.hash_del("m", "x").unwrap());
        assert!(e.hash_del("m", "y").unwrap());
        assert!(!e.key_exists("m").unwrap(), "last field removal deletes key");
    }

    #[test]
    fn counters() {
        let e = engine();
        assert_eq!(e.counter_add("c", 1).unwrap(), 1);
        assert_eq!(e.counter_add("c", -1).unwrap(), 0);
        assert!(e.key_exists("c").unwrap(), "counter persists at zero");
    }

    #[test]
    fn concurrent_counter_adds() {
        let e = engine();
        let handles: Vec<_> = (0..8)
            .map(|i| {
                let e = e.clone();
                thread::spawn(move || {
                    let n = if i < 4 { 13 } else { 12 };
                    for _ in 0..n {
                        e.counter_add("c", 1).unwrap();
                    }
                })
            })
            .collect();
        handles.into_iter().for_each(|h| h.join().unwrap());
        assert_eq!(e.counter_add("c", 0).unwrap(), 100);
    }

    #[test]
    fn delete_and_expire() {
        let (e, clock) = manual();
        assert!(!e.key_delete("absent").unwrap());
        e.counter_add("r", 1).unwrap();
        e.key_expire("r", Duration::from_millis(50)).unwrap();
        clock.advance(Duration::from_millis(60));
        assert!(!e.key_exists("r").unwrap());
        assert_eq!(e.counter_add("r", 1).unwrap(), 1, "expired key reads as absent");
    }

    #[test]
    fn data_commands_rearm_ttl() {
        let (e, clock) = manual();
        e.push_tail("l", "a").unwrap();
        e.key_expire("l", Duration::from_millis(100)).unwrap();
        clock.advance(Duration::from_millis(80));
        e.list_index_get("l", 0).unwrap();
        clock.advance(Duration::from_millis(80));
        assert!(e.key_exists("l").unwrap(), "read at t=80 re-armed deadline to t=180");
        clock.advance(Duration::from_millis(30));
        assert!(!e.key_exists("l").unwrap());
    }

    #[test]
    fn existence_checks_do_not_rearm() {
        let (e, clock) = manual();
        e.counter_add("c", 1).unwrap();
        e.key_expire("c", Duration::from_millis(100)).unwrap();
        clock.advance(Duration::from_millis(90));
        assert!(e.key_exists("c").unwrap());
        clock.advance(Duration::from_millis(20));
        assert!(!e.key_exists("c").unwrap());
    }

    #[test]
    fn sweep_removes_expired() {
        let (e, clock) = manual();
        e.counter_add("a", 1).unwrap();
        e.counter_add("b", 1).unwrap();
        e.key_expire("a", Duration::from_millis(10)).unwrap();
        clock.advance(Duration::from_millis(11));
        assert_eq!(e.sweep(), 1);
        assert_eq!(e.key_count(), 1);
    }

    #[test]
    fn delete_does_not_wake_waiters() {
        let e = engine();
        e.push_tail("k", "x").unwrap();
        e.pop_head("k", None).unwrap();
        let PopStart::Parked(w) = e.begin_pop("k", Some(Duration::from_millis(30))).unwrap() else { panic!() };
        e.key_delete("k").unwrap();
        let t0 = Instant::now();
        assert_eq!(w.wait(), Err(StoreError::Timeout));
        assert!(t0.elapsed() >= Duration::from_millis(20));
    }

    #[test]
    fn scan_by_prefix() {
        let e = engine();
        e.counter_add("rsrc/a/refs", 1).unwrap();
        e.push_tail("rsrc/a/data", "x").unwrap();
        e.counter_add("job/1", 1).unwrap();
        assert_eq!(e.key_scan("rsrc/").unwrap(), vec!["rsrc/a/data".to_string(), "rsrc/a/refs".to_string()]);
    }
}
