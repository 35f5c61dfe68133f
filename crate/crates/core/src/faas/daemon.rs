use std::collections::HashSet;
use std::io::Write;
use std::net::{SocketAddr, TcpListener};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use bytes::Bytes;
use log::{info, warn};
use uuid::Uuid;

use super::worker::{run_invocation, WorkerEnv};
use super::{check_functions, Backend, Dispatch, FaasError, InvocationPayload, InvocationRecord, Registry, Temperature};
use crate::objectfs::SharedBlobStore;
use crate::store::{SharedStore, StoreError, StoreExt};
use crate::time::Timestamp;
use crate::wire::{Decoder, Encoder};

/// Hash of live daemons: id → status address.
pub const DAEMONS_KEY: &str = "faas/daemons";

fn invocations_key(id: &str) -> String {
    format!("faas/daemon/{id}/invocations")
}

fn records_key(id: &str) -> String {
    format!("faas/daemon/{id}/records")
}

fn executions_key(id: &str) -> String {
    format!("faas/daemon/{id}/executions")
}

fn encode_envelope(invocation_id: Uuid, dispatch_time: Timestamp, payload: &InvocationPayload) -> Vec<u8> {
    let mut e = Encoder::new();
    e.uuid(&invocation_id).u64(dispatch_time.as_micros()).field(&payload.encode());
    e.finish()
}

fn decode_envelope(bytes: &[u8]) -> Result<(Uuid, Timestamp, InvocationPayload), FaasError> {
    let mut d = Decoder::new(bytes);
    let id = d.uuid()?;
    let t = Timestamp(d.u64()?);
    let p = InvocationPayload::decode(d.field()?)?;
    d.end()?;
    Ok((id, t, p))
}

#[derive(Debug, Clone)]
pub struct DaemonConfig {
    pub id: String,
    /// Maximum invocations running at once.
    pub concurrency: usize,
    /// Address for the plain-text status listener.
    pub bind: Option<String>,
}

impl Default for DaemonConfig {
    fn default() -> Self {
        DaemonConfig { id: Uuid::new_v4().simple().to_string(), concurrency: 4, bind: None }
    }
}

struct DaemonShared {
    id: String,
    store: SharedStore,
    blobs: SharedBlobStore,
    registry: Arc<Registry>,
    concurrency: usize,
    stop: AtomicBool,
    active: Mutex<usize>,
    slot_free: Condvar,
    completed: AtomicU64,
    warm_slots: AtomicUsize,
}

/// A worker process that takes invocations from its list in the store and
/// runs them with at most `concurrency` in flight.
pub struct WorkerDaemon {
    shared: Arc<DaemonShared>,
    status_addr: Option<SocketAddr>,
    threads: Vec<JoinHandle<()>>,
}

const POLL: Duration = Duration::from_millis(200);

impl WorkerDaemon {
    pub fn start(
        store: SharedStore,
        blobs: SharedBlobStore,
        registry: Arc<Registry>,
        config: DaemonConfig,
    ) -> Result<Self, FaasError> {
        if config.concurrency == 0 {
            return Err(FaasError::Config("concurrency must be at least 1".into()));
        }
        let shared = Arc::new(DaemonShared {
            id: config.id.clone(),
            store,
            blobs,
            registry,
            concurrency: config.concurrency,
            stop: AtomicBool::new(false),
            active: Mutex::new(0),
            slot_free: Condvar::new(),
            completed: AtomicU64::new(0),
            warm_slots: AtomicUsize::new(0),
        });
        let mut threads = Vec::new();
        let mut status_addr = None;
        if let Some(bind) = &config.bind {
            let listener =
                TcpListener::bind(bind).map_err(|e| FaasError::BackendUnavailable(format!("bind {bind}: {e}")))?;
            status_addr = listener.local_addr().ok();
            listener.set_nonblocking(true).map_err(|e| FaasError::BackendUnavailable(e.to_string()))?;
            let s = shared.clone();
            threads.push(thread::spawn(move || status_loop(listener, s)));
        }
        let addr = status_addr.map(|a| a.to_string()).unwrap_or_else(|| "-".into());
        shared.store.hash_set(DAEMONS_KEY, &shared.id, addr)?;
        let s = shared.clone();
        threads.push(thread::spawn(move || intake_loop(s)));
        info!("worker daemon {} running with concurrency {}", config.id, config.concurrency);
        Ok(WorkerDaemon { shared, status_addr, threads })
    }

    pub fn id(&self) -> &str {
        &self.shared.id
    }

    pub fn status_addr(&self) -> Option<SocketAddr> {
        self.status_addr
    }

    pub fn active(&self) -> usize {
        *self.shared.active.lock().unwrap()
    }

    pub fn completed(&self) -> u64 {
        self.shared.completed.load(Ordering::SeqCst)
    }

    /// Stop taking invocations and deregister. Running invocations finish
    /// on their own threads.
    pub fn stop(&mut self) {
        if self.shared.stop.swap(true, Ordering::SeqCst) {
            return;
        }
        if let Err(e) = self.shared.store.hash_del(DAEMONS_KEY, &self.shared.id) {
            warn!("deregistering daemon {}: {e}", self.shared.id);
        }
        self.shared.slot_free.notify_all();
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }

    /// Run until the process is killed.
    pub fn wait(mut self) {
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for WorkerDaemon {
    fn drop(&mut self) {
        self.stop();
    }
}

fn status_loop(listener: TcpListener, shared: Arc<DaemonShared>) {
    while !shared.stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((mut s, _)) => {
                let line = format!(
                    "id={} concurrency={} active={} completed={}\n",
                    shared.id,
                    shared.concurrency,
                    *shared.active.lock().unwrap(),
                    shared.completed.load(Ordering::SeqCst)
                );
                let _ = s.write_all(line.as_bytes());
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(50)),
            Err(e) => {
                warn!("status listener: {e}");
                thread::sleep(Duration::from_millis(50));
            }
        }
    }
}

fn intake_loop(shared: Arc<DaemonShared>) {
    let queue = invocations_key(&shared.id);
    while !shared.stop.load(Ordering::SeqCst) {
        {
            let active = shared.active.lock().unwrap();
            let active = shared
                .slot_free
                .wait_while(active, |n| *n >= shared.concurrency && !shared.stop.load(Ordering::SeqCst))
                .unwrap();
            drop(active);
        }
        if shared.stop.load(Ordering::SeqCst) {
            break;
        }
        let raw = match shared.store.pop_head(&queue, Some(POLL)) {
            Ok(r) => r,
            Err(StoreError::Timeout) => continue,
            Err(e) => {
                warn!("daemon {} cannot read invocations: {e}", shared.id);
                thread::sleep(POLL);
                continue;
            }
        };
        let (invocation_id, dispatch_time, payload) = match decode_envelope(&raw) {
            Ok(v) => v,
            Err(e) => {
                warn!("daemon {} dropped an undecodable invocation: {e}", shared.id);
                continue;
            }
        };
        *shared.active.lock().unwrap() += 1;
        let s = shared.clone();
        thread::spawn(move || run_one(s, invocation_id, dispatch_time, payload));
    }
}

fn run_one(shared: Arc<DaemonShared>, invocation_id: Uuid, dispatch_time: Timestamp, payload: InvocationPayload) {
    // A slot is warm once some earlier invocation has released it.
    let temperature = match shared.warm_slots.fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1)) {
        Ok(_) => Temperature::Warm,
        Err(_) => Temperature::Cold,
    };
    let env = WorkerEnv::new(shared.store.clone(), shared.blobs.clone(), shared.registry.clone(), shared.id.clone());
    let start_time = Timestamp::now();
    run_invocation(&env, payload, start_time);
    let end_time = Timestamp::now();
    let record = InvocationRecord { invocation_id, dispatch_time, start_time, end_time, temperature, worker_id: shared.id.clone() };
    let executed = env.executions.load(Ordering::SeqCst) as i64;
    if let Err(e) = shared.store.counter_add(&executions_key(&shared.id), executed) {
        warn!("daemon {} execution tally: {e}", shared.id);
    }
    if let Err(e) = shared.store.push_tail(&records_key(&shared.id), Bytes::from(record.encode())) {
        warn!("daemon {} invocation record: {e}", shared.id);
    }
    shared.completed.fetch_add(1, Ordering::SeqCst);
    shared.warm_slots.fetch_add(1, Ordering::SeqCst);
    *shared.active.lock().unwrap() -= 1;
    shared.slot_free.notify_all();
}

/// Backend that hands invocations to registered worker daemons, round
/// robin.
pub struct DaemonBackend {
    store: SharedStore,
    registry: Arc<Registry>,
    dispatched: Mutex<HashSet<Uuid>>,
    next: AtomicUsize,
}

impl DaemonBackend {
    pub fn new(store: SharedStore, registry: Arc<Registry>) -> Self {
        DaemonBackend { store, registry, dispatched: Mutex::new(HashSet::new()), next: AtomicUsize::new(0) }
    }

    pub fn daemons(&self) -> Result<Vec<String>, FaasError> {
        Ok(self.store.hash_get_all(DAEMONS_KEY)?.into_keys().collect())
    }
}

impl Backend for DaemonBackend {
    fn name(&self) -> &str {
        "daemons"
    }

    fn registry(&self) -> &Arc<Registry> {
        &self.registry
    }

    fn invoke_batch(&self, payloads: Vec<InvocationPayload>) -> Result<Vec<Dispatch>, FaasError> {
        check_functions(&self.registry, &payloads)?;
        let daemons = self.daemons()?;
        if daemons.is_empty() {
            return Err(FaasError::BackendUnavailable("no worker daemon registered".into()));
        }
        let mut out = Vec::with_capacity(payloads.len());
        for payload in payloads {
            let id = &daemons[self.next.fetch_add(1, Ordering::SeqCst) % daemons.len()];
            let invocation_id = Uuid::new_v4();
            let dispatch_time = Timestamp::now();
            self.dispatched.lock().unwrap().insert(invocation_id);
            self.store.push_tail(&invocations_key(id), Bytes::from(encode_envelope(invocation_id, dispatch_time, &payload)))?;
            out.push(Dispatch { invocation_id, dispatch_time });
        }
        Ok(out)
    }

    fn records(&self) -> Vec<InvocationRecord> {
        let dispatched = self.dispatched.lock().unwrap().clone();
        let mut out = Vec::new();
        for id in self.daemons().unwrap_or_default() {
            for raw in self.store.list_range(&records_key(&id), 0, -1).unwrap_or_default() {
                match InvocationRecord::decode(&raw) {
                    Ok(r) if dispatched.contains(&r.invocation_id) => out.push(r),
                    Ok(_) => {}
                    Err(e) => warn!("bad invocation record from daemon {id}: {e}"),
                }
            }
        }
        out.sort_by_key(|r| r.end_time);
        out
    }

    fn invocation_count(&self) -> usize {
        self.dispatched.lock().unwrap().len()
    }

    fn executions(&self) -> u64 {
        self.daemons()
            .unwrap_or_default()
            .iter()
            .map(|id| self.store.counter_add(&executions_key(id), 0).unwrap_or(0).max(0) as u64)
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use std::io::Read;
    use std::net::TcpStream;
    use std::time::Instant;

    use super::*;
    use crate::faas::{encode_u64, result_key, TaskArgs, TaskDescriptor};
    use crate::objectfs::StoreBlobStore;
    use crate::store::Engine;

    fn start(store: &SharedStore, concurrency: usize, bind: Option<&str>) -> WorkerDaemon {
        let blobs = Arc::new(StoreBlobStore::new(store.clone(), "faasproc"));
        let config = DaemonConfig { concurrency, bind: bind.map(str::to_owned), ..Default::default() };
        WorkerDaemon::start(store.clone(), blobs, Arc::new(Registry::builtin()), config).unwrap()
    }

    fn task(job: Uuid, i: u32, f: &str, args: Vec<u8>) -> InvocationPayload {
        InvocationPayload::Task(TaskDescriptor::new(job, i, f, TaskArgs::Inline(Bytes::from(args))))
    }

    fn wait_results(store: &SharedStore, job: Uuid, n: u32) {
        let deadline = Instant::now() + Duration::from_secs(20);
        while (0..n).any(|i| !store.key_exists(&result_key(job, i)).unwrap()) {
            assert!(Instant::now() < deadline, "results did not arrive");
            thread::sleep(Duration::from_millis(10));
        }
    }

    #[test]
    fn concurrency_cap_holds() {
        let store: SharedStore = Arc::new(Engine::new());
        let _d = start(&store, 4, None);
        let backend = DaemonBackend::new(store.clone(), Arc::new(Registry::builtin()));
        let job = Uuid::new_v4();
        backend.invoke_batch((0..8).map(|i| task(job, i, "probe", encode_u64(50))).collect()).unwrap();
        wait_results(&store, job, 8);
        let samples = store.list_range("probe/samples", 0, -1).unwrap();
        assert_eq!(samples.len(), 8);
        let max = samples.iter().map(|b| i64::from_be_bytes(b[..].try_into().unwrap())).max().unwrap();
        assert!(max <= 4, "{max}");
    }

    #[test]
    fn two_daemons_execute_each_task_once() {
        let store: SharedStore = Arc::new(Engine::new());
        let _a = start(&store, 2, None);
        let _b = start(&store, 2, None);
        let backend = DaemonBackend::new(store.clone(), Arc::new(Registry::builtin()));
        let job = Uuid::new_v4();
        backend.invoke_batch((0..10).map(|i| task(job, i, "tally", format!("t{i}").into_bytes())).collect()).unwrap();
        wait_results(&store, job, 10);
        for i in 0..10 {
            assert_eq!(store.counter_add(&format!("tally/t{i}"), 0).unwrap(), 1);
        }
        let deadline = Instant::now() + Duration::from_secs(5);
        while backend.records().len() < 10 {
            assert!(Instant::now() < deadline);
            thread::sleep(Duration::from_millis(10));
        }
        assert_eq!(backend.executions(), 10);
    }

    #[test]
    fn idle_daemon_consumes_nothing_and_reports_status() {
        let store: SharedStore = Arc::new(Engine::new());
        let mut d = start(&store, 1, Some("127.0.0.1:0"));
        store.push_tail("unrelated", "x").unwrap();
        thread::sleep(Duration::from_millis(50));
        assert_eq!(d.completed(), 0);
        assert_eq!(store.list_len("unrelated").unwrap(), 1);
        let mut line = String::new();
        TcpStream::connect(d.status_addr().unwrap()).unwrap().read_to_string(&mut line).unwrap();
        assert!(line.contains("active=0"), "{line}");
        d.stop();
        assert!(store.hash_get_all(DAEMONS_KEY).unwrap().is_empty());
        let backend = DaemonBackend::new(store.clone(), Arc::new(Registry::builtin()));
        assert!(matches!(backend.invoke(task(Uuid::new_v4(), 0, "echo", vec![])), Err(FaasError::BackendUnavailable(_))));
    }
}
