use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use uuid::Uuid;

use super::latency::LatencySampler;
use super::worker::{run_invocation, WorkerEnv};
use super::{check_functions, Backend, Dispatch, FaasError, InvocationPayload, InvocationRecord, LatencyModel, Registry, Temperature};
use crate::objectfs::SharedBlobStore;
use crate::store::SharedStore;
use crate::time::Timestamp;

/// In-process function backend. Each invocation runs on its own thread
/// after a sampled startup delay; worker slots stay warm until evicted.
#[derive(Clone)]
pub struct SimBackend {
    inner: Arc<SimInner>,
}

struct SimInner {
    model: LatencyModel,
    registry: Arc<Registry>,
    store: SharedStore,
    blobs: SharedBlobStore,
    state: Mutex<SimState>,
    records: Mutex<Vec<InvocationRecord>>,
    executions: Arc<AtomicU64>,
    invocations: AtomicUsize,
    running: Mutex<usize>,
    idle: Condvar,
}

struct SimState {
    sampler: LatencySampler,
    idle_slots: Vec<Slot>,
    next_slot: u64,
    planned: Vec<(Temperature, Duration)>,
}

struct Slot {
    id: u64,
    last_used: Instant,
}

impl SimBackend {
    pub fn new(model: LatencyModel, registry: Arc<Registry>, store: SharedStore, blobs: SharedBlobStore) -> Self {
        let sampler = model.sampler();
        SimBackend {
            inner: Arc::new(SimInner {
                model,
                registry,
                store,
                blobs,
                state: Mutex::new(SimState { sampler, idle_slots: Vec::new(), next_slot: 0, planned: Vec::new() }),
                records: Mutex::new(Vec::new()),
                executions: Arc::new(AtomicU64::new(0)),
                invocations: AtomicUsize::new(0),
                running: Mutex::new(0),
                idle: Condvar::new(),
            }),
        }
    }

    pub fn model(&self) -> &LatencyModel {
        &self.inner.model
    }

    /// Make `n` idle warm slots available.
    pub fn prewarm(&self, n: usize) {
        let mut st = self.inner.state.lock().unwrap();
        let now = Instant::now();
        for _ in 0..n {
            let id = st.next_slot;
            st.next_slot += 1;
            st.idle_slots.push(Slot { id, last_used: now });
        }
    }

    /// Startup delays chosen so far, in dispatch order.
    pub fn planned_latencies(&self) -> Vec<(Temperature, Duration)> {
        self.inner.state.lock().unwrap().planned.clone()
    }

    /// Block until no invocation is running, or `timeout` passes.
    pub fn wait_idle(&self, timeout: Duration) -> bool {
        let running = self.inner.running.lock().unwrap();
        let (guard, res) = self.inner.idle.wait_timeout_while(running, timeout, |n| *n > 0).unwrap();
        drop(guard);
        !res.timed_out()
    }

    fn take_slot(st: &mut SimState, eviction: Duration) -> (u64, Temperature) {
        // Most recently used first, so a burst reuses the same slots.
        while let Some(slot) = st.idle_slots.pop() {
            if slot.last_used.elapsed() < eviction {
                return (slot.id, Temperature::Warm);
            }
        }
        let id = st.next_slot;
        st.next_slot += 1;
        (id, Temperature::Cold)
    }
}

impl Backend for SimBackend {
    fn name(&self) -> &str {
        "sim"
    }

    fn registry(&self) -> &Arc<Registry> {
        &self.inner.registry
    }

    fn invoke_batch(&self, payloads: Vec<InvocationPayload>) -> Result<Vec<Dispatch>, FaasError> {
        check_functions(&self.inner.registry, &payloads)?;
        let mut out = Vec::with_capacity(payloads.len());
        for (i, payload) in payloads.into_iter().enumerate() {
            if i > 0 && !self.inner.model.dispatch_cost.is_zero() {
                thread::sleep(self.inner.model.dispatch_cost);
            }
            let dispatch_time = Timestamp::now();
            let invocation_id = Uuid::new_v4();
            let (slot, temperature, startup) = {
                let mut st = self.inner.state.lock().unwrap();
                let (slot, t) = Self::take_slot(&mut st, self.inner.model.eviction);
                let startup = st.sampler.sample(t);
                st.planned.push((t, startup));
                (slot, t, startup)
            };
            *self.inner.running.lock().unwrap() += 1;
            self.inner.invocations.fetch_add(1, Ordering::SeqCst);
            let inner = self.inner.clone();
            let spawned = thread::Builder::new().name(format!("sim-slot-{slot}")).spawn(move || {
                let target = dispatch_time + startup;
                let now = Timestamp::now();
                if target > now {
                    thread::sleep(target.since(now));
                }
                let start_time = Timestamp::now();
                let env = WorkerEnv {
                    setup_delay: inner.model.setup(temperature),
                    result_delay: inner.model.result_delay,
                    max_execution: inner.model.max_execution,
                    executions: inner.executions.clone(),
                    ..WorkerEnv::new(inner.store.clone(), inner.blobs.clone(), inner.registry.clone(), format!("sim/{slot}"))
                };
                run_invocation(&env, payload, start_time);
                let end_time = Timestamp::now();
                inner.state.lock().unwrap().idle_slots.push(Slot { id: slot, last_used: Instant::now() });
                inner.records.lock().unwrap().push(InvocationRecord {
                    invocation_id,
                    dispatch_time,
                    start_time,
                    end_time,
                    temperature,
                    worker_id: env.worker_id,
                });
                let mut running = inner.running.lock().unwrap();
                *running -= 1;
                if *running == 0 {
                    inner.idle.notify_all();
                }
            });
            if let Err(e) = spawned {
                *self.inner.running.lock().unwrap() -= 1;
                return Err(FaasError::BackendUnavailable(format!("cannot start worker thread: {e}")));
            }
            out.push(Dispatch { invocation_id, dispatch_time });
        }
        Ok(out)
    }

    fn records(&self) -> Vec<InvocationRecord> {
        self.inner.records.lock().unwrap().clone()
    }

    fn invocation_count(&self) -> usize {
        self.inner.invocations.load(Ordering::SeqCst)
    }

    fn executions(&self) -> u64 {
        self.inner.executions.load(Ordering::SeqCst)
    }
}

#[cfg(test)]
mod tests {
    use bytes::Bytes;

    use super::*;
    use crate::faas::{TaskArgs, TaskDescriptor};
    use crate::objectfs::MemoryBlobStore;
    use crate::store::Engine;

    fn backend(model: LatencyModel) -> SimBackend {
        SimBackend::new(model, Arc::new(Registry::builtin()), Arc::new(Engine::new()), Arc::new(MemoryBlobStore::new("s")))
    }

    fn echo(i: u32) -> InvocationPayload {
        InvocationPayload::Task(TaskDescriptor::new(Uuid::new_v4(), i, "echo", TaskArgs::Inline(Bytes::new())))
    }

    #[test]
    fn warm_invoke_equals_median() {
        let b = backend(LatencyModel { warm_median: Duration::from_millis(60), ..LatencyModel::zero() });
        b.prewarm(1);
        b.invoke(echo(0)).unwrap();
        assert!(b.wait_idle(Duration::from_secs(5)));
        let r = &b.records()[0];
        assert_eq!(r.temperature, Temperature::Warm);
        let invoke = r.start_time.since(r.dispatch_time);
        assert!(invoke >= Duration::from_millis(60) && invoke < Duration::from_millis(90), "{invoke:?}");
    }

    #[test]
    fn zero_latency_starts_at_dispatch() {
        let b = backend(LatencyModel::zero());
        b.invoke(echo(0)).unwrap();
        assert!(b.wait_idle(Duration::from_secs(5)));
        let r = &b.records()[0];
        assert_eq!(r.temperature, Temperature::Cold);
        assert!(r.start_time.since(r.dispatch_time) < Duration::from_millis(20));
    }

    #[test]
    fn dispatch_is_sequential() {
        let b = backend(LatencyModel { dispatch_cost: Duration::from_millis(2), ..LatencyModel::zero() });
        let d = b.invoke_batch((0..100).map(echo).collect()).unwrap();
        let span = d.last().unwrap().dispatch_time.since(d[0].dispatch_time);
        assert!(span >= Duration::from_millis(198), "{span:?}");
        assert!(d.windows(2).all(|w| w[0].dispatch_time <= w[1].dispatch_time));
        assert!(b.wait_idle(Duration::from_secs(10)));
        assert_eq!(b.executions(), 100);
    }

    #[test]
    fn unknown_function_fails_before_dispatch() {
        let b = backend(LatencyModel::zero());
        let bad = InvocationPayload::Task(TaskDescriptor::new(Uuid::new_v4(), 1, "nope", TaskArgs::Inline(Bytes::new())));
        assert_eq!(b.invoke_batch(vec![echo(0), bad]), Err(FaasError::UnknownFunction("nope".into())));
        assert_eq!(b.invocation_count(), 0);
    }

    #[test]
    fn slots_warm_then_evict() {
        let b = backend(LatencyModel { eviction: Duration::from_millis(100), ..LatencyModel::zero() });
        b.invoke(echo(0)).unwrap();
        assert!(b.wait_idle(Duration::from_secs(5)));
        b.invoke(echo(1)).unwrap();
        assert!(b.wait_idle(Duration::from_secs(5)));
        thread::sleep(Duration::from_millis(150));
        b.invoke(echo(2)).unwrap();
        assert!(b.wait_idle(Duration::from_secs(5)));
        let temps: Vec<_> = b.planned_latencies().into_iter().map(|(t, _)| t).collect();
        assert_eq!(temps, vec![Temperature::Cold, Temperature::Warm, Temperature::Cold]);
    }

    #[test]
    fn same_seed_same_plan() {
        let model = LatencyModel { dispersion: 0.3, seed: 11, cold_median: Duration::from_millis(2), ..LatencyModel::zero() };
        let plans: Vec<_> = (0..2)
            .map(|_| {
                let b = backend(model.clone());
                b.invoke_batch((0..8).map(echo).collect()).unwrap();
                assert!(b.wait_idle(Duration::from_secs(5)));
                b.planned_latencies()
            })
            .collect();
        assert_eq!(plans[0], plans[1]);
    }
}
