//! Process and Pool over a function backend. A Process is one
//! invocation; a Pool keeps `size` long-lived workers draining one job
//! queue in the store.

use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use bytes::Bytes;
use uuid::Uuid;

use crate::faas::{Dispatch, InvocationPayload, PoolMessage};
use crate::orchestrator::{JobManifest, Orchestrator, OrchestratorError, TaskSpec};
use crate::store::{StoreError, StoreExt};
use crate::time::Timestamp;
use crate::wire::{decode_fields, encode_fields};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PoolError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("pool is closed")]
    PoolClosed,
    #[error("timed out")]
    Timeout,
    #[error("task {index} failed: {message}")]
    TaskFailed { index: u32, message: String, backtrace: Option<String> },
    #[error(transparent)]
    Orchestrator(OrchestratorError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl From<OrchestratorError> for PoolError {
    fn from(e: OrchestratorError) -> Self {
        match e {
            OrchestratorError::TaskFailed { index, message, backtrace } => PoolError::TaskFailed { index, message, backtrace },
            OrchestratorError::JoinTimeout { .. } => PoolError::Timeout,
            other => PoolError::Orchestrator(other),
        }
    }
}

pub type PoolResult<T> = Result<T, PoolError>;

/// One function running in its own invocation.
pub struct Process {
    orch: Orchestrator,
    manifest: Arc<JobManifest>,
}

impl Process {
    pub fn start(orch: &Orchestrator, function_name: &str, args: impl Into<Bytes>) -> PoolResult<Self> {
        let manifest = orch.submit_job(vec![TaskSpec::new(function_name, args)])?;
        Ok(Process { orch: orch.clone(), manifest })
    }

    /// Wait for the result; `None` waits forever.
    pub fn join(&self, timeout: Option<Duration>) -> PoolResult<Bytes> {
        Ok(self.orch.join_within(&self.manifest, timeout)?.remove(0))
    }

    pub fn manifest(&self) -> &Arc<JobManifest> {
        &self.manifest
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolPhase {
    Open,
    Closed,
    Terminated,
}

/// Result of a task submitted with [`Pool::apply_async`] or
/// [`Pool::map_async`].
pub struct AsyncResult {
    orch: Orchestrator,
    manifest: Arc<JobManifest>,
    unchunk: bool,
}

impl AsyncResult {
    /// All results in submission order; the first failure wins, after the
    /// rest have been drained.
    pub fn get_all(&self, timeout: Option<Duration>) -> PoolResult<Vec<Bytes>> {
        let results = match timeout {
            Some(_) => self.orch.join_within(&self.manifest, timeout).map(|v| v.into_iter().map(Ok).collect()),
            None => self.orch.join_all(&self.manifest),
        }?;
        let mut out = Vec::with_capacity(results.len());
        for r in results {
            let b = r?;
            if self.unchunk {
                out.extend(decode_fields(&b).map_err(|e| PoolError::InvalidArgument(format!("chunk result: {e}")))?);
            } else {
                out.push(b);
            }
        }
        Ok(out)
    }

    /// Single result of an `apply_async`.
    pub fn get(&self, timeout: Option<Duration>) -> PoolResult<Bytes> {
        let mut all = self.get_all(timeout)?;
        if all.len() != 1 {
            return Err(PoolError::InvalidArgument(format!("expected one result, job has {}", all.len())));
        }
        Ok(all.remove(0))
    }

    /// Whether every result has arrived, without consuming anything.
    pub fn ready(&self) -> PoolResult<bool> {
        for t in self.manifest.tasks() {
            if !self.orch.store().key_exists(&t.result_key)? {
                return Ok(self.manifest.state() >= crate::orchestrator::JobState::Done);
            }
        }
        Ok(true)
    }

    pub fn manifest(&self) -> &Arc<JobManifest> {
        &self.manifest
    }
}

struct PoolInner {
    phase: PoolPhase,
    outstanding: Vec<Arc<JobManifest>>,
    sentinels_consumed: usize,
}

/// Fixed set of warm workers sharing the queue `pool/{id}/jobs`.
pub struct Pool {
    orch: Orchestrator,
    pool_id: Uuid,
    size: usize,
    queue_key: String,
    exits_key: String,
    workers: Vec<Dispatch>,
    inner: Mutex<PoolInner>,
    terminate_timeout: Duration,
}

impl Pool {
    /// Start `size` workers, each running `initializer` once.
    pub fn create(orch: &Orchestrator, size: usize, initializer: Option<&str>) -> PoolResult<Self> {
        if size == 0 {
            return Err(PoolError::InvalidArgument("pool size must be at least 1".into()));
        }
        let pool_id = Uuid::new_v4();
        let queue_key = format!("pool/{pool_id}/jobs");
        let exits_key = format!("pool/{pool_id}/exits");
        let payloads = (0..size as u32)
            .map(|worker_index| InvocationPayload::PoolWorker {
                pool_id,
                queue_key: queue_key.clone(),
                exits_key: exits_key.clone(),
                initializer: initializer.map(str::to_owned),
                worker_index,
            })
            .collect();
        let workers = orch.backend().invoke_batch(payloads).map_err(OrchestratorError::from)?;
        Ok(Pool {
            orch: orch.clone(),
            pool_id,
            size,
            queue_key,
            exits_key,
            workers,
            inner: Mutex::new(PoolInner { phase: PoolPhase::Open, outstanding: Vec::new(), sentinels_consumed: 0 }),
            terminate_timeout: Duration::from_secs(60),
        })
    }

    pub fn id(&self) -> Uuid {
        self.pool_id
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn queue_key(&self) -> &str {
        &self.queue_key
    }

    /// Worker invocations started for this pool.
    pub fn invocations(&self) -> usize {
        self.workers.len()
    }

    pub fn phase(&self) -> PoolPhase {
        self.inner.lock().unwrap().phase
    }

    /// Exit acknowledgements received during termination.
    pub fn sentinels_consumed(&self) -> usize {
        self.inner.lock().unwrap().sentinels_consumed
    }

    /// Push every task of one job onto the queue with a single command.
    fn submit(&self, tasks: Vec<TaskSpec>, unchunk: bool) -> PoolResult<AsyncResult> {
        let manifest = Arc::new(self.orch.prepare(tasks)?);
        let mut inner = self.inner.lock().unwrap();
        if inner.phase != PoolPhase::Open {
            return Err(PoolError::PoolClosed);
        }
        if !manifest.is_empty() {
            let msgs = manifest.tasks().iter().map(|t| Bytes::from(PoolMessage::Task(t.clone()).encode())).collect();
            self.orch.store().push_tail_many(&self.queue_key, msgs)?;
        }
        let now = Timestamp::now();
        manifest.mark_dispatched(&vec![now; manifest.len()]);
        inner.outstanding.retain(|m| m.state() < crate::orchestrator::JobState::Done);
        inner.outstanding.push(manifest.clone());
        Ok(AsyncResult { orch: self.orch.clone(), manifest, unchunk })
    }

    pub fn apply_async(&self, function_name: &str, args: impl Into<Bytes>) -> PoolResult<AsyncResult> {
        self.submit(vec![TaskSpec::new(function_name, args)], false)
    }

    pub fn map_async<B: Into<Bytes>>(&self, function_name: &str, items: impl IntoIterator<Item = B>) -> PoolResult<AsyncResult> {
        self.submit(items.into_iter().map(|a| TaskSpec::new(function_name, a)).collect(), false)
    }

    /// Results in item order.
    pub fn map<B: Into<Bytes>>(&self, function_name: &str, items: impl IntoIterator<Item = B>) -> PoolResult<Vec<Bytes>> {
        self.map_async(function_name, items)?.get_all(None)
    }

    /// Like [`map`](Self::map) with `chunksize` items per task.
    pub fn map_chunked<B: AsRef<[u8]>>(&self, function_name: &str, items: &[B], chunksize: usize) -> PoolResult<Vec<Bytes>> {
        if chunksize == 0 {
            return Err(PoolError::InvalidArgument("chunksize must be at least 1".into()));
        }
        let tasks = items.chunks(chunksize).map(|c| TaskSpec::chunk(function_name, c)).collect();
        self.submit(tasks, true)?.get_all(None)
    }

    /// Each item is an argument tuple, delivered as a field list.
    pub fn starmap<I, B>(&self, function_name: &str, items: impl IntoIterator<Item = I>) -> PoolResult<Vec<Bytes>>
    where
        I: IntoIterator<Item = B>,
        B: AsRef<[u8]>,
    {
        self.map(function_name, items.into_iter().map(|args| Bytes::from(encode_fields(args))))
    }

    /// Stop accepting work.
    pub fn close(&self) {
        let mut inner = self.inner.lock().unwrap();
        if inner.phase == PoolPhase::Open {
            inner.phase = PoolPhase::Closed;
        }
    }

    /// Close, wait for submitted work to finish, then terminate.
    pub fn close_join(&self) -> PoolResult<()> {
        self.close();
        let outstanding = std::mem::take(&mut self.inner.lock().unwrap().outstanding);
        for m in outstanding {
            // Failures belong to whoever holds the AsyncResult.
            let _ = self.orch.join_all(&m);
        }
        self.terminate()
    }

    /// Drop pending tasks, send one sentinel per worker and wait for every
    /// worker to acknowledge its exit. Repeated calls do nothing.
    pub fn terminate(&self) -> PoolResult<()> {
        let mut inner = self.inner.lock().unwrap();
        if inner.phase == PoolPhase::Terminated {
            return Ok(());
        }
        inner.phase = PoolPhase::Terminated;
        let store = self.orch.store();
        store.key_delete(&self.queue_key)?;
        let sentinel = Bytes::from(PoolMessage::Sentinel { pool_id: self.pool_id }.encode());
        store.push_tail_many(&self.queue_key, vec![sentinel; self.size])?;
        let deadline = Instant::now() + self.terminate_timeout;
        let mut acks = 0;
        while acks < self.size {
            let left = deadline.saturating_duration_since(Instant::now());
            match store.pop_head(&self.exits_key, Some(left)) {
                Ok(_) => acks += 1,
                Err(StoreError::Timeout) => break,
                Err(e) => {
                    inner.sentinels_consumed = acks;
                    return Err(e.into());
                }
            }
        }
        inner.sentinels_consumed = acks;
        store.key_delete(&self.queue_key)?;
        store.key_delete(&self.exits_key)?;
        if acks < self.size {
            return Err(PoolError::Timeout);
        }
        Ok(())
    }
}

impl Drop for Pool {
    fn drop(&mut self) {
        if let Err(e) = self.terminate() {
            log::warn!("terminating pool {} on drop: {e}", self.pool_id);
        }
    }
}
