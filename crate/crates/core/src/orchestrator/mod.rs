//! Main-side job lifecycle: build and upload task descriptors, invoke,
//! then join by polling result keys.

mod report;

pub use report::{PhaseMeans, PhaseReport, PhaseTrace, PHASE_CSV_HEADER};

use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use bytes::Bytes;
use uuid::Uuid;

use crate::faas::{FaasError, InvocationPayload, ResultRecord, SharedBackend, TaskArgs, TaskDescriptor, TaskOutcome, TaskTiming};
use crate::ipc::Ipc;
use crate::objectfs::{FsError, SharedBlobStore};
use crate::store::{Command, Reply, SharedStore, StoreError};
use crate::time::Timestamp;
use crate::wire::{encode_fields, DecodeError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OrchestratorError {
    #[error("function {0} is not registered")]
    UnknownFunction(String),
    #[error("task {index} failed: {message}")]
    TaskFailed { index: u32, message: String, backtrace: Option<String> },
    #[error("join timed out with {missing} results outstanding")]
    JoinTimeout { missing: usize },
    #[error("job has not been dispatched")]
    NotDispatched,
    #[error(transparent)]
    Backend(FaasError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Fs(#[from] FsError),
    #[error("undecodable result record: {0}")]
    Decode(#[from] DecodeError),
}

impl From<FaasError> for OrchestratorError {
    fn from(e: FaasError) -> Self {
        match e {
            FaasError::UnknownFunction(f) => OrchestratorError::UnknownFunction(f),
            other => OrchestratorError::Backend(other),
        }
    }
}

pub type OrchResult<T> = Result<T, OrchestratorError>;

#[derive(Debug, Clone)]
pub struct OrchestratorConfig {
    pub poll_interval: Duration,
    /// Arguments larger than this go to the blob layer.
    pub inline_threshold: usize,
    /// Overall deadline for one join.
    pub join_timeout: Option<Duration>,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        OrchestratorConfig { poll_interval: Duration::from_millis(50), inline_threshold: 1024, join_timeout: None }
    }
}

/// One task to submit.
#[derive(Debug, Clone)]
pub struct TaskSpec {
    pub function_name: String,
    pub args: Bytes,
    pub chunked: bool,
}

impl TaskSpec {
    pub fn new(function_name: impl Into<String>, args: impl Into<Bytes>) -> Self {
        TaskSpec { function_name: function_name.into(), args: args.into(), chunked: false }
    }

    /// One task running `function_name` over each of `items`.
    pub fn chunk<B: AsRef<[u8]>>(function_name: impl Into<String>, items: &[B]) -> Self {
        TaskSpec { function_name: function_name.into(), args: Bytes::from(encode_fields(items)), chunked: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum JobState {
    Pending,
    Running,
    Done,
    Failed,
}

/// Per-task bookkeeping collected along the lifecycle.
#[derive(Debug, Clone, Default)]
pub(crate) struct TaskProgress {
    serialize: Duration,
    upload: Duration,
    dispatch: Option<Timestamp>,
    timing: Option<TaskTiming>,
    detected: Option<Timestamp>,
    outcome: Option<Result<Bytes, (String, Option<String>)>>,
}

struct JobInner {
    state: JobState,
    progress: Vec<TaskProgress>,
    failure: Option<OrchestratorError>,
}

/// A submitted job.
pub struct JobManifest {
    job_id: Uuid,
    backend: String,
    created_at: Timestamp,
    tasks: Vec<TaskDescriptor>,
    inner: Mutex<JobInner>,
    joining: Mutex<()>,
}

impl std::fmt::Debug for JobManifest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("JobManifest").field("job_id", &self.job_id).field("tasks", &self.tasks.len()).finish()
    }
}

impl JobManifest {
    pub fn job_id(&self) -> Uuid {
        self.job_id
    }

    pub fn backend(&self) -> &str {
        &self.backend
    }

    pub fn created_at(&self) -> Timestamp {
        self.created_at
    }

    pub fn tasks(&self) -> &[TaskDescriptor] {
        &self.tasks
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn state(&self) -> JobState {
        self.inner.lock().unwrap().state
    }

    fn advance(inner: &mut JobInner, to: JobState) {
        if to > inner.state {
            inner.state = to;
        }
    }

    /// Record that every task was handed to a worker at `times[i]`.
    pub(crate) fn mark_dispatched(&self, times: &[Timestamp]) {
        let mut inner = self.inner.lock().unwrap();
        for (p, t) in inner.progress.iter_mut().zip(times) {
            p.dispatch = Some(*t);
        }
        let to = if self.tasks.is_empty() { JobState::Done } else { JobState::Running };
        Self::advance(&mut inner, to);
    }

    /// Results in task order, or the first failure. Needs a finished join.
    fn cached(&self) -> Option<OrchResult<Vec<Bytes>>> {
        let inner = self.inner.lock().unwrap();
        match inner.state {
            JobState::Done => Some(Ok(inner
                .progress
                .iter()
                .map(|p| p.outcome.clone().and_then(Result::ok).unwrap_or_default())
                .collect())),
            JobState::Failed => Some(Err(inner.failure.clone().expect("failed job records its failure"))),
            _ => None,
        }
    }

    /// Dispatch time and worker-reported timing per task, where known.
    pub fn timings(&self) -> Vec<(Option<Timestamp>, Option<TaskTiming>)> {
        self.inner.lock().unwrap().progress.iter().map(|p| (p.dispatch, p.timing)).collect()
    }

    pub(crate) fn progress(&self) -> Vec<TaskProgress> {
        self.inner.lock().unwrap().progress.clone()
    }
}

/// Main-side runtime: backend, store and blob layer plus join settings.
#[derive(Clone)]
pub struct Orchestrator {
    backend: SharedBackend,
    store: SharedStore,
    blobs: SharedBlobStore,
    config: OrchestratorConfig,
}

impl Orchestrator {
    pub fn new(backend: SharedBackend, store: SharedStore, blobs: SharedBlobStore) -> Self {
        Orchestrator { backend, store, blobs, config: OrchestratorConfig::default() }
    }

    pub fn with_config(mut self, config: OrchestratorConfig) -> Self {
        self.config = config;
        self
    }

    pub fn backend(&self) -> &SharedBackend {
        &self.backend
    }

    pub fn store(&self) -> &SharedStore {
        &self.store
    }

    pub fn blobs(&self) -> &SharedBlobStore {
        &self.blobs
    }

    pub fn config(&self) -> &OrchestratorConfig {
        &self.config
    }

    /// Primitive factory over this runtime's store and manager classes.
    pub fn ipc(&self) -> Ipc {
        Ipc::new(self.store.clone()).with_classes(self.backend.registry().classes().clone())
    }

    /// Build descriptors and upload large arguments, without dispatching.
    pub fn prepare(&self, tasks: Vec<TaskSpec>) -> OrchResult<JobManifest> {
        let registry = self.backend.registry();
        if let Some(t) = tasks.iter().find(|t| !registry.contains(&t.function_name)) {
            return Err(OrchestratorError::UnknownFunction(t.function_name.clone()));
        }
        let job_id = Uuid::new_v4();
        let mut descriptors = Vec::with_capacity(tasks.len());
        let mut progress = Vec::with_capacity(tasks.len());
        for (i, spec) in tasks.into_iter().enumerate() {
            let index = i as u32;
            let mut upload = Duration::ZERO;
            let args = if spec.args.len() > self.config.inline_threshold {
                let path = format!("args/{job_id}/{index}");
                let t = Instant::now();
                self.blobs.put(&path, spec.args)?;
                upload = t.elapsed();
                TaskArgs::Blob(path)
            } else {
                TaskArgs::Inline(spec.args)
            };
            let t = Instant::now();
            let mut d = TaskDescriptor::new(job_id, index, spec.function_name, args);
            d.chunked = spec.chunked;
            let _wire = d.encode();
            let serialize = t.elapsed();
            descriptors.push(d);
            progress.push(TaskProgress { serialize, upload, ..Default::default() });
        }
        Ok(JobManifest {
            job_id,
            backend: self.backend.name().to_owned(),
            created_at: Timestamp::now(),
            tasks: descriptors,
            inner: Mutex::new(JobInner { state: JobState::Pending, progress, failure: None }),
            joining: Mutex::new(()),
        })
    }

    /// Prepare and dispatch one invocation per task, in index order.
    pub fn submit_job(&self, tasks: Vec<TaskSpec>) -> OrchResult<Arc<JobManifest>> {
        let manifest = self.prepare(tasks)?;
        let payloads = manifest.tasks.iter().cloned().map(InvocationPayload::Task).collect();
        let dispatches = self.backend.invoke_batch(payloads)?;
        let times: Vec<Timestamp> = dispatches.iter().map(|d| d.dispatch_time).collect();
        manifest.mark_dispatched(&times);
        Ok(Arc::new(manifest))
    }

    /// Submit and join.
    pub fn map<B: Into<Bytes>>(&self, function_name: &str, items: impl IntoIterator<Item = B>) -> OrchResult<Vec<Bytes>> {
        let tasks = items.into_iter().map(|a| TaskSpec::new(function_name, a)).collect();
        let m = self.submit_job(tasks)?;
        self.join(&m)
    }

    /// Wait for every result, stopping at the first failure. A finished
    /// job returns its cached outcome without polling again.
    pub fn join(&self, manifest: &JobManifest) -> OrchResult<Vec<Bytes>> {
        self.join_within(manifest, self.config.join_timeout)
    }

    /// [`join`](Self::join) with an explicit deadline. Timing out leaves the
    /// job running, so the join can be retried.
    pub fn join_within(&self, manifest: &JobManifest, timeout: Option<Duration>) -> OrchResult<Vec<Bytes>> {
        self.join_inner(manifest, true, timeout)?;
        manifest.cached().expect("join finished")
    }

    /// Wait for every result, failures included.
    pub fn join_all(&self, manifest: &JobManifest) -> OrchResult<Vec<Result<Bytes, OrchestratorError>>> {
        self.join_inner(manifest, false, self.config.join_timeout)?;
        let inner = manifest.inner.lock().unwrap();
        Ok(inner
            .progress
            .iter()
            .enumerate()
            .map(|(i, p)| match p.outcome.clone() {
                Some(Ok(b)) => Ok(b),
                Some(Err((message, backtrace))) => Err(OrchestratorError::TaskFailed { index: i as u32, message, backtrace }),
                None => Err(OrchestratorError::JoinTimeout { missing: 1 }),
            })
            .collect())
    }

    fn join_inner(&self, manifest: &JobManifest, fail_fast: bool, timeout: Option<Duration>) -> OrchResult<()> {
        let _one_joiner = manifest.joining.lock().unwrap();
        {
            let inner = manifest.inner.lock().unwrap();
            match inner.state {
                JobState::Pending => return Err(OrchestratorError::NotDispatched),
                JobState::Done => return Ok(()),
                JobState::Failed if fail_fast => return Ok(()),
                _ => {}
            }
        }
        let deadline = timeout.map(|t| Instant::now() + t);
        let mut outstanding: Vec<usize> = {
            let inner = manifest.inner.lock().unwrap();
            (0..manifest.tasks.len()).filter(|&i| inner.progress[i].outcome.is_none()).collect()
        };
        loop {
            let found = self.poll_once(manifest, &outstanding)?;
            if !found.is_empty() {
                let fetched = self.fetch(manifest, &found)?;
                let mut inner = manifest.inner.lock().unwrap();
                for (i, detected, record) in fetched {
                    let p = &mut inner.progress[i];
                    p.detected = Some(detected);
                    p.timing = Some(record.timing);
                    p.outcome = Some(match record.outcome {
                        TaskOutcome::Ok(b) => Ok(b),
                        TaskOutcome::Err { message, backtrace } => Err((message, backtrace)),
                    });
                }
                outstanding.retain(|i| inner.progress[*i].outcome.is_none());
                let first_failure = inner.progress.iter().enumerate().find_map(|(i, p)| match &p.outcome {
                    Some(Err((m, b))) => Some(OrchestratorError::TaskFailed { index: i as u32, message: m.clone(), backtrace: b.clone() }),
                    _ => None,
                });
                if let Some(f) = first_failure {
                    if fail_fast || outstanding.is_empty() {
                        inner.failure = Some(f);
                        JobManifest::advance(&mut inner, JobState::Failed);
                        return Ok(());
                    }
                } else if outstanding.is_empty() {
                    JobManifest::advance(&mut inner, JobState::Done);
                    drop(inner);
                    self.cleanup_args(manifest);
                    return Ok(());
                }
            }
            if outstanding.is_empty() {
                return Ok(());
            }
            if let Some(d) = deadline {
                if Instant::now() >= d {
                    return Err(OrchestratorError::JoinTimeout { missing: outstanding.len() });
                }
            }
            thread::sleep(self.config.poll_interval);
        }
    }

    /// One existence check per outstanding key, in a single round trip.
    fn poll_once(&self, manifest: &JobManifest, outstanding: &[usize]) -> OrchResult<Vec<usize>> {
        let cmds = outstanding.iter().map(|&i| Command::KeyExists { key: manifest.tasks[i].result_key.clone() }).collect();
        let replies = self.store.pipeline(cmds);
        let mut found = Vec::new();
        for (&i, r) in outstanding.iter().zip(replies) {
            if r? == Reply::Flag(true) {
                found.push(i);
            }
        }
        Ok(found)
    }

    /// Download and consume the records of `found`.
    fn fetch(&self, manifest: &JobManifest, found: &[usize]) -> OrchResult<Vec<(usize, Timestamp, ResultRecord)>> {
        let detected = Timestamp::now();
        let mut cmds = Vec::with_capacity(found.len() * 2);
        for &i in found {
            let key = manifest.tasks[i].result_key.clone();
            cmds.push(Command::ListIndexGet { key: key.clone(), index: 0 });
            cmds.push(Command::KeyDelete { key });
        }
        let mut replies = self.store.pipeline(cmds).into_iter();
        let mut out = Vec::with_capacity(found.len());
        for &i in found {
            let get = replies.next().expect("reply per command");
            let del = replies.next().expect("reply per command");
            del?;
            let raw = match get? {
                Reply::Value(v) => v,
                _ => return Err(StoreError::UnexpectedReply("list_index_get").into()),
            };
            out.push((i, detected, ResultRecord::decode(&raw)?));
        }
        Ok(out)
    }

    fn cleanup_args(&self, manifest: &JobManifest) {
        for t in &manifest.tasks {
            if let TaskArgs::Blob(path) = &t.args {
                if let Err(e) = self.blobs.delete(path) {
                    log::debug!("removing argument object {path}: {e}");
                }
            }
        }
    }

    pub fn phase_report(&self, manifest: &JobManifest) -> PhaseReport {
        PhaseReport::from_manifest(manifest)
    }
}
