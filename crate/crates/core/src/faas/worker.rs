use std::panic::{self, AssertUnwindSafe};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use bytes::Bytes;
use log::{debug, warn};
use uuid::Uuid;

use super::descriptor::{InvocationPayload, PoolMessage, ResultRecord, TaskArgs, TaskDescriptor, TaskOutcome, TaskTiming};
use super::registry::{Registry, TaskContext};
use crate::objectfs::SharedBlobStore;
use crate::store::{duration_ms, Command, SharedStore, StoreError, StoreExt};
use crate::time::Timestamp;
use crate::wire::{decode_fields, encode_fields};

/// Lifetime of an unconsumed result record.
pub const RESULT_TTL: Duration = Duration::from_secs(3600);

/// Everything one worker invocation runs against.
#[derive(Clone)]
pub struct WorkerEnv {
    pub store: SharedStore,
    pub blobs: SharedBlobStore,
    pub registry: Arc<Registry>,
    pub worker_id: String,
    /// Shared tally of executed tasks.
    pub executions: Arc<AtomicU64>,
    /// Injected delay before a one-shot task's function runs.
    pub setup_delay: Duration,
    /// Injected delay before a one-shot task's result becomes visible.
    pub result_delay: Duration,
    pub max_execution: Option<Duration>,
}

impl WorkerEnv {
    pub fn new(store: SharedStore, blobs: SharedBlobStore, registry: Arc<Registry>, worker_id: impl Into<String>) -> Self {
        WorkerEnv {
            store,
            blobs,
            registry,
            worker_id: worker_id.into(),
            executions: Arc::new(AtomicU64::new(0)),
            setup_delay: Duration::ZERO,
            result_delay: Duration::ZERO,
            max_execution: None,
        }
    }

    fn context(&self) -> TaskContext {
        TaskContext::new(self.store.clone(), self.blobs.clone(), self.registry.clone(), self.worker_id.clone())
    }
}

/// Run one invocation to completion. `worker_start` is when the worker
/// came up, i.e. after any startup latency.
pub fn run_invocation(env: &WorkerEnv, payload: InvocationPayload, worker_start: Timestamp) {
    match payload {
        InvocationPayload::Task(task) => {
            if !env.setup_delay.is_zero() {
                std::thread::sleep(env.setup_delay);
            }
            run_task(env, &task, worker_start, env.result_delay);
        }
        InvocationPayload::PoolWorker { pool_id, queue_key, exits_key, initializer, worker_index } => {
            pool_loop(env, pool_id, &queue_key, &exits_key, initializer.as_deref(), worker_index);
        }
    }
}

fn run_task(env: &WorkerEnv, task: &TaskDescriptor, worker_start: Timestamp, result_delay: Duration) {
    let ctx = env.context();
    let args = fetch_args(env, task);
    let run_start = Timestamp::now();
    let outcome = match args {
        Ok(args) => execute(&ctx, task, &args, env.max_execution),
        Err(message) => TaskOutcome::Err { message, backtrace: None },
    };
    let run_end = Timestamp::now();
    env.executions.fetch_add(1, Ordering::SeqCst);
    if !result_delay.is_zero() {
        std::thread::sleep(result_delay);
    }
    let record = ResultRecord { timing: TaskTiming { worker_start, run_start, run_end }, outcome };
    let writes = env.store.pipeline(vec![
        Command::PushTail { key: task.result_key.clone(), values: vec![Bytes::from(record.encode())] },
        Command::KeyExpire { key: task.result_key.clone(), ttl_ms: duration_ms(RESULT_TTL) },
    ]);
    for w in writes {
        if let Err(e) = w {
            warn!("writing result of task {} of job {} failed: {e}", task.task_index, task.job_id);
        }
    }
}

fn fetch_args(env: &WorkerEnv, task: &TaskDescriptor) -> Result<Bytes, String> {
    match &task.args {
        TaskArgs::Inline(b) => Ok(b.clone()),
        TaskArgs::Blob(path) => match env.blobs.get(path) {
            Ok(Some(blob)) => Ok(blob.data),
            Ok(None) => Err(format!("argument object {path} not found")),
            Err(e) => Err(format!("fetching argument object {path}: {e}")),
        },
    }
}

fn execute(ctx: &TaskContext, task: &TaskDescriptor, args: &[u8], limit: Option<Duration>) -> TaskOutcome {
    let Some(f) = ctx.registry().get(&task.function_name) else {
        return TaskOutcome::Err { message: format!("unknown function {}", task.function_name), backtrace: None };
    };
    let started = std::time::Instant::now();
    let call = |a: &[u8]| -> Result<Vec<u8>, TaskOutcome> {
        match panic::catch_unwind(AssertUnwindSafe(|| f(ctx, a))) {
            Ok(Ok(out)) => Ok(out),
            Ok(Err(e)) => Err(TaskOutcome::Err { message: e.to_string(), backtrace: Some(format!("{e:?}")) }),
            Err(p) => {
                let msg = p
                    .downcast_ref::<&str>()
                    .map(|s| s.to_string())
                    .or_else(|| p.downcast_ref::<String>().cloned())
                    .unwrap_or_else(|| "non-string panic".into());
                Err(TaskOutcome::Err { message: format!("task panicked: {msg}"), backtrace: None })
            }
        }
    };
    let result = if task.chunked {
        decode_fields(args)
            .map_err(|e| TaskOutcome::Err { message: format!("bad chunk encoding: {e}"), backtrace: None })
            .and_then(|items| items.iter().map(|i| call(i)).collect::<Result<Vec<_>, _>>())
            .map(encode_fields)
    } else {
        call(args)
    };
    if let Some(limit) = limit {
        if started.elapsed() > limit {
            return TaskOutcome::Err { message: format!("execution time limit of {limit:?} exceeded"), backtrace: None };
        }
    }
    match result {
        Ok(out) => TaskOutcome::Ok(Bytes::from(out)),
        Err(e) => e,
    }
}

/// Long-lived pool worker: initializer once, then tasks until a sentinel
/// for this pool arrives.
pub fn pool_loop(
    env: &WorkerEnv,
    pool_id: Uuid,
    queue_key: &str,
    exits_key: &str,
    initializer: Option<&str>,
    worker_index: u32,
) {
    if let Some(name) = initializer {
        let ctx = env.context();
        match env.registry.get(name) {
            Some(f) => {
                if let Err(e) = f(&ctx, &[]) {
                    warn!("initializer {name} of pool {pool_id} failed: {e:#}");
                }
            }
            None => warn!("initializer {name} of pool {pool_id} is not registered"),
        }
    }
    loop {
        let raw = match env.store.pop_head(queue_key, None) {
            Ok(r) => r,
            Err(StoreError::ConnectionClosed) => {
                warn!("pool worker {worker_index} lost its store connection");
                return;
            }
            Err(e) => {
                warn!("pool worker {worker_index} pop failed: {e}");
                return;
            }
        };
        match PoolMessage::decode(&raw) {
            Ok(PoolMessage::Task(task)) => run_task(env, &task, Timestamp::now(), Duration::ZERO),
            Ok(PoolMessage::Sentinel { pool_id: p }) if p == pool_id => {
                debug!("pool worker {worker_index} of {pool_id} exiting");
                if let Err(e) = env.store.push_tail(exits_key, Bytes::copy_from_slice(&worker_index.to_be_bytes())) {
                    warn!("exit ack of pool worker {worker_index} failed: {e}");
                }
                return;
            }
            Ok(PoolMessage::Sentinel { pool_id: other }) => {
                warn!("pool {pool_id} worker ignored a sentinel addressed to pool {other}");
            }
            Err(e) => warn!("pool {pool_id} worker skipped an undecodable message: {e}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::faas::descriptor::result_key;
    use crate::objectfs::MemoryBlobStore;
    use crate::store::Engine;

    fn env() -> WorkerEnv {
        WorkerEnv::new(Arc::new(Engine::new()), Arc::new(MemoryBlobStore::new("w")), Arc::new(Registry::builtin()), "w")
    }

    fn record(env: &WorkerEnv, key: &str) -> ResultRecord {
        ResultRecord::decode(&env.store.list_index_get(key, 0).unwrap()).unwrap()
    }

    #[test]
    fn one_shot_echo_writes_success() {
        let env = env();
        let t = TaskDescriptor::new(Uuid::new_v4(), 0, "echo", TaskArgs::Inline(Bytes::from_static(b"x")));
        run_invocation(&env, InvocationPayload::Task(t.clone()), Timestamp::now());
        let r = record(&env, &t.result_key);
        assert_eq!(r.outcome, TaskOutcome::Ok(Bytes::from_static(b"x")));
        assert!(r.timing.worker_start <= r.timing.run_start && r.timing.run_start <= r.timing.run_end);
        assert_eq!(env.executions.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn failures_and_panics_become_error_records() {
        let env = env();
        for name in ["fail", "panic", "not-registered"] {
            let t = TaskDescriptor::new(Uuid::new_v4(), 0, name, TaskArgs::Inline(Bytes::new()));
            run_invocation(&env, InvocationPayload::Task(t.clone()), Timestamp::now());
            assert!(!record(&env, &t.result_key).is_ok(), "{name}");
        }
    }

    #[test]
    fn blob_args_and_chunks() {
        let env = env();
        env.blobs.put("args/a", Bytes::from(encode_fields([b"p".as_slice(), b"q"]))).unwrap();
        let mut t = TaskDescriptor::new(Uuid::new_v4(), 1, "echo", TaskArgs::Blob("args/a".into()));
        t.chunked = true;
        run_invocation(&env, InvocationPayload::Task(t.clone()), Timestamp::now());
        match record(&env, &t.result_key).outcome {
            TaskOutcome::Ok(b) => assert_eq!(decode_fields(&b).unwrap(), vec![Bytes::from("p"), Bytes::from("q")]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn pool_worker_runs_until_own_sentinel() {
        let env = env();
        let pool = Uuid::new_v4();
        let job = Uuid::new_v4();
        let msgs: Vec<Bytes> = vec![
            PoolMessage::Task(TaskDescriptor::new(job, 0, "echo", TaskArgs::Inline(Bytes::from_static(b"a")))),
            PoolMessage::Sentinel { pool_id: Uuid::new_v4() },
            PoolMessage::Sentinel { pool_id: pool },
            PoolMessage::Task(TaskDescriptor::new(job, 1, "echo", TaskArgs::Inline(Bytes::from_static(b"b")))),
        ]
        .into_iter()
        .map(|m| Bytes::from(m.encode()))
        .collect();
        env.store.push_tail_many("q", msgs).unwrap();
        pool_loop(&env, pool, "q", "exits", Some("count_init"), 5);
        assert!(env.store.key_exists(&result_key(job, 0)).unwrap());
        assert!(!env.store.key_exists(&result_key(job, 1)).unwrap());
        assert_eq!(env.store.list_len("q").unwrap(), 1);
        assert_eq!(env.store.list_index_get("exits", 0).unwrap()[..], 5u32.to_be_bytes());
        assert_eq!(env.store.counter_add("tally/init", 0).unwrap(), 1);
    }
}
