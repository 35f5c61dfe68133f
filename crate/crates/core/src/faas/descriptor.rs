use bytes::Bytes;
use uuid::Uuid;

use crate::time::Timestamp;
use crate::wire::{DecodeError, Decoder, Encoder};

/// Key a task's result record is written to.
pub fn result_key(job_id: Uuid, task_index: u32) -> String {
    format!("job/{job_id}/task/{task_index}/result")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TaskArgs {
    Inline(Bytes),
    /// Path of an argument object in the blob layer.
    Blob(String),
}

/// One unit of remote work.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskDescriptor {
    pub job_id: Uuid,
    pub task_index: u32,
    pub function_name: String,
    pub args: TaskArgs,
    pub result_key: String,
    pub enqueue_time: Timestamp,
    /// Args hold a field list of items; the function runs once per item and
    /// the result is the field list of outputs.
    pub chunked: bool,
}

impl TaskDescriptor {
    pub fn new(job_id: Uuid, task_index: u32, function_name: impl Into<String>, args: TaskArgs) -> Self {
        TaskDescriptor {
            job_id,
            task_index,
            function_name: function_name.into(),
            args,
            result_key: result_key(job_id, task_index),
            enqueue_time: Timestamp::now(),
            chunked: false,
        }
    }

    pub fn encode_into(&self, e: &mut Encoder) {
        e.uuid(&self.job_id).u32(self.task_index).str(&self.function_name);
        match &self.args {
            TaskArgs::Inline(b) => e.u8(0).field(b),
            TaskArgs::Blob(p) => e.u8(1).str(p),
        };
        e.str(&self.result_key).u64(self.enqueue_time.as_micros()).u8(self.chunked as u8);
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        self.encode_into(&mut e);
        e.finish()
    }

    pub fn decode_from(d: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let job_id = d.uuid()?;
        let task_index = d.u32()?;
        let function_name = d.string()?;
        let args = match d.u8()? {
            0 => TaskArgs::Inline(d.bytes()?),
            1 => TaskArgs::Blob(d.string()?),
            _ => return Err(DecodeError::Invalid("argument tag")),
        };
        let result_key = d.string()?;
        let enqueue_time = Timestamp(d.u64()?);
        let chunked = match d.u8()? {
            0 => false,
            1 => true,
            _ => return Err(DecodeError::Invalid("chunk flag")),
        };
        Ok(TaskDescriptor { job_id, task_index, function_name, args, result_key, enqueue_time, chunked })
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut d = Decoder::new(bytes);
        let t = Self::decode_from(&mut d)?;
        d.end()?;
        Ok(t)
    }
}

/// What one invocation is asked to do.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InvocationPayload {
    Task(TaskDescriptor),
    /// A long-lived pool worker draining `queue_key` until its sentinel.
    PoolWorker { pool_id: Uuid, queue_key: String, exits_key: String, initializer: Option<String>, worker_index: u32 },
}

impl InvocationPayload {
    pub fn encode(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        match self {
            InvocationPayload::Task(t) => {
                e.u8(0);
                t.encode_into(&mut e);
            }
            InvocationPayload::PoolWorker { pool_id, queue_key, exits_key, initializer, worker_index } => {
                e.u8(1).uuid(pool_id).str(queue_key).str(exits_key);
                match initializer {
                    Some(name) => e.u8(1).str(name),
                    None => e.u8(0),
                };
                e.u32(*worker_index);
            }
        }
        e.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut d = Decoder::new(bytes);
        let p = match d.u8()? {
            0 => InvocationPayload::Task(TaskDescriptor::decode_from(&mut d)?),
            1 => {
                let pool_id = d.uuid()?;
                let queue_key = d.string()?;
                let exits_key = d.string()?;
                let initializer = match d.u8()? {
                    0 => None,
                    1 => Some(d.string()?),
                    _ => return Err(DecodeError::Invalid("initializer flag")),
                };
                let worker_index = d.u32()?;
                InvocationPayload::PoolWorker { pool_id, queue_key, exits_key, initializer, worker_index }
            }
            _ => return Err(DecodeError::Invalid("payload tag")),
        };
        d.end()?;
        Ok(p)
    }

    /// Registry names the payload needs.
    pub fn function_names(&self) -> Vec<&str> {
        match self {
            InvocationPayload::Task(t) => vec![t.function_name.as_str()],
            InvocationPayload::PoolWorker { initializer, .. } => initializer.iter().map(String::as_str).collect(),
        }
    }
}

/// Message on a pool's job queue.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PoolMessage {
    Task(TaskDescriptor),
    Sentinel { pool_id: Uuid },
}

pub const TASK_TAG: u8 = 0x00;
pub const SENTINEL_TAG: u8 = 0xFF;

impl PoolMessage {
    pub fn encode(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        match self {
            PoolMessage::Task(t) => {
                e.u8(TASK_TAG);
                t.encode_into(&mut e);
            }
            PoolMessage::Sentinel { pool_id } => {
                e.u8(SENTINEL_TAG).uuid(pool_id);
            }
        }
        e.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut d = Decoder::new(bytes);
        let m = match d.u8()? {
            TASK_TAG => PoolMessage::Task(TaskDescriptor::decode_from(&mut d)?),
            SENTINEL_TAG => PoolMessage::Sentinel { pool_id: d.uuid()? },
            _ => return Err(DecodeError::Invalid("pool message tag")),
        };
        d.end()?;
        Ok(m)
    }
}

/// Worker-side timestamps carried by every result record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TaskTiming {
    pub worker_start: Timestamp,
    pub run_start: Timestamp,
    pub run_end: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TaskOutcome {
    Ok(Bytes),
    Err { message: String, backtrace: Option<String> },
}

/// Self-describing result: status byte, timing header, then payload or
/// error text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResultRecord {
    pub timing: TaskTiming,
    pub outcome: TaskOutcome,
}

const STATUS_OK: u8 = 0;
const STATUS_ERR: u8 = 1;

impl ResultRecord {
    pub fn encode(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        let status = match self.outcome {
            TaskOutcome::Ok(_) => STATUS_OK,
            TaskOutcome::Err { .. } => STATUS_ERR,
        };
        e.u8(status)
            .u64(self.timing.worker_start.as_micros())
            .u64(self.timing.run_start.as_micros())
            .u64(self.timing.run_end.as_micros());
        match &self.outcome {
            TaskOutcome::Ok(b) => {
                e.field(b);
            }
            TaskOutcome::Err { message, backtrace } => {
                e.str(message);
                if let Some(bt) = backtrace {
                    e.str(bt);
                }
            }
        }
        e.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut d = Decoder::new(bytes);
        let status = d.u8()?;
        let timing = TaskTiming {
            worker_start: Timestamp(d.u64()?),
            run_start: Timestamp(d.u64()?),
            run_end: Timestamp(d.u64()?),
        };
        let outcome = match status {
            STATUS_OK => TaskOutcome::Ok(d.bytes()?),
            STATUS_ERR => {
                let message = d.string()?;
                let backtrace = if d.is_empty() { None } else { Some(d.string()?) };
                TaskOutcome::Err { message, backtrace }
            }
            _ => return Err(DecodeError::Invalid("result status")),
        };
        d.end()?;
        Ok(ResultRecord { timing, outcome })
    }

    pub fn is_ok(&self) -> bool {
        matches!(self.outcome, TaskOutcome::Ok(_))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TaskDescriptor {
        TaskDescriptor::new(Uuid::new_v4(), 3, "echo", TaskArgs::Inline(Bytes::from_static(b"x")))
    }

    #[test]
    fn result_key_scheme() {
        let t = sample();
        assert_eq!(t.result_key, format!("job/{}/task/3/result", t.job_id));
    }

    #[test]
    fn descriptor_and_payload_round_trip() {
        let mut t = sample();
        assert_eq!(TaskDescriptor::decode(&t.encode()).unwrap(), t);
        t.args = TaskArgs::Blob("args/j/3".into());
        t.chunked = true;
        let p = InvocationPayload::Task(t.clone());
        assert_eq!(InvocationPayload::decode(&p.encode()).unwrap(), p);
        let w = InvocationPayload::PoolWorker {
            pool_id: Uuid::new_v4(),
            queue_key: "pool/x/jobs".into(),
            exits_key: "pool/x/exits".into(),
            initializer: Some("init".into()),
            worker_index: 2,
        };
        assert_eq!(InvocationPayload::decode(&w.encode()).unwrap(), w);
        assert!(InvocationPayload::decode(&w.encode()[..10]).is_err());
    }

    #[test]
    fn pool_messages_are_tagged() {
        let id = Uuid::new_v4();
        let s = PoolMessage::Sentinel { pool_id: id }.encode();
        assert_eq!(s[0], 0xFF);
        assert_eq!(&s[1..], id.as_bytes());
        let task = PoolMessage::Task(sample());
        let t = task.encode();
        assert_eq!(t[0], 0x00);
        assert_eq!(PoolMessage::decode(&t).unwrap(), task);
        assert_eq!(PoolMessage::decode(&s).unwrap(), PoolMessage::Sentinel { pool_id: id });
    }

    #[test]
    fn result_records_round_trip() {
        let timing = TaskTiming { worker_start: Timestamp(1), run_start: Timestamp(2), run_end: Timestamp(3) };
        for outcome in [
            TaskOutcome::Ok(Bytes::from_static(b"ok")),
            TaskOutcome::Err { message: "boom".into(), backtrace: None },
            TaskOutcome::Err { message: "boom".into(), backtrace: Some("at f".into()) },
        ] {
            let r = ResultRecord { timing, outcome };
            let enc = r.encode();
            assert_eq!(enc[0], if r.is_ok() { 0 } else { 1 });
            assert_eq!(ResultRecord::decode(&enc).unwrap(), r);
        }
    }
}
