//! Compute backends that run task descriptors as short-lived functions:
//! an in-process simulator with cold/warm latency injection, and worker
//! daemons reached through the store.

mod daemon;
mod descriptor;
mod latency;
mod registry;
mod sim;
mod worker;

pub use daemon::{DaemonBackend, DaemonConfig, WorkerDaemon, DAEMONS_KEY};
pub use descriptor::{
    result_key, InvocationPayload, PoolMessage, ResultRecord, TaskArgs, TaskDescriptor, TaskOutcome, TaskTiming,
    SENTINEL_TAG, TASK_TAG,
};
pub use latency::{LatencyModel, LatencySampler, DEFAULT_EVICTION};
pub use registry::{counter_class, decode_i64, decode_u64, encode_i64, encode_u64, Registry, TaskContext, TaskFn};
pub use sim::SimBackend;
pub use worker::{pool_loop, run_invocation, WorkerEnv, RESULT_TTL};

use std::sync::Arc;

use uuid::Uuid;

use crate::store::StoreError;
use crate::time::Timestamp;
use crate::wire::{DecodeError, Decoder, Encoder};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FaasError {
    #[error("function {0} is not registered")]
    UnknownFunction(String),
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Temperature {
    Cold,
    Warm,
}

/// One completed invocation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InvocationRecord {
    pub invocation_id: Uuid,
    pub dispatch_time: Timestamp,
    pub start_time: Timestamp,
    pub end_time: Timestamp,
    pub temperature: Temperature,
    pub worker_id: String,
}

impl InvocationRecord {
    pub fn encode(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        e.uuid(&self.invocation_id)
            .u64(self.dispatch_time.as_micros())
            .u64(self.start_time.as_micros())
            .u64(self.end_time.as_micros())
            .u8(matches!(self.temperature, Temperature::Warm) as u8)
            .str(&self.worker_id);
        e.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut d = Decoder::new(bytes);
        let r = InvocationRecord {
            invocation_id: d.uuid()?,
            dispatch_time: Timestamp(d.u64()?),
            start_time: Timestamp(d.u64()?),
            end_time: Timestamp(d.u64()?),
            temperature: match d.u8()? {
                0 => Temperature::Cold,
                1 => Temperature::Warm,
                _ => return Err(DecodeError::Invalid("temperature")),
            },
            worker_id: d.string()?,
        };
        d.end()?;
        Ok(r)
    }
}

/// Acknowledgement that an invocation was handed to the backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dispatch {
    pub invocation_id: Uuid,
    pub dispatch_time: Timestamp,
}

/// A place invocations run.
pub trait Backend: Send + Sync {
    fn name(&self) -> &str;

    fn registry(&self) -> &Arc<Registry>;

    /// Dispatch invocations in order, one after another. Every function a
    /// payload names is checked before the first dispatch.
    fn invoke_batch(&self, payloads: Vec<InvocationPayload>) -> Result<Vec<Dispatch>, FaasError>;

    fn invoke(&self, payload: InvocationPayload) -> Result<Dispatch, FaasError> {
        Ok(self.invoke_batch(vec![payload])?.remove(0))
    }

    /// Completed invocations, in completion order.
    fn records(&self) -> Vec<InvocationRecord>;

    /// Invocations dispatched so far.
    fn invocation_count(&self) -> usize;

    /// Tasks executed so far.
    fn executions(&self) -> u64;
}

pub type SharedBackend = Arc<dyn Backend>;

pub(crate) fn check_functions(registry: &Registry, payloads: &[InvocationPayload]) -> Result<(), FaasError> {
    for p in payloads {
        for name in p.function_names() {
            if !registry.contains(name) {
                return Err(FaasError::UnknownFunction(name.to_owned()));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invocation_record_round_trip() {
        let r = InvocationRecord {
            invocation_id: Uuid::new_v4(),
            dispatch_time: Timestamp(1),
            start_time: Timestamp(2),
            end_time: Timestamp(3),
            temperature: Temperature::Warm,
            worker_id: "d1/0".into(),
        };
        assert_eq!(InvocationRecord::decode(&r.encode()).unwrap(), r);
    }
}
