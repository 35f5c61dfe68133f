//! Shared-state primitives kept entirely in the store. Every object is a
//! proxy over keys under `rsrc/{uuid}/`; blocking is store-side parking.

mod array;
mod handle;
mod manager;
mod notify;
mod pipe;
mod queue;
mod scalar;
mod sync;

pub use array::{Array, Value};
pub use handle::{KindSpec, ResourceHandle, ResourceKind, DEFAULT_TTL, RESOURCE_PREFIX};
pub use manager::{Attrs, ClassRegistry, ManagerClass, ManagerDict, ManagerList, ManagerObject, MethodFn};
pub use pipe::Connection;
pub use queue::Queue;
pub use scalar::{Scalar, ScalarTag};
pub use sync::{Barrier, BarrierWait, Condition, Event, Lock, LockGuard, Semaphore};

use std::sync::Arc;
use std::time::Duration;

use crate::store::{SharedStore, StoreError};
use crate::wire::DecodeError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IpcError {
    #[error("timed out")]
    Timeout,
    #[error("resource already dropped")]
    DroppedResource,
    #[error("index out of range")]
    IndexOutOfRange,
    #[error("scalar type mismatch: expected {expected:?}, got {got:?}")]
    TypeMismatch { expected: ScalarTag, got: ScalarTag },
    #[error("lock not held")]
    LockNotHeld,
    #[error("barrier broken")]
    BrokenBarrier,
    #[error("unknown manager class {0}")]
    UnknownClass(String),
    #[error("unknown method {0}")]
    UnknownMethod(String),
    #[error("handle is a {got:?}, expected {expected:?}")]
    WrongKind { expected: ResourceKind, got: ResourceKind },
    #[error("method failed: {0}")]
    Method(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("bad handle encoding: {0}")]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Store(StoreError),
}

impl From<StoreError> for IpcError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Timeout => IpcError::Timeout,
            StoreError::IndexOutOfRange => IpcError::IndexOutOfRange,
            other => IpcError::Store(other),
        }
    }
}

pub type IpcResult<T> = Result<T, IpcError>;

/// Typed view over a [`ResourceHandle`], used to adopt shared handles.
pub trait Resource: Sized {
    const KIND: ResourceKind;

    fn from_handle(handle: ResourceHandle, ipc: &Ipc) -> IpcResult<Self>;

    fn handle(&self) -> &ResourceHandle;

    /// Serialize for another process, taking a reference on its behalf.
    fn share(&self) -> IpcResult<Vec<u8>> {
        self.handle().share()
    }
}

/// Factory for primitives bound to one store.
#[derive(Clone)]
pub struct Ipc {
    store: SharedStore,
    ttl: Duration,
    classes: Arc<ClassRegistry>,
}

impl Ipc {
    pub fn new(store: SharedStore) -> Self {
        Ipc { store, ttl: DEFAULT_TTL, classes: Arc::new(ClassRegistry::default()) }
    }

    /// TTL applied to resources created from now on.
    pub fn with_ttl(mut self, ttl: Duration) -> Self {
        self.ttl = ttl;
        self
    }

    pub fn with_classes(mut self, classes: Arc<ClassRegistry>) -> Self {
        self.classes = classes;
        self
    }

    pub fn store(&self) -> &SharedStore {
        &self.store
    }

    pub fn ttl(&self) -> Duration {
        self.ttl
    }

    pub fn classes(&self) -> &Arc<ClassRegistry> {
        &self.classes
    }

    /// Rebuild a resource from bytes produced by [`Resource::share`].
    pub fn adopt<R: Resource>(&self, bytes: &[u8]) -> IpcResult<R> {
        let handle = ResourceHandle::adopt(self.store.clone(), bytes)?;
        if handle.kind() != R::KIND {
            let got = handle.kind();
            // The reference still belongs to us; give it back.
            handle.release()?;
            return Err(IpcError::WrongKind { expected: R::KIND, got });
        }
        R::from_handle(handle, self)
    }

    pub fn pipe(&self) -> IpcResult<(Connection, Connection)> {
        pipe::create(self)
    }

    /// `maxsize` of `None` or `Some(0)` means unbounded.
    pub fn queue(&self, maxsize: Option<u32>) -> IpcResult<Queue> {
        Queue::create(self, maxsize.unwrap_or(0))
    }

    pub fn semaphore(&self, n: u32) -> IpcResult<Semaphore> {
        Semaphore::create(self, n)
    }

    pub fn lock(&self) -> IpcResult<Lock> {
        Lock::create(self)
    }

    pub fn condition(&self) -> IpcResult<Condition> {
        Condition::create(self)
    }

    pub fn barrier(&self, parties: u32) -> IpcResult<Barrier> {
        Barrier::create(self, parties)
    }

    pub fn event(&self) -> IpcResult<Event> {
        Event::create(self)
    }

    pub fn array(&self, tag: ScalarTag, len: u32) -> IpcResult<Array> {
        Array::create(self, tag, len)
    }

    pub fn value(&self, init: Scalar) -> IpcResult<Value> {
        Value::create(self, init)
    }

    pub fn dict(&self) -> IpcResult<ManagerDict> {
        ManagerDict::create(self)
    }

    pub fn list(&self) -> IpcResult<ManagerList> {
        ManagerList::create(self)
    }

    pub fn object(&self, class: &str, init: Attrs) -> IpcResult<ManagerObject> {
        ManagerObject::create(self, class, init)
    }
}

pub(crate) fn expect_spec_count(handle: &ResourceHandle) -> IpcResult<u32> {
    match handle.spec() {
        KindSpec::Count(n) | KindSpec::Capacity(n) => Ok(*n),
        _ => Err(IpcError::InvalidArgument("handle lacks a count field".into())),
    }
}
