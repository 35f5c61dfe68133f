use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Duration;

use bytes::Bytes;
use uuid::Uuid;

use super::{IpcError, IpcResult, ScalarTag};
use crate::store::{duration_ms, Command, SharedStore, StoreExt};
use crate::wire::{DecodeError, Decoder, Encoder};

/// Default lifetime of an untouched resource.
pub const DEFAULT_TTL: Duration = Duration::from_secs(3600);

/// Prefix under which every resource keeps its keys.
pub const RESOURCE_PREFIX: &str = "rsrc/";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum ResourceKind {
    Pipe = 1,
    Queue = 2,
    Semaphore = 3,
    Lock = 4,
    Condition = 5,
    Barrier = 6,
    Event = 7,
    Array = 8,
    Value = 9,
    ManagerDict = 10,
    ManagerList = 11,
    ManagerObject = 12,
}

impl TryFrom<u8> for ResourceKind {
    type Error = DecodeError;

    fn try_from(b: u8) -> Result<Self, DecodeError> {
        use ResourceKind::*;
        Ok(match b {
            1 => Pipe,
            2 => Queue,
            3 => Semaphore,
            4 => Lock,
            5 => Condition,
            6 => Barrier,
            7 => Event,
            8 => Array,
            9 => Value,
            10 => ManagerDict,
            11 => ManagerList,
            12 => ManagerObject,
            _ => return Err(DecodeError::Invalid("resource kind")),
        })
    }
}

/// Kind-specific handle fields.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum KindSpec {
    None,
    /// Pipe end: 0 or 1.
    PipeEnd(u8),
    /// Queue capacity, 0 = unbounded.
    Capacity(u32),
    /// Semaphore tokens or barrier parties.
    Count(u32),
    Array { tag: ScalarTag, len: u32 },
    Class(String),
}

/// Client-side proxy for one store-resident resource. Each live handle
/// owns one unit of the store-side reference count; dropping the last one
/// deletes every key of the resource.
pub struct ResourceHandle {
    store: SharedStore,
    id: Uuid,
    kind: ResourceKind,
    ttl: Duration,
    spec: KindSpec,
    released: AtomicBool,
}

impl std::fmt::Debug for ResourceHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ResourceHandle")
            .field("id", &self.id)
            .field("kind", &self.kind)
            .field("spec", &self.spec)
            .finish()
    }
}

impl ResourceHandle {
    /// Create the store side: run the commands built by `init`, set the refcount to `refs`, and
    /// arm the TTL of every key created so far.
    pub(crate) fn create(
        store: SharedStore,
        kind: ResourceKind,
        spec: KindSpec,
        ttl: Duration,
        refs: i64,
        init: impl FnOnce(&ResourceHandle) -> Vec<Command>,
    ) -> IpcResult<Self> {
        let id = Uuid::new_v4();
        let handle = ResourceHandle { store, id, kind, ttl, spec, released: AtomicBool::new(false) };
        let mut cmds = init(&handle);
        cmds.push(Command::CounterAdd { key: handle.refs_key(), delta: refs });
        for r in handle.store.pipeline(cmds) {
            r?;
        }
        let keys = handle.store.key_scan(&handle.prefix())?;
        let ttl_ms = duration_ms(ttl);
        for r in handle.store.pipeline(keys.into_iter().map(|key| Command::KeyExpire { key, ttl_ms }).collect()) {
            r?;
        }
        Ok(handle)
    }

    /// A second local handle sharing an already-counted reference.
    pub(crate) fn sibling(&self, spec: KindSpec) -> Self {
        ResourceHandle {
            store: self.store.clone(),
            id: self.id,
            kind: self.kind,
            ttl: self.ttl,
            spec,
            released: AtomicBool::new(false),
        }
    }

    pub fn id(&self) -> Uuid {
        self.id
    }

    pub fn kind(&self) -> ResourceKind {
        self.kind
    }

    pub fn spec(&self) -> &KindSpec {
        &self.spec
    }

    pub fn ttl(&self) -> Duration {
        self.ttl
    }

    pub fn store(&self) -> &SharedStore {
        &self.store
    }

    pub fn prefix(&self) -> String {
        format!("{RESOURCE_PREFIX}{}/", self.id)
    }

    pub fn key(&self, suffix: &str) -> String {
        format!("{RESOURCE_PREFIX}{}/{suffix}", self.id)
    }

    pub fn refs_key(&self) -> String {
        self.key("refs")
    }

    pub(crate) fn ensure_live(&self) -> IpcResult<()> {
        if self.released.load(Ordering::SeqCst) {
            Err(IpcError::DroppedResource)
        } else {
            Ok(())
        }
    }

    /// Translate a blocking timeout into `DroppedResource` when the
    /// resource vanished underneath the caller.
    pub(crate) fn timeout_or_dropped(&self) -> IpcError {
        match self.store.key_exists(&self.refs_key()) {
            Ok(false) => IpcError::DroppedResource,
            _ => IpcError::Timeout,
        }
    }

    /// Append values and re-arm the list's TTL in the same round trip; the
    /// list may have been deleted when it last became empty.
    pub(crate) fn push_armed(&self, key: &str, values: Vec<Bytes>) -> IpcResult<i64> {
        let mut results = self.store.pipeline(vec![
            Command::PushTail { key: key.to_owned(), values },
            Command::KeyExpire { key: key.to_owned(), ttl_ms: duration_ms(self.ttl) },
        ]);
        let expire = results.pop().expect("two replies");
        let len = match results.pop().expect("two replies")? {
            crate::store::Reply::Int(n) => n,
            _ => return Err(crate::store::StoreError::UnexpectedReply("push_tail").into()),
        };
        expire?;
        Ok(len)
    }

    /// Store-side reference count.
    pub fn refcount(&self) -> IpcResult<i64> {
        Ok(self.store.counter_add(&self.refs_key(), 0)?)
    }

    /// Take another reference and return a new handle owning it.
    pub fn clone_handle(&self) -> IpcResult<Self> {
        self.ensure_live()?;
        self.store.counter_add(&self.refs_key(), 1)?;
        Ok(self.sibling(self.spec.clone()))
    }

    /// Serialize for transfer, taking a reference that the receiver adopts.
    pub fn share(&self) -> IpcResult<Vec<u8>> {
        self.ensure_live()?;
        self.store.counter_add(&self.refs_key(), 1)?;
        Ok(self.to_bytes())
    }

    /// Rebuild a handle from [`share`](Self::share) output without taking a
    /// new reference.
    pub fn adopt(store: SharedStore, bytes: &[u8]) -> IpcResult<Self> {
        let mut d = Decoder::new(bytes);
        let kind = ResourceKind::try_from(d.u8()?)?;
        let id = d.uuid()?;
        let ttl = Duration::from_secs(d.u32()? as u64);
        let spec = match kind {
            ResourceKind::Pipe => KindSpec::PipeEnd(d.u8()?),
            ResourceKind::Queue => KindSpec::Capacity(d.u32()?),
            ResourceKind::Semaphore | ResourceKind::Lock | ResourceKind::Barrier => KindSpec::Count(d.u32()?),
            ResourceKind::Array | ResourceKind::Value => {
                let tag = ScalarTag::try_from(d.u8()?)?;
                KindSpec::Array { tag, len: d.u32()? }
            }
            ResourceKind::ManagerObject => KindSpec::Class(d.string()?),
            ResourceKind::Condition | ResourceKind::Event | ResourceKind::ManagerDict | ResourceKind::ManagerList => {
                KindSpec::None
            }
        };
        d.end()?;
        Ok(ResourceHandle { store, id, kind, ttl, spec, released: AtomicBool::new(false) })
    }

    /// Wire form: kind byte, 16-byte uuid, u32 TTL seconds, kind fields.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        e.u8(self.kind as u8).uuid(&self.id).u32(self.ttl.as_secs().min(u32::MAX as u64) as u32);
        match &self.spec {
            KindSpec::None => {}
            KindSpec::PipeEnd(end) => {
                e.u8(*end);
            }
            KindSpec::Capacity(n) | KindSpec::Count(n) => {
                e.u32(*n);
            }
            KindSpec::Array { tag, len } => {
                e.u8(*tag as u8).u32(*len);
            }
            KindSpec::Class(c) => {
                e.str(c);
            }
        }
        e.finish()
    }

    /// Give up this handle's reference. The last release deletes every key
    /// of the resource. Returns whether this call deleted the resource.
    pub fn release(&self) -> IpcResult<bool> {
        if self.released.swap(true, Ordering::SeqCst) {
            return Ok(false);
        }
        let left = self.store.counter_add(&self.refs_key(), -1)?;
        if left > 0 {
            return Ok(false);
        }
        let keys = self.store.key_scan(&self.prefix())?;
        for r in self.store.pipeline(keys.into_iter().map(|key| Command::KeyDelete { key }).collect()) {
            r?;
        }
        Ok(true)
    }

    pub fn is_released(&self) -> bool {
        self.released.load(Ordering::SeqCst)
    }
}

impl Drop for ResourceHandle {
    fn drop(&mut self) {
        if let Err(e) = self.release() {
            log::debug!("release of {} failed: {e}", self.id);
        }
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::ipc::{Ipc, Queue, Resource};
    use crate::store::{Engine, EngineConfig, ManualClock};

    fn live_keys(store: &SharedStore) -> Vec<String> {
        store.key_scan(RESOURCE_PREFIX).unwrap()
    }

    #[test]
    fn clone_and_drop_counts() {
        let store: SharedStore = Arc::new(Engine::new());
        let ipc = Ipc::new(store.clone());
        let q = ipc.queue(None).unwrap();
        q.put("x", None).unwrap();
        assert_eq!(q.handle().refcount().unwrap(), 1);
        let h2 = q.handle().clone_handle().unwrap();
        assert_eq!(q.handle().refcount().unwrap(), 2);
        drop(q);
        assert!(!live_keys(&store).is_empty());
        drop(h2);
        assert!(live_keys(&store).is_empty());
    }

    #[test]
    fn transfer_never_deletes_early() {
        let store: SharedStore = Arc::new(Engine::new());
        let ipc = Ipc::new(store.clone());
        let q = ipc.queue(Some(2)).unwrap();
        let wire = q.share().unwrap();
        // Creator drops before the receiver adopts.
        drop(q);
        assert_eq!(store.counter_add(&live_keys(&store)[0], 0).unwrap(), 1);
        let received: Queue = ipc.adopt(&wire).unwrap();
        received.put("y", None).unwrap();
        assert_eq!(received.get(None).unwrap(), "y");
        drop(received);
        assert!(live_keys(&store).is_empty());
    }

    #[test]
    fn release_is_idempotent_and_blocks_use() {
        let ipc = Ipc::new(Arc::new(Engine::new()));
        let q = ipc.queue(None).unwrap();
        let h2 = q.handle().clone_handle().unwrap();
        assert!(!q.handle().release().unwrap());
        assert!(!q.handle().release().unwrap());
        assert_eq!(h2.refcount().unwrap(), 1);
        assert_eq!(q.put("x", None), Err(crate::ipc::IpcError::DroppedResource));
    }

    #[test]
    fn handle_bytes_round_trip() {
        let ipc = Ipc::new(Arc::new(Engine::new()));
        let a = ipc.array(crate::ipc::ScalarTag::Float64, 7).unwrap();
        let bytes = a.handle().to_bytes();
        assert_eq!(bytes[0], ResourceKind::Array as u8);
        assert_eq!(&bytes[1..17], a.handle().id().as_bytes());
        assert_eq!(&bytes[17..21], &3600u32.to_be_bytes());
        assert_eq!(&bytes[21..], &[2, 0, 0, 0, 7]);
        let back = ResourceHandle::adopt(ipc.store().clone(), &bytes).unwrap();
        assert_eq!(back.spec(), a.handle().spec());
        // `back` holds no reference of its own; keep the count balanced.
        std::mem::forget(back);
        assert!(ResourceHandle::adopt(ipc.store().clone(), &bytes[..20]).is_err());
    }

    #[test]
    fn orphan_expires_after_ttl() {
        let clock = Arc::new(ManualClock::new());
        let engine = Engine::with_config(EngineConfig { sweep_interval: None, clock: clock.clone() });
        let store: SharedStore = Arc::new(engine.clone());
        let ipc = Ipc::new(store.clone()).with_ttl(Duration::from_secs(2));
        let q = ipc.queue(Some(3)).unwrap();
        q.put("x", None).unwrap();
        // Simulate a crashed owner: the handle never releases.
        std::mem::forget(q);
        clock.advance(Duration::from_millis(1900));
        assert!(!live_keys(&store).is_empty());
        clock.advance(Duration::from_millis(200));
        engine.sweep();
        assert_eq!(engine.key_count(), 0);
    }
}
