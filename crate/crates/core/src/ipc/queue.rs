use std::time::Duration;

use bytes::Bytes;

use super::{expect_spec_count, Ipc, IpcResult, KindSpec, Resource, ResourceHandle, ResourceKind};
use crate::store::{Command, StoreError, StoreExt};

const SLOT: &[u8] = b"s";

/// Multi-producer multi-consumer FIFO. A bounded queue also keeps a list
/// of free-slot tokens that `put` must take first.
pub struct Queue {
    handle: ResourceHandle,
    maxsize: u32,
}

impl Queue {
    pub(super) fn create(ipc: &Ipc, maxsize: u32) -> IpcResult<Self> {
        let handle = ResourceHandle::create(
            ipc.store().clone(),
            ResourceKind::Queue,
            KindSpec::Capacity(maxsize),
            ipc.ttl(),
            1,
            |h| {
                if maxsize == 0 {
                    return vec![];
                }
                vec![Command::PushTail { key: h.key("slots"), values: vec![Bytes::from_static(SLOT); maxsize as usize] }]
            },
        )?;
        Ok(Queue { handle, maxsize })
    }

    fn items(&self) -> String {
        self.handle.key("items")
    }

    fn slots(&self) -> String {
        self.handle.key("slots")
    }

    pub fn maxsize(&self) -> Option<u32> {
        (self.maxsize > 0).then_some(self.maxsize)
    }

    /// Enqueue; a full bounded queue waits up to `timeout` for room.
    pub fn put(&self, item: impl Into<Bytes>, timeout: Option<Duration>) -> IpcResult<()> {
        self.handle.ensure_live()?;
        if self.maxsize > 0 {
            match self.handle.store().pop_head(&self.slots(), timeout) {
                Err(StoreError::Timeout) => return Err(self.handle.timeout_or_dropped()),
                r => {
                    r?;
                }
            }
        }
        self.handle.push_armed(&self.items(), vec![item.into()])?;
        Ok(())
    }

    pub fn get(&self, timeout: Option<Duration>) -> IpcResult<Bytes> {
        self.handle.ensure_live()?;
        let item = match self.handle.store().pop_head(&self.items(), timeout) {
            Err(StoreError::Timeout) => return Err(self.handle.timeout_or_dropped()),
            r => r?,
        };
        if self.maxsize > 0 {
            self.handle.push_armed(&self.slots(), vec![Bytes::from_static(SLOT)])?;
        }
        Ok(item)
    }

    /// Point-in-time item count.
    pub fn size(&self) -> IpcResult<i64> {
        self.handle.ensure_live()?;
        Ok(self.handle.store().list_len(&self.items())?)
    }
}

impl Resource for Queue {
    const KIND: ResourceKind = ResourceKind::Queue;

    fn from_handle(handle: ResourceHandle, _: &Ipc) -> IpcResult<Self> {
        let maxsize = expect_spec_count(&handle)?;
        Ok(Queue { handle, maxsize })
    }

    fn handle(&self) -> &ResourceHandle {
        &self.handle
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;
    use std::sync::Arc;
    use std::thread;

    use super::*;
    use crate::ipc::IpcError;
    use crate::store::Engine;

    fn ipc() -> Ipc {
        Ipc::new(Arc::new(Engine::new()))
    }

    #[test]
    fn fifo_single_producer() {
        let q = ipc().queue(None).unwrap();
        for x in ["a", "b", "c"] {
            q.put(x, None).unwrap();
        }
        assert_eq!(q.size().unwrap(), 3);
        for x in ["a", "b", "c"] {
            assert_eq!(q.get(None).unwrap(), x);
        }
    }

    #[test]
    fn bounded_put_times_out() {
        let q = ipc().queue(Some(1)).unwrap();
        q.put("x", None).unwrap();
        assert_eq!(q.put("y", Some(Duration::from_millis(10))), Err(IpcError::Timeout));
        assert_eq!(q.get(None).unwrap(), "x");
        q.put("y", Some(Duration::from_millis(10))).unwrap();
    }

    #[test]
    fn many_producers_many_consumers_exactly_once() {
        let ipc = ipc();
        let q = Arc::new(ipc.queue(Some(16)).unwrap());
        let producers: Vec<_> = (0..4)
            .map(|p| {
                let q = q.clone();
                thread::spawn(move || {
                    for i in 0..250 {
                        q.put(format!("{p}-{i}"), None).unwrap();
                    }
                })
            })
            .collect();
        let consumers: Vec<_> = (0..4)
            .map(|_| {
                let q = q.clone();
                thread::spawn(move || (0..250).map(|_| q.get(None).unwrap()).collect::<Vec<_>>())
            })
            .collect();
        producers.into_iter().for_each(|h| h.join().unwrap());
        let mut tally: BTreeMap<Bytes, usize> = BTreeMap::new();
        for h in consumers {
            for item in h.join().unwrap() {
                *tally.entry(item).or_default() += 1;
            }
        }
        assert_eq!(tally.len(), 1000);
        assert!(tally.values().all(|&n| n == 1));
    }
}
