use std::time::Duration;

use bytes::Bytes;

use super::{Ipc, IpcResult, KindSpec, Resource, ResourceHandle, ResourceKind};
use crate::store::StoreExt;

/// One end of a duplex pipe. Each direction is its own list, so traffic
/// one way never reorders the other.
pub struct Connection {
    handle: ResourceHandle,
    end: u8,
}

pub(super) fn create(ipc: &Ipc) -> IpcResult<(Connection, Connection)> {
    let a = ResourceHandle::create(ipc.store().clone(), ResourceKind::Pipe, KindSpec::PipeEnd(0), ipc.ttl(), 2, |_| vec![])?;
    let b = a.sibling(KindSpec::PipeEnd(1));
    Ok((Connection { handle: a, end: 0 }, Connection { handle: b, end: 1 }))
}

impl Connection {
    fn outbound(&self) -> String {
        self.handle.key(if self.end == 0 { "a2b" } else { "b2a" })
    }

    fn inbound(&self) -> String {
        self.handle.key(if self.end == 0 { "b2a" } else { "a2b" })
    }

    pub fn send(&self, msg: impl Into<Bytes>) -> IpcResult<()> {
        self.handle.ensure_live()?;
        self.handle.push_armed(&self.outbound(), vec![msg.into()])?;
        Ok(())
    }

    /// Receive the next message; `None` waits forever.
    pub fn recv(&self, timeout: Option<Duration>) -> IpcResult<Bytes> {
        self.handle.ensure_live()?;
        match self.handle.store().pop_head(&self.inbound(), timeout) {
            Err(crate::store::StoreError::Timeout) => Err(self.handle.timeout_or_dropped()),
            r => Ok(r?),
        }
    }

    /// Messages waiting to be received at this end.
    pub fn pending(&self) -> IpcResult<i64> {
        self.handle.ensure_live()?;
        Ok(self.handle.store().list_len(&self.inbound())?)
    }
}

impl Resource for Connection {
    const KIND: ResourceKind = ResourceKind::Pipe;

    fn from_handle(handle: ResourceHandle, _: &Ipc) -> IpcResult<Self> {
        let end = match handle.spec() {
            KindSpec::PipeEnd(e @ (0 | 1)) => *e,
            _ => return Err(super::IpcError::InvalidArgument("bad pipe end".into())),
        };
        Ok(Connection { handle, end })
    }

    fn handle(&self) -> &ResourceHandle {
        &self.handle
    }
}
