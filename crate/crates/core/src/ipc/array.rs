use super::{Ipc, IpcError, IpcResult, KindSpec, Resource, ResourceHandle, ResourceKind, Scalar, ScalarTag};
use crate::store::{Command, StoreExt};

/// Fixed-length typed array kept as a store list, one element per entry.
/// Every element access is one store round trip.
pub struct Array {
    handle: ResourceHandle,
    tag: ScalarTag,
    len: u32,
}

impl Array {
    pub(super) fn create(ipc: &Ipc, tag: ScalarTag, len: u32) -> IpcResult<Self> {
        Self::create_kind(ipc, ResourceKind::Array, vec![Scalar::zero(tag); len as usize], tag)
    }

    fn create_kind(ipc: &Ipc, kind: ResourceKind, init: Vec<Scalar>, tag: ScalarTag) -> IpcResult<Self> {
        let len = init.len() as u32;
        let handle =
            ResourceHandle::create(ipc.store().clone(), kind, KindSpec::Array { tag, len }, ipc.ttl(), 1, |h| {
                if init.is_empty() {
                    return vec![];
                }
                vec![Command::PushTail { key: h.key("data"), values: init.iter().map(Scalar::encode).collect() }]
            })?;
        Ok(Array { handle, tag, len })
    }

    fn from_spec(handle: ResourceHandle) -> IpcResult<Self> {
        match *handle.spec() {
            KindSpec::Array { tag, len } => Ok(Array { handle, tag, len }),
            _ => Err(IpcError::InvalidArgument("array handle without type fields".into())),
        }
    }

    fn data(&self) -> String {
        self.handle.key("data")
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn tag(&self) -> ScalarTag {
        self.tag
    }

    fn check_index(&self, i: usize) -> IpcResult<()> {
        if i < self.len as usize {
            Ok(())
        } else {
            Err(IpcError::IndexOutOfRange)
        }
    }

    fn decode(&self, bytes: &[u8]) -> IpcResult<Scalar> {
        let v = Scalar::decode(bytes)?;
        v.expect_tag(self.tag)?;
        Ok(v)
    }

    pub fn get(&self, i: usize) -> IpcResult<Scalar> {
        self.handle.ensure_live()?;
        self.check_index(i)?;
        let raw = self.handle.store().list_index_get(&self.data(), i as i64)?;
        self.decode(&raw)
    }

    pub fn set(&self, i: usize, v: Scalar) -> IpcResult<()> {
        self.handle.ensure_live()?;
        self.check_index(i)?;
        v.expect_tag(self.tag)?;
        Ok(self.handle.store().list_index_set(&self.data(), i as i64, v.encode())?)
    }

    /// Elements `start..stop` in one round trip.
    pub fn slice_get(&self, start: usize, stop: usize) -> IpcResult<Vec<Scalar>> {
        self.handle.ensure_live()?;
        if start > stop || stop > self.len as usize {
            return Err(IpcError::IndexOutOfRange);
        }
        if start == stop {
            return Ok(Vec::new());
        }
        let raw = self.handle.store().list_range(&self.data(), start as i64, stop as i64 - 1)?;
        raw.iter().map(|b| self.decode(b)).collect()
    }

    /// Overwrite elements from `start` with one pipelined batch.
    pub fn slice_set(&self, start: usize, values: &[Scalar]) -> IpcResult<()> {
        self.handle.ensure_live()?;
        if start + values.len() > self.len as usize {
            return Err(IpcError::IndexOutOfRange);
        }
        for v in values {
            v.expect_tag(self.tag)?;
        }
        if values.is_empty() {
            return Ok(());
        }
        let key = self.data();
        let cmds = values
            .iter()
            .enumerate()
            .map(|(i, v)| Command::ListIndexSet { key: key.clone(), index: (start + i) as i64, value: v.encode() })
            .collect();
        for r in self.handle.store().pipeline(cmds) {
            r?;
        }
        Ok(())
    }

    pub fn to_vec(&self) -> IpcResult<Vec<Scalar>> {
        self.slice_get(0, self.len as usize)
    }
}

impl Resource for Array {
    const KIND: ResourceKind = ResourceKind::Array;

    fn from_handle(handle: ResourceHandle, _: &Ipc) -> IpcResult<Self> {
        Self::from_spec(handle)
    }

    fn handle(&self) -> &ResourceHandle {
        &self.handle
    }
}

/// A single shared scalar.
pub struct Value {
    inner: Array,
}

impl Value {
    pub(super) fn create(ipc: &Ipc, init: Scalar) -> IpcResult<Self> {
        Ok(Value { inner: Array::create_kind(ipc, ResourceKind::Value, vec![init], init.tag())? })
    }

    pub fn get(&self) -> IpcResult<Scalar> {
        self.inner.get(0)
    }

    pub fn set(&self, v: Scalar) -> IpcResult<()> {
        self.inner.set(0, v)
    }

    pub fn tag(&self) -> ScalarTag {
        self.inner.tag
    }
}

impl Resource for Value {
    const KIND: ResourceKind = ResourceKind::Value;

    fn from_handle(handle: ResourceHandle, _: &Ipc) -> IpcResult<Self> {
        Ok(Value { inner: Array::from_spec(handle)? })
    }

    fn handle(&self) -> &ResourceHandle {
        &self.inner.handle
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::store::{CountingStore, Engine, SharedStore};

    #[test]
    fn element_and_slice_access() {
        let ipc = Ipc::new(Arc::new(Engine::new()));
        let a = ipc.array(ScalarTag::Int64, 3).unwrap();
        a.set(1, Scalar::Int64(7)).unwrap();
        assert_eq!(a.get(1).unwrap(), Scalar::Int64(7));
        assert_eq!(a.slice_get(0, 3).unwrap(), vec![Scalar::Int64(0), Scalar::Int64(7), Scalar::Int64(0)]);
        assert_eq!(a.get(3), Err(IpcError::IndexOutOfRange));
        assert_eq!(a.set(0, Scalar::Bool(true)), Err(IpcError::TypeMismatch { expected: ScalarTag::Int64, got: ScalarTag::Bool }));
        a.slice_set(1, &[Scalar::Int64(5), Scalar::Int64(6)]).unwrap();
        assert_eq!(a.to_vec().unwrap(), vec![Scalar::Int64(0), Scalar::Int64(5), Scalar::Int64(6)]);
    }

    #[test]
    fn round_trips_in_place_vs_copy() {
        let counting = Arc::new(CountingStore::new(Arc::new(Engine::new())));
        let ipc = Ipc::new(counting.clone() as SharedStore);
        let n = 50;
        let a = ipc.array(ScalarTag::Float64, n as u32).unwrap();
        counting.reset();
        for i in 0..n {
            a.set(i, Scalar::Float64(i as f64)).unwrap();
        }
        assert_eq!(counting.round_trips(), n as u64);
        counting.reset();
        let copy = a.slice_get(0, n).unwrap();
        a.slice_set(0, &copy).unwrap();
        assert_eq!(counting.round_trips(), 2);
    }

    #[test]
    fn value_is_one_element_array() {
        let ipc = Ipc::new(Arc::new(Engine::new()));
        let v = ipc.value(Scalar::Char('q')).unwrap();
        assert_eq!(v.get().unwrap(), Scalar::Char('q'));
        let w: Value = ipc.adopt(&v.share().unwrap()).unwrap();
        w.set(Scalar::Char('z')).unwrap();
        assert_eq!(v.get().unwrap(), Scalar::Char('z'));
        assert!(matches!(ipc.adopt::<Array>(&v.share().unwrap()), Err(IpcError::WrongKind { .. })));
    }
}
