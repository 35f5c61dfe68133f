use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use bytes::Bytes;

use super::{Ipc, IpcError, IpcResult, KindSpec, Resource, ResourceHandle, ResourceKind};
use crate::store::{Command, StoreError, StoreExt};

/// Attribute map of a managed object.
pub type Attrs = BTreeMap<String, Bytes>;

/// A method runs locally against the loaded attributes and may mutate them.
pub type MethodFn = Arc<dyn Fn(&mut Attrs, &[u8]) -> anyhow::Result<Vec<u8>> + Send + Sync>;

/// Named method set for managed objects.
#[derive(Clone)]
pub struct ManagerClass {
    name: String,
    methods: HashMap<String, MethodFn>,
}

impl ManagerClass {
    pub fn new(name: impl Into<String>) -> Self {
        ManagerClass { name: name.into(), methods: HashMap::new() }
    }

    pub fn method<F>(mut self, name: &str, f: F) -> Self
    where
        F: Fn(&mut Attrs, &[u8]) -> anyhow::Result<Vec<u8>> + Send + Sync + 'static,
    {
        self.methods.insert(name.to_owned(), Arc::new(f));
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }
}

#[derive(Clone, Default)]
pub struct ClassRegistry {
    classes: HashMap<String, Arc<ManagerClass>>,
}

impl ClassRegistry {
    pub fn register(&mut self, class: ManagerClass) {
        self.classes.insert(class.name.clone(), Arc::new(class));
    }

    pub fn get(&self, name: &str) -> IpcResult<Arc<ManagerClass>> {
        self.classes.get(name).cloned().ok_or_else(|| IpcError::UnknownClass(name.to_owned()))
    }

    pub fn names(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.classes.keys().map(String::as_str).collect();
        v.sort_unstable();
        v
    }
}

/// Shared string-keyed map backed by a store hash.
pub struct ManagerDict {
    handle: ResourceHandle,
}

impl ManagerDict {
    pub(super) fn create(ipc: &Ipc) -> IpcResult<Self> {
        let handle =
            ResourceHandle::create(ipc.store().clone(), ResourceKind::ManagerDict, KindSpec::None, ipc.ttl(), 1, |_| {
                vec![]
            })?;
        Ok(ManagerDict { handle })
    }

    fn key(&self) -> String {
        self.handle.key("dict")
    }

    pub fn set(&self, k: &str, v: impl Into<Bytes>) -> IpcResult<()> {
        self.handle.ensure_live()?;
        self.handle.store().hash_set(&self.key(), k, v)?;
        self.handle.store().key_expire(&self.key(), self.handle.ttl())?;
        Ok(())
    }

    pub fn get(&self, k: &str) -> IpcResult<Option<Bytes>> {
        self.handle.ensure_live()?;
        Ok(self.handle.store().hash_get(&self.key(), k)?)
    }

    pub fn remove(&self, k: &str) -> IpcResult<bool> {
        self.handle.ensure_live()?;
        Ok(self.handle.store().hash_del(&self.key(), k)?)
    }

    pub fn items(&self) -> IpcResult<BTreeMap<String, Bytes>> {
        self.handle.ensure_live()?;
        Ok(self.handle.store().hash_get_all(&self.key())?)
    }

    pub fn len(&self) -> IpcResult<usize> {
        Ok(self.items()?.len())
    }

    pub fn is_empty(&self) -> IpcResult<bool> {
        Ok(self.len()? == 0)
    }
}

impl Resource for ManagerDict {
    const KIND: ResourceKind = ResourceKind::ManagerDict;

    fn from_handle(handle: ResourceHandle, _: &Ipc) -> IpcResult<Self> {
        Ok(ManagerDict { handle })
    }

    fn handle(&self) -> &ResourceHandle {
        &self.handle
    }
}

/// Shared growable list backed by a store list.
pub struct ManagerList {
    handle: ResourceHandle,
}

impl ManagerList {
    pub(super) fn create(ipc: &Ipc) -> IpcResult<Self> {
        let handle =
            ResourceHandle::create(ipc.store().clone(), ResourceKind::ManagerList, KindSpec::None, ipc.ttl(), 1, |_| {
                vec![]
            })?;
        Ok(ManagerList { handle })
    }

    fn key(&self) -> String {
        self.handle.key("list")
    }

    pub fn append(&self, v: impl Into<Bytes>) -> IpcResult<usize> {
        self.handle.ensure_live()?;
        Ok(self.handle.push_armed(&self.key(), vec![v.into()])? as usize)
    }

    pub fn get(&self, i: i64) -> IpcResult<Bytes> {
        self.handle.ensure_live()?;
        Ok(self.handle.store().list_index_get(&self.key(), i)?)
    }

    pub fn set(&self, i: i64, v: impl Into<Bytes>) -> IpcResult<()> {
        self.handle.ensure_live()?;
        Ok(self.handle.store().list_index_set(&self.key(), i, v)?)
    }

    pub fn len(&self) -> IpcResult<usize> {
        self.handle.ensure_live()?;
        Ok(self.handle.store().list_len(&self.key())? as usize)
    }

    pub fn is_empty(&self) -> IpcResult<bool> {
        Ok(self.len()? == 0)
    }

    pub fn to_vec(&self) -> IpcResult<Vec<Bytes>> {
        self.handle.ensure_live()?;
        Ok(self.handle.store().list_range(&self.key(), 0, -1)?)
    }
}

impl Resource for ManagerList {
    const KIND: ResourceKind = ResourceKind::ManagerList;

    fn from_handle(handle: ResourceHandle, _: &Ipc) -> IpcResult<Self> {
        Ok(ManagerList { handle })
    }

    fn handle(&self) -> &ResourceHandle {
        &self.handle
    }
}

/// Object whose attributes live in a store hash. Method calls run locally
/// under the object's lock: load attributes, run, write back the changes.
pub struct ManagerObject {
    handle: ResourceHandle,
    class: Arc<ManagerClass>,
}

const LOCK_TOKEN: &[u8] = b"l";

impl ManagerObject {
    pub(super) fn create(ipc: &Ipc, class: &str, init: Attrs) -> IpcResult<Self> {
        let class = ipc.classes().get(class)?;
        let handle = ResourceHandle::create(
            ipc.store().clone(),
            ResourceKind::ManagerObject,
            KindSpec::Class(class.name.clone()),
            ipc.ttl(),
            1,
            |h| {
                let mut cmds = vec![Command::PushTail { key: h.key("lock"), values: vec![Bytes::from_static(LOCK_TOKEN)] }];
                cmds.extend(init.into_iter().map(|(field, value)| Command::HashSet { key: h.key("attrs"), field, value }));
                cmds
            },
        )?;
        Ok(ManagerObject { handle, class })
    }

    pub fn class_name(&self) -> &str {
        &self.class.name
    }

    fn attrs_key(&self) -> String {
        self.handle.key("attrs")
    }

    fn with_lock<T>(&self, f: impl FnOnce() -> IpcResult<T>) -> IpcResult<T> {
        self.handle.ensure_live()?;
        match self.handle.store().pop_head(&self.handle.key("lock"), None) {
            Ok(_) => {}
            Err(StoreError::Timeout) => return Err(self.handle.timeout_or_dropped()),
            Err(e) => return Err(e.into()),
        }
        let out = f();
        self.handle.push_armed(&self.handle.key("lock"), vec![Bytes::from_static(LOCK_TOKEN)])?;
        out
    }

    pub fn attr_get(&self, name: &str) -> IpcResult<Option<Bytes>> {
        self.handle.ensure_live()?;
        Ok(self.handle.store().hash_get(&self.attrs_key(), name)?)
    }

    pub fn attr_set(&self, name: &str, value: impl Into<Bytes>) -> IpcResult<()> {
        let value = value.into();
        self.with_lock(|| {
            self.handle.store().hash_set(&self.attrs_key(), name, value)?;
            self.handle.store().key_expire(&self.attrs_key(), self.handle.ttl())?;
            Ok(())
        })
    }

    pub fn attrs(&self) -> IpcResult<Attrs> {
        self.handle.ensure_live()?;
        Ok(self.handle.store().hash_get_all(&self.attrs_key())?)
    }

    pub fn call(&self, method: &str, args: &[u8]) -> IpcResult<Vec<u8>> {
        let f = self.class.methods.get(method).cloned().ok_or_else(|| IpcError::UnknownMethod(method.to_owned()))?;
        self.with_lock(|| {
            let store = self.handle.store();
            let before = store.hash_get_all(&self.attrs_key())?;
            let mut attrs = before.clone();
            let out = f(&mut attrs, args).map_err(|e| IpcError::Method(format!("{e:#}")))?;
            let key = self.attrs_key();
            let mut writes: Vec<Command> = attrs
                .iter()
                .filter(|(k, v)| before.get(*k) != Some(*v))
                .map(|(k, v)| Command::HashSet { key: key.clone(), field: k.clone(), value: v.clone() })
                .collect();
            writes.extend(
                before
                    .keys()
                    .filter(|k| !attrs.contains_key(*k))
                    .map(|k| Command::HashDel { key: key.clone(), field: k.clone() }),
            );
            if !writes.is_empty() {
                writes.push(Command::KeyExpire { key: key.clone(), ttl_ms: crate::store::duration_ms(self.handle.ttl()) });
                for r in store.pipeline(writes) {
                    r?;
                }
            }
            Ok(out)
        })
    }
}

impl Resource for ManagerObject {
    const KIND: ResourceKind = ResourceKind::ManagerObject;

    fn from_handle(handle: ResourceHandle, ipc: &Ipc) -> IpcResult<Self> {
        let class = match handle.spec() {
            KindSpec::Class(c) => ipc.classes().get(c)?,
            _ => return Err(IpcError::InvalidArgument("object handle without class".into())),
        };
        Ok(ManagerObject { handle, class })
    }

    fn handle(&self) -> &ResourceHandle {
        &self.handle
    }
}

#[cfg(test)]
mod tests {
    use std::thread;

    use super::*;
    use crate::store::Engine;

    fn counter_class() -> ManagerClass {
        ManagerClass::new("Counter").method("inc", |attrs, _| {
            let n = attrs.get("n").map(|b| i64::from_be_bytes(b[..].try_into().unwrap())).unwrap_or(0) + 1;
            attrs.insert("n".into(), Bytes::copy_from_slice(&n.to_be_bytes()));
            Ok(n.to_be_bytes().to_vec())
        })
    }

    fn ipc() -> Ipc {
        let mut classes = ClassRegistry::default();
        classes.register(counter_class());
        Ipc::new(Arc::new(Engine::new())).with_classes(Arc::new(classes))
    }

    #[test]
    fn dict_visible_across_handles() {
        let ipc = ipc();
        let a = ipc.dict().unwrap();
        a.set("k", "1").unwrap();
        let b: ManagerDict = ipc.adopt(&a.share().unwrap()).unwrap();
        assert_eq!(b.get("k").unwrap().unwrap(), "1");
        assert_eq!(b.get("absent").unwrap(), None);
    }

    #[test]
    fn list_ops() {
        let l = ipc().list().unwrap();
        assert_eq!(l.append("a").unwrap(), 1);
        l.append("b").unwrap();
        l.set(0, "z").unwrap();
        assert_eq!(l.to_vec().unwrap(), vec![Bytes::from("z"), Bytes::from("b")]);
        assert_eq!(l.get(5), Err(IpcError::IndexOutOfRange));
    }

    #[test]
    fn object_methods_serialize() {
        let ipc = ipc();
        let obj = ipc.object("Counter", Attrs::new()).unwrap();
        assert_eq!(obj.attr_get("n").unwrap(), None);
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let bytes = obj.share().unwrap();
                let ipc = ipc.clone();
                thread::spawn(move || {
                    let o: ManagerObject = ipc.adopt(&bytes).unwrap();
                    for _ in 0..25 {
                        o.call("inc", &[]).unwrap();
                    }
                })
            })
            .collect();
        handles.into_iter().for_each(|h| h.join().unwrap());
        assert_eq!(obj.attr_get("n").unwrap().unwrap()[..], 200i64.to_be_bytes());
        assert_eq!(obj.call("nope", &[]), Err(IpcError::UnknownMethod("nope".into())));
        assert!(matches!(ipc.object("Missing", Attrs::new()), Err(IpcError::UnknownClass(_))));
    }
}
