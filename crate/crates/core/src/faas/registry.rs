use std::collections::HashMap;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context};
use bytes::Bytes;

use crate::ipc::{ClassRegistry, Ipc, ManagerClass};
use crate::objectfs::{ObjectFs, SharedBlobStore};
use crate::store::{SharedStore, StoreExt};

/// A registered task function: `(context, args) -> result bytes`.
pub type TaskFn = Arc<dyn Fn(&TaskContext, &[u8]) -> anyhow::Result<Vec<u8>> + Send + Sync>;

/// What a running task can reach.
#[derive(Clone)]
pub struct TaskContext {
    store: SharedStore,
    blobs: SharedBlobStore,
    registry: Arc<Registry>,
    worker_id: String,
}

impl TaskContext {
    pub fn new(store: SharedStore, blobs: SharedBlobStore, registry: Arc<Registry>, worker_id: impl Into<String>) -> Self {
        TaskContext { store, blobs, registry, worker_id: worker_id.into() }
    }

    pub fn store(&self) -> &SharedStore {
        &self.store
    }

    pub fn blobs(&self) -> &SharedBlobStore {
        &self.blobs
    }

    pub fn fs(&self) -> ObjectFs {
        ObjectFs::new(self.blobs.clone())
    }

    pub fn registry(&self) -> &Arc<Registry> {
        &self.registry
    }

    /// Primitive factory with the registry's manager classes.
    pub fn ipc(&self) -> Ipc {
        Ipc::new(self.store.clone()).with_classes(self.registry.classes.clone())
    }

    pub fn worker_id(&self) -> &str {
        &self.worker_id
    }
}

/// Functions, initializers and manager classes known by name on both the
/// submitting side and the workers.
#[derive(Clone, Default)]
pub struct Registry {
    functions: HashMap<String, TaskFn>,
    classes: Arc<ClassRegistry>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register<F>(&mut self, name: &str, f: F) -> &mut Self
    where
        F: Fn(&TaskContext, &[u8]) -> anyhow::Result<Vec<u8>> + Send + Sync + 'static,
    {
        self.functions.insert(name.to_owned(), Arc::new(f));
        self
    }

    pub fn register_class(&mut self, class: ManagerClass) -> &mut Self {
        Arc::make_mut(&mut self.classes).register(class);
        self
    }

    pub fn get(&self, name: &str) -> Option<TaskFn> {
        self.functions.get(name).cloned()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.functions.contains_key(name)
    }

    pub fn classes(&self) -> &Arc<ClassRegistry> {
        &self.classes
    }

    pub fn names(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.functions.keys().map(String::as_str).collect();
        v.sort_unstable();
        v
    }

    /// The named function sets a worker daemon can load.
    pub fn named(name: &str) -> Option<Registry> {
        match name {
            "builtin" => Some(Self::builtin()),
            _ => None,
        }
    }

    /// General-purpose functions plus every benchmark workload.
    pub fn builtin() -> Registry {
        let mut r = Registry::new();
        r.register("echo", |_, a| Ok(a.to_vec()));
        r.register("noop", |_, _| Ok(Vec::new()));
        r.register("double", |_, a| Ok(encode_i64(decode_i64(a)?.checked_mul(2).ok_or_else(|| anyhow!("overflow"))?)));
        r.register("sleep", |_, a| {
            std::thread::sleep(Duration::from_millis(decode_u64(a)?));
            Ok(Vec::new())
        });
        r.register("fail", |_, a| bail!("task failed on purpose: {}", String::from_utf8_lossy(a)));
        r.register("panic", |_, _| panic!("task panicked on purpose"));
        // Count executions per argument, for exactly-once checks.
        r.register("tally", |ctx, a| {
            let n = ctx.store().counter_add(&format!("tally/{}", String::from_utf8_lossy(a)), 1)?;
            Ok(encode_i64(n))
        });
        // Initializer: counts worker start-ups.
        r.register("count_init", |ctx, _| {
            ctx.store().counter_add("tally/init", 1)?;
            Ok(Vec::new())
        });
        // Records how many probes run at once, then sleeps.
        r.register("probe", |ctx, a| {
            let store = ctx.store();
            let active = store.counter_add("probe/active", 1)?;
            store.push_tail("probe/samples", Bytes::from(encode_i64(active)))?;
            std::thread::sleep(Duration::from_millis(decode_u64(a)?));
            store.counter_add("probe/active", -1)?;
            Ok(Vec::new())
        });
        r.register_class(counter_class());
        crate::bench::register_workloads(&mut r);
        r
    }
}

/// Managed counter object with `inc` and `get`.
pub fn counter_class() -> ManagerClass {
    ManagerClass::new("Counter")
        .method("inc", |attrs, _| {
            let n = attrs.get("value").map(|b| decode_i64(b)).transpose()?.unwrap_or(0) + 1;
            attrs.insert("value".into(), Bytes::from(encode_i64(n)));
            Ok(encode_i64(n))
        })
        .method("get", |attrs, _| Ok(attrs.get("value").map(|b| b.to_vec()).unwrap_or_else(|| encode_i64(0))))
}

pub fn encode_i64(v: i64) -> Vec<u8> {
    v.to_be_bytes().to_vec()
}

pub fn decode_i64(b: &[u8]) -> anyhow::Result<i64> {
    Ok(i64::from_be_bytes(b.try_into().context("expected an 8-byte integer")?))
}

pub fn encode_u64(v: u64) -> Vec<u8> {
    v.to_be_bytes().to_vec()
}

pub fn decode_u64(b: &[u8]) -> anyhow::Result<u64> {
    Ok(u64::from_be_bytes(b.try_into().context("expected an 8-byte integer")?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectfs::MemoryBlobStore;
    use crate::store::Engine;

    fn ctx() -> TaskContext {
        TaskContext::new(Arc::new(Engine::new()), Arc::new(MemoryBlobStore::new("t")), Arc::new(Registry::builtin()), "w0")
    }

    #[test]
    fn builtins_behave() {
        let c = ctx();
        let r = c.registry().clone();
        assert_eq!(r.get("echo").unwrap()(&c, b"x").unwrap(), b"x");
        assert_eq!(r.get("double").unwrap()(&c, &encode_i64(21)).unwrap(), encode_i64(42));
        assert!(r.get("double").unwrap()(&c, b"bad").is_err());
        assert!(r.get("fail").unwrap()(&c, b"").is_err());
        assert_eq!(r.get("tally").unwrap()(&c, b"k").unwrap(), encode_i64(1));
        assert_eq!(r.get("tally").unwrap()(&c, b"k").unwrap(), encode_i64(2));
        assert!(r.get("missing").is_none());
        assert!(Registry::named("builtin").is_some());
        assert!(Registry::named("other").is_none());
    }

    #[test]
    fn counter_class_via_context() {
        let c = ctx();
        let obj = c.ipc().object("Counter", Default::default()).unwrap();
        obj.call("inc", &[]).unwrap();
        assert_eq!(obj.call("get", &[]).unwrap(), encode_i64(1));
    }
}
