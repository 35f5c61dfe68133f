use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};
use faasproc::faas::{encode_i64, LatencyModel, Registry, SimBackend};
use faasproc::ipc::{Ipc, Scalar, ScalarTag};
use faasproc::objectfs::{MemoryBlobStore, SharedBlobStore};
use faasproc::orchestrator::Orchestrator;
use faasproc::procpool::Pool;
use faasproc::store::{Engine, SharedStore};

fn ipc_ops(c: &mut Criterion) {
    let ipc = Ipc::new(Arc::new(Engine::new()));
    let lock = ipc.lock().unwrap();
    let sem = ipc.semaphore(4).unwrap();
    let q = ipc.queue(None).unwrap();
    let arr = ipc.array(ScalarTag::Int64, 1024).unwrap();
    let vals: Vec<Scalar> = (0..1024).map(Scalar::Int64).collect();
    let mut g = c.benchmark_group("ipc");
    g.bench_function("lock_cycle", |b| {
        b.iter(|| {
            lock.acquire(None).unwrap();
            lock.release().unwrap();
        })
    });
    g.bench_function("semaphore_cycle", |b| {
        b.iter(|| {
            sem.acquire(None).unwrap();
            sem.release().unwrap();
        })
    });
    g.bench_function("queue_put_get", |b| {
        b.iter(|| {
            q.put(&b"item"[..], None).unwrap();
            black_box(q.get(None).unwrap());
        })
    });
    g.bench_function("array_slice_1024", |b| {
        b.iter(|| {
            arr.slice_set(0, &vals).unwrap();
            black_box(arr.to_vec().unwrap());
        })
    });
    g.finish();
}

fn pool_map(c: &mut Criterion) {
    let store: SharedStore = Arc::new(Engine::new());
    let blobs: SharedBlobStore = Arc::new(MemoryBlobStore::new("bench"));
    let backend = Arc::new(SimBackend::new(LatencyModel::zero(), Arc::new(Registry::builtin()), store.clone(), blobs.clone()));
    let orch = Orchestrator::new(backend, store, blobs);
    let pool = Pool::create(&orch, 4, None).unwrap();
    let items: Vec<Vec<u8>> = (0..100).map(encode_i64).collect();
    c.bench_function("pool_map_100_double", |b| b.iter(|| black_box(pool.map("double", items.clone()).unwrap())));
}

criterion_group!(benches, ipc_ops, pool_map);
criterion_main!(benches);
