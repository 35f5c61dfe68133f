use std::hint::black_box;
use std::sync::Arc;

use bytes::Bytes;
use criterion::{criterion_group, criterion_main, BatchSize, Criterion, Throughput};
use faasproc::net::codec::{decode_request, encode_request};
use faasproc::net::{serve, RemoteStore};
use faasproc::store::{Command, Engine, Store, StoreExt};

fn engine_ops(c: &mut Criterion) {
    let engine = Engine::new();
    let mut g = c.benchmark_group("engine");
    g.bench_function("push_pop", |b| {
        b.iter(|| {
            engine.push_tail("q", Bytes::from_static(b"payload")).unwrap();
            black_box(engine.try_pop_head("q").unwrap());
        })
    });
    g.bench_function("counter_add", |b| b.iter(|| black_box(engine.counter_add("c", 1).unwrap())));
    g.finish();
}

fn codec(c: &mut Criterion) {
    let mut g = c.benchmark_group("codec");
    for size in [64usize, 4096, 1 << 20] {
        let cmd = Command::PushTail { key: "list".into(), values: vec![Bytes::from(vec![7u8; size])] };
        g.throughput(Throughput::Bytes(size as u64));
        g.bench_function(format!("round_trip_{size}"), |b| {
            b.iter(|| black_box(decode_request(&encode_request(1, black_box(&cmd))).unwrap()))
        });
    }
    g.finish();
}

fn loopback(c: &mut Criterion) {
    let server = serve("127.0.0.1:0", Engine::new()).unwrap();
    let client = Arc::new(RemoteStore::connect(server.local_addr()).unwrap());
    let mut g = c.benchmark_group("loopback");
    g.bench_function("ping", |b| b.iter(|| client.ping().unwrap()));
    g.bench_function("pipeline_64", |b| {
        b.iter_batched(
            || (0..64).map(|i| Command::CounterAdd { key: format!("k{i}"), delta: 1 }).collect::<Vec<_>>(),
            |cmds| black_box(client.pipeline(cmds)),
            BatchSize::SmallInput,
        )
    });
    g.finish();
}

criterion_group!(benches, engine_ops, codec, loopback);
criterion_main!(benches);
