mod common;

use std::io::Write;
use std::net::TcpStream;
use std::thread;
use std::time::{Duration, Instant};

use bytes::Bytes;
use common::Transport;
use faasproc::net::codec::encode_request;
use faasproc::net::{serve, RemoteStore};
use faasproc::store::{Command, Engine, Reply, Store, StoreError, StoreExt};

fn server() -> (faasproc::net::StoreServer, RemoteStore) {
    let s = serve("127.0.0.1:0", Engine::new()).unwrap();
    let c = RemoteStore::connect(s.local_addr()).unwrap();
    (s, c)
}

#[test]
fn ping_returns_pong() {
    let (_s, c) = server();
    assert_eq!(c.execute(Command::Ping).unwrap(), Reply::Pong);
}

#[test]
fn blocked_pop_completes_with_other_clients_push() {
    let (s, a) = server();
    let waiter = thread::spawn(move || a.pop_head("q", Some(Duration::from_secs(5))));
    while s.engine().waiter_count("q") == 0 {
        thread::sleep(Duration::from_millis(2));
    }
    let b = RemoteStore::connect(s.local_addr()).unwrap();
    b.push_tail("q", "from-b").unwrap();
    assert_eq!(waiter.join().unwrap().unwrap(), "from-b");
}

#[test]
fn blocked_pop_does_not_hold_up_its_connection() {
    let (_s, c) = server();
    let c2 = c.clone();
    let waiter = thread::spawn(move || c2.pop_head("slow", Some(Duration::from_millis(800))));
    thread::sleep(Duration::from_millis(50));
    let started = Instant::now();
    for _ in 0..20 {
        c.ping().unwrap();
    }
    assert!(started.elapsed() < Duration::from_millis(500));
    c.push_tail("slow", "x").unwrap();
    assert_eq!(waiter.join().unwrap().unwrap(), "x");
}

#[test]
fn many_clients_counter_sum() {
    let (s, _c) = server();
    let addr = s.local_addr();
    let handles: Vec<_> = (0..64)
        .map(|_| {
            thread::spawn(move || {
                let c = RemoteStore::connect(addr).unwrap();
                let cmds = (0..1000).map(|_| Command::CounterAdd { key: "n".into(), delta: 1 }).collect();
                for r in c.pipeline(cmds) {
                    r.unwrap();
                }
            })
        })
        .collect();
    handles.into_iter().for_each(|h| h.join().unwrap());
    assert_eq!(s.engine().counter_add("n", 0).unwrap(), 64_000);
}

#[test]
fn single_client_trace_matches_embedded() {
    let script = vec![
        Command::PushTail { key: "l".into(), values: vec![Bytes::from_static(b"a"), Bytes::from_static(b"b")] },
        Command::ListIndexSet { key: "l".into(), index: 0, value: Bytes::from_static(b"z") },
        Command::ListRange { key: "l".into(), start: 0, stop: -1 },
        Command::ListIndexGet { key: "l".into(), index: 5 },
        Command::HashSet { key: "l".into(), field: "f".into(), value: Bytes::new() },
        Command::HashSet { key: "h".into(), field: "f".into(), value: Bytes::from_static(b"1") },
        Command::HashGetAll { key: "h".into() },
        Command::CounterAdd { key: "c".into(), delta: -4 },
        Command::PopHead { key: "empty".into(), timeout_ms: Some(10) },
        Command::KeyExpire { key: "h".into(), ttl_ms: 60_000 },
        Command::KeyScan { prefix: String::new() },
        Command::KeyDelete { key: "l".into() },
        Command::KeyExists { key: "l".into() },
    ];
    let [embedded, loopback] = Transport::both();
    let a: Vec<_> = script.iter().map(|c| embedded.store().execute(c.clone())).collect();
    let b: Vec<_> = script.iter().map(|c| loopback.store().execute(c.clone())).collect();
    assert_eq!(a, b);
    assert_eq!(a[3], Err(StoreError::IndexOutOfRange));
    assert_eq!(a[4], Err(StoreError::WrongType));
}

#[test]
fn command_timeout_reported_not_transport_timeout() {
    let (s, _) = server();
    let c = RemoteStore::connect(s.local_addr()).unwrap();
    let started = Instant::now();
    let r = c.call(Command::PopHead { key: "none".into(), timeout_ms: Some(100) }, Some(Duration::from_millis(200)));
    let took = started.elapsed();
    assert_eq!(r, Err(StoreError::Timeout));
    assert!(took >= Duration::from_millis(50) && took <= Duration::from_millis(150), "{took:?}");
}

#[test]
fn killed_server_closes_pending_calls() {
    let (mut s, c) = server();
    let c2 = c.clone();
    let waiter = thread::spawn(move || c2.pop_head("q", Some(Duration::from_secs(10))));
    while s.engine().waiter_count("q") == 0 {
        thread::sleep(Duration::from_millis(2));
    }
    s.shutdown();
    assert_eq!(waiter.join().unwrap(), Err(StoreError::ConnectionClosed));
    assert!(c.ping().is_err());
}

#[test]
fn malformed_frame_drops_only_that_connection() {
    let (s, good) = server();
    let mut bad = TcpStream::connect(s.local_addr()).unwrap();
    let mut frame = encode_request(1, &Command::Ping);
    frame[4] = 0x99;
    bad.write_all(&frame).unwrap();
    bad.write_all(&[0, 0, 0]).unwrap();
    good.ping().unwrap();
    let other = RemoteStore::connect(s.local_addr()).unwrap();
    assert_eq!(other.push_tail("x", "1").unwrap(), 1);
    assert_eq!(good.list_len("x").unwrap(), 1);
}
