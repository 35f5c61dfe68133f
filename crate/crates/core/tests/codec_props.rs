use std::io::{Read, Write};
use std::net::TcpStream;
use std::time::Duration;

use bytes::Bytes;
use faasproc::net::codec::{decode_request, decode_response, encode_request, encode_response, opcode_of};
use faasproc::net::{serve, RemoteStore};
use faasproc::store::{Command, Engine, Reply, StoreError, StoreExt};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn key() -> impl Strategy<Value = String> {
    prop_oneof!["[a-z]{1,8}", "rsrc/[0-9a-f]{4}/[a-z]{1,6}", "\\PC{0,12}"]
}

fn value() -> impl Strategy<Value = Bytes> {
    prop::collection::vec(any::<u8>(), 0..64).prop_map(Bytes::from)
}

fn command() -> impl Strategy<Value = Command> {
    prop_oneof![
        (key(), prop::collection::vec(value(), 1..5)).prop_map(|(key, values)| Command::PushTail { key, values }),
        (key(), prop::option::of(0..u64::MAX)).prop_map(|(key, timeout_ms)| Command::PopHead { key, timeout_ms }),
        key().prop_map(|key| Command::ListLen { key }),
        (key(), any::<i64>()).prop_map(|(key, index)| Command::ListIndexGet { key, index }),
        (key(), any::<i64>(), value()).prop_map(|(key, index, value)| Command::ListIndexSet { key, index, value }),
        (key(), any::<i64>(), any::<i64>()).prop_map(|(key, start, stop)| Command::ListRange { key, start, stop }),
        (key(), key(), value()).prop_map(|(key, field, value)| Command::HashSet { key, field, value }),
        (key(), key()).prop_map(|(key, field)| Command::HashGet { key, field }),
        (key(), key()).prop_map(|(key, field)| Command::HashDel { key, field }),
        key().prop_map(|key| Command::HashGetAll { key }),
        (key(), any::<i64>()).prop_map(|(key, delta)| Command::CounterAdd { key, delta }),
        key().prop_map(|key| Command::KeyDelete { key }),
        (key(), any::<u64>()).prop_map(|(key, ttl_ms)| Command::KeyExpire { key, ttl_ms }),
        key().prop_map(|key| Command::KeyExists { key }),
        key().prop_map(|prefix| Command::KeyScan { prefix }),
        Just(Command::Ping),
    ]
}

/// A reply shaped the way the command's opcode answers.
fn response() -> impl Strategy<Value = (u8, Result<Reply, StoreError>)> {
    let ok = prop_oneof![
        (Just(0x01u8), any::<i64>()).prop_map(|(o, n)| (o, Reply::Int(n))),
        (Just(0x03u8), value()).prop_map(|(o, v)| (o, Reply::Value(v))),
        Just((0x06u8, Reply::Ack)),
        (Just(0x07u8), prop::collection::vec(value(), 0..6)).prop_map(|(o, v)| (o, Reply::Values(v))),
        (Just(0x10u8), any::<bool>()).prop_map(|(o, f)| (o, Reply::Flag(f))),
        (Just(0x11u8), prop::option::of(value())).prop_map(|(o, v)| (o, Reply::MaybeValue(v))),
        (Just(0x13u8), prop::collection::btree_map(key(), value(), 0..5)).prop_map(|(o, m)| (o, Reply::Map(m))),
        (Just(0x33u8), prop::collection::vec(key(), 0..5)).prop_map(|(o, k)| (o, Reply::Keys(k))),
        Just((0x40u8, Reply::Pong)),
    ]
    .prop_map(|(o, r)| (o, Ok(r)));
    let err = prop_oneof![
        Just(StoreError::WrongType),
        Just(StoreError::IndexOutOfRange),
        Just(StoreError::Timeout),
        "\\PC{0,20}".prop_map(StoreError::InvalidArgument),
        "\\PC{0,20}".prop_map(StoreError::MalformedFrame),
    ]
    .prop_map(|e| (0xFFu8, Err(e)));
    prop_oneof![4 => ok, 1 => err]
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 10_000, ..ProptestConfig::default() })]

    #[test]
    fn request_round_trip(id in any::<u64>(), cmd in command()) {
        let frame = decode_request(&encode_request(id, &cmd)).unwrap();
        prop_assert_eq!(frame.request_id, id);
        prop_assert_eq!(frame.command, cmd);
    }

    #[test]
    fn response_round_trip(id in any::<u64>(), (opcode, outcome) in response()) {
        let frame = decode_response(&encode_response(id, opcode, &outcome)).unwrap();
        prop_assert_eq!(frame.request_id, id);
        prop_assert_eq!(frame.opcode, opcode);
        prop_assert_eq!(frame.outcome, outcome);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 1000, ..ProptestConfig::default() })]

    /// Truncations and byte flips either decode to something or are
    /// rejected; they never panic.
    #[test]
    fn damaged_frames_never_panic(cmd in command(), cut in any::<prop::sample::Index>(), flips in prop::collection::vec((any::<prop::sample::Index>(), 1u8..), 0..4)) {
        let mut bytes = encode_request(9, &cmd);
        for (at, mask) in flips {
            let i = at.index(bytes.len());
            bytes[i] ^= mask;
        }
        let truncated = &bytes[..cut.index(bytes.len())];
        let _ = decode_request(truncated);
        let _ = decode_request(&bytes);
        let _ = decode_response(truncated);
    }
}

#[test]
fn key_exists_opcode_matches_table() {
    assert_eq!(opcode_of(&Command::KeyExists { key: "a".into() }), 0x32);
    assert_eq!(opcode_of(&Command::Ping), 0x40);
    assert!(matches!(decode_request(&[0, 0, 0]), Err(StoreError::MalformedFrame(_))));
}

/// Send 10^3 truncated or corrupted frames to a live server, each on its
/// own connection, then check the server still answers.
#[test]
fn malformed_frames_do_not_crash_server() {
    let server = serve("127.0.0.1:0", Engine::new()).unwrap();
    let addr = server.local_addr();
    let mut rng = ChaCha8Rng::seed_from_u64(0xF022);
    let samples = [
        Command::PushTail { key: "q".into(), values: vec![Bytes::from_static(b"abc")] },
        Command::HashSet { key: "h".into(), field: "f".into(), value: Bytes::from_static(b"v") },
        Command::ListRange { key: "q".into(), start: 0, stop: -1 },
        Command::Ping,
    ];
    for i in 0..1000 {
        let mut bytes = encode_request(i, &samples[i as usize % samples.len()]);
        match i % 4 {
            0 => bytes.truncate(rng.random_range(0..bytes.len())),
            1 => {
                let at = rng.random_range(0..bytes.len());
                bytes[at] ^= rng.random_range(1..=255u8);
            }
            2 => bytes[4] = rng.random_range(0x50..0xF0),
            _ => {
                // Field length claims more bytes than the frame holds.
                let n = bytes.len();
                if n >= 17 {
                    bytes[13..17].copy_from_slice(&u32::MAX.to_be_bytes());
                } else {
                    bytes.extend_from_slice(&[0xFF; 4]);
                }
            }
        }
        let mut s = TcpStream::connect(addr).unwrap();
        s.set_read_timeout(Some(Duration::from_millis(200))).unwrap();
        let _ = s.write_all(&bytes);
        let _ = s.shutdown(std::net::Shutdown::Write);
        let mut sink = Vec::new();
        let _ = s.read_to_end(&mut sink);
    }
    let client = RemoteStore::connect(addr).unwrap();
    client.ping().unwrap();
    assert_eq!(client.push_tail("alive", "x").unwrap(), 1);
}
