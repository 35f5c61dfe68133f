//! Length-prefixed binary framing.
//!
//! ```text
//! u32 BE length (bytes after this field) | u8 opcode | u64 BE request id | fields...
//! ```
//!
//! Every field is a `u32` BE length followed by that many bytes. Integers
//! travel as 8-byte big-endian fields, flags as 1-byte fields. Error
//! responses use opcode `0xFF`, then one raw error-code byte, then a
//! message field.

use std::collections::BTreeMap;
use std::io::{self, Read};

use bytes::Bytes;

use crate::store::{Command, Reply, StoreError};

pub const OP_PUSH_TAIL: u8 = 0x01;
pub const OP_POP_HEAD: u8 = 0x03;
pub const OP_LIST_LEN: u8 = 0x04;
pub const OP_LIST_INDEX_GET: u8 = 0x05;
pub const OP_LIST_INDEX_SET: u8 = 0x06;
pub const OP_LIST_RANGE: u8 = 0x07;
pub const OP_HASH_SET: u8 = 0x10;
pub const OP_HASH_GET: u8 = 0x11;
pub const OP_HASH_DEL: u8 = 0x12;
pub const OP_HASH_GET_ALL: u8 = 0x13;
pub const OP_COUNTER_ADD: u8 = 0x20;
pub const OP_KEY_DELETE: u8 = 0x30;
pub const OP_KEY_EXPIRE: u8 = 0x31;
pub const OP_KEY_EXISTS: u8 = 0x32;
pub const OP_KEY_SCAN: u8 = 0x33;
pub const OP_PING: u8 = 0x40;
pub const OP_ERROR: u8 = 0xFF;

pub const ERR_WRONG_TYPE: u8 = 0x01;
pub const ERR_INDEX_OUT_OF_RANGE: u8 = 0x02;
pub const ERR_TIMEOUT: u8 = 0x03;
pub const ERR_INVALID_ARGUMENT: u8 = 0x04;
pub const ERR_MALFORMED: u8 = 0x05;
pub const ERR_OTHER: u8 = 0x06;

/// Opcode, request id.
pub const HEADER_LEN: usize = 1 + 8;
/// Upper bound on a single frame body.
pub const MAX_FRAME_LEN: u32 = 1 << 30;

/// Timeout field value meaning "block forever".
pub const INFINITE_TIMEOUT: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestFrame {
    pub request_id: u64,
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResponseFrame {
    pub request_id: u64,
    /// Opcode of the request this answers.
    pub opcode: u8,
    pub outcome: Result<Reply, StoreError>,
}

pub fn opcode_of(cmd: &Command) -> u8 {
    match cmd {
        Command::PushTail { .. } => OP_PUSH_TAIL,
        Command::PopHead { .. } => OP_POP_HEAD,
        Command::ListLen { .. } => OP_LIST_LEN,
        Command::ListIndexGet { .. } => OP_LIST_INDEX_GET,
        Command::ListIndexSet { .. } => OP_LIST_INDEX_SET,
        Command::ListRange { .. } => OP_LIST_RANGE,
        Command::HashSet { .. } => OP_HASH_SET,
        Command::HashGet { .. } => OP_HASH_GET,
        Command::HashDel { .. } => OP_HASH_DEL,
        Command::HashGetAll { .. } => OP_HASH_GET_ALL,
        Command::CounterAdd { .. } => OP_COUNTER_ADD,
        Command::KeyDelete { .. } => OP_KEY_DELETE,
        Command::KeyExpire { .. } => OP_KEY_EXPIRE,
        Command::KeyExists { .. } => OP_KEY_EXISTS,
        Command::KeyScan { .. } => OP_KEY_SCAN,
        Command::Ping => OP_PING,
    }
}

fn malformed(msg: impl Into<String>) -> StoreError {
    StoreError::MalformedFrame(msg.into())
}

struct FrameWriter {
    buf: Vec<u8>,
}

impl FrameWriter {
    fn new(opcode: u8, request_id: u64) -> Self {
        let mut buf = Vec::with_capacity(64);
        buf.extend_from_slice(&[0; 4]);
        buf.push(opcode);
        buf.extend_from_slice(&request_id.to_be_bytes());
        FrameWriter { buf }
    }

    fn field(&mut self, bytes: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
        self.buf.extend_from_slice(bytes);
        self
    }

    fn int(&mut self, v: i64) -> &mut Self {
        self.field(&v.to_be_bytes())
    }

    fn uint(&mut self, v: u64) -> &mut Self {
        self.field(&v.to_be_bytes())
    }

    fn flag(&mut self, v: bool) -> &mut Self {
        self.field(&[v as u8])
    }

    fn raw(&mut self, b: u8) -> &mut Self {
        self.buf.push(b);
        self
    }

    fn finish(mut self) -> Vec<u8> {
        let len = (self.buf.len() - 4) as u32;
        self.buf[..4].copy_from_slice(&len.to_be_bytes());
        self.buf
    }
}

struct FrameReader<'a> {
    rest: &'a [u8],
}

impl<'a> FrameReader<'a> {
    fn has_more(&self) -> bool {
        !self.rest.is_empty()
    }

    fn raw(&mut self) -> Result<u8, StoreError> {
        let (&b, rest) = self.rest.split_first().ok_or_else(|| malformed("truncated"))?;
        self.rest = rest;
        Ok(b)
    }

    fn field(&mut self) -> Result<&'a [u8], StoreError> {
        if self.rest.len() < 4 {
            return Err(malformed("truncated field length"));
        }
        let len = u32::from_be_bytes(self.rest[..4].try_into().unwrap()) as usize;
        let body = &self.rest[4..];
        if body.len() < len {
            return Err(malformed("field length overflows frame"));
        }
        self.rest = &body[len..];
        Ok(&body[..len])
    }

    fn bytes(&mut self) -> Result<Bytes, StoreError> {
        self.field().map(Bytes::copy_from_slice)
    }

    fn text(&mut self) -> Result<String, StoreError> {
        let f = self.field()?;
        String::from_utf8(f.to_vec()).map_err(|_| malformed("text field is not utf-8"))
    }

    fn fixed8(&mut self) -> Result<[u8; 8], StoreError> {
        self.field()?.try_into().map_err(|_| malformed("integer field must be 8 bytes"))
    }

    fn int(&mut self) -> Result<i64, StoreError> {
        self.fixed8().map(i64::from_be_bytes)
    }

    fn uint(&mut self) -> Result<u64, StoreError> {
        self.fixed8().map(u64::from_be_bytes)
    }

    fn flag(&mut self) -> Result<bool, StoreError> {
        match self.field()? {
            [0] => Ok(false),
            [1] => Ok(true),
            _ => Err(malformed("bad flag field")),
        }
    }

    fn end(&self) -> Result<(), StoreError> {
        if self.rest.is_empty() {
            Ok(())
        } else {
            Err(malformed("trailing bytes"))
        }
    }
}

/// Split a complete frame into (opcode, request id, payload reader).
fn open_frame(bytes: &[u8]) -> Result<(u8, u64, FrameReader<'_>), StoreError> {
    if bytes.len() < 4 + HEADER_LEN {
        return Err(malformed("frame shorter than header"));
    }
    let len = u32::from_be_bytes(bytes[..4].try_into().unwrap());
    if len > MAX_FRAME_LEN {
        return Err(malformed("frame too large"));
    }
    if len as usize != bytes.len() - 4 {
        return Err(malformed("length prefix does not match frame size"));
    }
    let opcode = bytes[4];
    let request_id = u64::from_be_bytes(bytes[5..13].try_into().unwrap());
    Ok((opcode, request_id, FrameReader { rest: &bytes[13..] }))
}

pub fn encode_request(request_id: u64, cmd: &Command) -> Vec<u8> {
    let mut w = FrameWriter::new(opcode_of(cmd), request_id);
    match cmd {
        Command::PushTail { key, values } => {
            w.field(key.as_bytes());
            for v in values {
                w.field(v);
            }
        }
        Command::PopHead { key, timeout_ms } => {
            w.field(key.as_bytes()).uint(timeout_ms.unwrap_or(INFINITE_TIMEOUT));
        }
        Command::ListLen { key }
        | Command::HashGetAll { key }
        | Command::KeyDelete { key }
        | Command::KeyExists { key } => {
            w.field(key.as_bytes());
        }
        Command::ListIndexGet { key, index } => {
            w.field(key.as_bytes()).int(*index);
        }
        Command::ListIndexSet { key, index, value } => {
            w.field(key.as_bytes()).int(*index).field(value);
        }
        Command::ListRange { key, start, stop } => {
            w.field(key.as_bytes()).int(*start).int(*stop);
        }
        Command::HashSet { key, field, value } => {
            w.field(key.as_bytes()).field(field.as_bytes()).field(value);
        }
        Command::HashGet { key, field } | Command::HashDel { key, field } => {
            w.field(key.as_bytes()).field(field.as_bytes());
        }
        Command::CounterAdd { key, delta } => {
            w.field(key.as_bytes()).int(*delta);
        }
        Command::KeyExpire { key, ttl_ms } => {
            w.field(key.as_bytes()).uint(*ttl_ms);
        }
        Command::KeyScan { prefix } => {
            w.field(prefix.as_bytes());
        }
        Command::Ping => {}
    }
    w.finish()
}

pub fn decode_request(bytes: &[u8]) -> Result<RequestFrame, StoreError> {
    let (opcode, request_id, mut r) = open_frame(bytes)?;
    let command = match opcode {
        OP_PUSH_TAIL => {
            let key = r.text()?;
            let mut values = Vec::new();
            while r.has_more() {
                values.push(r.bytes()?);
            }
            if values.is_empty() {
                return Err(malformed("push_tail without values"));
            }
            Command::PushTail { key, values }
        }
        OP_POP_HEAD => {
            let key = r.text()?;
            let t = r.uint()?;
            Command::PopHead { key, timeout_ms: (t != INFINITE_TIMEOUT).then_some(t) }
        }
        OP_LIST_LEN => Command::ListLen { key: r.text()? },
        OP_LIST_INDEX_GET => Command::ListIndexGet { key: r.text()?, index: r.int()? },
        OP_LIST_INDEX_SET => Command::ListIndexSet { key: r.text()?, index: r.int()?, value: r.bytes()? },
        OP_LIST_RANGE => Command::ListRange { key: r.text()?, start: r.int()?, stop: r.int()? },
        OP_HASH_SET => Command::HashSet { key: r.text()?, field: r.text()?, value: r.bytes()? },
        OP_HASH_GET => Command::HashGet { key: r.text()?, field: r.text()? },
        OP_HASH_DEL => Command::HashDel { key: r.text()?, field: r.text()? },
        OP_HASH_GET_ALL => Command::HashGetAll { key: r.text()? },
        OP_COUNTER_ADD => Command::CounterAdd { key: r.text()?, delta: r.int()? },
        OP_KEY_DELETE => Command::KeyDelete { key: r.text()? },
        OP_KEY_EXPIRE => Command::KeyExpire { key: r.text()?, ttl_ms: r.uint()? },
        OP_KEY_EXISTS => Command::KeyExists { key: r.text()? },
        OP_KEY_SCAN => Command::KeyScan { prefix: r.text()? },
        OP_PING => Command::Ping,
        other => return Err(malformed(format!("unknown opcode 0x{other:02x}"))),
    };
    r.end()?;
    Ok(RequestFrame { request_id, command })
}

fn error_code(e: &StoreError) -> u8 {
    match e {
        StoreError::WrongType => ERR_WRONG_TYPE,
        StoreError::IndexOutOfRange => ERR_INDEX_OUT_OF_RANGE,
        StoreError::Timeout => ERR_TIMEOUT,
        StoreError::InvalidArgument(_) => ERR_INVALID_ARGUMENT,
        StoreError::MalformedFrame(_) => ERR_MALFORMED,
        _ => ERR_OTHER,
    }
}

fn error_message(e: &StoreError) -> String {
    match e {
        StoreError::InvalidArgument(m) | StoreError::MalformedFrame(m) | StoreError::Io(m) => m.clone(),
        other => other.to_string(),
    }
}

pub fn encode_response(request_id: u64, opcode: u8, outcome: &Result<Reply, StoreError>) -> Vec<u8> {
    let reply = match outcome {
        Err(e) => {
            let mut w = FrameWriter::new(OP_ERROR, request_id);
            w.raw(error_code(e)).field(error_message(e).as_bytes());
            return w.finish();
        }
        Ok(reply) => reply,
    };
    let mut w = FrameWriter::new(opcode, request_id);
    match reply {
        Reply::Ack => {}
        Reply::Int(n) => {
            w.int(*n);
        }
        Reply::Flag(f) => {
            w.flag(*f);
        }
        Reply::Value(v) | Reply::MaybeValue(Some(v)) => {
            w.field(v);
        }
        Reply::MaybeValue(None) => {}
        Reply::Values(vs) => {
            for v in vs {
                w.field(v);
            }
        }
        Reply::Map(m) => {
            for (k, v) in m {
                w.field(k.as_bytes()).field(v);
            }
        }
        Reply::Keys(ks) => {
            for k in ks {
                w.field(k.as_bytes());
            }
        }
        Reply::Pong => {
            w.field(b"PONG");
        }
    }
    w.finish()
}

/// Decode a response. Success replies are shaped by the echoed opcode; an
/// error frame reports `opcode = OP_ERROR`.
pub fn decode_response(bytes: &[u8]) -> Result<ResponseFrame, StoreError> {
    let (opcode, request_id, mut r) = open_frame(bytes)?;
    let reply = match opcode {
        OP_ERROR => {
            let code = r.raw()?;
            let msg = r.text()?;
            r.end()?;
            let err = match code {
                ERR_WRONG_TYPE => StoreError::WrongType,
                ERR_INDEX_OUT_OF_RANGE => StoreError::IndexOutOfRange,
                ERR_TIMEOUT => StoreError::Timeout,
                ERR_INVALID_ARGUMENT => StoreError::InvalidArgument(msg),
                ERR_MALFORMED => StoreError::MalformedFrame(msg),
                ERR_OTHER => StoreError::Io(msg),
                c => return Err(malformed(format!("unknown error code 0x{c:02x}"))),
            };
            return Ok(ResponseFrame { request_id, opcode, outcome: Err(err) });
        }
        OP_PUSH_TAIL | OP_LIST_LEN | OP_COUNTER_ADD => Reply::Int(r.int()?),
        OP_POP_HEAD | OP_LIST_INDEX_GET => Reply::Value(r.bytes()?),
        OP_LIST_INDEX_SET | OP_KEY_EXPIRE => Reply::Ack,
        OP_LIST_RANGE => {
            let mut vs = Vec::new();
            while r.has_more() {
                vs.push(r.bytes()?);
            }
            Reply::Values(vs)
        }
        OP_HASH_SET | OP_HASH_DEL | OP_KEY_DELETE | OP_KEY_EXISTS => Reply::Flag(r.flag()?),
        OP_HASH_GET => Reply::MaybeValue(if r.has_more() { Some(r.bytes()?) } else { None }),
        OP_HASH_GET_ALL => {
            let mut m = BTreeMap::new();
            while r.has_more() {
                let k = r.text()?;
                m.insert(k, r.bytes()?);
            }
            Reply::Map(m)
        }
        OP_KEY_SCAN => {
            let mut ks = Vec::new();
            while r.has_more() {
                ks.push(r.text()?);
            }
            Reply::Keys(ks)
        }
        OP_PING => {
            if r.field()? != b"PONG" {
                return Err(malformed("bad ping reply"));
            }
            Reply::Pong
        }
        other => return Err(malformed(format!("unknown opcode 0x{other:02x}"))),
    };
    r.end()?;
    Ok(ResponseFrame { request_id, opcode, outcome: Ok(reply) })
}

/// Read one complete frame (length prefix included). `Ok(None)` on a clean
/// end of stream before any byte of a new frame.
pub fn read_frame(reader: &mut impl Read) -> io::Result<Option<Vec<u8>>> {
    let mut len_buf = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match reader.read(&mut len_buf[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(io::ErrorKind::UnexpectedEof.into()),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    let len = u32::from_be_bytes(len_buf);
    if (len as usize) < HEADER_LEN || len > MAX_FRAME_LEN {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "bad frame length"));
    }
    let mut frame = Vec::with_capacity(4 + (len as usize).min(1 << 16));
    frame.extend_from_slice(&len_buf);
    reader.take(len as u64).read_to_end(&mut frame)?;
    if frame.len() != 4 + len as usize {
        return Err(io::ErrorKind::UnexpectedEof.into());
    }
    Ok(Some(frame))
}
