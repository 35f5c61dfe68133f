use std::collections::HashMap;
use std::io::{self, Write};
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use log::debug;

use super::codec::{self, ResponseFrame};
use super::NetError;
use crate::store::{Command, Reply, Store, StoreError, StoreResult};

/// Transport timeout for non-blocking commands.
pub const DEFAULT_TRANSPORT_TIMEOUT: Duration = Duration::from_secs(30);
/// Extra transport allowance on top of a blocking command's own timeout.
pub const BLOCKING_TRANSPORT_MARGIN: Duration = Duration::from_secs(10);

struct Pending {
    waiters: Mutex<HashMap<u64, Sender<ResponseFrame>>>,
    closed: AtomicBool,
}

impl Pending {
    fn close(&self) {
        self.closed.store(true, Ordering::SeqCst);
        // Dropping the senders wakes every caller with ConnectionClosed.
        self.waiters.lock().unwrap().clear();
    }
}

struct ClientInner {
    stream: Mutex<TcpStream>,
    pending: Arc<Pending>,
    next_id: AtomicU64,
}

impl Drop for ClientInner {
    fn drop(&mut self) {
        let _ = self.stream.lock().unwrap().shutdown(Shutdown::Both);
    }
}

/// Multiplexing client for a store server. Cloning shares the connection;
/// responses are matched to callers by request id, so any number of
/// threads may have calls in flight at once.
#[derive(Clone)]
pub struct RemoteStore {
    inner: Arc<ClientInner>,
}

impl std::fmt::Debug for RemoteStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteStore").finish_non_exhaustive()
    }
}

impl RemoteStore {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, NetError> {
        let stream = TcpStream::connect(addr).map_err(NetError::Connect)?;
        stream.set_nodelay(true).map_err(NetError::Connect)?;
        let read_half = stream.try_clone().map_err(NetError::Connect)?;
        let pending = Arc::new(Pending { waiters: Mutex::new(HashMap::new()), closed: AtomicBool::new(false) });
        let reader_pending = pending.clone();
        thread::Builder::new()
            .name("store-client-reader".into())
            .spawn(move || read_loop(read_half, reader_pending))
            .map_err(NetError::Connect)?;
        Ok(RemoteStore {
            inner: Arc::new(ClientInner { stream: Mutex::new(stream), pending, next_id: AtomicU64::new(1) }),
        })
    }

    /// Connect to the address in `FAASPROC_STORE_ADDR`.
    pub fn connect_from_env() -> Result<Self, NetError> {
        let addr = std::env::var(super::STORE_ADDR_ENV).map_err(|_| NetError::MissingAddress)?;
        Self::connect(addr.as_str())
    }

    pub fn is_closed(&self) -> bool {
        self.inner.pending.closed.load(Ordering::SeqCst)
    }

    fn register(&self) -> StoreResult<(u64, Receiver<ResponseFrame>)> {
        if self.is_closed() {
            return Err(StoreError::ConnectionClosed);
        }
        let id = self.inner.next_id.fetch_add(1, Ordering::SeqCst);
        let (tx, rx) = mpsc::channel();
        self.inner.pending.waiters.lock().unwrap().insert(id, tx);
        Ok((id, rx))
    }

    fn forget(&self, id: u64) {
        self.inner.pending.waiters.lock().unwrap().remove(&id);
    }

    fn write(&self, bytes: &[u8]) -> StoreResult<()> {
        self.inner.stream.lock().unwrap().write_all(bytes).map_err(|_| StoreError::ConnectionClosed)
    }

    fn await_reply(&self, id: u64, rx: &Receiver<ResponseFrame>, deadline: Option<Instant>) -> StoreResult<Reply> {
        let frame = match deadline {
            None => rx.recv().map_err(|_| StoreError::ConnectionClosed)?,
            Some(d) => match rx.recv_timeout(d.saturating_duration_since(Instant::now())) {
                Ok(f) => f,
                Err(RecvTimeoutError::Timeout) => {
                    self.forget(id);
                    return Err(StoreError::TransportTimeout);
                }
                Err(RecvTimeoutError::Disconnected) => return Err(StoreError::ConnectionClosed),
            },
        };
        frame.outcome
    }

    /// Send one command with an explicit transport timeout (`None` waits
    /// forever). A blocking command's own timeout must be strictly smaller.
    pub fn call(&self, cmd: Command, transport_timeout: Option<Duration>) -> StoreResult<Reply> {
        if let (Command::PopHead { timeout_ms, .. }, Some(t)) = (&cmd, transport_timeout) {
            let blocking = timeout_ms.map(Duration::from_millis);
            if blocking.is_none_or(|b| b >= t) {
                return Err(StoreError::InvalidArgument(
                    "command timeout must be smaller than transport timeout".into(),
                ));
            }
        }
        let (id, rx) = self.register()?;
        if let Err(e) = self.write(&codec::encode_request(id, &cmd)) {
            self.forget(id);
            return Err(e);
        }
        self.await_reply(id, &rx, transport_timeout.map(|t| Instant::now() + t))
    }
}

fn default_transport_timeout(cmd: &Command) -> Option<Duration> {
    match cmd {
        Command::PopHead { timeout_ms: None, .. } => None,
        Command::PopHead { timeout_ms: Some(ms), .. } => {
            Duration::from_millis(*ms).checked_add(BLOCKING_TRANSPORT_MARGIN)
        }
        _ => Some(DEFAULT_TRANSPORT_TIMEOUT),
    }
}

impl Store for RemoteStore {
    fn execute(&self, cmd: Command) -> StoreResult<Reply> {
        let t = default_transport_timeout(&cmd);
        self.call(cmd, t)
    }

    /// All frames go out in one write; replies may arrive in any order.
    fn pipeline(&self, cmds: Vec<Command>) -> Vec<StoreResult<Reply>> {
        let start = Instant::now();
        let mut buf = Vec::new();
        let mut slots = Vec::with_capacity(cmds.len());
        for cmd in &cmds {
            match self.register() {
                Ok((id, rx)) => {
                    buf.extend_from_slice(&codec::encode_request(id, cmd));
                    slots.push(Ok((id, rx, default_transport_timeout(cmd))));
                }
                Err(e) => slots.push(Err(e)),
            }
        }
        if let Err(e) = self.write(&buf) {
            for (id, _, _) in slots.iter().flatten() {
                self.forget(*id);
            }
            return slots.into_iter().map(|_| Err(e.clone())).collect();
        }
        slots
            .into_iter()
            .map(|s| {
                let (id, rx, t) = s?;
                self.await_reply(id, &rx, t.map(|t| start + t))
            })
            .collect()
    }
}

fn read_loop(stream: TcpStream, pending: Arc<Pending>) {
    let mut reader = io::BufReader::new(stream);
    loop {
        let frame = match codec::read_frame(&mut reader) {
            Ok(Some(f)) => f,
            Ok(None) => break,
            Err(e) => {
                debug!("store connection read failed: {e}");
                break;
            }
        };
        let response = match codec::decode_response(&frame) {
            Ok(r) => r,
            Err(e) => {
                debug!("undecodable response: {e}");
                break;
            }
        };
        let tx = pending.waiters.lock().unwrap().remove(&response.request_id);
        if let Some(tx) = tx {
            let _ = tx.send(response);
        }
    }
    pending.close();
}
