use std::collections::HashMap;
use std::io::{self, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};

use log::{debug, warn};

use super::codec::{self, RequestFrame};
use super::NetError;
use crate::store::timeout_from_ms as engine_timeout_from_ms;
use crate::store::{Command, Engine, PopCanceller, PopStart, Store};

/// A running store server. Dropping it stops the listener and closes all
/// client connections.
pub struct StoreServer {
    addr: SocketAddr,
    inner: Arc<ServerInner>,
    accept: Option<JoinHandle<()>>,
}

struct ServerInner {
    engine: Engine,
    stopping: AtomicBool,
    next_conn: AtomicU64,
    conns: Mutex<HashMap<u64, TcpStream>>,
}

/// Bind `addr` and serve `engine` on background threads.
pub fn serve(addr: impl ToSocketAddrs, engine: Engine) -> Result<StoreServer, NetError> {
    let listener = TcpListener::bind(addr).map_err(NetError::Bind)?;
    let local = listener.local_addr().map_err(NetError::Bind)?;
    let inner = Arc::new(ServerInner {
        engine,
        stopping: AtomicBool::new(false),
        next_conn: AtomicU64::new(0),
        conns: Mutex::new(HashMap::new()),
    });
    let accept_inner = inner.clone();
    let accept = thread::Builder::new()
        .name("store-accept".into())
        .spawn(move || accept_loop(listener, accept_inner))
        .map_err(NetError::Bind)?;
    Ok(StoreServer { addr: local, inner, accept: Some(accept) })
}

impl StoreServer {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn engine(&self) -> &Engine {
        &self.inner.engine
    }

    /// Number of open client connections.
    pub fn connection_count(&self) -> usize {
        self.inner.conns.lock().unwrap().len()
    }

    /// Stop accepting and drop every connection.
    pub fn shutdown(&mut self) {
        if self.inner.stopping.swap(true, Ordering::SeqCst) {
            return;
        }
        // Wake the blocking accept.
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
        for (_, s) in self.inner.conns.lock().unwrap().drain() {
            let _ = s.shutdown(Shutdown::Both);
        }
    }

    /// Block the calling thread until the accept loop ends.
    pub fn wait(mut self) {
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

impl Drop for StoreServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn accept_loop(listener: TcpListener, inner: Arc<ServerInner>) {
    for stream in listener.incoming() {
        if inner.stopping.load(Ordering::SeqCst) {
            return;
        }
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                warn!("accept failed: {e}");
                continue;
            }
        };
        let _ = stream.set_nodelay(true);
        let id = inner.next_conn.fetch_add(1, Ordering::SeqCst);
        match stream.try_clone() {
            Ok(c) => {
                inner.conns.lock().unwrap().insert(id, c);
            }
            Err(e) => {
                warn!("clone of accepted socket failed: {e}");
                continue;
            }
        }
        let conn_inner = inner.clone();
        let spawned = thread::Builder::new().name(format!("store-conn-{id}")).spawn(move || {
            if let Err(e) = serve_connection(stream, &conn_inner) {
                debug!("connection {id} closed: {e}");
            }
            conn_inner.conns.lock().unwrap().remove(&id);
        });
        if let Err(e) = spawned {
            warn!("cannot spawn connection thread: {e}");
            inner.conns.lock().unwrap().remove(&id);
        }
    }
}

type Writer = Arc<Mutex<TcpStream>>;

fn send(writer: &Writer, bytes: &[u8]) -> io::Result<()> {
    writer.lock().unwrap().write_all(bytes)
}

/// Pops parked on behalf of one connection, keyed by request id.
type Parked = Arc<Mutex<HashMap<u64, PopCanceller>>>;

fn serve_connection(stream: TcpStream, inner: &ServerInner) -> io::Result<()> {
    let writer: Writer = Arc::new(Mutex::new(stream.try_clone()?));
    let parked: Parked = Arc::new(Mutex::new(HashMap::new()));
    let mut reader = io::BufReader::new(stream);
    let result = loop {
        let frame = match codec::read_frame(&mut reader) {
            Ok(Some(f)) => f,
            Ok(None) => break Ok(()),
            Err(e) => break Err(e),
        };
        let request = match codec::decode_request(&frame) {
            Ok(r) => r,
            Err(e) => break Err(io::Error::new(io::ErrorKind::InvalidData, e.to_string())),
        };
        if let Err(e) = dispatch(request, inner, &writer, &parked) {
            break Err(e);
        }
    };
    // Parked pops of a vanished client must not swallow later elements.
    for (_, c) in parked.lock().unwrap().drain() {
        c.cancel();
    }
    let _ = reader.get_ref().shutdown(Shutdown::Both);
    result
}

fn dispatch(request: RequestFrame, inner: &ServerInner, writer: &Writer, parked: &Parked) -> io::Result<()> {
    let RequestFrame { request_id, command } = request;
    let opcode = codec::opcode_of(&command);
    if let Command::PopHead { key, timeout_ms } = &command {
        match inner.engine.begin_pop(key, engine_timeout_from_ms(*timeout_ms)) {
            Ok(PopStart::Parked(pop)) => {
                parked.lock().unwrap().insert(request_id, pop.canceller());
                let writer = writer.clone();
                let parked = parked.clone();
                thread::spawn(move || {
                    let outcome = pop.wait().map(crate::store::Reply::Value);
                    parked.lock().unwrap().remove(&request_id);
                    let bytes = codec::encode_response(request_id, opcode, &outcome);
                    let _ = send(&writer, &bytes);
                });
                return Ok(());
            }
            Ok(PopStart::Ready(v)) => {
                let bytes = codec::encode_response(request_id, opcode, &Ok(crate::store::Reply::Value(v)));
                return send(writer, &bytes);
            }
            Err(e) => return send(writer, &codec::encode_response(request_id, opcode, &Err(e))),
        }
    }
    let outcome = inner.engine.execute(command);
    send(writer, &codec::encode_response(request_id, opcode, &outcome))
}
