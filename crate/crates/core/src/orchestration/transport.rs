//! Aggregator-side connections and the client loop that drives a [`Peer`].
//!
//! Two transports implement the same traits. The in-memory one runs each
//! client synchronously inside `send`, which makes a whole experiment a
//! single-threaded, deterministic program. The TCP one listens on a local
//! port and runs every client on its own thread.

use std::collections::VecDeque;
use std::io::BufReader;
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use thiserror::Error;

use super::client::ClientError;
use super::wire::{decode_frame, encode_frame, read_frame, write_frame, Message, WireError};

#[derive(Debug, Error)]
pub enum TransportError {
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("peer closed the connection")]
    Closed,
    #[error("timed out waiting for peer")]
    Timeout,
    #[error("peer failed: {0}")]
    Peer(#[from] ClientError),
}

impl TransportError {
    fn from_wire(e: WireError) -> Self {
        match e {
            WireError::Closed => TransportError::Closed,
            WireError::Io(io)
                if matches!(io.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) =>
            {
                TransportError::Timeout
            }
            other => TransportError::Wire(other),
        }
    }
}

/// Aggregator's end of one client session.
pub trait Connection: Send {
    fn send(&mut self, msg: &Message) -> Result<(), TransportError>;
    fn recv(&mut self) -> Result<Message, TransportError>;
}

/// Source of new client sessions.
pub trait Listener {
    /// Sessions opened since the last call, in arrival order. `expected` is
    /// how many the caller knows are due; transports that cannot see their
    /// clients wait for that many before returning.
    fn accept_pending(&mut self, expected: usize) -> Result<Vec<Box<dyn Connection>>, TransportError>;
}

/// Client side of the protocol, independent of how bytes travel.
pub trait Peer: Send {
    fn wants_connect(&self) -> bool;
    /// Starts a connection attempt and returns the opening message.
    fn hello(&mut self) -> Result<Message, ClientError>;
    fn handle(&mut self, msg: Message) -> Result<Vec<Message>, ClientError>;
    /// Whether the current session is still open after the last message.
    fn is_connected(&self) -> bool;
    fn connection_lost(&mut self);
}

pub type SharedPeer = Arc<Mutex<dyn Peer>>;

fn lock(peer: &SharedPeer) -> std::sync::MutexGuard<'_, dyn Peer + 'static> {
    peer.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

/// Every message still goes through the frame codec so that the in-memory
/// path exercises exactly the bytes TCP would carry.
pub struct InMemoryConnection {
    peer: SharedPeer,
    inbox: VecDeque<Vec<u8>>,
    open: bool,
}

impl Connection for InMemoryConnection {
    fn send(&mut self, msg: &Message) -> Result<(), TransportError> {
        if !self.open {
            return Err(TransportError::Closed);
        }
        let delivered = decode_frame(&encode_frame(msg))?;
        let mut peer = lock(&self.peer);
        let replies = match peer.handle(delivered) {
            Ok(r) => r,
            Err(e) => {
                self.open = false;
                peer.connection_lost();
                return Err(e.into());
            }
        };
        self.inbox.extend(replies.iter().map(encode_frame));
        self.open = peer.is_connected();
        Ok(())
    }

    fn recv(&mut self) -> Result<Message, TransportError> {
        let frame = self.inbox.pop_front().ok_or(TransportError::Closed)?;
        Ok(decode_frame(&frame)?)
    }
}

impl Drop for InMemoryConnection {
    fn drop(&mut self) {
        if self.open {
            let mut peer = lock(&self.peer);
            if peer.is_connected() {
                peer.connection_lost();
            }
        }
    }
}

/// Polls clients in a fixed order; a client that wants to connect is
/// connected on the spot.
pub struct InMemoryListener {
    peers: Vec<SharedPeer>,
}

impl InMemoryListener {
    pub fn new(peers: Vec<SharedPeer>) -> Self {
        Self { peers }
    }
}

impl Listener for InMemoryListener {
    fn accept_pending(&mut self, _expected: usize) -> Result<Vec<Box<dyn Connection>>, TransportError> {
        let mut out: Vec<Box<dyn Connection>> = Vec::new();
        for peer in &self.peers {
            let mut guard = lock(peer);
            if !guard.wants_connect() {
                continue;
            }
            let hello = guard.hello()?;
            drop(guard);
            out.push(Box::new(InMemoryConnection {
                peer: Arc::clone(peer),
                inbox: VecDeque::from([encode_frame(&hello)]),
                open: true,
            }));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TcpTimeouts {
    /// Per-read limit on an established session.
    pub io: Duration,
    /// Longest wait for the `expected` connections.
    pub arrival: Duration,
    /// Quiet period after which no more stragglers are awaited.
    pub grace: Duration,
}

impl Default for TcpTimeouts {
    fn default() -> Self {
        Self {
            io: Duration::from_secs(60),
            arrival: Duration::from_secs(30),
            grace: Duration::from_millis(150),
        }
    }
}

pub struct TcpConnection {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl TcpConnection {
    fn new(stream: TcpStream, io_timeout: Duration) -> std::io::Result<Self> {
        stream.set_nodelay(true)?;
        stream.set_read_timeout(Some(io_timeout))?;
        Ok(Self { reader: BufReader::new(stream.try_clone()?), writer: stream })
    }
}

impl Connection for TcpConnection {
    fn send(&mut self, msg: &Message) -> Result<(), TransportError> {
        write_frame(&mut self.writer, msg).map_err(TransportError::from_wire)
    }

    fn recv(&mut self) -> Result<Message, TransportError> {
        read_frame(&mut self.reader).map_err(TransportError::from_wire)
    }
}

impl Drop for TcpConnection {
    fn drop(&mut self) {
        let _ = self.writer.shutdown(Shutdown::Both);
    }
}

/// Loopback listener with a background accept thread.
pub struct TcpAcceptor {
    addr: SocketAddr,
    incoming: Receiver<TcpStream>,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
    timeouts: TcpTimeouts,
}

impl TcpAcceptor {
    pub fn bind(addr: &str, timeouts: TcpTimeouts) -> std::io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let (tx, incoming) = mpsc::channel();
        let stop = Arc::new(AtomicBool::new(false));
        let stop_flag = Arc::clone(&stop);
        let thread = thread::spawn(move || {
            for stream in listener.incoming() {
                if stop_flag.load(Ordering::SeqCst) {
                    break;
                }
                match stream {
                    Ok(s) => {
                        if tx.send(s).is_err() {
                            break;
                        }
                    }
                    Err(e) => log::warn!("accept failed: {e}"),
                }
            }
        });
        Ok(Self { addr, incoming, stop, thread: Some(thread), timeouts })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }
}

impl Listener for TcpAcceptor {
    fn accept_pending(&mut self, expected: usize) -> Result<Vec<Box<dyn Connection>>, TransportError> {
        let mut streams = Vec::new();
        let deadline = Instant::now() + self.timeouts.arrival;
        while streams.len() < expected {
            let left = deadline.saturating_duration_since(Instant::now());
            match self.incoming.recv_timeout(left) {
                Ok(s) => streams.push(s),
                Err(RecvTimeoutError::Timeout) => break,
                Err(RecvTimeoutError::Disconnected) => return Err(TransportError::Closed),
            }
        }
        while let Ok(s) = self.incoming.recv_timeout(self.timeouts.grace) {
            streams.push(s);
        }
        streams
            .into_iter()
            .map(|s| {
                TcpConnection::new(s, self.timeouts.io)
                    .map(|c| Box::new(c) as Box<dyn Connection>)
                    .map_err(|e| TransportError::Wire(e.into()))
            })
            .collect()
    }
}

impl Drop for TcpAcceptor {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the blocking accept so the thread sees the flag.
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Runs a peer against a TCP aggregator until it no longer wants to
/// connect. Returns the peer so callers can inspect its final state.
pub fn run_tcp_client<P: Peer + 'static>(mut peer: P, addr: SocketAddr) -> JoinHandle<Result<P, ClientError>> {
    thread::spawn(move || {
        while peer.wants_connect() {
            let stream = match TcpStream::connect(addr) {
                Ok(s) => s,
                Err(e) => {
                    log::debug!("connect to {addr} failed: {e}");
                    peer.connection_lost();
                    break;
                }
            };
            match drive_session(&mut peer, stream) {
                Ok(()) => {}
                Err(TransportError::Peer(e)) => {
                    peer.connection_lost();
                    return Err(e);
                }
                Err(e) => {
                    log::debug!("session ended: {e}");
                    peer.connection_lost();
                }
            }
        }
        Ok(peer)
    })
}

fn drive_session<P: Peer>(peer: &mut P, stream: TcpStream) -> Result<(), TransportError> {
    stream.set_nodelay(true).map_err(WireError::from)?;
    let mut writer = stream.try_clone().map_err(WireError::from)?;
    let mut reader = BufReader::new(stream);
    write_frame(&mut writer, &peer.hello()?)?;
    loop {
        let msg = read_frame(&mut reader).map_err(TransportError::from_wire)?;
        for reply in peer.handle(msg)? {
            write_frame(&mut writer, &reply)?;
        }
        if !peer.is_connected() {
            let _ = writer.shutdown(Shutdown::Both);
            return Ok(());
        }
    }
}
