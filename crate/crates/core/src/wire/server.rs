use std::io::{self, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use log::{debug, info, warn};

use super::codec::{read_message, Message, ReadFrameError, Status, MAX_LIST_ENTRIES, MAX_READ_DATA};
use crate::addrmem::{ByteSpan, Origin};
use crate::softplc::Plc;

/// Largest cycle count a single STEP may request.
pub const MAX_STEP: u32 = 1_000_000;

const POLL: Duration = Duration::from_millis(20);

/// CPU location the server answers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ServerConfig {
    pub rack: u8,
    pub slot: u8,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig { rack: 0, slot: 2 }
    }
}

/// A listening server. Dropping the handle does not stop it; call [`ServerHandle::shutdown`].
#[derive(Debug)]
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting, closes open connections and waits for the accept thread.
    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    /// Blocks until the server stops.
    pub fn wait(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Binds a listener and serves the PLC on a background thread, one thread per connection.
pub fn serve<A: ToSocketAddrs>(addr: A, plc: Plc, config: ServerConfig) -> io::Result<ServerHandle> {
    let listener = TcpListener::bind(addr)?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    info!("listening on {addr}");
    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    let thread = thread::spawn(move || {
        let mut workers = Vec::new();
        while !flag.load(Ordering::Relaxed) {
            match listener.accept() {
                Ok((stream, peer)) => {
                    debug!("connection from {peer}");
                    let plc = plc.clone();
                    let flag = flag.clone();
                    workers.push(thread::spawn(move || {
                        if let Err(e) = handle_connection(stream, &plc, config, &flag) {
                            debug!("connection {peer} closed: {e}");
                        }
                    }));
                    workers.retain(|w: &JoinHandle<()>| !w.is_finished());
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(POLL),
                Err(e) => {
                    warn!("accept failed: {e}");
                    thread::sleep(POLL);
                }
            }
        }
        for w in workers {
            let _ = w.join();
        }
    });
    Ok(ServerHandle { addr, stop, thread: Some(thread) })
}

fn handle_connection(mut stream: TcpStream, plc: &Plc, config: ServerConfig, stop: &AtomicBool) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_read_timeout(Some(POLL))?;
    stream.set_nodelay(true)?;
    let mut connected = false;
    loop {
        let msg = match read_message(&mut stream) {
            Ok(m) => m,
            Err(ReadFrameError::Io(e)) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                if stop.load(Ordering::Relaxed) {
                    return Ok(());
                }
                // a partially received frame is dropped along with the connection
                continue;
            }
            Err(ReadFrameError::Io(e)) => return Err(e),
            Err(ReadFrameError::Frame(e)) => {
                warn!("malformed frame, closing: {e}");
                return Ok(());
            }
        };
        let Some(reply) = respond(msg, plc, config, &mut connected) else {
            warn!("unexpected message type, closing");
            return Ok(());
        };
        stream.write_all(&reply.encode())?;
    }
}

/// Computes the reply to one request. `None` means the request type is not a client request.
pub fn respond(msg: Message, plc: &Plc, config: ServerConfig, connected: &mut bool) -> Option<Message> {
    if !*connected && !matches!(msg, Message::Connect { .. }) {
        return refusal(&msg);
    }
    Some(match msg {
        Message::Connect { rack, slot } => {
            let ok = rack == config.rack && slot == config.slot;
            *connected = ok;
            let status = if ok { Status::Ok } else { Status::BadRequest };
            Message::ConnAck { status }
        }
        Message::Read { db, start, len } => {
            if len as usize > MAX_READ_DATA {
                return Some(Message::ReadResp { status: Status::BadRequest, data: vec![] });
            }
            match plc.store().read_bytes(ByteSpan::new(db, start, len as u32)) {
                Ok(data) => Message::ReadResp { status: Status::Ok, data },
                Err(e) => Message::ReadResp { status: Status::from(&e), data: vec![] },
            }
        }
        Message::Write { db, start, data } => {
            let span = ByteSpan::new(db, start, data.len() as u32);
            let status = match plc.store().write_bytes(span, &data, Origin::Network) {
                Ok(()) => Status::Ok,
                Err(e) => Status::from(&e),
            };
            Message::WriteResp { status }
        }
        Message::Step { cycles } if cycles > MAX_STEP => {
            Message::StepAck { status: Status::BadRequest, total_cycles: plc.cycles() }
        }
        Message::Step { cycles } => match plc.step(cycles as u64) {
            Ok(total_cycles) => Message::StepAck { status: Status::Ok, total_cycles },
            Err(_) => Message::StepAck { status: Status::ModeError, total_cycles: plc.cycles() },
        },
        Message::ListVb => {
            let mut entries = plc.store().list();
            if entries.len() > MAX_LIST_ENTRIES {
                return Some(Message::ListResp { status: Status::BadRequest, entries: vec![] });
            }
            entries.sort_by_key(|e| e.number);
            Message::ListResp { status: Status::Ok, entries }
        }
        Message::ConnAck { .. }
        | Message::ReadResp { .. }
        | Message::WriteResp { .. }
        | Message::StepAck { .. }
        | Message::ListResp { .. } => return None,
    })
}

/// BAD_REQUEST reply for a request sent before a successful CONNECT.
fn refusal(msg: &Message) -> Option<Message> {
    let status = Status::BadRequest;
    Some(match msg {
        Message::Read { .. } => Message::ReadResp { status, data: vec![] },
        Message::Write { .. } => Message::WriteResp { status },
        Message::Step { .. } => Message::StepAck { status, total_cycles: 0 },
        Message::ListVb => Message::ListResp { status, entries: vec![] },
        _ => return None,
    })
}
