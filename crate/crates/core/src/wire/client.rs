use std::io::{self, Write};
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::time::Duration;

use log::trace;
use thiserror::Error;

use super::codec::{read_message, FrameError, Message, ReadFrameError, Status, MAX_READ_DATA, MAX_WRITE_DATA};
use crate::addrmem::{ByteSpan, VbInfo};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("cannot connect to {addr}: {source}")]
    Connect { addr: String, source: io::Error },
    #[error("request timed out")]
    Timeout,
    #[error("connection lost: {0}")]
    Io(io::Error),
    #[error("protocol violation: {0}")]
    Protocol(#[from] FrameError),
    #[error("unexpected reply {0:?}")]
    Unexpected(Box<Message>),
    #[error("server replied {0}")]
    Status(Status),
    #[error("request does not fit the protocol: {0}")]
    Request(String),
}

impl ClientError {
    /// Whether the connection can no longer be used.
    pub fn is_link_failure(&self) -> bool {
        matches!(self, ClientError::Timeout | ClientError::Io(_) | ClientError::Protocol(_) | ClientError::Unexpected(_))
    }
}

impl From<io::Error> for ClientError {
    fn from(e: io::Error) -> Self {
        match e.kind() {
            io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut => ClientError::Timeout,
            _ => ClientError::Io(e),
        }
    }
}

impl From<ReadFrameError> for ClientError {
    fn from(e: ReadFrameError) -> Self {
        match e {
            ReadFrameError::Io(e) => e.into(),
            ReadFrameError::Frame(e) => ClientError::Protocol(e),
        }
    }
}

fn check(status: Status) -> Result<(), ClientError> {
    match status {
        Status::Ok => Ok(()),
        s => Err(ClientError::Status(s)),
    }
}

/// Blocking single-connection client.
#[derive(Debug)]
pub struct Client {
    stream: TcpStream,
    peer: SocketAddr,
}

impl Client {
    /// Connects and performs the CONNECT handshake.
    pub fn connect<A: ToSocketAddrs>(addr: A, rack: u8, slot: u8, timeout: Duration) -> Result<Client, ClientError> {
        let addrs: Vec<SocketAddr> = addr
            .to_socket_addrs()
            .map_err(|source| ClientError::Connect { addr: "<unresolved>".into(), source })?
            .collect();
        let mut last = io::Error::new(io::ErrorKind::NotFound, "address resolved to nothing");
        for a in &addrs {
            match TcpStream::connect_timeout(a, timeout) {
                Ok(stream) => {
                    stream.set_read_timeout(Some(timeout))?;
                    stream.set_write_timeout(Some(timeout))?;
                    stream.set_nodelay(true)?;
                    let mut client = Client { stream, peer: *a };
                    match client.request(Message::Connect { rack, slot })? {
                        Message::ConnAck { status } => check(status)?,
                        other => return Err(ClientError::Unexpected(Box::new(other))),
                    }
                    return Ok(client);
                }
                Err(e) => last = e,
            }
        }
        let shown = addrs.first().map(|a| a.to_string()).unwrap_or_default();
        Err(ClientError::Connect { addr: shown, source: last })
    }

    pub fn peer(&self) -> SocketAddr {
        self.peer
    }

    fn request(&mut self, msg: Message) -> Result<Message, ClientError> {
        trace!("-> {msg:?}");
        self.stream.write_all(&msg.encode())?;
        let reply = read_message(&mut self.stream)?;
        trace!("<- {reply:?}");
        Ok(reply)
    }

    /// Reads a span, split into as many requests as the frame limit needs.
    pub fn read(&mut self, span: ByteSpan) -> Result<Vec<u8>, ClientError> {
        let mut out = Vec::with_capacity(span.length as usize);
        let mut offset = 0u32;
        loop {
            let len = (span.length - offset).min(MAX_READ_DATA as u32);
            let start = span
                .start
                .checked_add(offset)
                .ok_or_else(|| ClientError::Request(format!("{span} overflows the offset field")))?;
            match self.request(Message::Read { db: span.db, start, len: len as u16 })? {
                Message::ReadResp { status: Status::Ok, data } if data.len() == len as usize => out.extend(data),
                Message::ReadResp { status: Status::Ok, data } => {
                    return Err(ClientError::Request(format!("asked for {len} bytes, got {}", data.len())));
                }
                Message::ReadResp { status, .. } => return Err(ClientError::Status(status)),
                other => return Err(ClientError::Unexpected(Box::new(other))),
            }
            offset += len;
            if offset >= span.length {
                return Ok(out);
            }
        }
    }

    /// Writes `data` at `db.start`, split into as many requests as the frame limit needs.
    /// Each request is applied atomically; a multi-request write is not.
    pub fn write(&mut self, db: u16, start: u32, data: &[u8]) -> Result<(), ClientError> {
        let chunks: Vec<&[u8]> = if data.is_empty() { vec![data] } else { data.chunks(MAX_WRITE_DATA).collect() };
        let mut offset = start;
        for chunk in chunks {
            match self.request(Message::Write { db, start: offset, data: chunk.to_vec() })? {
                Message::WriteResp { status } => check(status)?,
                other => return Err(ClientError::Unexpected(Box::new(other))),
            }
            offset = offset
                .checked_add(chunk.len() as u32)
                .ok_or_else(|| ClientError::Request("write overflows the offset field".into()))?;
        }
        Ok(())
    }

    /// Requests `n` cycles and returns the server's total cycle count.
    pub fn step(&mut self, n: u32) -> Result<u64, ClientError> {
        match self.request(Message::Step { cycles: n })? {
            Message::StepAck { status, total_cycles } => check(status).map(|_| total_cycles),
            other => Err(ClientError::Unexpected(Box::new(other))),
        }
    }

    pub fn list_vbs(&mut self) -> Result<Vec<VbInfo>, ClientError> {
        match self.request(Message::ListVb)? {
            Message::ListResp { status, entries } => check(status).map(|_| entries),
            other => Err(ClientError::Unexpected(Box::new(other))),
        }
    }
}
