use std::time::Duration;

use log::info;

use crate::addrmem::{ByteSpan, VbInfo};
use crate::wire::{Client, ClientError};

/// The request surface the scanner needs from a PLC.
pub trait Link {
    fn read(&mut self, span: ByteSpan) -> Result<Vec<u8>, ClientError>;
    fn write(&mut self, db: u16, start: u32, data: &[u8]) -> Result<(), ClientError>;
    fn step(&mut self, cycles: u32) -> Result<u64, ClientError>;
    fn list_vbs(&mut self) -> Result<Vec<VbInfo>, ClientError>;

    /// Re-establishes a lost connection, when the link knows how.
    fn reconnect(&mut self) -> Result<(), ClientError> {
        Err(ClientError::Request("this link cannot reconnect".into()))
    }
}

/// A [`Client`] that remembers how to reconnect.
#[derive(Debug)]
pub struct NetLink {
    client: Option<Client>,
    addr: String,
    rack: u8,
    slot: u8,
    timeout: Duration,
}

impl NetLink {
    pub fn connect(addr: &str, rack: u8, slot: u8, timeout: Duration) -> Result<Self, ClientError> {
        let client = Client::connect(addr, rack, slot, timeout)?;
        info!("connected to {} (rack {rack}, slot {slot})", client.peer());
        Ok(NetLink { client: Some(client), addr: addr.to_string(), rack, slot, timeout })
    }

    fn client(&mut self) -> Result<&mut Client, ClientError> {
        self.client
            .as_mut()
            .ok_or_else(|| ClientError::Io(std::io::Error::new(std::io::ErrorKind::NotConnected, "connection closed")))
    }

    /// Drops the connection after a link failure so later calls fail fast.
    fn guard<T>(&mut self, r: Result<T, ClientError>) -> Result<T, ClientError> {
        if matches!(&r, Err(e) if e.is_link_failure()) {
            self.client = None;
        }
        r
    }
}

impl Link for NetLink {
    fn read(&mut self, span: ByteSpan) -> Result<Vec<u8>, ClientError> {
        let r = self.client()?.read(span);
        self.guard(r)
    }

    fn write(&mut self, db: u16, start: u32, data: &[u8]) -> Result<(), ClientError> {
        let r = self.client()?.write(db, start, data);
        self.guard(r)
    }

    fn step(&mut self, cycles: u32) -> Result<u64, ClientError> {
        let r = self.client()?.step(cycles);
        self.guard(r)
    }

    fn list_vbs(&mut self) -> Result<Vec<VbInfo>, ClientError> {
        let r = self.client()?.list_vbs();
        self.guard(r)
    }

    fn reconnect(&mut self) -> Result<(), ClientError> {
        self.client = Some(Client::connect(self.addr.as_str(), self.rack, self.slot, self.timeout)?);
        Ok(())
    }
}

impl Link for Client {
    fn read(&mut self, span: ByteSpan) -> Result<Vec<u8>, ClientError> {
        Client::read(self, span)
    }

    fn write(&mut self, db: u16, start: u32, data: &[u8]) -> Result<(), ClientError> {
        Client::write(self, db, start, data)
    }

    fn step(&mut self, cycles: u32) -> Result<u64, ClientError> {
        Client::step(self, cycles)
    }

    fn list_vbs(&mut self) -> Result<Vec<VbInfo>, ClientError> {
        Client::list_vbs(self)
    }
}
