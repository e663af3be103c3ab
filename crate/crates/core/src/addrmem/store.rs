use std::collections::BTreeMap;
use std::sync::{Arc, RwLock, RwLockReadGuard, RwLockWriteGuard};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::address::{BitAddress, ByteSpan};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MemoryError {
    #[error("no such variable block DB{0}")]
    NoSuchVb(u16),
    #[error("span {span} exceeds DB{} of {size} bytes", span.db)]
    OutOfRange { span: ByteSpan, size: u32 },
    #[error("DB{0} is write protected")]
    AccessDenied(u16),
    #[error("data length {data} does not match span length {span}")]
    LengthMismatch { span: u32, data: usize },
    #[error("duplicate variable block DB{0}")]
    DuplicateVb(u16),
    #[error("snapshot does not match store: {0}")]
    SnapshotMismatch(String),
}

/// Who is writing. Write protection only applies to writes arriving over the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Network,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariableBlock {
    number: u16,
    data: Vec<u8>,
    write_protected: bool,
}

impl VariableBlock {
    pub fn new(number: u16, size: u32, write_protected: bool) -> Self {
        VariableBlock { number, data: vec![0; size as usize], write_protected }
    }

    pub fn with_data(number: u16, data: Vec<u8>, write_protected: bool) -> Self {
        VariableBlock { number, data, write_protected }
    }

    pub fn number(&self) -> u16 {
        self.number
    }

    pub fn size(&self) -> u32 {
        self.data.len() as u32
    }

    pub fn write_protected(&self) -> bool {
        self.write_protected
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }
}

/// `(number, size, write_protected)` as listed to clients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VbInfo {
    pub number: u16,
    pub size: u32,
    pub write_protected: bool,
}

/// Byte contents of every block, keyed by block number.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Snapshot(pub BTreeMap<u16, Vec<u8>>);

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MemoryStore {
    blocks: BTreeMap<u16, VariableBlock>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, block: VariableBlock) -> Result<(), MemoryError> {
        if self.blocks.contains_key(&block.number) {
            return Err(MemoryError::DuplicateVb(block.number));
        }
        self.blocks.insert(block.number, block);
        Ok(())
    }

    pub fn block(&self, number: u16) -> Option<&VariableBlock> {
        self.blocks.get(&number)
    }

    pub fn list(&self) -> Vec<VbInfo> {
        self.blocks
            .values()
            .map(|b| VbInfo { number: b.number, size: b.size(), write_protected: b.write_protected })
            .collect()
    }

    fn resolve(&self, span: ByteSpan) -> Result<(&VariableBlock, std::ops::Range<usize>), MemoryError> {
        let block = self.blocks.get(&span.db).ok_or(MemoryError::NoSuchVb(span.db))?;
        if span.end() > block.size() as u64 {
            return Err(MemoryError::OutOfRange { span, size: block.size() });
        }
        Ok((block, span.start as usize..span.end() as usize))
    }

    /// Checks that `span` lies inside an existing block.
    pub fn check(&self, span: ByteSpan) -> Result<(), MemoryError> {
        self.resolve(span).map(|_| ())
    }

    pub fn read_bytes(&self, span: ByteSpan) -> Result<Vec<u8>, MemoryError> {
        let (block, range) = self.resolve(span)?;
        Ok(block.data[range].to_vec())
    }

    pub fn write_bytes(&mut self, span: ByteSpan, data: &[u8], origin: Origin) -> Result<(), MemoryError> {
        if data.len() as u64 != span.length as u64 {
            return Err(MemoryError::LengthMismatch { span: span.length, data: data.len() });
        }
        let (block, range) = self.resolve(span)?;
        if origin == Origin::Network && block.write_protected {
            return Err(MemoryError::AccessDenied(span.db));
        }
        let block = self.blocks.get_mut(&span.db).expect("resolved above");
        block.data[range].copy_from_slice(data);
        Ok(())
    }

    pub fn read_bit(&self, addr: BitAddress) -> Result<bool, MemoryError> {
        let byte = self.read_bytes(addr.byte_span())?[0];
        Ok(byte & addr.mask() != 0)
    }

    /// Read-modify-write of a single bit, internal origin.
    pub fn write_bit(&mut self, addr: BitAddress, value: bool) -> Result<(), MemoryError> {
        let span = addr.byte_span();
        let mut byte = self.read_bytes(span)?[0];
        if value {
            byte |= addr.mask();
        } else {
            byte &= !addr.mask();
        }
        self.write_bytes(span, &[byte], Origin::Internal)
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot(self.blocks.iter().map(|(n, b)| (*n, b.data.clone())).collect())
    }

    /// Restores every block from `snap`. The block sets and sizes must match exactly.
    pub fn restore(&mut self, snap: &Snapshot) -> Result<(), MemoryError> {
        if !self.blocks.keys().eq(snap.0.keys()) {
            let ours: Vec<_> = self.blocks.keys().collect();
            let theirs: Vec<_> = snap.0.keys().collect();
            return Err(MemoryError::SnapshotMismatch(format!("store has {ours:?}, snapshot has {theirs:?}")));
        }
        for (n, data) in &snap.0 {
            if self.blocks[n].data.len() != data.len() {
                return Err(MemoryError::SnapshotMismatch(format!("DB{n} size differs")));
            }
        }
        for (n, data) in &snap.0 {
            self.blocks.get_mut(n).expect("checked").data.copy_from_slice(data);
        }
        Ok(())
    }
}

/// Returns the bitwise complement of `b`.
pub fn invert_byte(b: u8) -> u8 {
    !b
}

/// A [`MemoryStore`] shared between the runtime thread and network handlers.
///
/// Every request takes the lock once, so a reader never sees half of another request's write.
#[derive(Debug, Clone, Default)]
pub struct SharedStore(Arc<RwLock<MemoryStore>>);

impl SharedStore {
    pub fn new(store: MemoryStore) -> Self {
        SharedStore(Arc::new(RwLock::new(store)))
    }

    pub fn read(&self) -> RwLockReadGuard<'_, MemoryStore> {
        self.0.read().unwrap_or_else(|e| e.into_inner())
    }

    pub fn write(&self) -> RwLockWriteGuard<'_, MemoryStore> {
        self.0.write().unwrap_or_else(|e| e.into_inner())
    }

    pub fn read_bytes(&self, span: ByteSpan) -> Result<Vec<u8>, MemoryError> {
        self.read().read_bytes(span)
    }

    pub fn write_bytes(&self, span: ByteSpan, data: &[u8], origin: Origin) -> Result<(), MemoryError> {
        self.write().write_bytes(span, data, origin)
    }

    pub fn list(&self) -> Vec<VbInfo> {
        self.read().list()
    }

    pub fn snapshot(&self) -> Snapshot {
        self.read().snapshot()
    }
}
