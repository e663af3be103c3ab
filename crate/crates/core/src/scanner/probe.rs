use std::fmt;

use log::{info, warn};

use super::link::Link;
use super::session::{ByteAbort, Session};
use super::verdict::ByteResult;
use crate::addrmem::{ByteSpan, PointerValue, POINTER_LEN};
use crate::wire::ClientError;

/// Outcome of writing a different pointer into the slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Redirect {
    pub to: PointerValue,
    pub accepted: bool,
    /// Slot contents after the wait that follows the write.
    pub slot_after: Vec<u8>,
    /// The original pointer bytes were confirmed after the test.
    pub restored: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PointerProbe {
    pub slot: ByteSpan,
    pub raw: Vec<u8>,
    /// `None` when the slot does not hold a decodable pointer.
    pub pointer: Option<PointerValue>,
    pub slot_bytes: Vec<ByteResult>,
    pub target: Option<ByteSpan>,
    pub target_bytes: Vec<ByteResult>,
    /// Why part of the probe was skipped.
    pub skipped: Option<String>,
    pub redirect: Option<Redirect>,
}

impl PointerProbe {
    pub fn is_opaque(&self) -> bool {
        self.pointer.is_none()
    }

    /// Some slot byte accepted a write.
    pub fn slot_writable(&self) -> bool {
        self.slot_bytes.iter().any(|b| b.write_accepted)
    }

    /// An injected slot value was still visible on the direct read.
    pub fn slot_retained(&self) -> bool {
        self.slot_bytes.iter().any(|b| b.is_vulnerable())
    }

    /// The memory the pointer designates keeps injected values.
    pub fn vulnerable_by_proxy(&self) -> bool {
        self.target_bytes.iter().any(|b| b.is_persistent())
    }

    pub fn all_restored(&self) -> bool {
        self.slot_bytes.iter().chain(&self.target_bytes).all(|b| b.restored)
            && self.redirect.as_ref().is_none_or(|r| r.restored)
    }
}

fn abort_error(a: ByteAbort) -> ClientError {
    a.error
}

/// Reads the pointer stored at `slot`, tests the slot bytes and `target_len` bytes of the
/// memory it designates, and optionally tries redirecting it.
pub fn pointer_probe<L: Link>(
    session: &mut Session<L>,
    slot: ByteSpan,
    target_len: u32,
    redirect: Option<PointerValue>,
) -> Result<PointerProbe, ClientError> {
    let raw = session.link().read(slot)?;
    let mut probe = PointerProbe {
        slot,
        raw: raw.clone(),
        pointer: None,
        slot_bytes: vec![],
        target: None,
        target_bytes: vec![],
        skipped: None,
        redirect: None,
    };
    let pointer = match PointerValue::decode(&raw) {
        Ok(p) => p,
        Err(e) => {
            warn!("{slot} does not hold a pointer ({e}); probe skipped");
            probe.skipped = Some(format!("opaque slot contents: {e}"));
            return Ok(probe);
        }
    };
    probe.pointer = Some(pointer);
    info!("{slot} holds {pointer}");

    let mut first = true;
    let mut next = |session: &mut Session<L>| -> Result<(), ClientError> {
        if !first {
            session.wait_next_byte()?;
        }
        first = false;
        Ok(())
    };
    for i in 0..slot.length {
        next(session)?;
        probe.slot_bytes.push(session.test_byte(slot.db, slot.start + i).map_err(abort_error)?);
    }

    let target = ByteSpan::new(pointer.db, pointer.byte_offset(), target_len);
    match session.link().read(target) {
        Ok(_) => {
            probe.target = Some(target);
            for i in 0..target_len {
                next(session)?;
                probe.target_bytes.push(session.test_byte(target.db, target.start + i).map_err(abort_error)?);
            }
        }
        Err(ClientError::Status(s)) => {
            warn!("pointer target {target} is not readable ({s}); target probe skipped");
            probe.skipped = Some(format!("target {target} not readable: {s}"));
        }
        Err(e) => return Err(e),
    }

    if let Some(to) = redirect {
        next(session)?;
        let accepted = match session.link().write(slot.db, slot.start, &to.encode()) {
            Ok(()) => true,
            Err(ClientError::Status(_)) => false,
            Err(e) => return Err(e),
        };
        session.wait_direct()?;
        let slot_after = session.link().read(slot)?;
        match session.link().write(slot.db, slot.start, &raw) {
            Ok(()) | Err(ClientError::Status(_)) => {}
            Err(e) => return Err(e),
        }
        let restored = session.link().read(slot)? == raw;
        probe.redirect = Some(Redirect { to, accepted, slot_after, restored });
    }
    Ok(probe)
}

/// Slot of a pointer-typed variable: always [`POINTER_LEN`] bytes.
pub fn pointer_slot(db: u16, offset: u32) -> ByteSpan {
    ByteSpan::new(db, offset, POINTER_LEN as u32)
}

impl fmt::Display for PointerProbe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let hex: String = self.raw.iter().map(|b| format!("{b:02X}")).collect::<Vec<_>>().join(" ");
        writeln!(f, "pointer slot {}: {hex}", self.slot)?;
        let Some(p) = self.pointer else {
            writeln!(f, "  opaque: {}", self.skipped.as_deref().unwrap_or("not a pointer"))?;
            return Ok(());
        };
        writeln!(f, "  points to {p}")?;
        let yn = |b: bool| if b { "yes" } else { "no" };
        writeln!(f, "  slot writable: {}", yn(self.slot_writable()))?;
        writeln!(f, "  slot keeps injected values: {}", yn(self.slot_retained()))?;
        match self.target {
            Some(t) => {
                let persistent = self.target_bytes.iter().filter(|b| b.is_persistent()).count();
                writeln!(f, "  target {t}: {persistent} of {} bytes keep injected values", self.target_bytes.len())?;
                writeln!(f, "  vulnerable by proxy: {}", yn(self.vulnerable_by_proxy()))?;
            }
            None => writeln!(f, "  target skipped: {}", self.skipped.as_deref().unwrap_or(""))?,
        }
        if let Some(r) = &self.redirect {
            writeln!(f, "  redirect to {}: {}", r.to, if r.accepted { "accepted" } else { "rejected" })?;
            let after = PointerValue::decode(&r.slot_after).map(|p| p.to_string()).unwrap_or_else(|_| "opaque".into());
            writeln!(f, "  slot after one wait: {after}")?;
            writeln!(f, "  original pointer restored: {}", yn(r.restored))?;
        }
        if !self.all_restored() {
            writeln!(f, "WARNING: some probed bytes may not hold their original value")?;
        }
        Ok(())
    }
}
