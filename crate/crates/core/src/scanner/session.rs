use std::thread;
use std::time::Duration;

use log::{debug, info, warn};
use thiserror::Error;

use super::config::{ConfigError, ScanConfig, Timing};
use super::link::{Link, NetLink};
use super::verdict::ByteResult;
use crate::addrmem::{invert_byte, ByteSpan, VbInfo};
use crate::report::{ConfigEcho, ScanReport, Source};
use crate::wire::{ClientError, Status};

#[derive(Debug, Error)]
pub enum ScanError {
    #[error("refusing to scan: the process has not been confirmed to be in a safe state")]
    SafeStateNotConfirmed,
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Connect(ClientError),
    #[error("DB{0} does not exist on the target")]
    NoSuchVb(u16),
    #[error("lockstep timing needs a lockstep target: {0}")]
    NotLockstep(ClientError),
    #[error("setup failed: {0}")]
    Setup(ClientError),
}

/// Why a byte test stopped part way.
#[derive(Debug)]
pub struct ByteAbort {
    pub offset: u32,
    pub error: ClientError,
    /// The inverted value may have reached the PLC.
    pub written: bool,
    pub original: Option<u8>,
}

/// A connected, validated scan session.
#[derive(Debug)]
pub struct Session<L: Link> {
    link: L,
    config: ScanConfig,
    vb: VbInfo,
}

/// Largest block size a probe searches for.
const PROBE_LIMIT: u32 = u32::MAX;

/// Finds a block's size with 1-byte reads. `None` if the block does not exist.
pub fn probe_size<L: Link>(link: &mut L, db: u16) -> Result<Option<u32>, ClientError> {
    match link.read(ByteSpan::new(db, 0, 0)) {
        Ok(_) => {}
        Err(ClientError::Status(Status::NoSuchVb)) => return Ok(None),
        Err(e) => return Err(e),
    }
    let mut readable = |n: u32| -> Result<bool, ClientError> {
        match link.read(ByteSpan::new(db, n - 1, 1)) {
            Ok(_) => Ok(true),
            Err(ClientError::Status(Status::OutOfRange)) => Ok(false),
            Err(e) => Err(e),
        }
    };
    // largest n with bytes 0..n readable
    let (mut lo, mut hi) = (0u32, PROBE_LIMIT);
    while lo < hi {
        let mid = lo + (hi - lo).div_ceil(2);
        if readable(mid)? {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    Ok(Some(lo))
}

/// Phase 1: checks the preconditions, connects and discovers the target block.
///
/// Nothing is sent before the safe-state confirmation and the configuration are checked.
pub fn phase1_setup<L, F>(config: &ScanConfig, connect: F) -> Result<Session<L>, ScanError>
where
    L: Link,
    F: FnOnce(&ScanConfig) -> Result<L, ClientError>,
{
    if !config.safe_state_confirmed {
        return Err(ScanError::SafeStateNotConfirmed);
    }
    config.validate()?;
    let mut link = connect(config).map_err(ScanError::Connect)?;
    let vb = match link.list_vbs() {
        Ok(list) => list.into_iter().find(|v| v.number == config.db).ok_or(ScanError::NoSuchVb(config.db))?,
        Err(ClientError::Status(s)) => {
            debug!("block listing refused ({s}), probing the size instead");
            let size = probe_size(&mut link, config.db).map_err(ScanError::Setup)?.ok_or(ScanError::NoSuchVb(config.db))?;
            VbInfo { number: config.db, size, write_protected: false }
        }
        Err(e) => return Err(ScanError::Setup(e)),
    };
    if matches!(config.timing, Timing::Lockstep { .. }) {
        link.step(0).map_err(ScanError::NotLockstep)?;
    }
    info!("DB{} has {} bytes{}", vb.number, vb.size, if vb.write_protected { " (write protected)" } else { "" });
    Ok(Session { link, config: config.clone(), vb })
}

/// Runs a full scan over the network.
pub fn scan(config: &ScanConfig) -> Result<ScanReport, ScanError> {
    let session = phase1_setup(config, |c| NetLink::connect(&c.target, c.rack, c.slot, c.timeout))?;
    Ok(session.run())
}

impl<L: Link> Session<L> {
    pub fn vb(&self) -> VbInfo {
        self.vb
    }

    pub fn config(&self) -> &ScanConfig {
        &self.config
    }

    pub fn link(&mut self) -> &mut L {
        &mut self.link
    }

    pub fn into_link(self) -> L {
        self.link
    }

    fn read1(&mut self, db: u16, offset: u32) -> Result<u8, ClientError> {
        let data = self.link.read(ByteSpan::new(db, offset, 1))?;
        data.first().copied().ok_or_else(|| ClientError::Request("empty read".into()))
    }

    fn wait(&mut self, cycles: u32, ms: u64) -> Result<(), ClientError> {
        match self.config.timing {
            Timing::Lockstep { .. } if cycles > 0 => self.link.step(cycles).map(|_| ()),
            Timing::Lockstep { .. } => Ok(()),
            Timing::Wallclock { .. } => {
                thread::sleep(Duration::from_millis(ms));
                Ok(())
            }
        }
    }

    pub(crate) fn wait_direct(&mut self) -> Result<(), ClientError> {
        match self.config.timing {
            Timing::Lockstep { direct_cycles, .. } => self.wait(direct_cycles, 0),
            Timing::Wallclock { .. } => Ok(()),
        }
    }

    fn wait_delayed(&mut self) -> Result<(), ClientError> {
        match self.config.timing {
            Timing::Lockstep { delayed_cycles, .. } => self.wait(delayed_cycles, 0),
            Timing::Wallclock { read2_ms, .. } => self.wait(0, read2_ms),
        }
    }

    pub(crate) fn wait_next_byte(&mut self) -> Result<(), ClientError> {
        match self.config.timing {
            Timing::Lockstep { next_byte_cycles, .. } => self.wait(next_byte_cycles, 0),
            Timing::Wallclock { next_byte_ms, .. } => self.wait(0, next_byte_ms),
        }
    }

    /// Phase 2 for one byte of the session's block.
    pub fn phase2_scan_byte(&mut self, offset: u32) -> Result<ByteResult, ByteAbort> {
        self.test_byte(self.vb.number, offset)
    }

    /// Reads, inverts, reads back directly and after the delay, writes the original back and
    /// verifies it. All requests are 1-byte.
    pub fn test_byte(&mut self, db: u16, offset: u32) -> Result<ByteResult, ByteAbort> {
        let abort = |error, written, original| ByteAbort { offset, error, written, original };
        let original = self.read1(db, offset).map_err(|e| abort(e, false, None))?;
        match self.link.write(db, offset, &[invert_byte(original)]) {
            Ok(()) => {}
            Err(ClientError::Status(s)) => {
                debug!("DB{db}.DBB{offset}: inversion rejected ({s})");
                return Ok(ByteResult::rejected(offset, original));
            }
            Err(e) => return Err(abort(e, true, Some(original))),
        }
        let mut rest = || -> Result<ByteResult, ClientError> {
            self.wait_direct()?;
            let direct = self.read1(db, offset)?;
            self.wait_delayed()?;
            let delayed = self.read1(db, offset)?;
            match self.link.write(db, offset, &[original]) {
                Ok(()) | Err(ClientError::Status(_)) => {}
                Err(e) => return Err(e),
            }
            let verify = self.read1(db, offset)?;
            Ok(ByteResult::accepted(offset, original, direct, delayed, Some(verify)))
        };
        let result = rest().map_err(|e| abort(e, true, Some(original)))?;
        debug!(
            "DB{db}.DBB{offset}: {:02X} -> direct {:02X?} delayed {:02X?}",
            original, result.direct_read, result.delayed_read
        );
        if !result.restored {
            warn!("DB{db}.DBB{offset} could not be restored to {original:02X}");
        }
        Ok(result)
    }

    /// Best-effort write-back after a failed byte test, reconnecting once if needed.
    pub fn try_restore(&mut self, db: u16, offset: u32, original: u8) -> bool {
        let attempt = |link: &mut L| -> Result<bool, ClientError> {
            link.write(db, offset, &[original])?;
            Ok(link.read(ByteSpan::new(db, offset, 1))? == [original])
        };
        match attempt(&mut self.link) {
            Ok(ok) => ok,
            Err(_) => self.link.reconnect().and_then(|_| attempt(&mut self.link)).unwrap_or(false),
        }
    }

    /// Phase 2 over the whole block in ascending order, then phase 3.
    pub fn run(mut self) -> ScanReport {
        let mut bytes = Vec::with_capacity(self.vb.size as usize);
        let mut incomplete = false;
        let mut aborted = Vec::new();
        for offset in 0..self.vb.size {
            if offset > 0 {
                if let Err(e) = self.wait_next_byte() {
                    warn!("link failed between bytes: {e}");
                    incomplete = true;
                    break;
                }
            }
            match self.phase2_scan_byte(offset) {
                Ok(r) => bytes.push(r),
                Err(a) => {
                    warn!("scan aborted at byte {}: {}", a.offset, a.error);
                    incomplete = true;
                    if let (true, Some(orig)) = (a.written, a.original) {
                        if self.try_restore(self.vb.number, a.offset, orig) {
                            info!("byte {} restored after the failure", a.offset);
                        } else {
                            aborted.push(a.offset);
                        }
                    }
                    break;
                }
            }
        }
        phase3_report(&self.config, self.vb, bytes, incomplete, &aborted)
    }
}

/// Phase 3: assembles the report.
pub fn phase3_report(config: &ScanConfig, vb: VbInfo, bytes: Vec<ByteResult>, incomplete: bool, aborted: &[u32]) -> ScanReport {
    let echo = ConfigEcho {
        source: Source::Scanner,
        target: Some(config.target.clone()),
        program: None,
        rack: Some(config.rack),
        slot: Some(config.slot),
        timing: config.timing,
    };
    ScanReport::new(echo, vb.number, vb.size, bytes, incomplete, aborted)
}
