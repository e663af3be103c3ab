//! Scan reports: the data model, text and JSON rendering, and comparison.
//!
//! JSON layout (schema 1):
//!
//! ```json
//! {
//!   "schema": 1,
//!   "config": { "source": "scanner", "target": "127.0.0.1:10102", "rack": 0, "slot": 2,
//!               "timing": { "mode": "lockstep", "direct_cycles": 1, "delayed_cycles": 5, "next_byte_cycles": 1 } },
//!   "vb": 100,
//!   "vb_size": 8,
//!   "bytes": [ { "offset": 0, "original": 0, "direct_read": 255, "delayed_read": 255,
//!                "write_accepted": true, "bits": ["VULNERABLE_PERSISTENT", ...],
//!                "verify_read": 0, "restored": true } ],
//!   "summary": { "total_bytes": 8, "vulnerable_direct": 5, "vulnerable_persistent": 5 },
//!   "variables": [ { "name": "CU", "type": "BOOL", "offset": 0, "bit": 0,
//!                    "verdict": "VULNERABLE_PERSISTENT", "description": "Counter input" } ],
//!   "incomplete": false,
//!   "unrestored": []
//! }
//! ```
//!
//! `variables` is present only when a symbol map was supplied. On load the summary, the bit
//! verdicts and the unrestored list are recomputed from the per-byte reads and must agree.

mod diff;
mod text;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::addrmem::{SymbolMap, VarType};
use crate::scanner::{BitVerdict, ByteResult, Timing};

pub use diff::{diff, BitDelta, DiffError, ReportDiff, VariableDelta};
pub use text::{render_text, variable_mark};

pub const SCHEMA_VERSION: u32 = 1;

/// Which procedure produced a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    /// Byte inversion over the network.
    Scanner,
    /// Per-bit flips on in-process copies of the PLC.
    Oracle,
}

/// The settings a report was produced with.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub program: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rack: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slot: Option<u8>,
    pub timing: Timing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub total_bytes: u32,
    /// Bytes with at least one bit inverted on the direct read.
    pub vulnerable_direct: u32,
    /// Bytes with at least one bit still inverted on the delayed read.
    pub vulnerable_persistent: u32,
}

impl Summary {
    pub fn of(bytes: &[ByteResult]) -> Summary {
        Summary {
            total_bytes: bytes.len() as u32,
            vulnerable_direct: bytes.iter().filter(|b| b.is_vulnerable()).count() as u32,
            vulnerable_persistent: bytes.iter().filter(|b| b.is_persistent()).count() as u32,
        }
    }
}

/// Verdict of one declared variable: the most exposed verdict among its bits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableRow {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: VarType,
    pub offset: u32,
    pub bit: Option<u8>,
    pub verdict: BitVerdict,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanReport {
    pub schema: u32,
    pub config: ConfigEcho,
    pub vb: u16,
    pub vb_size: u32,
    pub bytes: Vec<ByteResult>,
    pub summary: Summary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variables: Option<Vec<VariableRow>>,
    pub incomplete: bool,
    /// Offsets whose original value could not be confirmed after the test.
    pub unrestored: Vec<u32>,
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("malformed report: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported report schema {found}, expected {SCHEMA_VERSION}")]
    Schema { found: String },
    #[error("report integrity: {0}")]
    Integrity(String),
}

impl ScanReport {
    /// Builds a report; the summary and unrestored list are derived from `bytes`.
    /// `aborted_unrestored` lists offsets outside `bytes` left in an unknown state.
    pub fn new(
        config: ConfigEcho,
        vb: u16,
        vb_size: u32,
        bytes: Vec<ByteResult>,
        incomplete: bool,
        aborted_unrestored: &[u32],
    ) -> Self {
        let mut unrestored: Vec<u32> = bytes.iter().filter(|b| !b.restored).map(|b| b.offset).collect();
        unrestored.extend_from_slice(aborted_unrestored);
        unrestored.sort_unstable();
        unrestored.dedup();
        ScanReport {
            schema: SCHEMA_VERSION,
            config,
            vb,
            vb_size,
            summary: Summary::of(&bytes),
            bytes,
            variables: None,
            incomplete,
            unrestored,
        }
    }

    /// Adds the per-variable view for the symbols of this report's block.
    pub fn with_symbols(mut self, map: &SymbolMap) -> Self {
        let rows = map
            .for_db(self.vb)
            .filter_map(|s| {
                let verdict = s
                    .bits()
                    .into_iter()
                    .flat_map(|(offset, mask)| {
                        let byte = self.bytes.iter().find(|b| b.offset == offset);
                        (0..8).filter(move |bit| mask & (1 << bit) != 0).filter_map(move |bit| byte.map(|b| b.bits[bit]))
                    })
                    .max()?;
                Some(VariableRow {
                    name: s.name.clone(),
                    ty: s.ty,
                    offset: s.byte_offset,
                    bit: s.bit,
                    verdict,
                    description: s.description.clone(),
                })
            })
            .collect();
        self.variables = Some(rows);
        self
    }

    /// Per-bit verdicts keyed by offset, for comparisons between reports.
    pub fn verdicts(&self) -> Vec<(u32, [BitVerdict; 8])> {
        self.bytes.iter().map(|b| (b.offset, b.bits)).collect()
    }

    pub fn variable(&self, name: &str) -> Option<&VariableRow> {
        self.variables.as_ref()?.iter().find(|v| v.name == name)
    }

    pub fn is_clean(&self) -> bool {
        !self.incomplete && self.unrestored.is_empty()
    }

    /// Checks that everything derived is consistent with the recorded reads.
    pub fn check_integrity(&self) -> Result<(), ReportError> {
        let fail = |m: String| Err(ReportError::Integrity(m));
        let mut prev: Option<u32> = None;
        for b in &self.bytes {
            if b.offset >= self.vb_size {
                return fail(format!("byte {} outside a {}-byte block", b.offset, self.vb_size));
            }
            if prev.is_some_and(|p| p >= b.offset) {
                return fail(format!("byte {} out of order", b.offset));
            }
            prev = Some(b.offset);
            match b.expected_bits() {
                Some(bits) if bits == b.bits => {}
                _ => return fail(format!("bit verdicts of byte {} do not follow from its reads", b.offset)),
            }
            let restored = if b.write_accepted { b.verify_read == Some(b.original) } else { true };
            if restored != b.restored {
                return fail(format!("restored flag of byte {} contradicts its verify read", b.offset));
            }
        }
        if !self.incomplete && self.bytes.len() as u32 != self.vb_size {
            return fail(format!("{} of {} bytes present in a complete report", self.bytes.len(), self.vb_size));
        }
        if Summary::of(&self.bytes) != self.summary {
            return fail("summary counts do not match the per-byte results".into());
        }
        let listed: Vec<u32> = self.bytes.iter().filter(|b| !b.restored).map(|b| b.offset).collect();
        if !listed.iter().all(|o| self.unrestored.contains(o)) {
            return fail("unrestored list misses a byte flagged unrestored".into());
        }
        if !self.incomplete && self.unrestored.len() != listed.len() {
            return fail("unrestored list names bytes that were restored".into());
        }
        Ok(())
    }
}

pub fn render_json(report: &ScanReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

pub fn parse_json(text: &str) -> Result<ScanReport, ReportError> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    match value.get("schema") {
        Some(v) if v.as_u64() == Some(SCHEMA_VERSION as u64) => {}
        Some(v) => return Err(ReportError::Schema { found: v.to_string() }),
        None => return Err(ReportError::Schema { found: "none".into() }),
    }
    let report: ScanReport = serde_json::from_value(value)?;
    report.check_integrity()?;
    Ok(report)
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn echo() -> ConfigEcho {
        ConfigEcho {
            source: Source::Scanner,
            target: Some("127.0.0.1:10102".into()),
            program: None,
            rack: Some(0),
            slot: Some(2),
            timing: Timing::LOCKSTEP_DEFAULT,
        }
    }

    /// A CTU-shaped block: CU/R and CV persistent, PV as given, Q recomputed.
    pub fn ctu_like(pv_vulnerable: bool) -> ScanReport {
        let bytes = (0..8)
            .map(|o| {
                let (direct, delayed) = match o {
                    0 => (0x03, 0x03),
                    2 | 3 if pv_vulnerable => (0xFF, 0xFF),
                    6 | 7 => (0xFF, 0xFF),
                    _ => (0x00, 0x00),
                };
                ByteResult::accepted(o, 0x00, direct, delayed, Some(0x00))
            })
            .collect();
        ScanReport::new(echo(), 100, 8, bytes, false, &[])
    }
}
