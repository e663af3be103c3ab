use std::fmt;

use thiserror::Error;

use super::{ScanReport, Summary};
use crate::scanner::BitVerdict;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("reports cover different shapes: DB{a_vb} of {a_size} bytes vs DB{b_vb} of {b_size} bytes")]
pub struct DiffError {
    pub a_vb: u16,
    pub a_size: u32,
    pub b_vb: u16,
    pub b_size: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BitDelta {
    pub offset: u32,
    pub bit: u8,
    pub before: BitVerdict,
    pub after: BitVerdict,
}

impl BitDelta {
    /// The bit became less exposed.
    pub fn is_demotion(&self) -> bool {
        self.after < self.before
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariableDelta {
    pub name: String,
    pub before: BitVerdict,
    pub after: BitVerdict,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportDiff {
    pub before: Summary,
    pub after: Summary,
    pub bits: Vec<BitDelta>,
    pub variables: Vec<VariableDelta>,
}

impl ReportDiff {
    pub fn is_empty(&self) -> bool {
        self.before == self.after && self.bits.is_empty() && self.variables.is_empty()
    }

    /// Offsets with at least one changed bit.
    pub fn changed_offsets(&self) -> Vec<u32> {
        let mut v: Vec<u32> = self.bits.iter().map(|d| d.offset).collect();
        v.dedup();
        v
    }
}

/// Compares two reports of the same block size, byte by byte and bit by bit.
/// Bytes tested in only one report are skipped.
pub fn diff(a: &ScanReport, b: &ScanReport) -> Result<ReportDiff, DiffError> {
    if a.vb_size != b.vb_size {
        return Err(DiffError { a_vb: a.vb, a_size: a.vb_size, b_vb: b.vb, b_size: b.vb_size });
    }
    let mut bits = Vec::new();
    for x in &a.bytes {
        let Some(y) = b.bytes.iter().find(|y| y.offset == x.offset) else { continue };
        for bit in 0..8 {
            if x.bits[bit] != y.bits[bit] {
                bits.push(BitDelta { offset: x.offset, bit: bit as u8, before: x.bits[bit], after: y.bits[bit] });
            }
        }
    }
    let mut variables = Vec::new();
    if let (Some(va), Some(vb)) = (&a.variables, &b.variables) {
        for x in va {
            if let Some(y) = vb.iter().find(|y| y.name == x.name && y.offset == x.offset) {
                if x.verdict != y.verdict {
                    variables.push(VariableDelta { name: x.name.clone(), before: x.verdict, after: y.verdict });
                }
            }
        }
    }
    Ok(ReportDiff { before: a.summary, after: b.summary, bits, variables })
}

impl fmt::Display for ReportDiff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let row = |f: &mut fmt::Formatter<'_>, name: &str, a: u32, b: u32| {
            writeln!(f, "{name:<26}{a:>6}{b:>6}{:>+7}", b as i64 - a as i64)
        };
        writeln!(f, "{:<26}{:>6}{:>6}{:>7}", "", "a", "b", "delta")?;
        row(f, "bytes", self.before.total_bytes, self.after.total_bytes)?;
        row(f, "vulnerable (direct read)", self.before.vulnerable_direct, self.after.vulnerable_direct)?;
        row(f, "vulnerable (delayed read)", self.before.vulnerable_persistent, self.after.vulnerable_persistent)?;
        if self.bits.is_empty() {
            return writeln!(f, "\nno per-bit differences");
        }
        writeln!(f, "\nOffset  Bit  a -> b")?;
        for d in &self.bits {
            let tag = if d.is_demotion() { "  (demoted)" } else { "" };
            writeln!(f, "DBB{:<4} {:>3}  {} -> {}{tag}", d.offset, d.bit, d.before, d.after)?;
        }
        if !self.variables.is_empty() {
            writeln!(f, "\nVariable  a -> b")?;
            for v in &self.variables {
                writeln!(f, "{:<8}  {} -> {}", v.name, v.before, v.after)?;
            }
        }
        Ok(())
    }
}
