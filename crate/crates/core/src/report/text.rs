use std::fmt::Write;

use super::{ScanReport, Source};
use crate::scanner::BitVerdict;

/// Mark shown in the variable table: `✓` when a single write persists, `(✓)` when it is
/// only visible until the block next runs, blank otherwise.
pub fn variable_mark(v: BitVerdict) -> &'static str {
    match v {
        BitVerdict::VulnerablePersistent => "✓",
        BitVerdict::VulnerableTransient => "(✓)",
        _ => "",
    }
}

fn width(s: &str) -> usize {
    s.chars().count()
}

/// Joins cells with two spaces, padding every column but the last to its widest cell.
fn table(rows: &[Vec<String>]) -> Vec<String> {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| width(s)).max().unwrap_or(0))
        .collect();
    rows.iter()
        .map(|r| {
            let mut line = String::new();
            for (c, cell) in r.iter().enumerate() {
                if c > 0 {
                    line.push_str("  ");
                }
                line.push_str(cell);
                if c + 1 < r.len() {
                    line.extend(std::iter::repeat_n(' ', widths[c] - width(cell)));
                }
            }
            line.trim_end().to_string()
        })
        .collect()
}

pub fn render_text(r: &ScanReport) -> String {
    let mut out = String::new();
    let source = match r.config.source {
        Source::Scanner => "scanner",
        Source::Oracle => "oracle",
    };
    let _ = writeln!(out, "DB{} ({} bytes), {source}, {}", r.vb, r.vb_size, r.config.timing);
    match (&r.config.target, r.config.rack, r.config.slot) {
        (Some(t), Some(rack), Some(slot)) => {
            let _ = writeln!(out, "target {t}, rack {rack}, slot {slot}");
        }
        (Some(t), _, _) => {
            let _ = writeln!(out, "target {t}");
        }
        _ => {}
    }
    if let Some(p) = &r.config.program {
        let _ = writeln!(out, "program {p}");
    }

    if r.incomplete {
        let _ = writeln!(out, "\nWARNING: scan incomplete, {} of {} bytes tested", r.bytes.len(), r.vb_size);
    }
    if !r.unrestored.is_empty() {
        let _ = writeln!(out, "\nWARNING: {} byte(s) may not hold their original value:", r.unrestored.len());
        for off in &r.unrestored {
            match r.bytes.iter().find(|b| b.offset == *off) {
                Some(b) => {
                    let now = b.verify_read.map_or("unknown".to_string(), |v| format!("{v:02X}"));
                    let _ = writeln!(out, "  DB{}.DBB{off}: original {:02X}, now {now}", r.vb, b.original);
                }
                None => {
                    let _ = writeln!(out, "  DB{}.DBB{off}: connection lost before it was written back", r.vb);
                }
            }
        }
    }

    let _ = writeln!(out, "\n{} bytes scanned", r.summary.total_bytes);
    let _ = writeln!(out, "vulnerable bytes (direct read):  {}", r.summary.vulnerable_direct);
    let _ = writeln!(out, "vulnerable bytes (delayed read): {}", r.summary.vulnerable_persistent);

    if !r.bytes.is_empty() {
        let _ = writeln!(out, "\nOffset  Orig  Direct  Delayed  Bits 7..0  Restored");
        let hex = |v: Option<u8>| v.map_or("--".to_string(), |v| format!("{v:02X}"));
        let rows: Vec<Vec<String>> = r
            .bytes
            .iter()
            .map(|b| {
                vec![
                    format!("DBB{}", b.offset),
                    format!("{:02X}", b.original),
                    hex(b.direct_read),
                    hex(b.delayed_read),
                    b.bits.iter().rev().map(|v| v.code()).collect(),
                    if b.restored { "yes" } else { "NO" }.to_string(),
                ]
            })
            .collect();
        for line in table(&rows) {
            let _ = writeln!(out, "{line}");
        }
        let _ = writeln!(out, "bits: P persistent, T transient, . accepted but not retained, x write rejected");
    }

    if let Some(vars) = &r.variables {
        let _ = writeln!(out, "\nVariable  Vuln.  Type  Description");
        let rows: Vec<Vec<String>> = vars
            .iter()
            .map(|v| {
                vec![
                    v.name.clone(),
                    variable_mark(v.verdict).to_string(),
                    v.ty.display_name().to_string(),
                    v.description.clone(),
                ]
            })
            .collect();
        for line in table(&rows) {
            let _ = writeln!(out, "{line}");
        }
    }
    out
}
