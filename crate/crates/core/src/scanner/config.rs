use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::wire::DEFAULT_TIMEOUT;

/// Smallest wallclock gap between bytes accepted without an explicit override.
pub const MIN_NEXT_BYTE_MS: u64 = 1000;

/// When the reads of a byte test happen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Timing {
    /// The scanner steps the PLC itself.
    Lockstep {
        /// Cycles between the inversion write and the direct read.
        direct_cycles: u32,
        /// Cycles between the direct read and the delayed read.
        delayed_cycles: u32,
        /// Cycles between one byte's restoration and the next byte.
        next_byte_cycles: u32,
    },
    /// The PLC runs freely; the scanner waits.
    Wallclock { read2_ms: u64, next_byte_ms: u64 },
}

impl Timing {
    pub const LOCKSTEP_DEFAULT: Timing = Timing::Lockstep { direct_cycles: 1, delayed_cycles: 5, next_byte_cycles: 1 };
    pub const WALLCLOCK_DEFAULT: Timing = Timing::Wallclock { read2_ms: 5000, next_byte_ms: 1000 };

    /// Parses `d,k` or `d,k,n` cycle counts.
    pub fn parse_lockstep(text: &str) -> Result<Timing, String> {
        let parts: Vec<u32> = text
            .split(',')
            .map(|p| p.trim().parse::<u32>().map_err(|e| format!("'{p}': {e}")))
            .collect::<Result<_, _>>()?;
        match parts[..] {
            [d, k] => Ok(Timing::Lockstep { direct_cycles: d, delayed_cycles: k, next_byte_cycles: 1 }),
            [d, k, n] => Ok(Timing::Lockstep { direct_cycles: d, delayed_cycles: k, next_byte_cycles: n }),
            _ => Err(format!("expected d,k or d,k,n cycle counts, got '{text}'")),
        }
    }
}

impl fmt::Display for Timing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Timing::Lockstep { direct_cycles, delayed_cycles, next_byte_cycles } => write!(
                f,
                "lockstep: direct read after {direct_cycles} cycle(s), delayed read {delayed_cycles} cycle(s) later, \
                 {next_byte_cycles} cycle(s) between bytes"
            ),
            Timing::Wallclock { read2_ms, next_byte_ms } => {
                write!(f, "wallclock: delayed read after {read2_ms} ms, {next_byte_ms} ms between bytes")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error(
        "next-byte time of {0} ms is below {MIN_NEXT_BYTE_MS} ms; back-to-back writes add load to the PLC \
         and can skew results (override with --allow-fast)"
    )]
    NextByteTooShort(u64),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScanConfig {
    /// `host:port` of the PLC.
    pub target: String,
    pub rack: u8,
    pub slot: u8,
    /// Block to scan.
    pub db: u16,
    pub timing: Timing,
    /// Accept a wallclock next-byte time under [`MIN_NEXT_BYTE_MS`].
    pub allow_fast: bool,
    /// The operator confirmed the process is in a safe state.
    pub safe_state_confirmed: bool,
    pub timeout: Duration,
}

impl ScanConfig {
    pub fn new(target: impl Into<String>, db: u16) -> Self {
        ScanConfig {
            target: target.into(),
            rack: 0,
            slot: 2,
            db,
            timing: Timing::WALLCLOCK_DEFAULT,
            allow_fast: false,
            safe_state_confirmed: false,
            timeout: DEFAULT_TIMEOUT,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        match self.timing {
            Timing::Wallclock { next_byte_ms, .. } if next_byte_ms < MIN_NEXT_BYTE_MS && !self.allow_fast => {
                Err(ConfigError::NextByteTooShort(next_byte_ms))
            }
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_wallclock_needs_override() {
        let mut c = ScanConfig::new("127.0.0.1:1", 1);
        c.timing = Timing::Wallclock { read2_ms: 5000, next_byte_ms: 0 };
        assert_eq!(c.validate(), Err(ConfigError::NextByteTooShort(0)));
        c.allow_fast = true;
        assert_eq!(c.validate(), Ok(()));
        c.allow_fast = false;
        c.timing = Timing::Lockstep { direct_cycles: 0, delayed_cycles: 0, next_byte_cycles: 0 };
        assert_eq!(c.validate(), Ok(()));
    }

    #[test]
    fn lockstep_cycles_syntax() {
        assert_eq!(Timing::parse_lockstep("1,5"), Ok(Timing::LOCKSTEP_DEFAULT));
        assert_eq!(
            Timing::parse_lockstep("0,2,3"),
            Ok(Timing::Lockstep { direct_cycles: 0, delayed_cycles: 2, next_byte_cycles: 3 })
        );
        assert!(Timing::parse_lockstep("1").is_err());
        assert!(Timing::parse_lockstep("1,x").is_err());
    }

    #[test]
    fn timing_json_tagged() {
        let s = serde_json::to_string(&Timing::LOCKSTEP_DEFAULT).unwrap();
        assert_eq!(s, r#"{"mode":"lockstep","direct_cycles":1,"delayed_cycles":5,"next_byte_cycles":1}"#);
    }
}
