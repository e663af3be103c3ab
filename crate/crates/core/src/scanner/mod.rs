//! The block scanner: setup and validation, per-byte inversion with direct and delayed
//! read-back, restoration, and reporting. Also the in-process oracle, the pointer probe and
//! the scripted attack demonstrations.

mod attack;
mod config;
mod link;
mod oracle;
mod probe;
mod session;
mod verdict;

pub use attack::{attack_demo, AttackLayout, Scenario, Transcript};
pub use config::{ConfigError, ScanConfig, Timing, MIN_NEXT_BYTE_MS};
pub use link::{Link, NetLink};
pub use oracle::oracle_scan;
pub use probe::{pointer_probe, pointer_slot, PointerProbe, Redirect};
pub use session::{phase1_setup, phase3_report, probe_size, scan, ByteAbort, ScanError, Session};
pub use verdict::{classify, classify_byte, BitVerdict, ByteResult};
