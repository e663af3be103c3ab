#![allow(dead_code)]

use std::time::Duration;

use vbscan_core::addrmem::Snapshot;
use vbscan_core::report::ScanReport;
use vbscan_core::scanner::{oracle_scan, scan, ScanConfig, Timing};
use vbscan_core::softplc::{ClockMode, Plc, Program, Runtime, BUNDLED};
use vbscan_core::wire::{serve, ServerConfig, ServerHandle};

/// Lockstep cycle counts used by every harness scan.
pub const DIRECT: u32 = 1;
pub const DELAYED: u32 = 5;

/// A soft-PLC served on an ephemeral local port.
pub struct Bench {
    pub plc: Plc,
    pub server: ServerHandle,
    pub addr: String,
}

impl Bench {
    pub fn start(program: Program, clock: ClockMode) -> Bench {
        let plc = Plc::new(program, clock);
        let server = serve("127.0.0.1:0", plc.clone(), ServerConfig::default()).expect("bind");
        let addr = server.local_addr().to_string();
        Bench { plc, server, addr }
    }

    pub fn lockstep(name: &str) -> Bench {
        Bench::start(Program::bundled(name).expect("bundled"), ClockMode::Lockstep)
    }

    pub fn stop(self) {
        self.plc.stop();
        self.server.shutdown();
    }
}

pub fn lockstep_config(addr: &str, db: u16) -> ScanConfig {
    let mut c = ScanConfig::new(addr, db);
    c.timing = Timing::Lockstep { direct_cycles: DIRECT, delayed_cycles: DELAYED, next_byte_cycles: 1 };
    c.safe_state_confirmed = true;
    c.timeout = Duration::from_secs(5);
    c
}

/// Network scan and oracle of one program's target block, plus memory before and after.
pub struct ScanRun {
    pub program: Program,
    pub db: u16,
    pub scan: ScanReport,
    pub oracle: ScanReport,
    pub before: Snapshot,
    pub after: Snapshot,
}

impl ScanRun {
    pub fn block_restored(&self) -> bool {
        self.before.0.get(&self.db) == self.after.0.get(&self.db)
    }
}

/// Warms the PLC up one cycle, scans the target block in lockstep, lets one cycle settle
/// and snapshots again. The oracle runs on an identical copy.
pub fn scan_program(program: Program) -> ScanRun {
    let db = program.default_target().expect("program has a target");
    let (mut rt, mut store) = Runtime::load(program.clone(), ClockMode::Lockstep);
    rt.run_cycle(&mut store);
    let oracle = oracle_scan(&rt, &store, db, DIRECT, DELAYED).expect("target exists");

    let bench = Bench::start(program.clone(), ClockMode::Lockstep);
    bench.plc.run_cycles(1);
    let before = bench.plc.store().snapshot();
    let report = scan(&lockstep_config(&bench.addr, db)).expect("scan runs");
    bench.plc.step(1).expect("lockstep");
    let after = bench.plc.store().snapshot();
    bench.stop();
    ScanRun { program, db, scan: report, oracle, before, after }
}

pub fn scan_bundled(name: &str) -> ScanRun {
    scan_program(Program::bundled(name).expect("bundled"))
}

pub fn bundled_names() -> Vec<&'static str> {
    BUNDLED.iter().map(|(n, _)| *n).collect()
}
