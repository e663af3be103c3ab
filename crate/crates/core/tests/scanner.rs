mod common;

use std::time::{Duration, Instant};

use common::{bundled_names, lockstep_config, scan_bundled, Bench};
use vbscan_core::addrmem::{ByteSpan, PointerValue, VbInfo};
use vbscan_core::report::render_text;
use vbscan_core::scanner::{
    attack_demo, phase1_setup, pointer_probe, pointer_slot, probe_size, AttackLayout, BitVerdict, Link, NetLink, ScanError,
    Scenario, Timing,
};
use vbscan_core::softplc::{ClockMode, Program};
use vbscan_core::wire::{ClientError, Status};

const T: Duration = Duration::from_secs(5);

fn net(addr: &str) -> NetLink {
    NetLink::connect(addr, 0, 2, T).unwrap()
}

#[test]
fn scanner_matches_oracle_and_restores_every_bundled_program() {
    for name in bundled_names() {
        let run = scan_bundled(name);
        assert!(!run.scan.incomplete, "{name}: incomplete");
        assert!(run.scan.unrestored.is_empty(), "{name}: unrestored {:?}", run.scan.unrestored);
        assert!(run.scan.bytes.iter().all(|b| b.restored), "{name}");
        assert_eq!(run.scan.verdicts(), run.oracle.verdicts(), "{name}: scanner and oracle disagree");
        assert!(run.block_restored(), "{name}: scanned block changed");
        if name != "attack_scenario" {
            assert_eq!(run.before, run.after, "{name}: memory changed");
        }
        run.scan.check_integrity().unwrap();
    }
}

#[test]
fn ctu_defaults_pinned_counts() {
    let run = scan_bundled("ctu_defaults");
    let persistent: Vec<u32> = run.scan.bytes.iter().filter(|b| b.is_persistent()).map(|b| b.offset).collect();
    assert_eq!(persistent, vec![0, 2, 3, 6, 7]);
    let map = run.program.symbol_map();
    let text = render_text(&run.scan.clone().with_symbols(&map));
    assert!(text.lines().any(|l| l == "CU  ✓  Bool  Counter input"), "{text}");
}

#[test]
fn scanning_is_deterministic() {
    let a = scan_bundled("tp_defaults");
    let b = scan_bundled("tp_defaults");
    assert_eq!(a.scan.bytes, b.scan.bytes);
}

#[test]
fn size_probe_finds_nine_bytes() {
    let program = Program::from_toml("name = \"nine\"\ndescription = \"\"\n[[vb]]\nnumber = 3\nsize = 9\n").unwrap();
    let bench = Bench::start(program, ClockMode::Lockstep);
    let mut link = net(&bench.addr);
    assert_eq!(probe_size(&mut link, 3).unwrap(), Some(9));
    assert_eq!(probe_size(&mut link, 4).unwrap(), None);
    bench.stop();
}

/// Hides LISTVB so setup has to probe for the size.
struct NoList(NetLink);

impl Link for NoList {
    fn read(&mut self, span: ByteSpan) -> Result<Vec<u8>, ClientError> {
        self.0.read(span)
    }
    fn write(&mut self, db: u16, start: u32, data: &[u8]) -> Result<(), ClientError> {
        self.0.write(db, start, data)
    }
    fn step(&mut self, cycles: u32) -> Result<u64, ClientError> {
        self.0.step(cycles)
    }
    fn list_vbs(&mut self) -> Result<Vec<VbInfo>, ClientError> {
        Err(ClientError::Status(Status::BadRequest))
    }
}

#[test]
fn setup_falls_back_to_size_probe() {
    let program = Program::from_toml("name = \"nine\"\ndescription = \"\"\n[[vb]]\nnumber = 3\nsize = 9\n").unwrap();
    let bench = Bench::start(program, ClockMode::Lockstep);
    let session = phase1_setup(&lockstep_config(&bench.addr, 3), |c| Ok(NoList(net(&c.target)))).unwrap();
    assert_eq!(session.vb().size, 9);
    let report = session.run();
    assert_eq!(report.summary.total_bytes, 9);
    assert_eq!(report.summary.vulnerable_persistent, 9);
    bench.stop();
}

#[test]
fn write_protected_block_is_not_writable() {
    let program =
        Program::from_toml("name = \"wp\"\ndescription = \"\"\n[[vb]]\nnumber = 2\nsize = 4\nwrite_protected = true\n").unwrap();
    let bench = Bench::start(program, ClockMode::Lockstep);
    let session = phase1_setup(&lockstep_config(&bench.addr, 2), |c| Ok(net(&c.target))).unwrap();
    let report = session.run();
    assert!(report.bytes.iter().all(|b| b.bits == [BitVerdict::NotWritable; 8]));
    assert!(report.is_clean());
    bench.stop();
}

#[test]
fn missing_block_is_reported() {
    let bench = Bench::lockstep("ctu_defaults");
    let err = phase1_setup(&lockstep_config(&bench.addr, 7), |c| Ok(net(&c.target))).unwrap_err();
    assert!(matches!(err, ScanError::NoSuchVb(7)), "{err:?}");
    bench.stop();
}

#[test]
fn safe_state_refusal_sends_nothing() {
    let mut config = lockstep_config("127.0.0.1:1", 100);
    config.safe_state_confirmed = false;
    let mut called = false;
    let err = phase1_setup(&config, |c| {
        called = true;
        Ok(net(&c.target))
    })
    .unwrap_err();
    assert!(matches!(err, ScanError::SafeStateNotConfirmed));
    assert!(!called);
}

#[test]
fn fast_wallclock_is_refused_before_connecting() {
    let mut config = lockstep_config("127.0.0.1:1", 100);
    config.timing = Timing::Wallclock { read2_ms: 10, next_byte_ms: 10 };
    let err = phase1_setup(&config, |c| Ok(net(&c.target))).unwrap_err();
    assert!(matches!(err, ScanError::Config(_)), "{err:?}");
}

#[test]
fn lockstep_timing_against_free_running_plc_fails_setup() {
    let bench = Bench::start(Program::bundled("ctu_defaults").unwrap(), ClockMode::Wallclock(Duration::from_millis(10)));
    let err = phase1_setup(&lockstep_config(&bench.addr, 100), |c| Ok(net(&c.target))).unwrap_err();
    assert!(matches!(err, ScanError::NotLockstep(_)), "{err:?}");
    bench.stop();
}

#[test]
fn wallclock_scan_against_free_running_plc() {
    let bench = Bench::start(Program::bundled("ctu_direct").unwrap(), ClockMode::Wallclock(Duration::from_millis(2)));
    let _clock = bench.plc.start_clock();
    let mut config = lockstep_config(&bench.addr, 100);
    config.timing = Timing::Wallclock { read2_ms: 60, next_byte_ms: 20 };
    config.allow_fast = true;
    let session = phase1_setup(&config, |c| Ok(net(&c.target))).unwrap();
    let report = session.run();
    assert!(!report.incomplete);
    let persistent: Vec<u32> = report.bytes.iter().filter(|b| b.is_persistent()).map(|b| b.offset).collect();
    assert_eq!(persistent, vec![0, 6, 7]);
    bench.stop();
}

/// Passes requests through until `budget` runs out, then fails like a dropped connection.
struct Flaky {
    inner: NetLink,
    budget: usize,
    can_reconnect: bool,
}

impl Flaky {
    fn spend(&mut self) -> Result<(), ClientError> {
        if self.budget == 0 {
            return Err(ClientError::Io(std::io::Error::new(std::io::ErrorKind::ConnectionReset, "injected")));
        }
        self.budget -= 1;
        Ok(())
    }
}

impl Link for Flaky {
    fn read(&mut self, span: ByteSpan) -> Result<Vec<u8>, ClientError> {
        self.spend()?;
        self.inner.read(span)
    }
    fn write(&mut self, db: u16, start: u32, data: &[u8]) -> Result<(), ClientError> {
        self.spend()?;
        self.inner.write(db, start, data)
    }
    fn step(&mut self, cycles: u32) -> Result<u64, ClientError> {
        self.spend()?;
        self.inner.step(cycles)
    }
    fn list_vbs(&mut self) -> Result<Vec<VbInfo>, ClientError> {
        self.spend()?;
        self.inner.list_vbs()
    }
    fn reconnect(&mut self) -> Result<(), ClientError> {
        if !self.can_reconnect {
            return Err(ClientError::Request("no route".into()));
        }
        self.budget = usize::MAX;
        Ok(())
    }
}

#[test]
fn lost_link_mid_byte_yields_incomplete_report_and_restores() {
    let bench = Bench::lockstep("ctu_defaults");
    bench.plc.run_cycles(1);
    let before = bench.plc.store().snapshot();
    // setup uses 2 requests; each byte uses read, write, step, read, step, read, write, read plus a step
    let budget = 2 + 9 * 2 + 3;
    let session = phase1_setup(&lockstep_config(&bench.addr, 100), |c| {
        Ok(Flaky { inner: net(&c.target), budget, can_reconnect: true })
    })
    .unwrap();
    let report = session.run();
    assert!(report.incomplete);
    assert_eq!(report.bytes.len(), 2);
    assert!(report.unrestored.is_empty(), "{:?}", report.unrestored);
    assert!(render_text(&report).contains("WARNING"));
    bench.plc.step(1).unwrap();
    assert_eq!(bench.plc.store().snapshot(), before);
    bench.stop();
}

#[test]
fn lost_link_without_reconnect_lists_unrestored_byte() {
    let bench = Bench::lockstep("ctu_defaults");
    let session = phase1_setup(&lockstep_config(&bench.addr, 100), |c| {
        Ok(Flaky { inner: net(&c.target), budget: 2 + 3, can_reconnect: false })
    })
    .unwrap();
    let report = session.run();
    assert!(report.incomplete);
    assert!(report.bytes.is_empty());
    assert_eq!(report.unrestored, vec![0]);
    let text = render_text(&report);
    assert!(text.contains("DB100.DBB0: connection lost before it was written back"), "{text}");
    bench.stop();
}

#[test]
fn server_shutdown_mid_scan_marks_incomplete() {
    let bench = Bench::lockstep("ctu_defaults");
    let mut session = phase1_setup(&lockstep_config(&bench.addr, 100), |c| Ok(net(&c.target))).unwrap();
    assert!(session.phase2_scan_byte(0).is_ok());
    bench.stop();
    let report = session.run();
    assert!(report.incomplete);
}

#[test]
fn pointer_probe_shows_vulnerable_by_proxy() {
    let bench = Bench::lockstep("pointer_demo");
    bench.plc.run_cycles(1);
    let before = bench.plc.store().snapshot();
    let mut session = phase1_setup(&lockstep_config(&bench.addr, 100), |c| Ok(net(&c.target))).unwrap();
    let redirect: PointerValue = "P#DB11.DBX0.0".parse().unwrap();
    let probe = pointer_probe(&mut session, pointer_slot(100, 4), 8, Some(redirect)).unwrap();
    assert_eq!(probe.pointer, Some("P#DB1.DBX38.0".parse().unwrap()));
    assert!(probe.slot_writable());
    assert!(!probe.slot_retained());
    assert!(probe.vulnerable_by_proxy());
    assert_eq!(probe.target_bytes.iter().filter(|b| b.is_persistent()).count(), 8);
    let r = probe.redirect.as_ref().unwrap();
    assert!(r.accepted && r.restored);
    assert!(probe.all_restored());
    let reads = &bench.plc.status().instances[0].pointer_reads;
    assert_eq!(reads["USERNAME"].data, b"mallory\0");
    bench.plc.step(1).unwrap();
    assert_eq!(bench.plc.store().snapshot(), before);
    bench.stop();
}

#[test]
fn pointer_probe_on_opaque_slot_is_skipped() {
    let bench = Bench::lockstep("ctu_defaults");
    let mut session = phase1_setup(&lockstep_config(&bench.addr, 100), |c| Ok(net(&c.target))).unwrap();
    let probe = pointer_probe(&mut session, pointer_slot(100, 0), 8, None).unwrap();
    assert!(probe.is_opaque());
    assert!(probe.slot_bytes.is_empty());
    bench.stop();
}

#[test]
fn pointer_to_missing_block_skips_target() {
    let program = Program::from_toml(
        "name = \"dangling\"\ndescription = \"\"\n[[vb]]\nnumber = 2\nsize = 6\ninit = [{ offset = 0, hex = \"840063000000\" }]\n",
    )
    .unwrap();
    let bench = Bench::start(program, ClockMode::Lockstep);
    let mut session = phase1_setup(&lockstep_config(&bench.addr, 2), |c| Ok(net(&c.target))).unwrap();
    let probe = pointer_probe(&mut session, pointer_slot(2, 0), 4, None).unwrap();
    assert_eq!(probe.pointer.map(|p| p.db), Some(99));
    assert!(probe.target.is_none());
    assert!(probe.skipped.as_deref().unwrap().contains("not readable"));
    assert!(probe.all_restored());
    bench.stop();
}

#[test]
fn attack_demos_suppress_the_alert() {
    let bench = Bench::lockstep("attack_scenario");
    bench.plc.run_cycles(1);
    let mut link = net(&bench.addr);
    let layout = AttackLayout::default();
    let base = attack_demo(&mut link, Scenario::Baseline, &layout, 10).unwrap();
    assert!(base.sent_delta() >= 1, "{base}");
    for s in Scenario::ATTACKS {
        let t = attack_demo(&mut link, s, &layout, 10).unwrap();
        assert_eq!(t.sent_delta(), 0, "{t}");
    }
    let again = attack_demo(&mut link, Scenario::Baseline, &layout, 10).unwrap();
    assert_eq!(again.sent_delta(), base.sent_delta());
    bench.stop();
}

#[test]
fn lockstep_scans_are_fast() {
    let start = Instant::now();
    for name in ["ctu_defaults", "ctu_direct", "ctu_gvb", "tp_defaults", "tp_direct"] {
        scan_bundled(name);
    }
    assert!(start.elapsed() < Duration::from_secs(5));
}
