//! The `vbscan` command line.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | other failure (missing block, I/O) |
//! | 2 | bad program file or usage |
//! | 3 | scan incomplete |
//! | 4 | a byte could not be restored |
//! | 5 | safe state not confirmed |
//! | 6 | configuration rejected |
//! | 7 | connection failure |
//! | 8 | unreadable report or incompatible reports |

use std::ffi::OsString;
use std::io::{self, BufRead, Write};
use std::path::PathBuf;
use std::thread;
use std::time::Duration;

use clap::{ArgGroup, Args, Parser, Subcommand};
use log::{error, info, warn};

use crate::addrmem::{parse_address, Address, PointerValue, SymbolMap};
use crate::report::{self, parse_json, render_json, render_text, ScanReport};
use crate::scanner::{
    attack_demo, oracle_scan, phase1_setup, pointer_probe, pointer_slot, AttackLayout, NetLink, ScanConfig, ScanError,
    Scenario, Session, Timing,
};
use crate::softplc::{ClockMode, Plc, Program, Runtime};
use crate::wire::{self, ServerConfig, DEFAULT_PORT};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INCOMPLETE: i32 = 3;
pub const EXIT_UNRESTORED: i32 = 4;
pub const EXIT_UNSAFE: i32 = 5;
pub const EXIT_CONFIG: i32 = 6;
pub const EXIT_CONNECT: i32 = 7;
pub const EXIT_REPORT: i32 = 8;

#[derive(Debug, Parser)]
#[command(name = "vbscan", version, about = "Find attacker-writable bits in PLC variable blocks")]
pub struct Cli {
    /// More log output (-v info, -vv debug, -vvv trace)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the soft-PLC behind an SVBP server
    Serve(ServeArgs),
    /// Scan one variable block of a running PLC
    Scan(ScanArgs),
    /// Classify every bit of a program's block in-process, without a network
    Oracle(OracleArgs),
    /// Inspect a stored pointer and test the memory it points to
    PointerProbe(ProbeArgs),
    /// Replay the valve-counter alarm suppression attacks
    AttackDemo(AttackArgs),
    /// Compare two JSON scan reports
    Diff(DiffArgs),
    /// Print a program's variable layout as a symbol map
    Symbols(SymbolsArgs),
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("clock").required(true).args(["lockstep", "cycle_ms"])))]
struct ServeArgs {
    /// Bundled program name or path to a program file
    #[arg(long)]
    program: String,
    /// Listen address; the port defaults to VBSCAN_PORT or 10102
    #[arg(long)]
    listen: Option<String>,
    /// Run cycles only on STEP requests
    #[arg(long)]
    lockstep: bool,
    /// Run a cycle every N milliseconds
    #[arg(long, value_name = "N", value_parser = clap::value_parser!(u64).range(1..))]
    cycle_ms: Option<u64>,
    /// Cycles to run before accepting connections
    #[arg(long, default_value_t = 0)]
    warmup: u64,
    #[arg(long, default_value_t = 0)]
    rack: u8,
    #[arg(long, default_value_t = 2)]
    slot: u8,
}

#[derive(Debug, Args)]
struct ConnArgs {
    /// PLC address
    #[arg(long, default_value = "127.0.0.1")]
    ip: String,
    /// PLC port
    #[arg(long, env = "VBSCAN_PORT", default_value_t = DEFAULT_PORT)]
    port: u16,
    /// CPU rack number
    #[arg(long, default_value_t = 0)]
    rack: u8,
    /// CPU slot number
    #[arg(long, default_value_t = 2)]
    slot: u8,
    /// Per-request timeout
    #[arg(long, default_value_t = 5000)]
    timeout_ms: u64,
    /// Ask for corrected connection details when the connection fails
    #[arg(long)]
    interactive: bool,
}

#[derive(Debug, Args)]
struct TimingArgs {
    /// Wait between the inversion write and the delayed read
    #[arg(long, default_value_t = 5000)]
    read2_ms: u64,
    /// Wait between bytes
    #[arg(long, default_value_t = 1000)]
    next_byte_ms: u64,
    /// Accept a next-byte wait under 1000 ms
    #[arg(long)]
    allow_fast: bool,
    /// Step a lockstep PLC instead of waiting: cycles before the direct read, before the
    /// delayed read and, optionally, between bytes
    #[arg(long, value_name = "d,k[,n]", value_parser = Timing::parse_lockstep)]
    lockstep_cycles: Option<Timing>,
}

impl TimingArgs {
    fn timing(&self) -> Timing {
        self.lockstep_cycles
            .unwrap_or(Timing::Wallclock { read2_ms: self.read2_ms, next_byte_ms: self.next_byte_ms })
    }
}

#[derive(Debug, Args)]
struct ScanArgs {
    #[command(flatten)]
    conn: ConnArgs,
    /// Variable block to scan
    #[arg(long)]
    db: u16,
    #[command(flatten)]
    timing: TimingArgs,
    /// Confirm the controlled process is in a safe state
    #[arg(long)]
    i_confirm_safe_state: bool,
    /// Symbol map CSV for the per-variable table
    #[arg(long, conflicts_with = "program")]
    symbols: Option<PathBuf>,
    /// Take the per-variable table from a program's layout
    #[arg(long)]
    program: Option<String>,
    /// Also write the report as JSON
    #[arg(long, value_name = "PATH")]
    json: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct OracleArgs {
    /// Bundled program name or path to a program file
    #[arg(long)]
    program: String,
    /// Block to classify; defaults to the program's target
    #[arg(long)]
    db: Option<u16>,
    /// Cycles before the direct and the delayed read
    #[arg(long, value_name = "d,k", value_parser = Timing::parse_lockstep, default_value = "1,5")]
    lockstep_cycles: Timing,
    /// Cycles to run before classifying
    #[arg(long, default_value_t = 1)]
    warmup: u64,
    /// Symbol map CSV; defaults to the program's own layout
    #[arg(long)]
    symbols: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    json: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ProbeArgs {
    #[command(flatten)]
    conn: ConnArgs,
    /// Start of the 6-byte pointer slot, e.g. DB100.DBX4.0
    #[arg(long, value_name = "ADDR")]
    pointer_at: String,
    /// Bytes to test at the pointer target
    #[arg(long, default_value_t = 8)]
    target_len: u32,
    /// Also try writing this pointer into the slot, e.g. P#DB11.DBX0.0
    #[arg(long, value_name = "P#...")]
    redirect: Option<String>,
    #[command(flatten)]
    timing: TimingArgs,
    #[arg(long)]
    i_confirm_safe_state: bool,
}

#[derive(Debug, Args)]
struct AttackArgs {
    /// baseline, cu-false, zero-cv, reset-true, busy-lock or all
    #[arg(long, default_value = "all")]
    scenario: String,
    /// Valve-open events to drive
    #[arg(long, default_value_t = 10)]
    pulses: u32,
    /// Attack a running lockstep server instead of an in-process one
    #[arg(long)]
    remote: bool,
    #[command(flatten)]
    conn: ConnArgs,
    /// Required with --remote
    #[arg(long)]
    i_confirm_safe_state: bool,
}

#[derive(Debug, Args)]
struct DiffArgs {
    a: PathBuf,
    b: PathBuf,
}

#[derive(Debug, Args)]
struct SymbolsArgs {
    #[arg(long)]
    program: String,
}

/// Parses arguments, runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match cli.command {
        Command::Serve(a) => serve(a),
        Command::Scan(a) => scan(a),
        Command::Oracle(a) => oracle(a),
        Command::PointerProbe(a) => probe(a),
        Command::AttackDemo(a) => attack(a),
        Command::Diff(a) => diff(a),
        Command::Symbols(a) => symbols(a),
    }
}

fn load_program(name: &str) -> Result<Program, i32> {
    Program::resolve(name).map_err(|e| {
        error!("{name}: {e}");
        eprintln!("error: {name}: {e}");
        EXIT_USAGE
    })
}

fn fail(code: i32, msg: impl std::fmt::Display) -> i32 {
    eprintln!("error: {msg}");
    code
}

fn serve(a: ServeArgs) -> i32 {
    let program = match load_program(&a.program) {
        Ok(p) => p,
        Err(code) => return code,
    };
    let clock = match a.cycle_ms {
        Some(ms) => ClockMode::Wallclock(Duration::from_millis(ms)),
        None => ClockMode::Lockstep,
    };
    let listen = a.listen.unwrap_or_else(|| {
        let port = std::env::var("VBSCAN_PORT").ok().and_then(|p| p.parse().ok()).unwrap_or(DEFAULT_PORT);
        format!("127.0.0.1:{port}")
    });
    let plc = Plc::new(program, clock);
    plc.run_cycles(a.warmup);
    let handle = match wire::serve(listen.as_str(), plc.clone(), ServerConfig { rack: a.rack, slot: a.slot }) {
        Ok(h) => h,
        Err(e) => return fail(EXIT_FAILURE, format!("cannot listen on {listen}: {e}")),
    };
    println!("listening on {}", handle.local_addr());
    match clock {
        ClockMode::Lockstep => println!("lockstep: {} cycles run, waiting for STEP", plc.cycles()),
        ClockMode::Wallclock(p) => println!("free-running, {} ms per cycle", p.as_millis()),
    }
    let _ = io::stdout().flush();
    let _clock = plc.start_clock();
    let mut last = plc.cycles();
    loop {
        thread::sleep(Duration::from_secs(5));
        let now = plc.cycles();
        if now != last {
            info!("{now} cycles");
            last = now;
        }
    }
}

/// Reads a replacement value from stdin, keeping `current` on an empty line.
fn prompt<T: std::str::FromStr + std::fmt::Display>(label: &str, current: T) -> Option<T> {
    let stdin = io::stdin();
    loop {
        eprint!("{label} [{current}]: ");
        let _ = io::stderr().flush();
        let mut line = String::new();
        if stdin.lock().read_line(&mut line).ok()? == 0 {
            return None;
        }
        let line = line.trim();
        if line.is_empty() {
            return Some(current);
        }
        match line.parse() {
            Ok(v) => return Some(v),
            Err(_) => eprintln!("not a valid {label}"),
        }
    }
}

/// Phase 1 with the connection re-prompt loop in interactive mode.
fn setup(conn: &ConnArgs, mut config: ScanConfig) -> Result<Session<NetLink>, i32> {
    let connect = |c: &ScanConfig| NetLink::connect(&c.target, c.rack, c.slot, c.timeout);
    let (mut ip, mut port) = (conn.ip.clone(), conn.port);
    loop {
        config.target = format!("{ip}:{port}");
        match phase1_setup(&config, connect) {
            Ok(s) => return Ok(s),
            Err(ScanError::SafeStateNotConfirmed) => {
                return Err(fail(EXIT_UNSAFE, "confirm the process is in a safe state with --i-confirm-safe-state"));
            }
            Err(e @ ScanError::Config(_)) => return Err(fail(EXIT_CONFIG, e)),
            Err(ScanError::Connect(e)) if conn.interactive => {
                eprintln!("connection failed: {e}");
                eprintln!("check the PLC address, rack and slot");
                let next = (|| {
                    Some((prompt("ip", ip.clone())?, prompt("port", port)?, prompt("rack", config.rack)?, prompt("slot", config.slot)?))
                })();
                match next {
                    Some((i, p, r, s)) => {
                        ip = i;
                        port = p;
                        config.rack = r;
                        config.slot = s;
                    }
                    None => return Err(fail(EXIT_CONNECT, e)),
                }
            }
            Err(e @ (ScanError::Connect(_) | ScanError::Setup(_))) => return Err(fail(EXIT_CONNECT, e)),
            Err(e) => return Err(fail(EXIT_FAILURE, e)),
        }
    }
}

fn scan_config(conn: &ConnArgs, db: u16, timing: &TimingArgs, confirmed: bool) -> ScanConfig {
    ScanConfig {
        target: format!("{}:{}", conn.ip, conn.port),
        rack: conn.rack,
        slot: conn.slot,
        db,
        timing: timing.timing(),
        allow_fast: timing.allow_fast,
        safe_state_confirmed: confirmed,
        timeout: Duration::from_millis(conn.timeout_ms),
    }
}

fn write_json(path: &PathBuf, report: &ScanReport) -> Result<(), i32> {
    std::fs::write(path, render_json(report)).map_err(|e| fail(EXIT_FAILURE, format!("{}: {e}", path.display())))
}

fn symbol_map(symbols: &Option<PathBuf>, program: &Option<String>) -> Result<Option<SymbolMap>, i32> {
    if let Some(path) = symbols {
        return SymbolMap::load(path).map(Some).map_err(|e| fail(EXIT_USAGE, format!("{}: {e}", path.display())));
    }
    match program {
        Some(p) => Ok(Some(load_program(p)?.symbol_map())),
        None => Ok(None),
    }
}

fn report_exit(report: &ScanReport) -> i32 {
    if !report.unrestored.is_empty() {
        EXIT_UNRESTORED
    } else if report.incomplete {
        EXIT_INCOMPLETE
    } else {
        EXIT_OK
    }
}

fn scan(a: ScanArgs) -> i32 {
    // checked first so that a refusal sends nothing
    if !a.i_confirm_safe_state {
        return fail(EXIT_UNSAFE, "confirm the process is in a safe state with --i-confirm-safe-state");
    }
    let symbols = match symbol_map(&a.symbols, &a.program) {
        Ok(s) => s,
        Err(code) => return code,
    };
    let config = scan_config(&a.conn, a.db, &a.timing, a.i_confirm_safe_state);
    let session = match setup(&a.conn, config) {
        Ok(s) => s,
        Err(code) => return code,
    };
    let mut report = session.run();
    if let Some(map) = &symbols {
        report = report.with_symbols(map);
    }
    print!("{}", render_text(&report));
    if let Some(path) = &a.json {
        if let Err(code) = write_json(path, &report) {
            return code;
        }
    }
    report_exit(&report)
}

fn oracle(a: OracleArgs) -> i32 {
    let program = match load_program(&a.program) {
        Ok(p) => p,
        Err(code) => return code,
    };
    let Timing::Lockstep { direct_cycles, delayed_cycles, .. } = a.lockstep_cycles else {
        unreachable!("parse_lockstep only yields lockstep timing")
    };
    let Some(db) = a.db.or(program.default_target()) else {
        return fail(EXIT_USAGE, "the program has no blocks; pass --db");
    };
    let symbols = match a.symbols {
        Some(path) => match SymbolMap::load(&path) {
            Ok(m) => m,
            Err(e) => return fail(EXIT_USAGE, format!("{}: {e}", path.display())),
        },
        None => program.symbol_map(),
    };
    let (mut rt, mut store) = Runtime::load(program, ClockMode::Lockstep);
    for _ in 0..a.warmup {
        rt.run_cycle(&mut store);
    }
    let Some(report) = oracle_scan(&rt, &store, db, direct_cycles, delayed_cycles) else {
        return fail(EXIT_FAILURE, format!("DB{db} is not part of the program"));
    };
    let report = report.with_symbols(&symbols);
    print!("{}", render_text(&report));
    if let Some(path) = &a.json {
        if let Err(code) = write_json(path, &report) {
            return code;
        }
    }
    EXIT_OK
}

fn probe(a: ProbeArgs) -> i32 {
    if !a.i_confirm_safe_state {
        return fail(EXIT_UNSAFE, "confirm the process is in a safe state with --i-confirm-safe-state");
    }
    let at = match parse_address(&a.pointer_at) {
        Ok(Address::Bit(b)) => b,
        Ok(Address::Span(s)) => crate::addrmem::BitAddress::new(s.db, s.start, 0),
        Ok(Address::Pointer(_)) => return fail(EXIT_USAGE, "--pointer-at takes a block address, not a P# pointer"),
        Err(e) => return fail(EXIT_USAGE, format!("--pointer-at {}: {e}", a.pointer_at)),
    };
    let redirect = match a.redirect.as_deref().map(str::parse::<PointerValue>) {
        None => None,
        Some(Ok(p)) => Some(p),
        Some(Err(e)) => return fail(EXIT_USAGE, format!("--redirect: {e}")),
    };
    let config = scan_config(&a.conn, at.db, &a.timing, true);
    let mut session = match setup(&a.conn, config) {
        Ok(s) => s,
        Err(code) => return code,
    };
    match pointer_probe(&mut session, pointer_slot(at.db, at.byte_offset), a.target_len, redirect) {
        Ok(p) => {
            print!("{p}");
            if p.all_restored() {
                EXIT_OK
            } else {
                EXIT_UNRESTORED
            }
        }
        Err(e) if e.is_link_failure() => fail(EXIT_INCOMPLETE, format!("probe interrupted: {e}")),
        Err(e) => fail(EXIT_FAILURE, e),
    }
}

fn attack(a: AttackArgs) -> i32 {
    let scenarios = if a.scenario == "all" {
        Scenario::ALL.to_vec()
    } else {
        match a.scenario.parse::<Scenario>() {
            Ok(s) => vec![s],
            Err(e) => return fail(EXIT_USAGE, e),
        }
    };
    let layout = AttackLayout::default();
    let mut local = None;
    let target = if a.remote {
        if !a.i_confirm_safe_state {
            return fail(EXIT_UNSAFE, "confirm the process is in a safe state with --i-confirm-safe-state");
        }
        format!("{}:{}", a.conn.ip, a.conn.port)
    } else {
        let program = Program::bundled("attack_scenario").expect("bundled program is valid");
        let plc = Plc::new(program, ClockMode::Lockstep);
        plc.run_cycles(1);
        match wire::serve("127.0.0.1:0", plc, ServerConfig::default()) {
            Ok(h) => {
                let addr = h.local_addr().to_string();
                local = Some(h);
                addr
            }
            Err(e) => return fail(EXIT_FAILURE, format!("cannot start the local PLC: {e}")),
        }
    };
    let timeout = Duration::from_millis(a.conn.timeout_ms);
    let (rack, slot) = if a.remote { (a.conn.rack, a.conn.slot) } else { (0, 2) };
    let mut link = match NetLink::connect(&target, rack, slot, timeout) {
        Ok(l) => l,
        Err(e) => return fail(EXIT_CONNECT, e),
    };
    let mut code = EXIT_OK;
    for s in scenarios {
        match attack_demo(&mut link, s, &layout, a.pulses) {
            Ok(t) => println!("{t}"),
            Err(e) => {
                warn!("{s}: {e}");
                code = fail(EXIT_FAILURE, format!("{s}: {e}"));
                break;
            }
        }
    }
    if let Some(h) = local {
        h.shutdown();
    }
    code
}

fn diff(a: DiffArgs) -> i32 {
    let load = |p: &PathBuf| -> Result<ScanReport, i32> {
        let text = std::fs::read_to_string(p).map_err(|e| fail(EXIT_REPORT, format!("{}: {e}", p.display())))?;
        parse_json(&text).map_err(|e| fail(EXIT_REPORT, format!("{}: {e}", p.display())))
    };
    let (ra, rb) = match (load(&a.a), load(&a.b)) {
        (Ok(x), Ok(y)) => (x, y),
        (Err(c), _) | (_, Err(c)) => return c,
    };
    match report::diff(&ra, &rb) {
        Ok(d) => {
            print!("{d}");
            EXIT_OK
        }
        Err(e) => fail(EXIT_REPORT, e),
    }
}

fn symbols(a: SymbolsArgs) -> i32 {
    match load_program(&a.program) {
        Ok(p) => {
            print!("{}", p.symbol_map().to_csv());
            EXIT_OK
        }
        Err(code) => code,
    }
}
