use std::fmt;
use std::str::FromStr;

use log::info;

use super::link::Link;
use crate::addrmem::{BitAddress, ByteSpan};
use crate::wire::ClientError;

/// Where the counter, alert and stimulus live in the target program.
/// The defaults match the bundled `attack_scenario` program.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttackLayout {
    pub valve_open: BitAddress,
    pub period_reset: BitAddress,
    pub counter_cu: BitAddress,
    pub counter_r: BitAddress,
    pub counter_cv: ByteSpan,
    pub alert_busy: BitAddress,
    pub alert_sent: ByteSpan,
    /// Cycles needed for a period pulse to run out.
    pub reset_settle_cycles: u32,
}

impl Default for AttackLayout {
    fn default() -> Self {
        AttackLayout {
            valve_open: BitAddress::new(1, 0, 0),
            period_reset: BitAddress::new(1, 0, 1),
            counter_cu: BitAddress::new(11, 0, 0),
            counter_r: BitAddress::new(11, 0, 1),
            counter_cv: ByteSpan::new(11, 6, 2),
            alert_busy: BitAddress::new(12, 0, 1),
            alert_sent: ByteSpan::new(12, 2, 2),
            reset_settle_cycles: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    /// No interference.
    Baseline,
    /// Keep writing FALSE to the counter input.
    HoldCuFalse,
    /// Keep writing 0 to the count value.
    ZeroCv,
    /// Keep writing TRUE to the counter reset.
    HoldResetTrue,
    /// Keep writing TRUE to the alert's BUSY flag.
    BusyLock,
}

impl Scenario {
    pub const ALL: [Scenario; 5] =
        [Scenario::Baseline, Scenario::HoldCuFalse, Scenario::ZeroCv, Scenario::HoldResetTrue, Scenario::BusyLock];
    pub const ATTACKS: [Scenario; 4] = [Scenario::HoldCuFalse, Scenario::ZeroCv, Scenario::HoldResetTrue, Scenario::BusyLock];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Baseline => "baseline",
            Scenario::HoldCuFalse => "cu-false",
            Scenario::ZeroCv => "zero-cv",
            Scenario::HoldResetTrue => "reset-true",
            Scenario::BusyLock => "busy-lock",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scenario::ALL.into_iter().find(|sc| sc.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Scenario::ALL.iter().map(|s| s.name()).collect();
            format!("unknown scenario '{s}' (expected one of: {})", names.join(", "))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transcript {
    pub scenario: Scenario,
    pub pulses: u32,
    pub sent_before: i16,
    pub sent_after: i16,
    pub cv_final: i16,
    pub lines: Vec<String>,
}

impl Transcript {
    pub fn sent_delta(&self) -> i32 {
        self.sent_after as i32 - self.sent_before as i32
    }
}

impl fmt::Display for Transcript {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "scenario {} ({} valve-open events)", self.scenario, self.pulses)?;
        for l in &self.lines {
            writeln!(f, "  {l}")?;
        }
        writeln!(f, "SENT before {}, after {} (delta {})", self.sent_before, self.sent_after, self.sent_delta())?;
        writeln!(f, "CV at the end: {}", self.cv_final)
    }
}

struct Driver<'a, L: Link> {
    link: &'a mut L,
    lines: Vec<String>,
}

impl<L: Link> Driver<'_, L> {
    fn write_bit(&mut self, addr: BitAddress, value: bool) -> Result<(), ClientError> {
        let span = addr.byte_span();
        let old = self.link.read(span)?[0];
        let new = if value { old | addr.mask() } else { old & !addr.mask() };
        self.link.write(span.db, span.start, &[new])?;
        self.lines.push(format!("write {addr} = {}", value as u8));
        Ok(())
    }

    fn write_int(&mut self, span: ByteSpan, value: i16) -> Result<(), ClientError> {
        self.link.write(span.db, span.start, &value.to_be_bytes())?;
        self.lines.push(format!("write {span} = {value}"));
        Ok(())
    }

    fn read_int(&mut self, span: ByteSpan) -> Result<i16, ClientError> {
        let b = self.link.read(span)?;
        Ok(i16::from_be_bytes([b[0], b[1]]))
    }

    fn step(&mut self, n: u32) -> Result<(), ClientError> {
        let total = self.link.step(n)?;
        self.lines.push(format!("step {n} (cycle {total})"));
        Ok(())
    }
}

/// Drives `pulses` valve-open events through a lockstep PLC while applying the scenario's
/// writes before every cycle, and reports how many alerts were sent.
pub fn attack_demo<L: Link>(
    link: &mut L,
    scenario: Scenario,
    layout: &AttackLayout,
    pulses: u32,
) -> Result<Transcript, ClientError> {
    let mut d = Driver { link, lines: Vec::new() };

    d.lines.push("clear the counter with a period pulse".into());
    d.write_bit(layout.period_reset, true)?;
    d.step(1)?;
    d.write_bit(layout.period_reset, false)?;
    d.step(layout.reset_settle_cycles)?;
    let sent_before = d.read_int(layout.alert_sent)?;
    d.lines.push(format!("SENT = {sent_before}"));

    let attack = |d: &mut Driver<'_, L>| -> Result<(), ClientError> {
        match scenario {
            Scenario::Baseline => Ok(()),
            Scenario::HoldCuFalse => d.write_bit(layout.counter_cu, false),
            Scenario::ZeroCv => d.write_int(layout.counter_cv, 0),
            Scenario::HoldResetTrue => d.write_bit(layout.counter_r, true),
            Scenario::BusyLock => d.write_bit(layout.alert_busy, true),
        }
    };

    for i in 1..=pulses {
        for open in [true, false] {
            attack(&mut d)?;
            d.write_bit(layout.valve_open, open)?;
            d.step(1)?;
        }
        let cv = d.read_int(layout.counter_cv)?;
        let sent = d.read_int(layout.alert_sent)?;
        d.lines.push(format!("after event {i}: CV = {cv}, SENT = {sent}"));
    }
    for _ in 0..2 {
        attack(&mut d)?;
        d.step(1)?;
    }
    let sent_after = d.read_int(layout.alert_sent)?;
    let cv_final = d.read_int(layout.counter_cv)?;
    info!("{scenario}: SENT {sent_before} -> {sent_after}");
    Ok(Transcript { scenario, pulses, sent_before, sent_after, cv_final, lines: d.lines })
}
