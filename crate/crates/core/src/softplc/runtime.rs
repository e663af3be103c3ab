use std::collections::BTreeMap;
use std::time::Duration;

use thiserror::Error;

use super::fb::{
    alert_step, ctd_step, ctu_step, tconn_step, tp_step, AlertIo, AlertState, CounterIo, FbKind, Role, TconnIo,
    TconnState, TpIo, TpState, VarSpec,
};
use super::program::{int_bytes, BindingMode, FbInstance, GvbSource, Program};
use crate::addrmem::{ByteSpan, MemoryStore, Origin, PointerValue, VarType};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClockMode {
    /// Cycles run only on explicit step requests.
    Lockstep,
    /// Cycles run freely with the given period.
    Wallclock(Duration),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("stepping is only available in lockstep mode")]
pub struct ModeError;

/// Value read through a pointer input during the last executed cycle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PointerRead {
    pub pointer: PointerValue,
    pub data: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct InstanceStatus {
    pub name: String,
    /// Set when a pointer input could not be dereferenced in the last cycle.
    pub faulted: bool,
    pub fault_count: u64,
    pub pointer_reads: BTreeMap<String, PointerRead>,
}

/// An alert an ALERT instance would have sent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentAlert {
    pub instance: String,
    pub cycle: u64,
    pub recipient: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RuntimeStatus {
    pub cycles: u64,
    pub instances: Vec<InstanceStatus>,
    pub sent_alerts: Vec<SentAlert>,
    /// `(instance, cycle)` for every connection a TCONN instance established.
    pub connections: Vec<(String, u64)>,
}

/// Hidden per-instance state. Lives outside every variable block, so it cannot be read or
/// written over the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shadow {
    Counter { prev: bool },
    Tp(TpState),
    Alert(AlertState),
    Tconn(TconnState),
}

impl Shadow {
    fn for_kind(kind: FbKind) -> Shadow {
        match kind {
            FbKind::Ctu | FbKind::Ctd => Shadow::Counter { prev: false },
            FbKind::Tp => Shadow::Tp(TpState::default()),
            FbKind::Alert => Shadow::Alert(AlertState::default()),
            FbKind::Tconn => Shadow::Tconn(TconnState::default()),
        }
    }
}

/// Working copy of an instance block during execution.
struct Image<'a> {
    kind: FbKind,
    bytes: &'a mut [u8],
}

impl Image<'_> {
    fn spec(&self, name: &str) -> &'static VarSpec {
        self.kind.var(name).expect("name from the kind's own signature")
    }

    fn bool(&self, name: &str) -> bool {
        let v = self.spec(name);
        self.bytes[v.offset as usize] & (1 << v.bit.expect("bool var")) != 0
    }

    fn set_bool(&mut self, name: &str, value: bool) {
        let v = self.spec(name);
        let mask = 1 << v.bit.expect("bool var");
        let b = &mut self.bytes[v.offset as usize];
        if value {
            *b |= mask;
        } else {
            *b &= !mask;
        }
    }

    fn int(&self, name: &str) -> i16 {
        let o = self.spec(name).offset as usize;
        i16::from_be_bytes([self.bytes[o], self.bytes[o + 1]])
    }

    fn set_int(&mut self, name: &str, value: i16) {
        let o = self.spec(name).offset as usize;
        self.bytes[o..o + 2].copy_from_slice(&value.to_be_bytes());
    }

    fn dint(&self, name: &str) -> i32 {
        let o = self.spec(name).offset as usize;
        i32::from_be_bytes(self.bytes[o..o + 4].try_into().expect("4 bytes"))
    }

    fn set_dint(&mut self, name: &str, value: i32) {
        let o = self.spec(name).offset as usize;
        self.bytes[o..o + 4].copy_from_slice(&value.to_be_bytes());
    }
}

/// Executes a [`Program`] against a [`MemoryStore`].
///
/// Each cycle visits the instances in program order and for each one:
/// 1. copies direct literals and gVB sources into the input slots,
/// 2. reads pointer inputs through the pointers currently stored in their slots,
/// 3. runs the block logic and writes outputs and statics back (undeclared bits are cleared),
/// 4. stores the configured pointers back into their slots,
/// 5. applies every wiring copy.
///
/// If a pointer cannot be dereferenced the block's logic is skipped for that cycle and the
/// instance is flagged faulted; steps 4 and 5 still run.
#[derive(Debug, Clone)]
pub struct Runtime {
    program: Program,
    clock: ClockMode,
    shadows: Vec<Shadow>,
    status: RuntimeStatus,
}

impl Runtime {
    pub fn new(program: Program, clock: ClockMode) -> Self {
        let shadows = program.instances.iter().map(|i| Shadow::for_kind(i.kind)).collect();
        let status = RuntimeStatus {
            instances: program
                .instances
                .iter()
                .map(|i| InstanceStatus { name: i.name.clone(), ..Default::default() })
                .collect(),
            ..Default::default()
        };
        Runtime { program, clock, shadows, status }
    }

    /// Builds the runtime and its freshly initialised memory.
    pub fn load(program: Program, clock: ClockMode) -> (Runtime, MemoryStore) {
        let store = program.initial_store();
        (Runtime::new(program, clock), store)
    }

    pub fn program(&self) -> &Program {
        &self.program
    }

    pub fn clock(&self) -> ClockMode {
        self.clock
    }

    pub fn status(&self) -> &RuntimeStatus {
        &self.status
    }

    pub fn cycles(&self) -> u64 {
        self.status.cycles
    }

    /// Runs `n` cycles. Only allowed in lockstep mode.
    pub fn step(&mut self, store: &mut MemoryStore, n: u64) -> Result<(), ModeError> {
        if self.clock != ClockMode::Lockstep {
            return Err(ModeError);
        }
        for _ in 0..n {
            self.run_cycle(store);
        }
        Ok(())
    }

    /// One scan cycle.
    pub fn run_cycle(&mut self, store: &mut MemoryStore) {
        self.status.cycles += 1;
        for idx in 0..self.program.instances.len() {
            self.run_instance(idx, store);
            self.apply_wiring(store);
        }
    }

    fn run_instance(&mut self, idx: usize, store: &mut MemoryStore) {
        let inst = &self.program.instances[idx];
        copy_inputs(inst, store);

        let mut reads = BTreeMap::new();
        let mut faulted = false;
        for var in inst.kind.inputs().filter(|v| v.ty == VarType::Pointer) {
            match dereference(inst, var, store) {
                Some(read) => {
                    reads.insert(var.name.to_string(), read);
                }
                None => faulted = true,
            }
        }

        let status = &mut self.status.instances[idx];
        status.faulted = faulted;
        if faulted {
            status.fault_count += 1;
        } else {
            let span = ByteSpan::new(inst.fvb, 0, inst.kind.size());
            let mut bytes = store.read_bytes(span).expect("instance block exists");
            for (b, m) in bytes.iter_mut().zip(inst.kind.declared_mask()) {
                *b &= m;
            }
            let mut image = Image { kind: inst.kind, bytes: &mut bytes };
            match (&mut self.shadows[idx], inst.kind) {
                (Shadow::Counter { prev }, kind @ (FbKind::Ctu | FbKind::Ctd)) => {
                    let (count, reset) = if kind == FbKind::Ctu { ("CU", "R") } else { ("CD", "LD") };
                    let mut io = CounterIo {
                        count: image.bool(count),
                        reset: image.bool(reset),
                        pv: image.int("PV"),
                        q: image.bool("Q"),
                        cv: image.int("CV"),
                    };
                    if kind == FbKind::Ctu {
                        ctu_step(&mut io, prev);
                    } else {
                        ctd_step(&mut io, prev);
                    }
                    image.set_bool("Q", io.q);
                    image.set_int("CV", io.cv);
                }
                (Shadow::Tp(st), FbKind::Tp) => {
                    let mut io = TpIo { input: image.bool("IN"), pt: image.dint("PT"), q: false, et: 0 };
                    tp_step(&mut io, st);
                    image.set_bool("Q", io.q);
                    image.set_dint("ET", io.et);
                }
                (Shadow::Alert(st), FbKind::Alert) => {
                    let mut io = AlertIo { trig: image.bool("TRIG"), busy: image.bool("BUSY"), sent: image.int("SENT") };
                    if alert_step(&mut io, st) {
                        let recipient = reads.get("USERNAME").map(|r| r.data.clone()).unwrap_or_default();
                        self.status.sent_alerts.push(SentAlert {
                            instance: inst.name.clone(),
                            cycle: self.status.cycles,
                            recipient,
                        });
                    }
                    image.set_bool("BUSY", io.busy);
                    image.set_int("SENT", io.sent);
                }
                (Shadow::Tconn(st), FbKind::Tconn) => {
                    let mut io = TconnIo {
                        req: image.bool("REQ"),
                        busy: image.bool("BUSY"),
                        connected: false,
                        id: image.int("ID"),
                    };
                    if tconn_step(&mut io, st) {
                        self.status.connections.push((inst.name.clone(), self.status.cycles));
                    }
                    image.set_bool("BUSY", io.busy);
                    image.set_bool("CONNECTED", io.connected);
                }
                _ => unreachable!("shadow state built from the instance kind"),
            }
            store.write_bytes(span, &bytes, Origin::Internal).expect("instance block exists");
            self.status.instances[idx].pointer_reads = reads;
        }

        for var in inst.kind.inputs() {
            if let Some(BindingMode::Pointer(p)) = inst.bindings.get(var.name) {
                store.write_bytes(inst.span_of(var), &p.encode(), Origin::Internal).expect("validated at load");
            }
        }
    }

    fn apply_wiring(&self, store: &mut MemoryStore) {
        for w in &self.program.wiring {
            let v = store.read_bit(w.from).expect("validated at load");
            store.write_bit(w.to, v).expect("validated at load");
        }
    }
}

fn copy_inputs(inst: &FbInstance, store: &mut MemoryStore) {
    for var in inst.kind.inputs() {
        debug_assert_eq!(var.role, Role::Input);
        let Some(mode) = inst.bindings.get(var.name) else { continue };
        let slot = inst.address_of(var);
        match (mode, slot) {
            (BindingMode::Direct(v), crate::addrmem::Address::Bit(b)) => {
                store.write_bit(b, *v != 0).expect("validated at load");
            }
            (BindingMode::Direct(v), crate::addrmem::Address::Span(s)) => {
                store.write_bytes(s, &int_bytes(var.ty, *v), Origin::Internal).expect("validated at load");
            }
            (BindingMode::Gvb(GvbSource::Bit(src)), crate::addrmem::Address::Bit(b)) => {
                let v = store.read_bit(*src).expect("validated at load");
                store.write_bit(b, v).expect("validated at load");
            }
            (BindingMode::Gvb(GvbSource::Span(src)), crate::addrmem::Address::Span(s)) => {
                let data = store.read_bytes(*src).expect("validated at load");
                store.write_bytes(s, &data, Origin::Internal).expect("validated at load");
            }
            _ => {}
        }
    }
}

fn dereference(inst: &FbInstance, var: &VarSpec, store: &MemoryStore) -> Option<PointerRead> {
    let raw = store.read_bytes(inst.span_of(var)).ok()?;
    let pointer = PointerValue::decode(&raw).ok()?;
    let data = store.read_bytes(ByteSpan::new(pointer.db, pointer.byte_offset(), var.deref_len)).ok()?;
    Some(PointerRead { pointer, data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::addrmem::BitAddress;

    fn lockstep(name: &str) -> (Runtime, MemoryStore) {
        Runtime::load(Program::bundled(name).unwrap(), ClockMode::Lockstep)
    }

    fn int_at(store: &MemoryStore, db: u16, off: u32) -> i16 {
        let b = store.read_bytes(ByteSpan::new(db, off, 2)).unwrap();
        i16::from_be_bytes([b[0], b[1]])
    }

    fn pulse(rt: &mut Runtime, store: &mut MemoryStore, addr: BitAddress) {
        store.write_bit(addr, true).unwrap();
        rt.step(store, 1).unwrap();
        store.write_bit(addr, false).unwrap();
        rt.step(store, 1).unwrap();
    }

    #[test]
    fn gvb_sources_are_copied_every_cycle() {
        let (mut rt, mut store) = lockstep("ctu_gvb_all");
        rt.step(&mut store, 1).unwrap();
        // oracle: read the source and destination slots directly
        let src = store.read_bytes(ByteSpan::new(1, 0, 4)).unwrap();
        let fvb = store.read_bytes(ByteSpan::new(100, 0, 4)).unwrap();
        assert_eq!(src[0] & 0b11, fvb[0] & 0b11);
        assert_eq!(&src[2..4], &fvb[2..4]);
        store.write_bytes(ByteSpan::new(1, 0, 1), &[0b11], Origin::Network).unwrap();
        store.write_bytes(ByteSpan::new(1, 2, 2), &[0x01, 0x02], Origin::Network).unwrap();
        rt.step(&mut store, 1).unwrap();
        let fvb = store.read_bytes(ByteSpan::new(100, 0, 4)).unwrap();
        assert_eq!(fvb[0] & 0b11, 0b11);
        assert_eq!(&fvb[2..4], &[0x01, 0x02]);
    }

    #[test]
    fn ctu_counts_rising_edges() {
        let (mut rt, mut store) = lockstep("ctu_direct");
        let cu = BitAddress::new(100, 0, 0);
        store.write_bit(cu, true).unwrap();
        rt.step(&mut store, 1).unwrap();
        assert_eq!(int_at(&store, 100, 6), 1);
        rt.step(&mut store, 1).unwrap();
        assert_eq!(int_at(&store, 100, 6), 1);
        store.write_bit(cu, false).unwrap();
        rt.step(&mut store, 1).unwrap();
        store.write_bit(cu, true).unwrap();
        rt.step(&mut store, 1).unwrap();
        assert_eq!(int_at(&store, 100, 6), 2);
    }

    #[test]
    fn ctu_reset_forces_zero_and_recomputes_q() {
        let (mut rt, mut store) = lockstep("ctu_direct");
        store.write_bytes(ByteSpan::new(100, 6, 2), &[0, 12], Origin::Network).unwrap();
        rt.step(&mut store, 1).unwrap();
        assert!(store.read_bit(BitAddress::new(100, 4, 0)).unwrap());
        store.write_bit(BitAddress::new(100, 0, 1), true).unwrap();
        rt.step(&mut store, 1).unwrap();
        assert_eq!(int_at(&store, 100, 6), 0);
        assert!(!store.read_bit(BitAddress::new(100, 4, 0)).unwrap());
    }

    #[test]
    fn ctu_tenth_pulse_sets_q() {
        let (mut rt, mut store) = lockstep("ctu_direct");
        let q = BitAddress::new(100, 4, 0);
        for i in 1..=10 {
            pulse(&mut rt, &mut store, BitAddress::new(100, 0, 0));
            assert_eq!(store.read_bit(q).unwrap(), i == 10, "after pulse {i}");
        }
    }

    #[test]
    fn tp_pulse_length_in_cycles() {
        let (mut rt, mut store) = lockstep("tp_gvb");
        let pt = store.read_bytes(ByteSpan::new(1, 2, 4)).unwrap();
        let pt = i32::from_be_bytes(pt.try_into().unwrap());
        store.write_bit(BitAddress::new(1, 0, 0), true).unwrap();
        let mut highs = 0;
        for _ in 0..(pt + 4) {
            rt.step(&mut store, 1).unwrap();
            if store.read_bit(BitAddress::new(100, 6, 0)).unwrap() {
                highs += 1;
            }
        }
        assert_eq!(highs, pt);
    }

    #[test]
    fn default_slots_never_rewritten() {
        let (mut rt, mut store) = lockstep("ctu_defaults");
        rt.step(&mut store, 1).unwrap();
        store.write_bytes(ByteSpan::new(100, 2, 2), &[0x12, 0x34], Origin::Network).unwrap();
        rt.step(&mut store, 7).unwrap();
        assert_eq!(store.read_bytes(ByteSpan::new(100, 2, 2)).unwrap(), vec![0x12, 0x34]);
    }

    #[test]
    fn padding_and_outputs_do_not_survive_a_cycle() {
        let (mut rt, mut store) = lockstep("tp_defaults");
        rt.step(&mut store, 1).unwrap();
        let before = store.snapshot();
        store.write_bytes(ByteSpan::new(100, 6, 6), &[0xFF; 6], Origin::Network).unwrap();
        store.write_bytes(ByteSpan::new(100, 1, 1), &[0xFF], Origin::Network).unwrap();
        rt.step(&mut store, 1).unwrap();
        assert_eq!(store.snapshot(), before);
    }

    #[test]
    fn step_modes() {
        let (mut rt, mut store) = lockstep("ctu_defaults");
        rt.step(&mut store, 0).unwrap();
        assert_eq!(rt.cycles(), 0);
        let mut a = (rt.clone(), store.clone());
        let mut b = (rt.clone(), store.clone());
        a.0.step(&mut a.1, 3).unwrap();
        for _ in 0..3 {
            b.0.step(&mut b.1, 1).unwrap();
        }
        assert_eq!(a.1, b.1);
        assert_eq!(a.0.cycles(), 3);

        let (mut wall, mut store) =
            Runtime::load(Program::bundled("ctu_defaults").unwrap(), ClockMode::Wallclock(Duration::from_millis(10)));
        assert_eq!(wall.step(&mut store, 1), Err(ModeError));
    }

    #[test]
    fn pointer_is_read_through_every_cycle() {
        let (mut rt, mut store) = lockstep("pointer_demo");
        rt.step(&mut store, 1).unwrap();
        let slot = store.read_bytes(ByteSpan::new(100, 4, 6)).unwrap();
        let read = rt.status().instances[0].pointer_reads["USERNAME"].clone();
        assert_eq!(read.pointer, PointerValue::new(1, 38, 0));
        assert_eq!(&read.data, b"operator");
        store.write_bytes(ByteSpan::new(1, 38, 8), b"intruder", Origin::Network).unwrap();
        rt.step(&mut store, 1).unwrap();
        assert_eq!(&rt.status().instances[0].pointer_reads["USERNAME"].data, b"intruder");
        assert_eq!(store.read_bytes(ByteSpan::new(100, 4, 6)).unwrap(), slot);
    }

    #[test]
    fn redirected_pointer_takes_effect_next_cycle_then_is_restamped() {
        let (mut rt, mut store) = lockstep("pointer_demo");
        rt.step(&mut store, 1).unwrap();
        let original = store.read_bytes(ByteSpan::new(100, 4, 6)).unwrap();
        let redirect = PointerValue::new(11, 0, 0);
        store.write_bytes(ByteSpan::new(100, 4, 6), &redirect.encode(), Origin::Network).unwrap();
        // fire the alert in the same cycle so the recipient is observable
        store.write_bit(BitAddress::new(1, 558, 0), true).unwrap();
        rt.step(&mut store, 1).unwrap();
        let read = &rt.status().instances[0].pointer_reads["USERNAME"];
        assert_eq!(read.pointer, redirect);
        assert_eq!(rt.status().sent_alerts.last().unwrap().recipient, read.data);
        assert_eq!(store.read_bytes(ByteSpan::new(100, 4, 6)).unwrap(), original);
    }

    #[test]
    fn bad_pointer_faults_instance_without_halting() {
        let (mut rt, mut store) = lockstep("pointer_demo");
        rt.step(&mut store, 1).unwrap();
        store.write_bytes(ByteSpan::new(100, 4, 6), &PointerValue::new(99, 0, 0).encode(), Origin::Network).unwrap();
        rt.step(&mut store, 1).unwrap();
        assert!(rt.status().instances[0].faulted);
        assert_eq!(rt.status().instances[0].fault_count, 1);
        rt.step(&mut store, 1).unwrap();
        assert!(!rt.status().instances[0].faulted);
        assert_eq!(rt.cycles(), 3);
    }

    #[test]
    fn runtime_ignores_write_protection() {
        let text = r#"
            name = "wp"
            [[instance]]
            name = "c"
            kind = "CTU"
            fvb = 100
            write_protected = true
            inputs = { CU = { direct = 1 }, R = "default", PV = { direct = 1 } }
        "#;
        let (mut rt, mut store) = Runtime::load(Program::from_toml(text).unwrap(), ClockMode::Lockstep);
        rt.step(&mut store, 1).unwrap();
        assert_eq!(int_at(&store, 100, 6), 1);
        assert!(store.write_bytes(ByteSpan::new(100, 6, 2), &[0, 0], Origin::Network).is_err());
    }

    #[test]
    fn lockstep_is_deterministic() {
        let run = || {
            let (mut rt, mut store) = lockstep("attack_scenario");
            for i in 0..40u32 {
                if i % 3 == 0 {
                    store.write_bytes(ByteSpan::new(1, 0, 1), &[(i % 4) as u8], Origin::Network).unwrap();
                }
                rt.step(&mut store, 1).unwrap();
            }
            (store.snapshot(), rt.status().clone())
        };
        assert_eq!(run(), run());
    }
}
