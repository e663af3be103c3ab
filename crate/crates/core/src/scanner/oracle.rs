use super::config::Timing;
use super::verdict::ByteResult;
use crate::addrmem::{ByteSpan, MemoryStore, Origin};
use crate::report::{ConfigEcho, ScanReport, Source};
use crate::softplc::Runtime;

fn run(rt: &mut Runtime, store: &mut MemoryStore, cycles: u32) {
    for _ in 0..cycles {
        rt.run_cycle(store);
    }
}

/// Ground truth for one block: every bit is flipped on its own copy of the PLC, the copy is
/// cycled like the scanner would, and the bit is classified from direct memory reads.
///
/// Returns `None` if the block does not exist.
pub fn oracle_scan(
    runtime: &Runtime,
    store: &MemoryStore,
    db: u16,
    direct_cycles: u32,
    delayed_cycles: u32,
) -> Option<ScanReport> {
    let size = store.block(db)?.size();
    let mut bytes = Vec::with_capacity(size as usize);
    for offset in 0..size {
        let span = ByteSpan::new(db, offset, 1);
        let original = store.read_bytes(span).expect("inside the block")[0];
        let (mut direct, mut delayed) = (original, original);
        let mut accepted = true;
        for bit in 0..8 {
            let mask = 1u8 << bit;
            let (mut rt, mut st) = (runtime.clone(), store.clone());
            if st.write_bytes(span, &[original ^ mask], Origin::Network).is_err() {
                accepted = false;
                break;
            }
            run(&mut rt, &mut st, direct_cycles);
            let d = st.read_bytes(span).expect("inside the block")[0] & mask;
            run(&mut rt, &mut st, delayed_cycles);
            let l = st.read_bytes(span).expect("inside the block")[0] & mask;
            direct = (direct & !mask) | d;
            delayed = (delayed & !mask) | l;
        }
        bytes.push(if accepted {
            ByteResult::accepted(offset, original, direct, delayed, Some(original))
        } else {
            ByteResult::rejected(offset, original)
        });
    }
    let echo = ConfigEcho {
        source: Source::Oracle,
        target: None,
        program: Some(runtime.program().name.clone()),
        rack: None,
        slot: None,
        timing: Timing::Lockstep { direct_cycles, delayed_cycles, next_byte_cycles: 0 },
    };
    Some(ScanReport::new(echo, db, size, bytes, false, &[]))
}
