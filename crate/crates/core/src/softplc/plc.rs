use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::{self, JoinHandle};

use log::{debug, info};

use super::program::Program;
use super::runtime::{ClockMode, ModeError, Runtime, RuntimeStatus};
use crate::addrmem::SharedStore;

/// A running soft-PLC: the runtime plus the memory it shares with network handlers.
///
/// A cycle holds the store's write lock from start to finish, so network requests land
/// between cycles. Lock order is runtime first, then store.
#[derive(Debug, Clone)]
pub struct Plc {
    store: SharedStore,
    runtime: Arc<Mutex<Runtime>>,
    stop: Arc<AtomicBool>,
}

impl Plc {
    pub fn new(program: Program, clock: ClockMode) -> Self {
        let (runtime, store) = Runtime::load(program, clock);
        Plc {
            store: SharedStore::new(store),
            runtime: Arc::new(Mutex::new(runtime)),
            stop: Arc::new(AtomicBool::new(false)),
        }
    }

    pub fn store(&self) -> &SharedStore {
        &self.store
    }

    fn runtime(&self) -> MutexGuard<'_, Runtime> {
        self.runtime.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn clock(&self) -> ClockMode {
        self.runtime().clock()
    }

    pub fn cycles(&self) -> u64 {
        self.runtime().cycles()
    }

    pub fn status(&self) -> RuntimeStatus {
        self.runtime().status().clone()
    }

    pub fn program(&self) -> Program {
        self.runtime().program().clone()
    }

    /// Runs `n` cycles on request and returns the total cycle count. Lockstep only.
    pub fn step(&self, n: u64) -> Result<u64, ModeError> {
        let mut rt = self.runtime();
        let mut store = self.store.write();
        rt.step(&mut store, n)?;
        Ok(rt.cycles())
    }

    /// Runs `n` cycles regardless of clock mode.
    pub fn run_cycles(&self, n: u64) -> u64 {
        let mut rt = self.runtime();
        let mut store = self.store.write();
        for _ in 0..n {
            rt.run_cycle(&mut store);
        }
        rt.cycles()
    }

    /// Starts the free-running cycle thread in wallclock mode. Returns `None` in lockstep mode.
    pub fn start_clock(&self) -> Option<JoinHandle<()>> {
        let ClockMode::Wallclock(period) = self.clock() else { return None };
        let plc = self.clone();
        info!("free-running with a {} ms cycle", period.as_millis());
        Some(thread::spawn(move || {
            while !plc.stop.load(Ordering::Relaxed) {
                thread::sleep(period);
                let cycles = plc.run_cycles(1);
                if cycles.is_multiple_of(1000) {
                    debug!("cycle {cycles}");
                }
            }
        }))
    }

    /// Asks the cycle thread to exit.
    pub fn stop(&self) {
        self.stop.store(true, Ordering::Relaxed);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Duration;

    #[test]
    fn lockstep_counts_only_requested_cycles() {
        let plc = Plc::new(Program::bundled("ctu_defaults").unwrap(), ClockMode::Lockstep);
        assert_eq!(plc.cycles(), 0);
        assert_eq!(plc.step(4), Ok(4));
        assert!(plc.start_clock().is_none());
    }

    #[test]
    fn wallclock_runs_freely_and_rejects_step() {
        let plc = Plc::new(Program::bundled("ctu_defaults").unwrap(), ClockMode::Wallclock(Duration::from_millis(2)));
        assert_eq!(plc.step(1), Err(ModeError));
        let handle = plc.start_clock().unwrap();
        thread::sleep(Duration::from_millis(60));
        plc.stop();
        handle.join().unwrap();
        assert!(plc.cycles() > 0);
    }
}
