//! Deterministic soft-PLC: function-block instances executed in scan cycles.

pub mod fb;
mod plc;
mod program;
mod runtime;

pub use fb::{FbKind, Role, VarSpec};
pub use plc::Plc;
pub use program::{BindingMode, FbInstance, GvbSource, Program, ProgramError, VbDecl, Wire, BUNDLED, MAX_VB_SIZE};
pub use runtime::{ClockMode, InstanceStatus, ModeError, PointerRead, Runtime, RuntimeStatus, SentAlert};
