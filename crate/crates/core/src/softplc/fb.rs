//! Function-block kinds, their instance-block layouts and per-cycle semantics.
//!
//! Layouts (offsets in bytes, big-endian integers):
//!
//! | kind  | variables                                                        | size |
//! |-------|------------------------------------------------------------------|------|
//! | CTU   | CU 0.0, R 0.1, PV int @2, Q 4.0, CV int @6                        | 8    |
//! | CTD   | CD 0.0, LD 0.1, PV int @2, Q 4.0, CV int @6                       | 8    |
//! | TP    | IN 0.0, PT dint @2, Q 6.0, ET dint @8                             | 12   |
//! | ALERT | TRIG 0.0, BUSY 0.1, SENT int @2, USERNAME pointer @4              | 10   |
//! | TCONN | REQ 0.0, BUSY 0.1, CONNECTED 0.2, ID int @2                       | 4    |
//!
//! Times are counted in scan cycles. Bits not covered by a declared variable are cleared
//! whenever the block executes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::addrmem::VarType;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum FbKind {
    Ctu,
    Ctd,
    Tp,
    Alert,
    Tconn,
}

/// How a variable participates in execution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    /// Supplied through a binding.
    Input,
    /// Recomputed from hidden state on every execution.
    Output,
    /// Read and written back by the block itself.
    Static,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarSpec {
    pub name: &'static str,
    pub ty: VarType,
    pub offset: u32,
    pub bit: Option<u8>,
    pub role: Role,
    pub description: &'static str,
    /// Bytes read through the pointer for `Pointer` inputs.
    pub deref_len: u32,
}

const fn var(name: &'static str, ty: VarType, offset: u32, bit: Option<u8>, role: Role, description: &'static str) -> VarSpec {
    VarSpec { name, ty, offset, bit, role, description, deref_len: 0 }
}

const CTU_VARS: &[VarSpec] = &[
    var("CU", VarType::Bool, 0, Some(0), Role::Input, "Counter input"),
    var("R", VarType::Bool, 0, Some(1), Role::Input, "Reset"),
    var("PV", VarType::Int, 2, None, Role::Input, "Preset value, Q is set once CV reaches it"),
    var("Q", VarType::Bool, 4, Some(0), Role::Output, "Counter output, CV >= PV"),
    var("CV", VarType::Int, 6, None, Role::Static, "Count value"),
];

const CTD_VARS: &[VarSpec] = &[
    var("CD", VarType::Bool, 0, Some(0), Role::Input, "Count down input"),
    var("LD", VarType::Bool, 0, Some(1), Role::Input, "Load PV into CV"),
    var("PV", VarType::Int, 2, None, Role::Input, "Preset value loaded by LD"),
    var("Q", VarType::Bool, 4, Some(0), Role::Output, "Counter output, CV <= 0"),
    var("CV", VarType::Int, 6, None, Role::Static, "Count value"),
];

const TP_VARS: &[VarSpec] = &[
    var("IN", VarType::Bool, 0, Some(0), Role::Input, "Start input"),
    var("PT", VarType::Time, 2, None, Role::Input, "Pulse duration in cycles"),
    var("Q", VarType::Bool, 6, Some(0), Role::Output, "Pulse output"),
    var("ET", VarType::Time, 8, None, Role::Output, "Elapsed cycles of the current pulse"),
];

/// Username bytes dereferenced through the ALERT `USERNAME` pointer.
pub const USERNAME_LEN: u32 = 8;

const ALERT_VARS: &[VarSpec] = &[
    var("TRIG", VarType::Bool, 0, Some(0), Role::Input, "Send trigger"),
    var("BUSY", VarType::Bool, 0, Some(1), Role::Output, "Job in progress"),
    var("SENT", VarType::Int, 2, None, Role::Static, "Alerts sent"),
    VarSpec {
        name: "USERNAME",
        ty: VarType::Pointer,
        offset: 4,
        bit: None,
        role: Role::Input,
        description: "Pointer to the recipient user name",
        deref_len: USERNAME_LEN,
    },
];

const TCONN_VARS: &[VarSpec] = &[
    var("REQ", VarType::Bool, 0, Some(0), Role::Input, "Connect request"),
    var("BUSY", VarType::Bool, 0, Some(1), Role::Output, "Connection attempt in progress"),
    var("CONNECTED", VarType::Bool, 0, Some(2), Role::Output, "Connection established"),
    var("ID", VarType::Int, 2, None, Role::Input, "Connection id"),
];

impl FbKind {
    pub const ALL: [FbKind; 5] = [FbKind::Ctu, FbKind::Ctd, FbKind::Tp, FbKind::Alert, FbKind::Tconn];

    pub fn signature(self) -> &'static [VarSpec] {
        match self {
            FbKind::Ctu => CTU_VARS,
            FbKind::Ctd => CTD_VARS,
            FbKind::Tp => TP_VARS,
            FbKind::Alert => ALERT_VARS,
            FbKind::Tconn => TCONN_VARS,
        }
    }

    /// Instance block size in bytes.
    pub fn size(self) -> u32 {
        match self {
            FbKind::Ctu | FbKind::Ctd => 8,
            FbKind::Tp => 12,
            FbKind::Alert => 10,
            FbKind::Tconn => 4,
        }
    }

    pub fn var(self, name: &str) -> Option<&'static VarSpec> {
        self.signature().iter().find(|v| v.name == name)
    }

    pub fn inputs(self) -> impl Iterator<Item = &'static VarSpec> {
        self.signature().iter().filter(|v| v.role == Role::Input)
    }

    /// Per-byte mask of bits that belong to a declared variable.
    pub fn declared_mask(self) -> Vec<u8> {
        let mut mask = vec![0u8; self.size() as usize];
        for v in self.signature() {
            match v.bit {
                Some(bit) => mask[v.offset as usize] |= 1 << bit,
                None => {
                    for i in 0..v.ty.byte_len() {
                        mask[(v.offset + i) as usize] = 0xFF;
                    }
                }
            }
        }
        mask
    }
}

impl fmt::Display for FbKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FbKind::Ctu => "CTU",
            FbKind::Ctd => "CTD",
            FbKind::Tp => "TP",
            FbKind::Alert => "ALERT",
            FbKind::Tconn => "TCONN",
        };
        f.write_str(s)
    }
}

impl FromStr for FbKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FbKind::ALL
            .into_iter()
            .find(|k| k.to_string() == s)
            .ok_or_else(|| format!("unknown function block kind '{s}'"))
    }
}

/// Inputs, outputs and statics of a CTU or CTD instance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CounterIo {
    /// CU for CTU, CD for CTD.
    pub count: bool,
    /// R for CTU, LD for CTD.
    pub reset: bool,
    pub pv: i16,
    pub q: bool,
    pub cv: i16,
}

/// Count up on a rising CU; R clears CV and wins over counting.
pub fn ctu_step(io: &mut CounterIo, prev_cu: &mut bool) {
    let rising = io.count && !*prev_cu;
    *prev_cu = io.count;
    if io.reset {
        io.cv = 0;
    } else if rising && io.cv < i16::MAX {
        io.cv += 1;
    }
    io.q = io.cv >= io.pv;
}

/// Count down on a rising CD; LD loads PV into CV and wins over counting.
pub fn ctd_step(io: &mut CounterIo, prev_cd: &mut bool) {
    let rising = io.count && !*prev_cd;
    *prev_cd = io.count;
    if io.reset {
        io.cv = io.pv;
    } else if rising && io.cv > i16::MIN {
        io.cv -= 1;
    }
    io.q = io.cv <= 0;
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TpIo {
    pub input: bool,
    pub pt: i32,
    pub q: bool,
    pub et: i32,
}

/// Hidden pulse-timer state.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TpState {
    pub prev_in: bool,
    pub running: bool,
    pub elapsed: i32,
}

/// A rising IN starts a pulse that is not retriggerable while running.
/// ET counts cycles of the running pulse and drops to 0 once it exceeds PT.
pub fn tp_step(io: &mut TpIo, st: &mut TpState) {
    let rising = io.input && !st.prev_in;
    st.prev_in = io.input;
    if rising && !st.running {
        st.running = true;
        st.elapsed = 0;
    }
    if st.running {
        st.elapsed = st.elapsed.saturating_add(1);
        if st.elapsed > io.pt {
            st.running = false;
            st.elapsed = 0;
        }
    }
    io.et = st.elapsed;
    io.q = 0 < io.et && io.et <= io.pt;
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AlertIo {
    pub trig: bool,
    pub busy: bool,
    pub sent: i16,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AlertState {
    pub prev_trig: bool,
    pub job_active: bool,
}

/// Returns true when an alert is sent this cycle.
///
/// `io.busy` on entry is whatever the instance block holds; a set BUSY blocks a new job.
pub fn alert_step(io: &mut AlertIo, st: &mut AlertState) -> bool {
    let rising = io.trig && !st.prev_trig;
    st.prev_trig = io.trig;
    let mut fired = false;
    if st.job_active {
        st.job_active = false;
    } else if rising && !io.busy {
        st.job_active = true;
        io.sent = io.sent.wrapping_add(1);
        fired = true;
    }
    io.busy = st.job_active;
    fired
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TconnIo {
    pub req: bool,
    pub busy: bool,
    pub connected: bool,
    pub id: i16,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TconnState {
    pub prev_req: bool,
    pub pending: bool,
    pub connected: bool,
}

/// Returns true on the cycle the connection is established.
pub fn tconn_step(io: &mut TconnIo, st: &mut TconnState) -> bool {
    let rising = io.req && !st.prev_req;
    st.prev_req = io.req;
    let mut established = false;
    if st.pending {
        st.pending = false;
        st.connected = true;
        established = true;
    } else if rising && !io.busy && !st.connected {
        st.pending = true;
    }
    io.busy = st.pending;
    io.connected = st.connected;
    established
}
