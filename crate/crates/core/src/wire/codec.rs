//! SVBP frame codec.
//!
//! ```text
//! +------+------+---------+------+-----------------+---------+
//! | 0x53 | 0x56 | version | type | payload_len u16 | payload |
//! +------+------+---------+------+-----------------+---------+
//! ```
//!
//! All integers are big-endian. A frame is at most [`MAX_FRAME`] bytes.

use std::io::Read;

use thiserror::Error;

use crate::addrmem::{MemoryError, VbInfo};

pub const MAGIC: [u8; 2] = [0x53, 0x56];
pub const VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 6;
pub const MAX_FRAME: usize = 4096;
pub const MAX_PAYLOAD: usize = MAX_FRAME - HEADER_LEN;
/// Largest data field of a READRESP.
pub const MAX_READ_DATA: usize = MAX_PAYLOAD - 1;
/// Largest data field of a WRITE.
pub const MAX_WRITE_DATA: usize = MAX_PAYLOAD - 6;
/// Largest entry count of a LISTRESP.
pub const MAX_LIST_ENTRIES: usize = (MAX_PAYLOAD - 3) / 7;
pub const DEFAULT_PORT: u16 = 10102;

#[repr(u8)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Status {
    Ok = 0,
    NoSuchVb = 1,
    OutOfRange = 2,
    AccessDenied = 3,
    BadRequest = 4,
    ModeError = 5,
}

impl Status {
    pub const ALL: [Status; 6] =
        [Status::Ok, Status::NoSuchVb, Status::OutOfRange, Status::AccessDenied, Status::BadRequest, Status::ModeError];

    pub fn from_u8(code: u8) -> Option<Status> {
        Status::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Status::Ok => "OK",
            Status::NoSuchVb => "NO_SUCH_VB",
            Status::OutOfRange => "OUT_OF_RANGE",
            Status::AccessDenied => "ACCESS_DENIED",
            Status::BadRequest => "BAD_REQUEST",
            Status::ModeError => "MODE_ERROR",
        }
    }
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl From<&MemoryError> for Status {
    fn from(e: &MemoryError) -> Status {
        match e {
            MemoryError::NoSuchVb(_) => Status::NoSuchVb,
            MemoryError::OutOfRange { .. } => Status::OutOfRange,
            MemoryError::AccessDenied(_) => Status::AccessDenied,
            _ => Status::BadRequest,
        }
    }
}

#[repr(u8)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MsgType {
    Connect = 1,
    ConnAck = 2,
    Read = 3,
    ReadResp = 4,
    Write = 5,
    WriteResp = 6,
    Step = 7,
    StepAck = 8,
    ListVb = 9,
    ListResp = 10,
}

impl MsgType {
    pub fn from_u8(code: u8) -> Option<MsgType> {
        use MsgType::*;
        [Connect, ConnAck, Read, ReadResp, Write, WriteResp, Step, StepAck, ListVb, ListResp]
            .get((code as usize).wrapping_sub(1))
            .copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    Connect { rack: u8, slot: u8 },
    ConnAck { status: Status },
    Read { db: u16, start: u32, len: u16 },
    ReadResp { status: Status, data: Vec<u8> },
    Write { db: u16, start: u32, data: Vec<u8> },
    WriteResp { status: Status },
    Step { cycles: u32 },
    StepAck { status: Status, total_cycles: u64 },
    ListVb,
    ListResp { status: Status, entries: Vec<VbInfo> },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("frame truncated: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 2]),
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("payload length {0} exceeds the frame limit")]
    TooLong(usize),
    #[error("payload length field {declared} does not match {actual} bytes present")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("{msg:?} payload of {len} bytes is malformed")]
    BadPayload { msg: MsgType, len: usize },
    #[error("unknown status code {0}")]
    UnknownStatus(u8),
    #[error("write-protection flag {0} is not 0 or 1")]
    BadFlag(u8),
}

impl Message {
    pub fn msg_type(&self) -> MsgType {
        match self {
            Message::Connect { .. } => MsgType::Connect,
            Message::ConnAck { .. } => MsgType::ConnAck,
            Message::Read { .. } => MsgType::Read,
            Message::ReadResp { .. } => MsgType::ReadResp,
            Message::Write { .. } => MsgType::Write,
            Message::WriteResp { .. } => MsgType::WriteResp,
            Message::Step { .. } => MsgType::Step,
            Message::StepAck { .. } => MsgType::StepAck,
            Message::ListVb => MsgType::ListVb,
            Message::ListResp { .. } => MsgType::ListResp,
        }
    }

    /// Whether the message fits in one frame.
    pub fn is_valid(&self) -> bool {
        self.payload_len() <= MAX_PAYLOAD
    }

    fn payload_len(&self) -> usize {
        match self {
            Message::Connect { .. } => 2,
            Message::ConnAck { .. } | Message::WriteResp { .. } => 1,
            Message::Read { .. } => 8,
            Message::ReadResp { data, .. } => 1 + data.len(),
            Message::Write { data, .. } => 6 + data.len(),
            Message::Step { .. } => 4,
            Message::StepAck { .. } => 9,
            Message::ListVb => 0,
            Message::ListResp { entries, .. } => 3 + 7 * entries.len(),
        }
    }

    /// Encodes into a frame.
    ///
    /// # Panics
    /// If the message does not fit in one frame (see [`Message::is_valid`]).
    pub fn encode(&self) -> Vec<u8> {
        let len = self.payload_len();
        assert!(len <= MAX_PAYLOAD, "{:?} payload of {len} bytes exceeds one frame", self.msg_type());
        let mut out = Vec::with_capacity(HEADER_LEN + len);
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(self.msg_type() as u8);
        out.extend_from_slice(&(len as u16).to_be_bytes());
        match self {
            Message::Connect { rack, slot } => out.extend_from_slice(&[*rack, *slot]),
            Message::ConnAck { status } | Message::WriteResp { status } => out.push(*status as u8),
            Message::Read { db, start, len } => {
                out.extend_from_slice(&db.to_be_bytes());
                out.extend_from_slice(&start.to_be_bytes());
                out.extend_from_slice(&len.to_be_bytes());
            }
            Message::ReadResp { status, data } => {
                out.push(*status as u8);
                out.extend_from_slice(data);
            }
            Message::Write { db, start, data } => {
                out.extend_from_slice(&db.to_be_bytes());
                out.extend_from_slice(&start.to_be_bytes());
                out.extend_from_slice(data);
            }
            Message::Step { cycles } => out.extend_from_slice(&cycles.to_be_bytes()),
            Message::StepAck { status, total_cycles } => {
                out.push(*status as u8);
                out.extend_from_slice(&total_cycles.to_be_bytes());
            }
            Message::ListVb => {}
            Message::ListResp { status, entries } => {
                out.push(*status as u8);
                out.extend_from_slice(&(entries.len() as u16).to_be_bytes());
                for e in entries {
                    out.extend_from_slice(&e.number.to_be_bytes());
                    out.extend_from_slice(&e.size.to_be_bytes());
                    out.push(e.write_protected as u8);
                }
            }
        }
        out
    }

    /// Decodes exactly one frame. Trailing bytes are an error.
    pub fn decode(frame: &[u8]) -> Result<Message, FrameError> {
        let declared = check_header(frame)?;
        let payload = &frame[HEADER_LEN..];
        if payload.len() != declared {
            return Err(FrameError::LengthMismatch { declared, actual: payload.len() });
        }
        let msg = MsgType::from_u8(frame[3]).ok_or(FrameError::UnknownType(frame[3]))?;
        let bad = || FrameError::BadPayload { msg, len: payload.len() };
        let fixed = |n: usize| if payload.len() == n { Ok(()) } else { Err(bad()) };
        let status = |b: u8| Status::from_u8(b).ok_or(FrameError::UnknownStatus(b));
        let u16_at = |i: usize| u16::from_be_bytes([payload[i], payload[i + 1]]);
        let u32_at = |i: usize| u32::from_be_bytes(payload[i..i + 4].try_into().expect("4 bytes"));

        Ok(match msg {
            MsgType::Connect => {
                fixed(2)?;
                Message::Connect { rack: payload[0], slot: payload[1] }
            }
            MsgType::ConnAck => {
                fixed(1)?;
                Message::ConnAck { status: status(payload[0])? }
            }
            MsgType::Read => {
                fixed(8)?;
                Message::Read { db: u16_at(0), start: u32_at(2), len: u16_at(6) }
            }
            MsgType::ReadResp => {
                let (&s, data) = payload.split_first().ok_or_else(bad)?;
                Message::ReadResp { status: status(s)?, data: data.to_vec() }
            }
            MsgType::Write => {
                if payload.len() < 6 {
                    return Err(bad());
                }
                Message::Write { db: u16_at(0), start: u32_at(2), data: payload[6..].to_vec() }
            }
            MsgType::WriteResp => {
                fixed(1)?;
                Message::WriteResp { status: status(payload[0])? }
            }
            MsgType::Step => {
                fixed(4)?;
                Message::Step { cycles: u32_at(0) }
            }
            MsgType::StepAck => {
                fixed(9)?;
                Message::StepAck {
                    status: status(payload[0])?,
                    total_cycles: u64::from_be_bytes(payload[1..9].try_into().expect("8 bytes")),
                }
            }
            MsgType::ListVb => {
                fixed(0)?;
                Message::ListVb
            }
            MsgType::ListResp => {
                if payload.len() < 3 {
                    return Err(bad());
                }
                let count = u16_at(1) as usize;
                fixed(3 + 7 * count)?;
                let st = status(payload[0])?;
                let entries = payload[3..]
                    .chunks_exact(7)
                    .map(|e| {
                        let wp = match e[6] {
                            0 => false,
                            1 => true,
                            f => return Err(FrameError::BadFlag(f)),
                        };
                        Ok(VbInfo {
                            number: u16::from_be_bytes([e[0], e[1]]),
                            size: u32::from_be_bytes(e[2..6].try_into().expect("4 bytes")),
                            write_protected: wp,
                        })
                    })
                    .collect::<Result<_, _>>()?;
                Message::ListResp { status: st, entries }
            }
        })
    }
}

/// Validates a frame header and returns the declared payload length.
fn check_header(frame: &[u8]) -> Result<usize, FrameError> {
    if frame.len() < HEADER_LEN {
        return Err(FrameError::Truncated { needed: HEADER_LEN, have: frame.len() });
    }
    if frame[..2] != MAGIC {
        return Err(FrameError::BadMagic([frame[0], frame[1]]));
    }
    if frame[2] != VERSION {
        return Err(FrameError::BadVersion(frame[2]));
    }
    let declared = u16::from_be_bytes([frame[4], frame[5]]) as usize;
    if declared > MAX_PAYLOAD {
        return Err(FrameError::TooLong(declared));
    }
    Ok(declared)
}

#[derive(Debug, Error)]
pub enum ReadFrameError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Frame(#[from] FrameError),
}

/// Reads one frame from a stream and decodes it.
pub fn read_message<R: Read>(reader: &mut R) -> Result<Message, ReadFrameError> {
    let mut frame = vec![0u8; HEADER_LEN];
    reader.read_exact(&mut frame)?;
    let len = check_header(&frame)?;
    frame.resize(HEADER_LEN + len, 0);
    reader.read_exact(&mut frame[HEADER_LEN..])?;
    Ok(Message::decode(&frame)?)
}

#[cfg(test)]
pub(crate) mod strategies {
    use super::*;
    use proptest::collection::vec;
    use proptest::prelude::*;

    pub fn status() -> impl Strategy<Value = Status> {
        proptest::sample::select(Status::ALL.to_vec())
    }

    pub fn vb_info() -> impl Strategy<Value = VbInfo> {
        (any::<u16>(), any::<u32>(), any::<bool>()).prop_map(|(number, size, write_protected)| VbInfo {
            number,
            size,
            write_protected,
        })
    }

    /// Every message kind, including data fields at their maximum length.
    pub fn message() -> impl Strategy<Value = Message> {
        prop_oneof![
            (any::<u8>(), any::<u8>()).prop_map(|(rack, slot)| Message::Connect { rack, slot }),
            status().prop_map(|status| Message::ConnAck { status }),
            (any::<u16>(), any::<u32>(), any::<u16>()).prop_map(|(db, start, len)| Message::Read { db, start, len }),
            (status(), vec(any::<u8>(), 0..=MAX_READ_DATA)).prop_map(|(status, data)| Message::ReadResp { status, data }),
            (any::<u16>(), any::<u32>(), vec(any::<u8>(), 0..=MAX_WRITE_DATA))
                .prop_map(|(db, start, data)| Message::Write { db, start, data }),
            status().prop_map(|status| Message::WriteResp { status }),
            any::<u32>().prop_map(|cycles| Message::Step { cycles }),
            (status(), any::<u64>()).prop_map(|(status, total_cycles)| Message::StepAck { status, total_cycles }),
            Just(Message::ListVb),
            (status(), vec(vb_info(), 0..=MAX_LIST_ENTRIES))
                .prop_map(|(status, entries)| Message::ListResp { status, entries }),
        ]
    }
}
