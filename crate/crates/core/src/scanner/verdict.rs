use std::fmt;

use serde::{Deserialize, Serialize};

/// Outcome of inverting one bit, ordered from least to most exposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BitVerdict {
    /// The write was rejected.
    NotWritable,
    /// The write was accepted but the direct read already shows the original state.
    WritableNotRetained,
    /// Inverted on the direct read, original again on the delayed read.
    VulnerableTransient,
    /// Still inverted on the delayed read.
    VulnerablePersistent,
}

impl BitVerdict {
    pub fn is_vulnerable(self) -> bool {
        self >= BitVerdict::VulnerableTransient
    }

    pub fn is_persistent(self) -> bool {
        self == BitVerdict::VulnerablePersistent
    }

    /// One-character code used in byte tables.
    pub fn code(self) -> char {
        match self {
            BitVerdict::NotWritable => 'x',
            BitVerdict::WritableNotRetained => '.',
            BitVerdict::VulnerableTransient => 'T',
            BitVerdict::VulnerablePersistent => 'P',
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BitVerdict::NotWritable => "NOT_WRITABLE",
            BitVerdict::WritableNotRetained => "WRITABLE_NOT_RETAINED",
            BitVerdict::VulnerableTransient => "VULNERABLE_TRANSIENT",
            BitVerdict::VulnerablePersistent => "VULNERABLE_PERSISTENT",
        }
    }
}

impl fmt::Display for BitVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Classifies one bit from the write outcome and its original, direct and delayed states.
pub fn classify(write_accepted: bool, original: bool, direct: bool, delayed: bool) -> BitVerdict {
    if !write_accepted {
        BitVerdict::NotWritable
    } else if direct == original {
        BitVerdict::WritableNotRetained
    } else if delayed == original {
        BitVerdict::VulnerableTransient
    } else {
        BitVerdict::VulnerablePersistent
    }
}

/// Classifies all eight bits of a byte; index `i` is bit `i`.
pub fn classify_byte(write_accepted: bool, original: u8, direct: u8, delayed: u8) -> [BitVerdict; 8] {
    std::array::from_fn(|i| {
        let bit = |b: u8| b & (1 << i) != 0;
        classify(write_accepted, bit(original), bit(direct), bit(delayed))
    })
}

/// Result of testing one byte.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ByteResult {
    pub offset: u32,
    pub original: u8,
    /// `None` when the inversion write was rejected and no read-back was taken.
    pub direct_read: Option<u8>,
    pub delayed_read: Option<u8>,
    pub write_accepted: bool,
    pub bits: [BitVerdict; 8],
    /// Value read after writing the original back.
    pub verify_read: Option<u8>,
    pub restored: bool,
}

impl ByteResult {
    /// A byte whose inversion write was rejected.
    pub fn rejected(offset: u32, original: u8) -> Self {
        ByteResult {
            offset,
            original,
            direct_read: None,
            delayed_read: None,
            write_accepted: false,
            bits: [BitVerdict::NotWritable; 8],
            verify_read: Some(original),
            restored: true,
        }
    }

    pub fn accepted(offset: u32, original: u8, direct: u8, delayed: u8, verify: Option<u8>) -> Self {
        ByteResult {
            offset,
            original,
            direct_read: Some(direct),
            delayed_read: Some(delayed),
            write_accepted: true,
            bits: classify_byte(true, original, direct, delayed),
            verify_read: verify,
            restored: verify == Some(original),
        }
    }

    /// Recomputes the bit verdicts from the recorded reads.
    pub fn expected_bits(&self) -> Option<[BitVerdict; 8]> {
        match (self.write_accepted, self.direct_read, self.delayed_read) {
            (false, _, _) => Some([BitVerdict::NotWritable; 8]),
            (true, Some(d), Some(l)) => Some(classify_byte(true, self.original, d, l)),
            _ => None,
        }
    }

    pub fn is_vulnerable(&self) -> bool {
        self.bits.iter().any(|b| b.is_vulnerable())
    }

    pub fn is_persistent(&self) -> bool {
        self.bits.iter().any(|b| b.is_persistent())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn all_combinations() {
        use BitVerdict::*;
        // (accepted, original, direct, delayed) -> verdict, enumerated by hand
        let table = [
            (false, false, false, false, NotWritable),
            (false, true, false, true, NotWritable),
            (true, false, false, false, WritableNotRetained),
            (true, false, false, true, WritableNotRetained),
            (true, false, true, false, VulnerableTransient),
            (true, false, true, true, VulnerablePersistent),
            (true, true, true, true, WritableNotRetained),
            (true, true, true, false, WritableNotRetained),
            (true, true, false, true, VulnerableTransient),
            (true, true, false, false, VulnerablePersistent),
        ];
        for (w, o, d, l, v) in table {
            assert_eq!(classify(w, o, d, l), v, "{w} {o} {d} {l}");
        }
    }

    #[test]
    fn byte_classification_by_bit() {
        let bits = classify_byte(true, 0b0000_0000, 0b0000_0111, 0b0000_0011);
        assert_eq!(bits[0], BitVerdict::VulnerablePersistent);
        assert_eq!(bits[1], BitVerdict::VulnerablePersistent);
        assert_eq!(bits[2], BitVerdict::VulnerableTransient);
        assert!(bits[3..].iter().all(|b| *b == BitVerdict::WritableNotRetained));
    }

    #[test]
    fn serde_names() {
        let s = serde_json::to_string(&BitVerdict::VulnerablePersistent).unwrap();
        assert_eq!(s, "\"VULNERABLE_PERSISTENT\"");
    }

    proptest! {
        #[test]
        fn verdict_is_function_of_bit_states(w: bool, o: bool, d: bool, l: bool, noise: u8) {
            // other bits of the byte never influence bit 0
            let byte = |b: bool| (noise & !1) | b as u8;
            let v = classify_byte(w, byte(o), byte(d), byte(l))[0];
            prop_assert_eq!(v, classify(w, o, d, l));
            prop_assert_eq!(v.is_vulnerable(), w && d != o);
            prop_assert_eq!(v.is_persistent(), w && d != o && l != o);
        }

        #[test]
        fn persistent_implies_vulnerable(o: u8, d: u8, l: u8) {
            let r = ByteResult::accepted(0, o, d, l, Some(o));
            prop_assert!(!r.is_persistent() || r.is_vulnerable());
            prop_assert_eq!(r.expected_bits(), Some(r.bits));
        }
    }
}
