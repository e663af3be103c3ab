//! Bit-granular data-block addresses in the `DBn.DBXb.i` family of notations.
//!
//! Grammar (decimal integers, no whitespace):
//!
//! ```text
//! DB<n>.DBX<b>.<i>      one bit
//! DB<n>.DBB<b>          one byte
//! DB<n>.DBW<b>          two bytes (word)
//! DB<n>.DBD<b>          four bytes (double word)
//! P#DB<n>.DBX<b>.<i>    pointer to a bit
//! ```

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Area tag carried in the first byte of an encoded pointer. Only data blocks are modelled.
pub const AREA_DB: u8 = 0x84;

/// Encoded size of a [`PointerValue`].
pub const POINTER_LEN: usize = 6;

/// Largest bit address representable in the 24-bit pointer field.
pub const MAX_POINTER_BIT_ADDRESS: u32 = (1 << 24) - 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AddressError {
    #[error("syntax error at column {column}: {message}")]
    Syntax { column: usize, message: String },
    #[error("bit index {0} out of range (0-7)")]
    BitOutOfRange(u64),
    #[error("{what} {value} out of range")]
    NumberOutOfRange { what: &'static str, value: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PointerError {
    #[error("pointer must be {POINTER_LEN} bytes, got {0}")]
    Length(usize),
    #[error("unsupported pointer area 0x{0:02X}")]
    Area(u8),
}

/// One bit inside a variable block. Ordered lexicographically by (db, byte, bit).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BitAddress {
    pub db: u16,
    pub byte_offset: u32,
    pub bit: u8,
}

impl BitAddress {
    pub fn new(db: u16, byte_offset: u32, bit: u8) -> Self {
        assert!(bit < 8, "bit index {bit} out of range");
        BitAddress { db, byte_offset, bit }
    }

    /// The single-byte span holding this bit.
    pub fn byte_span(&self) -> ByteSpan {
        ByteSpan::new(self.db, self.byte_offset, 1)
    }

    pub fn mask(&self) -> u8 {
        1 << self.bit
    }
}

impl fmt::Display for BitAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DB{}.DBX{}.{}", self.db, self.byte_offset, self.bit)
    }
}

/// A run of bytes inside a variable block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ByteSpan {
    pub db: u16,
    pub start: u32,
    pub length: u32,
}

impl ByteSpan {
    pub fn new(db: u16, start: u32, length: u32) -> Self {
        ByteSpan { db, start, length }
    }

    /// Exclusive end offset.
    pub fn end(&self) -> u64 {
        self.start as u64 + self.length as u64
    }
}

impl fmt::Display for ByteSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.length {
            1 => write!(f, "DB{}.DBB{}", self.db, self.start),
            2 => write!(f, "DB{}.DBW{}", self.db, self.start),
            4 => write!(f, "DB{}.DBD{}", self.db, self.start),
            n => write!(f, "DB{}.DBB{}[{}]", self.db, self.start, n),
        }
    }
}

/// Memory area a pointer refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Area {
    Db,
}

/// A stored `P#DBn.DBXb.i` pointer. `bit_address` is `byte_offset * 8 + bit`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PointerValue {
    pub area: Area,
    pub db: u16,
    pub bit_address: u32,
}

impl PointerValue {
    pub fn new(db: u16, byte_offset: u32, bit: u8) -> Self {
        let bit_address = byte_offset * 8 + bit as u32;
        assert!(bit_address <= MAX_POINTER_BIT_ADDRESS);
        PointerValue { area: Area::Db, db, bit_address }
    }

    pub fn byte_offset(&self) -> u32 {
        self.bit_address / 8
    }

    pub fn bit(&self) -> u8 {
        (self.bit_address % 8) as u8
    }

    pub fn target(&self) -> BitAddress {
        BitAddress::new(self.db, self.byte_offset(), self.bit())
    }

    /// 6-byte layout: area u8, db u16 BE, bit address u24 BE.
    pub fn encode(&self) -> [u8; POINTER_LEN] {
        let db = self.db.to_be_bytes();
        let ba = self.bit_address.to_be_bytes();
        [AREA_DB, db[0], db[1], ba[1], ba[2], ba[3]]
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, PointerError> {
        if bytes.len() != POINTER_LEN {
            return Err(PointerError::Length(bytes.len()));
        }
        if bytes[0] != AREA_DB {
            return Err(PointerError::Area(bytes[0]));
        }
        let db = u16::from_be_bytes([bytes[1], bytes[2]]);
        let bit_address = u32::from_be_bytes([0, bytes[3], bytes[4], bytes[5]]);
        Ok(PointerValue { area: Area::Db, db, bit_address })
    }
}

impl fmt::Display for PointerValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "P#{}", self.target())
    }
}

/// Any parsed address form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Address {
    Bit(BitAddress),
    Span(ByteSpan),
    Pointer(PointerValue),
}

impl Address {
    pub fn db(&self) -> u16 {
        match self {
            Address::Bit(b) => b.db,
            Address::Span(s) => s.db,
            Address::Pointer(p) => p.db,
        }
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Address::Bit(b) => b.fmt(f),
            Address::Span(s) => s.fmt(f),
            Address::Pointer(p) => p.fmt(f),
        }
    }
}

impl FromStr for Address {
    type Err = AddressError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_address(s)
    }
}

impl FromStr for BitAddress {
    type Err = AddressError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match parse_address(s)? {
            Address::Bit(b) => Ok(b),
            _ => Err(AddressError::Syntax { column: 1, message: "expected a DBX bit address".into() }),
        }
    }
}

impl FromStr for PointerValue {
    type Err = AddressError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match parse_address(s)? {
            Address::Pointer(p) => Ok(p),
            _ => Err(AddressError::Syntax { column: 1, message: "expected a P# pointer".into() }),
        }
    }
}

struct Cursor<'a> {
    text: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T, AddressError> {
        Err(AddressError::Syntax { column: self.pos + 1, message: message.into() })
    }

    fn expect(&mut self, lit: &str) -> Result<(), AddressError> {
        let lit = lit.as_bytes();
        for &c in lit {
            if self.text.get(self.pos) != Some(&c) {
                return self.err(format!("expected '{}'", String::from_utf8_lossy(lit)));
            }
            self.pos += 1;
        }
        Ok(())
    }

    fn eat(&mut self, lit: &str) -> bool {
        if self.text[self.pos..].starts_with(lit.as_bytes()) {
            self.pos += lit.len();
            true
        } else {
            false
        }
    }

    fn number(&mut self) -> Result<u64, AddressError> {
        let start = self.pos;
        while self.text.get(self.pos).is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        if start == self.pos {
            self.pos = start;
            return self.err("expected a decimal number");
        }
        let digits = std::str::from_utf8(&self.text[start..self.pos]).expect("ascii digits");
        match digits.parse::<u64>() {
            Ok(n) => Ok(n),
            Err(_) => Err(AddressError::NumberOutOfRange { what: "number", value: u64::MAX }),
        }
    }

    fn finish(&self) -> Result<(), AddressError> {
        if self.pos != self.text.len() {
            return self.err("unexpected trailing characters");
        }
        Ok(())
    }
}

fn db_number(n: u64) -> Result<u16, AddressError> {
    u16::try_from(n).map_err(|_| AddressError::NumberOutOfRange { what: "DB number", value: n })
}

fn byte_offset(n: u64) -> Result<u32, AddressError> {
    u32::try_from(n).map_err(|_| AddressError::NumberOutOfRange { what: "byte offset", value: n })
}

/// Parses any address form of the grammar above.
pub fn parse_address(text: &str) -> Result<Address, AddressError> {
    let mut cur = Cursor { text: text.as_bytes(), pos: 0 };
    let pointer = cur.eat("P#");
    cur.expect("DB")?;
    let db = db_number(cur.number()?)?;
    cur.expect(".DB")?;
    let kind = match cur.text.get(cur.pos) {
        Some(c @ (b'X' | b'B' | b'W' | b'D')) => *c,
        _ => return cur.err("expected one of X, B, W, D"),
    };
    cur.pos += 1;
    let offset = byte_offset(cur.number()?)?;
    if kind != b'X' {
        if pointer {
            return cur.err("pointers must reference a DBX bit address");
        }
        cur.finish()?;
        let length = match kind {
            b'B' => 1,
            b'W' => 2,
            _ => 4,
        };
        return Ok(Address::Span(ByteSpan::new(db, offset, length)));
    }
    cur.expect(".")?;
    let bit = cur.number()?;
    cur.finish()?;
    if bit > 7 {
        return Err(AddressError::BitOutOfRange(bit));
    }
    let bit = bit as u8;
    if pointer {
        let bit_address = offset as u64 * 8 + bit as u64;
        if bit_address > MAX_POINTER_BIT_ADDRESS as u64 {
            return Err(AddressError::NumberOutOfRange { what: "pointer bit address", value: bit_address });
        }
        Ok(Address::Pointer(PointerValue { area: Area::Db, db, bit_address: bit_address as u32 }))
    } else {
        Ok(Address::Bit(BitAddress::new(db, offset, bit)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_fvb_bit_address() {
        assert_eq!(
            parse_address("DB100.DBX0.0").unwrap(),
            Address::Bit(BitAddress { db: 100, byte_offset: 0, bit: 0 })
        );
    }

    #[test]
    fn parses_pointer_to_bit_address() {
        let a = parse_address("P#DB1.DBX38.0").unwrap();
        assert_eq!(a, Address::Pointer(PointerValue { area: Area::Db, db: 1, bit_address: 304 }));
        assert_eq!(a.to_string(), "P#DB1.DBX38.0");
    }

    #[test]
    fn rejects_bit_index_above_seven() {
        assert_eq!(parse_address("DB1.DBX558.9"), Err(AddressError::BitOutOfRange(9)));
    }

    #[test]
    fn spans_have_their_widths() {
        assert_eq!(parse_address("DB7.DBB3").unwrap(), Address::Span(ByteSpan::new(7, 3, 1)));
        assert_eq!(parse_address("DB7.DBW2").unwrap(), Address::Span(ByteSpan::new(7, 2, 2)));
        assert_eq!(parse_address("DB7.DBD8").unwrap(), Address::Span(ByteSpan::new(7, 8, 4)));
    }

    #[test]
    fn syntax_errors_carry_column() {
        match parse_address("DB1.DBQ0") {
            Err(AddressError::Syntax { column, .. }) => assert_eq!(column, 7),
            other => panic!("unexpected {other:?}"),
        }
        match parse_address("DB1.DBX0") {
            Err(AddressError::Syntax { column, .. }) => assert_eq!(column, 9),
            other => panic!("unexpected {other:?}"),
        }
        match parse_address("DB1.DBB0 ") {
            Err(AddressError::Syntax { column, .. }) => assert_eq!(column, 9),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_address(""), Err(AddressError::Syntax { column: 1, .. })));
        assert!(matches!(parse_address("P#DB1.DBW0"), Err(AddressError::Syntax { .. })));
    }

    #[test]
    fn db_number_overflow_is_a_range_error() {
        assert!(matches!(parse_address("DB70000.DBB0"), Err(AddressError::NumberOutOfRange { .. })));
    }

    #[test]
    fn pointer_bytes() {
        let p = PointerValue::new(1, 38, 0);
        assert_eq!(p.encode(), [0x84, 0x00, 0x01, 0x00, 0x01, 0x30]);
        assert_eq!(PointerValue::decode(&[0x7B, 0, 1, 0, 1, 0x30]), Err(PointerError::Area(0x7B)));
        assert_eq!(PointerValue::decode(&[0x84, 0]), Err(PointerError::Length(2)));
    }

    #[test]
    fn bit_addresses_order_lexicographically() {
        let mut v = vec![BitAddress::new(2, 0, 0), BitAddress::new(1, 5, 7), BitAddress::new(1, 5, 2)];
        v.sort();
        assert_eq!(v, vec![BitAddress::new(1, 5, 2), BitAddress::new(1, 5, 7), BitAddress::new(2, 0, 0)]);
    }

    fn canonical() -> impl Strategy<Value = String> {
        prop_oneof![
            (any::<u16>(), 0u32..1_000_000, 0u8..8).prop_map(|(d, b, i)| format!("DB{d}.DBX{b}.{i}")),
            (any::<u16>(), 0u32..1_000_000, prop::sample::select(vec!['B', 'W', 'D']))
                .prop_map(|(d, b, k)| format!("DB{d}.DB{k}{b}")),
            (any::<u16>(), 0u32..(1 << 21), 0u8..8).prop_map(|(d, b, i)| format!("P#DB{d}.DBX{b}.{i}")),
        ]
    }

    proptest! {
        #[test]
        fn format_parse_round_trip(s in canonical()) {
            let parsed = parse_address(&s).unwrap();
            prop_assert_eq!(parsed.to_string(), s);
        }

        #[test]
        fn pointer_codec_round_trip(db: u16, ba in 0u32..=MAX_POINTER_BIT_ADDRESS) {
            let p = PointerValue { area: Area::Db, db, bit_address: ba };
            prop_assert_eq!(PointerValue::decode(&p.encode()).unwrap(), p);
        }

        #[test]
        fn pointer_decode_is_canonical(bytes in prop::array::uniform6(any::<u8>())) {
            if let Ok(p) = PointerValue::decode(&bytes) {
                prop_assert_eq!(p.encode(), bytes);
            }
        }

        #[test]
        fn parse_never_panics(s in "\\PC{0,24}") {
            let _ = parse_address(&s);
        }
    }
}
