//! Addressing and variable-block memory.

mod address;
mod store;
mod symbols;

pub use address::{
    parse_address, Address, AddressError, Area, BitAddress, ByteSpan, PointerError, PointerValue, AREA_DB,
    MAX_POINTER_BIT_ADDRESS, POINTER_LEN,
};
pub use store::{invert_byte, MemoryError, MemoryStore, Origin, SharedStore, Snapshot, VariableBlock, VbInfo};
pub use symbols::{Symbol, SymbolError, SymbolMap, VarType};
