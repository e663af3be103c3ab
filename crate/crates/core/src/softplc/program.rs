//! Program files: variable blocks, function-block instances, input bindings and wiring.
//!
//! Programs are TOML documents:
//!
//! ```toml
//! name = "ctu_gvb"
//! description = "CTU with PV copied from a global block"
//! target = 100                      # block scanned by default
//!
//! [[vb]]
//! number = 1
//! size = 4
//! write_protected = false           # optional
//! init = [{ address = "DB1.DBW2", value = 10 }, { offset = 0, hex = "01" }]
//!
//! [[instance]]
//! name = "counter"
//! kind = "CTU"                      # CTU | CTD | TP | ALERT | TCONN
//! fvb = 100                         # instance block, sized from the kind's layout
//! inputs = { CU = "default", R = "default", PV = { gvb = "DB1.DBW2" } }
//! init = { CV = 0 }                 # optional start values of statics
//!
//! [[wire]]                          # bit copy applied after every instance
//! from = "DB1.DBX0.0"
//! to = "DB100.DBX0.0"
//! ```
//!
//! Bindings: `"default"` (initial value only), `{ direct = <int|bool> }`,
//! `{ gvb = "<bit or span address>" }`, `{ pointer = "P#DBn.DBXb.i" }` (pointer inputs only).

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use super::fb::{FbKind, Role, VarSpec};
use crate::addrmem::{
    parse_address, Address, BitAddress, ByteSpan, MemoryStore, Origin, PointerValue, Symbol, SymbolMap, VarType,
    VariableBlock,
};

/// Largest variable block a program may declare.
pub const MAX_VB_SIZE: u32 = 65_535;

#[derive(Debug, Error)]
pub enum ProgramError {
    #[error("cannot read program file: {0}")]
    Io(#[from] std::io::Error),
    #[error("program syntax: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("unresolvable address {address}: {reason}")]
    Unresolved { address: String, reason: String },
    #[error("duplicate variable block DB{0}")]
    DuplicateVb(u16),
    #[error("unknown bundled program '{0}'")]
    UnknownBundled(String),
}

fn schema(msg: impl Into<String>) -> ProgramError {
    ProgramError::Schema(msg.into())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProgramFile {
    name: String,
    #[serde(default)]
    description: String,
    target: Option<u16>,
    #[serde(default)]
    vb: Vec<VbFile>,
    #[serde(default)]
    instance: Vec<InstanceFile>,
    #[serde(default)]
    wire: Vec<WireFile>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct VbFile {
    number: u16,
    size: u32,
    #[serde(default)]
    write_protected: bool,
    #[serde(default)]
    init: Vec<InitFile>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
enum InitFile {
    Value { address: String, value: i64 },
    Hex { offset: u32, hex: String },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceFile {
    name: String,
    kind: String,
    fvb: u16,
    #[serde(default)]
    write_protected: bool,
    #[serde(default)]
    inputs: BTreeMap<String, BindingFile>,
    #[serde(default)]
    init: BTreeMap<String, i64>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum Literal {
    Bool(bool),
    Int(i64),
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum BindingFile {
    Keyword(String),
    Direct {
        direct: Literal,
    },
    Gvb {
        gvb: String,
    },
    Pointer {
        pointer: String,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireFile {
    from: String,
    to: String,
}

/// Where a gVB-bound input copies from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GvbSource {
    Bit(BitAddress),
    Span(ByteSpan),
}

/// How an input gets its value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BindingMode {
    /// The layout default, written once at initialization.
    Default,
    /// A literal copied into the slot every cycle (already encoded for the slot's type).
    Direct(i64),
    /// A copy from another block every cycle.
    Gvb(GvbSource),
    /// A pointer stored in the slot and read through every cycle.
    Pointer(PointerValue),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FbInstance {
    pub name: String,
    pub kind: FbKind,
    pub fvb: u16,
    pub write_protected: bool,
    pub bindings: BTreeMap<&'static str, BindingMode>,
    /// Start values of static variables.
    pub statics: BTreeMap<&'static str, i64>,
}

impl FbInstance {
    /// Address of a variable of this instance as a bit or span.
    pub fn address_of(&self, var: &VarSpec) -> Address {
        match var.bit {
            Some(bit) => Address::Bit(BitAddress::new(self.fvb, var.offset, bit)),
            None => Address::Span(ByteSpan::new(self.fvb, var.offset, var.ty.byte_len())),
        }
    }

    pub fn span_of(&self, var: &VarSpec) -> ByteSpan {
        match var.bit {
            Some(_) => ByteSpan::new(self.fvb, var.offset, 1),
            None => ByteSpan::new(self.fvb, var.offset, var.ty.byte_len()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VbDecl {
    pub number: u16,
    pub size: u32,
    pub write_protected: bool,
    pub initial: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Wire {
    pub from: BitAddress,
    pub to: BitAddress,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    pub name: String,
    pub description: String,
    pub target: Option<u16>,
    pub vbs: Vec<VbDecl>,
    pub instances: Vec<FbInstance>,
    pub wiring: Vec<Wire>,
}

macro_rules! bundled {
    ($($name:literal),* $(,)?) => {
        /// Programs shipped with the crate, by name.
        pub const BUNDLED: &[(&str, &str)] = &[
            $(($name, include_str!(concat!("../../programs/", $name, ".toml")))),*
        ];
    };
}

bundled!(
    "ctu_defaults",
    "ctu_direct",
    "ctu_gvb",
    "ctu_gvb_all",
    "ctd_defaults",
    "ctd_direct",
    "ctd_gvb",
    "tp_defaults",
    "tp_direct",
    "tp_gvb",
    "pointer_demo",
    "attack_scenario",
);

/// Encodes `value` for a slot of type `ty`, checking its range.
fn encode_literal(ty: VarType, value: i64) -> Result<i64, String> {
    let ok = match ty {
        VarType::Bool => (0..=1).contains(&value),
        VarType::Int => (i16::MIN as i64..=i16::MAX as i64).contains(&value),
        VarType::Dint | VarType::Time => (i32::MIN as i64..=i32::MAX as i64).contains(&value),
        VarType::Pointer => false,
    };
    if ok {
        Ok(value)
    } else {
        Err(format!("literal {value} does not fit {ty}"))
    }
}

/// Big-endian bytes of `value` at the width of `ty` (not for `Bool`).
pub fn int_bytes(ty: VarType, value: i64) -> Vec<u8> {
    match ty {
        VarType::Int => (value as i16).to_be_bytes().to_vec(),
        VarType::Dint | VarType::Time => (value as i32).to_be_bytes().to_vec(),
        _ => vec![value as u8],
    }
}

fn decode_hex(hex: &str) -> Result<Vec<u8>, String> {
    let clean: String = hex.chars().filter(|c| !c.is_whitespace()).collect();
    if !clean.len().is_multiple_of(2) {
        return Err("hex string has odd length".into());
    }
    (0..clean.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&clean[i..i + 2], 16).map_err(|e| e.to_string()))
        .collect()
}

impl Program {
    pub fn from_toml(text: &str) -> Result<Program, ProgramError> {
        let file: ProgramFile = toml::from_str(text)?;
        Self::validate(file)
    }

    pub fn load(path: &Path) -> Result<Program, ProgramError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn bundled(name: &str) -> Result<Program, ProgramError> {
        let (_, text) = BUNDLED
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| ProgramError::UnknownBundled(name.to_string()))?;
        Self::from_toml(text)
    }

    /// A bundled program name, or else a path to a program file.
    pub fn resolve(name_or_path: &str) -> Result<Program, ProgramError> {
        if BUNDLED.iter().any(|(n, _)| *n == name_or_path) {
            Self::bundled(name_or_path)
        } else {
            Self::load(Path::new(name_or_path))
        }
    }

    fn validate(file: ProgramFile) -> Result<Program, ProgramError> {
        let mut sizes: BTreeMap<u16, u32> = BTreeMap::new();
        let mut vbs = Vec::new();
        for vb in &file.vb {
            if vb.size > MAX_VB_SIZE {
                return Err(schema(format!("DB{} size {} exceeds {MAX_VB_SIZE}", vb.number, vb.size)));
            }
            if sizes.insert(vb.number, vb.size).is_some() {
                return Err(ProgramError::DuplicateVb(vb.number));
            }
        }
        let mut names = BTreeSet::new();
        for inst in &file.instance {
            let kind: FbKind = inst.kind.parse().map_err(schema)?;
            if !names.insert(inst.name.clone()) {
                return Err(schema(format!("duplicate instance name '{}'", inst.name)));
            }
            if sizes.insert(inst.fvb, kind.size()).is_some() {
                return Err(ProgramError::DuplicateVb(inst.fvb));
            }
        }

        let resolve_span = |text: &str, span: ByteSpan| -> Result<(), ProgramError> {
            match sizes.get(&span.db) {
                None => Err(ProgramError::Unresolved { address: text.into(), reason: format!("DB{} is not declared", span.db) }),
                Some(&size) if span.end() > size as u64 => Err(ProgramError::Unresolved {
                    address: text.into(),
                    reason: format!("outside DB{} of {size} bytes", span.db),
                }),
                Some(_) => Ok(()),
            }
        };
        let parse = |text: &str| -> Result<Address, ProgramError> {
            parse_address(text).map_err(|e| ProgramError::Unresolved { address: text.into(), reason: e.to_string() })
        };

        for vb in file.vb {
            let mut initial = vec![0u8; vb.size as usize];
            for init in &vb.init {
                match init {
                    InitFile::Value { address, value } => {
                        let addr = parse(address)?;
                        if addr.db() != vb.number {
                            return Err(schema(format!("init {address} is not inside DB{}", vb.number)));
                        }
                        match addr {
                            Address::Bit(b) => {
                                resolve_span(address, b.byte_span())?;
                                match value {
                                    0 => initial[b.byte_offset as usize] &= !b.mask(),
                                    1 => initial[b.byte_offset as usize] |= b.mask(),
                                    v => return Err(schema(format!("bit {address} initialised with {v}"))),
                                }
                            }
                            Address::Span(s) => {
                                resolve_span(address, s)?;
                                let ty = match s.length {
                                    1 => None,
                                    2 => Some(VarType::Int),
                                    _ => Some(VarType::Dint),
                                };
                                let bytes = match ty {
                                    None if (-128..=255).contains(value) => vec![*value as u8],
                                    None => return Err(schema(format!("{value} does not fit a byte"))),
                                    Some(ty) => {
                                        let lo = if ty == VarType::Int { i16::MIN as i64 } else { i32::MIN as i64 };
                                        let hi = if ty == VarType::Int { u16::MAX as i64 } else { u32::MAX as i64 };
                                        if !(lo..=hi).contains(value) {
                                            return Err(schema(format!("{value} does not fit {address}")));
                                        }
                                        int_bytes(ty, *value)
                                    }
                                };
                                initial[s.start as usize..s.end() as usize].copy_from_slice(&bytes);
                            }
                            Address::Pointer(p) => {
                                return Err(schema(format!("init address {p} must be a bit or span")));
                            }
                        }
                    }
                    InitFile::Hex { offset, hex } => {
                        let bytes = decode_hex(hex).map_err(schema)?;
                        let span = ByteSpan::new(vb.number, *offset, bytes.len() as u32);
                        resolve_span(&span.to_string(), span)?;
                        initial[*offset as usize..span.end() as usize].copy_from_slice(&bytes);
                    }
                }
            }
            vbs.push(VbDecl { number: vb.number, size: vb.size, write_protected: vb.write_protected, initial });
        }

        let mut instances = Vec::new();
        for inst in file.instance {
            let kind: FbKind = inst.kind.parse().map_err(schema)?;
            for key in inst.inputs.keys() {
                match kind.var(key) {
                    None => return Err(schema(format!("{} ({kind}) has no variable '{key}'", inst.name))),
                    Some(v) if v.role != Role::Input => {
                        return Err(schema(format!("{}.{key} is not an input", inst.name)));
                    }
                    Some(_) => {}
                }
            }
            let mut bindings = BTreeMap::new();
            for var in kind.inputs() {
                let binding = inst
                    .inputs
                    .get(var.name)
                    .ok_or_else(|| schema(format!("{}.{} has no binding", inst.name, var.name)))?;
                let ctx = format!("{}.{}", inst.name, var.name);
                let mode = match binding {
                    BindingFile::Keyword(k) if k == "default" => {
                        if var.ty == VarType::Pointer {
                            return Err(schema(format!("{ctx} is a pointer input and needs a pointer binding")));
                        }
                        BindingMode::Default
                    }
                    BindingFile::Keyword(k) => return Err(schema(format!("{ctx}: unknown binding '{k}'"))),
                    BindingFile::Direct { direct } => {
                        let raw = match direct {
                            Literal::Bool(b) => *b as i64,
                            Literal::Int(i) => *i,
                        };
                        BindingMode::Direct(encode_literal(var.ty, raw).map_err(|e| schema(format!("{ctx}: {e}")))?)
                    }
                    BindingFile::Gvb { gvb } => {
                        let src = match (parse(gvb)?, var.ty) {
                            (Address::Bit(b), VarType::Bool) => {
                                resolve_span(gvb, b.byte_span())?;
                                GvbSource::Bit(b)
                            }
                            (Address::Span(s), ty) if ty != VarType::Bool && ty != VarType::Pointer && s.length == ty.byte_len() => {
                                resolve_span(gvb, s)?;
                                GvbSource::Span(s)
                            }
                            _ => return Err(schema(format!("{ctx}: source {gvb} does not match type {}", var.ty))),
                        };
                        BindingMode::Gvb(src)
                    }
                    BindingFile::Pointer { pointer } => {
                        if var.ty != VarType::Pointer {
                            return Err(schema(format!("{ctx} is not a pointer input")));
                        }
                        let p = match parse(pointer)? {
                            Address::Pointer(p) => p,
                            _ => return Err(schema(format!("{ctx}: {pointer} is not a P# pointer"))),
                        };
                        resolve_span(pointer, ByteSpan::new(p.db, p.byte_offset(), var.deref_len))?;
                        BindingMode::Pointer(p)
                    }
                };
                if var.ty == VarType::Pointer && !matches!(mode, BindingMode::Pointer(_)) {
                    return Err(schema(format!("{ctx} is a pointer input and needs a pointer binding")));
                }
                bindings.insert(var.name, mode);
            }
            let mut statics = BTreeMap::new();
            for (key, value) in &inst.init {
                let var = match kind.var(key) {
                    Some(v) if v.role == Role::Static => v,
                    _ => return Err(schema(format!("{}.{key} is not a static variable", inst.name))),
                };
                let value = encode_literal(var.ty, *value).map_err(|e| schema(format!("{}.{key}: {e}", inst.name)))?;
                statics.insert(var.name, value);
            }
            instances.push(FbInstance {
                name: inst.name,
                kind,
                fvb: inst.fvb,
                write_protected: inst.write_protected,
                bindings,
                statics,
            });
        }

        let mut wiring = Vec::new();
        for w in file.wire {
            let bit = |text: &str| -> Result<BitAddress, ProgramError> {
                match parse(text)? {
                    Address::Bit(b) => {
                        resolve_span(text, b.byte_span())?;
                        Ok(b)
                    }
                    _ => Err(schema(format!("wire endpoint {text} must be a DBX bit"))),
                }
            };
            wiring.push(Wire { from: bit(&w.from)?, to: bit(&w.to)? });
        }

        if let Some(t) = file.target {
            if !sizes.contains_key(&t) {
                return Err(ProgramError::Unresolved { address: format!("DB{t}"), reason: "target block is not declared".into() });
            }
        }

        Ok(Program { name: file.name, description: file.description, target: file.target, vbs, instances, wiring })
    }

    /// Allocates and initialises memory: declared blocks with their initial bytes, instance
    /// blocks with layout defaults and stored pointers.
    pub fn initial_store(&self) -> MemoryStore {
        let mut store = MemoryStore::new();
        for vb in &self.vbs {
            store
                .insert(VariableBlock::with_data(vb.number, vb.initial.clone(), vb.write_protected))
                .expect("validated at load");
        }
        for inst in &self.instances {
            store
                .insert(VariableBlock::new(inst.fvb, inst.kind.size(), inst.write_protected))
                .expect("validated at load");
            for (name, mode) in &inst.bindings {
                let var = inst.kind.var(name).expect("validated at load");
                match mode {
                    // layout defaults are all zero, which a fresh block already holds
                    BindingMode::Default => {}
                    BindingMode::Pointer(p) => store
                        .write_bytes(inst.span_of(var), &p.encode(), Origin::Internal)
                        .expect("validated at load"),
                    BindingMode::Direct(_) | BindingMode::Gvb(_) => {}
                }
            }
            for (name, value) in &inst.statics {
                let var = inst.kind.var(name).expect("validated at load");
                store
                    .write_bytes(inst.span_of(var), &int_bytes(var.ty, *value), Origin::Internal)
                    .expect("validated at load");
            }
        }
        store
    }

    pub fn instance_by_fvb(&self, db: u16) -> Option<&FbInstance> {
        self.instances.iter().find(|i| i.fvb == db)
    }

    /// Block the scanner targets when none is given: the declared target, else the first instance block.
    pub fn default_target(&self) -> Option<u16> {
        self.target.or_else(|| self.instances.first().map(|i| i.fvb))
    }

    /// Symbols for every instance variable.
    pub fn symbol_map(&self) -> SymbolMap {
        let mut symbols = Vec::new();
        for inst in &self.instances {
            for v in inst.kind.signature() {
                symbols.push(Symbol {
                    db: inst.fvb,
                    byte_offset: v.offset,
                    bit: v.bit,
                    name: v.name.to_string(),
                    ty: v.ty,
                    description: v.description.to_string(),
                });
            }
        }
        SymbolMap { symbols }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_bundled_program_loads() {
        for (name, _) in BUNDLED {
            let p = Program::bundled(name).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(&p.name, name);
            assert!(p.default_target().is_some());
        }
    }

    #[test]
    fn ctu_defaults_initial_fvb_is_zero() {
        let p = Program::bundled("ctu_defaults").unwrap();
        let store = p.initial_store();
        let fvb = store.read_bytes(ByteSpan::new(100, 0, 8)).unwrap();
        // PV=0, CV=0, Q=0 after initialization
        assert_eq!(fvb, vec![0; 8]);
    }

    #[test]
    fn undeclared_db_is_unresolvable() {
        let text = r#"
            name = "bad"
            [[instance]]
            name = "c"
            kind = "CTU"
            fvb = 100
            inputs = { CU = { gvb = "DB5.DBX0.0" }, R = "default", PV = "default" }
        "#;
        assert!(matches!(Program::from_toml(text), Err(ProgramError::Unresolved { .. })));
    }

    #[test]
    fn duplicate_vb_rejected() {
        let text = r#"
            name = "bad"
            [[vb]]
            number = 100
            size = 4
            [[instance]]
            name = "c"
            kind = "CTU"
            fvb = 100
            inputs = { CU = "default", R = "default", PV = "default" }
        "#;
        assert!(matches!(Program::from_toml(text), Err(ProgramError::DuplicateVb(100))));
    }

    #[test]
    fn missing_binding_is_schema_violation() {
        let text = r#"
            name = "bad"
            [[instance]]
            name = "c"
            kind = "CTU"
            fvb = 100
            inputs = { CU = "default", R = "default" }
        "#;
        assert!(matches!(Program::from_toml(text), Err(ProgramError::Schema(_))));
    }

    #[test]
    fn binding_type_checks() {
        let base = |inputs: &str| {
            format!(
                "name = \"x\"\n[[vb]]\nnumber = 1\nsize = 8\n[[instance]]\nname = \"c\"\nkind = \"CTU\"\nfvb = 100\ninputs = {{ {inputs} }}\n"
            )
        };
        assert!(Program::from_toml(&base(r#"CU = "default", R = "default", PV = { direct = 10 }"#)).is_ok());
        assert!(Program::from_toml(&base(r#"CU = "default", R = "default", PV = { direct = 70000 }"#)).is_err());
        assert!(Program::from_toml(&base(r#"CU = { direct = true }, R = "default", PV = "default""#)).is_ok());
        assert!(Program::from_toml(&base(r#"CU = "default", R = "default", PV = { gvb = "DB1.DBX0.0" }"#)).is_err());
        assert!(Program::from_toml(&base(r#"CU = "default", R = "default", PV = { gvb = "DB1.DBW2" }"#)).is_ok());
        assert!(Program::from_toml(&base(r#"CU = "default", R = "default", PV = { pointer = "P#DB1.DBX0.0" }"#)).is_err());
        assert!(Program::from_toml(&base(r#"CU = "default", R = "default", PV = "default", Q = "default""#)).is_err());
        assert!(Program::from_toml(&base(r#"CU = "sometimes", R = "default", PV = "default""#)).is_err());
    }

    #[test]
    fn pointer_inputs_need_pointer_bindings() {
        let text = r#"
            name = "x"
            [[vb]]
            number = 1
            size = 16
            [[instance]]
            name = "a"
            kind = "ALERT"
            fvb = 100
            inputs = { TRIG = "default", USERNAME = "default" }
        "#;
        assert!(matches!(Program::from_toml(text), Err(ProgramError::Schema(_))));
        let short_target = text.replace(r#"USERNAME = "default""#, r#"USERNAME = { pointer = "P#DB1.DBX12.0" }"#);
        assert!(matches!(Program::from_toml(&short_target), Err(ProgramError::Unresolved { .. })));
    }

    #[test]
    fn init_values_are_big_endian() {
        let text = r#"
            name = "x"
            [[vb]]
            number = 1
            size = 12
            init = [{ address = "DB1.DBW2", value = 10 }, { address = "DB1.DBX0.3", value = 1 },
                    { address = "DB1.DBD4", value = -2 }, { offset = 8, hex = "de ad be ef" }]
        "#;
        let p = Program::from_toml(text).unwrap();
        assert_eq!(p.vbs[0].initial, vec![0x08, 0, 0, 10, 0xFF, 0xFF, 0xFF, 0xFE, 0xDE, 0xAD, 0xBE, 0xEF]);
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(Program::from_toml("name = \"x\"\nbogus = 1\n").is_err());
    }
}
