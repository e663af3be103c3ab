//! Symbol maps: `db,byte_offset,bit_or_dash,name,type[,description]` CSV lines.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SymbolError {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Scalar types a variable can have.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum VarType {
    Bool,
    Int,
    Dint,
    Time,
    /// A stored 6-byte `P#` pointer.
    Pointer,
}

impl VarType {
    /// Width in bytes; `Bool` occupies a single bit.
    pub fn byte_len(self) -> u32 {
        match self {
            VarType::Bool => 1,
            VarType::Int => 2,
            VarType::Dint | VarType::Time => 4,
            VarType::Pointer => 6,
        }
    }

    /// Display name used in reports.
    pub fn display_name(self) -> &'static str {
        match self {
            VarType::Bool => "Bool",
            VarType::Int => "Int",
            VarType::Dint => "DInt",
            VarType::Time => "Time",
            VarType::Pointer => "Pointer",
        }
    }
}

impl fmt::Display for VarType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            VarType::Bool => "BOOL",
            VarType::Int => "INT",
            VarType::Dint => "DINT",
            VarType::Time => "TIME",
            VarType::Pointer => "POINTER",
        };
        f.write_str(s)
    }
}

impl FromStr for VarType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "BOOL" => Ok(VarType::Bool),
            "INT" => Ok(VarType::Int),
            "DINT" => Ok(VarType::Dint),
            "TIME" => Ok(VarType::Time),
            "POINTER" => Ok(VarType::Pointer),
            other => Err(format!("unknown type '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Symbol {
    pub db: u16,
    pub byte_offset: u32,
    /// `None` for byte-aligned multi-byte variables (`-` in the file).
    pub bit: Option<u8>,
    pub name: String,
    pub ty: VarType,
    pub description: String,
}

impl Symbol {
    /// `(byte_offset, bit_mask)` pairs covered by this variable.
    pub fn bits(&self) -> Vec<(u32, u8)> {
        match self.bit {
            Some(bit) => vec![(self.byte_offset, 1 << bit)],
            None => (0..self.ty.byte_len()).map(|i| (self.byte_offset + i, 0xFF)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SymbolMap {
    pub symbols: Vec<Symbol>,
}

impl SymbolMap {
    pub fn for_db(&self, db: u16) -> impl Iterator<Item = &Symbol> {
        self.symbols.iter().filter(move |s| s.db == db)
    }

    pub fn load(path: &Path) -> Result<Self, SymbolError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self, SymbolError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut symbols = Vec::new();
        for record in reader.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            let err = |message: String| SymbolError::Parse { line, message };
            if record.len() < 5 || record.len() > 6 {
                return Err(err(format!("expected 5 or 6 fields, got {}", record.len())));
            }
            let db = record[0].parse::<u16>().map_err(|e| err(format!("db: {e}")))?;
            let byte_offset = record[1].parse::<u32>().map_err(|e| err(format!("byte_offset: {e}")))?;
            let bit = match &record[2] {
                "-" => None,
                b => {
                    let bit = b.parse::<u8>().map_err(|e| err(format!("bit: {e}")))?;
                    if bit > 7 {
                        return Err(err(format!("bit index {bit} out of range (0-7)")));
                    }
                    Some(bit)
                }
            };
            let name = record[3].to_string();
            let ty: VarType = record[4].parse().map_err(err)?;
            if (ty == VarType::Bool) != bit.is_some() {
                return Err(err(format!("{name}: BOOL needs a bit index, other types need '-'")));
            }
            let description = record.get(5).unwrap_or_default().to_string();
            symbols.push(Symbol { db, byte_offset, bit, name, ty, description });
        }
        Ok(SymbolMap { symbols })
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(Vec::new());
        for s in &self.symbols {
            let bit = s.bit.map_or_else(|| "-".to_string(), |b| b.to_string());
            let mut row = vec![s.db.to_string(), s.byte_offset.to_string(), bit, s.name.clone(), s.ty.to_string()];
            if !s.description.is_empty() {
                row.push(s.description.clone());
            }
            w.write_record(&row).expect("writing to memory");
        }
        String::from_utf8(w.into_inner().expect("writing to memory")).expect("fields are UTF-8")
    }
}
