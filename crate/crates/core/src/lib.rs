//! Memory-scanning toolkit for PLC variable blocks, with a soft-PLC simulator to scan against.

pub mod addrmem;
pub mod softplc;
pub mod wire;
pub mod report;
pub mod scanner;
pub mod cli;
