//! C-subset compiler emitting obfuscated code with per-instruction deltas.

pub mod ast;
pub mod codegen;
pub mod hir;
pub mod interp;
pub mod io;
pub mod parse;
pub mod scheme;

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use crate::cipher::Cipher;

pub use codegen::{Compiled, Config};
pub use io::{decode_outputs, decode_trace, encode_inputs, execute, IoError, RunError};
pub use scheme::{DeltaScheme, PcInfo, Role};

/// Decoded result of a run: the entry function's return value and the final
/// value of every global word.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Outcome {
    pub ret: Option<i128>,
    pub globals: BTreeMap<String, Vec<i64>>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CompileError {
    #[error("line {line}: syntax error: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: {msg}")]
    Semantic { line: usize, msg: String },
    #[error("line {line}: unsupported: {msg}")]
    Unsupported { line: usize, msg: String },
    #[error("internal compiler error: {0}")]
    Internal(String),
}

/// Parse and lower `source` for a machine of the given width.
pub fn lower_source(source: &str, width: crate::cipher::Width) -> Result<hir::HProgram, CompileError> {
    hir::lower(&parse::parse(source)?, width)
}

/// Compile C source to obfuscated machine code under `cipher`'s key.
pub fn compile_program(source: &str, cipher: &Cipher, cfg: &Config) -> Result<Compiled, CompileError> {
    let hp = lower_source(source, cipher.width())?;
    let mut c = codegen::generate(&hp, cipher, cfg)?;
    c.scheme.source_hash = hex::encode(Sha256::digest(source.as_bytes()));
    Ok(c)
}
