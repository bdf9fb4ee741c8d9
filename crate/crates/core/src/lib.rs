//! Chaotic compilation: a compiler, virtual machine and statistical analyzer
//! for programs whose runtime values are all encrypted.

pub mod cipher;
pub mod isa;
pub mod vm;
pub mod compiler;
pub mod analyzer;
pub mod cli;
