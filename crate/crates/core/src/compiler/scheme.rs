//! The obfuscation scheme: every delta the compiler planned, plus what the
//! encoder, decoder and analyzer need to interpret a build.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// What an instruction's output means to an observer of the trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    /// Computes or copies offset program data.
    Data,
    /// Forms an address block for a TLB release.
    Address,
    /// Return addresses and their saves.
    Linkage,
    /// Branches and jumps.
    Control,
}

/// Per-instruction metadata. `classes` holds one delta class per result
/// word of an arithmetic instruction; instructions sharing a class are one
/// trailer set and carry one free delta between them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PcInfo {
    pub role: Role,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub classes: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub long: bool,
    /// First argument register (0 for a0).
    pub slot: usize,
    pub deltas: Vec<u64>,
    /// Delta classes of the halves, shared with every write that targets them.
    pub classes: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlobalWordSpec {
    pub name: String,
    pub delta: u64,
    pub nonce: u64,
    pub class: u32,
    pub init: i64,
    /// Set when the initializer is the address of another global word.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_addr: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlobalVar {
    pub name: String,
    pub offset: usize,
    pub size: usize,
}

/// Deltas of every variable word at one join point.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snapshot {
    pub function: String,
    pub point: String,
    pub pc: usize,
    pub deltas: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeltaScheme {
    pub seed: String,
    pub width: u32,
    pub fingerprint: String,
    pub source_hash: String,
    pub entry: String,
    pub params: Vec<ParamSpec>,
    pub sp_delta: u64,
    pub sp_class: u32,
    pub zer_nominal: u64,
    pub zer_delta: u64,
    pub ret_long: bool,
    /// Empty for a void entry function.
    pub ret_deltas: Vec<u64>,
    pub global_vars: Vec<GlobalVar>,
    pub globals: Vec<GlobalWordSpec>,
    pub pcs: Vec<PcInfo>,
    #[serde(default)]
    pub snapshots: Vec<Snapshot>,
}

#[derive(Debug, thiserror::Error)]
pub enum SchemeError {
    #[error("scheme encoding: {0}")]
    Encode(#[from] toml::ser::Error),
    #[error("scheme decoding: {0}")]
    Decode(#[from] toml::de::Error),
}

impl DeltaScheme {
    pub fn seed_value(&self) -> u64 {
        u64::from_str_radix(self.seed.trim_start_matches("0x"), 16).unwrap_or(0)
    }

    pub fn to_toml(&self) -> Result<String, SchemeError> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml(s: &str) -> Result<DeltaScheme, SchemeError> {
        Ok(toml::from_str(s)?)
    }

    /// Add `delta` to every planned offset, as the shift transform does.
    pub fn shifted(&self, delta: u64, mask: u64) -> DeltaScheme {
        let add = |d: u64| d.wrapping_add(delta) & mask;
        let mut s = self.clone();
        for p in &mut s.params {
            p.deltas.iter_mut().for_each(|d| *d = add(*d));
        }
        s.sp_delta = add(s.sp_delta);
        s.zer_delta = add(s.zer_delta);
        s.ret_deltas.iter_mut().for_each(|d| *d = add(*d));
        for g in &mut s.globals {
            g.delta = add(g.delta);
        }
        for snap in &mut s.snapshots {
            snap.deltas.values_mut().for_each(|d| *d = add(*d));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use crate::cipher::{Cipher, Key, Width};
    use crate::compiler::{compile_program, Config};

    use super::DeltaScheme;

    const SRC: &str = "int g[2] = {4, 5};\nint f(int a, int b) { if (a < b) return a; return g[1] + b; }";

    #[test]
    fn toml_roundtrip_is_exact() {
        let c = Cipher::standard(&Key::new([3; 16]), Width::new(16).unwrap());
        let s = compile_program(SRC, &c, &Config::new(8)).unwrap().scheme;
        let back = DeltaScheme::from_toml(&s.to_toml().unwrap()).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.seed_value(), 8);
        assert!(!s.snapshots.is_empty());
    }

    #[test]
    fn shifted_moves_every_offset() {
        let c = Cipher::standard(&Key::new([3; 16]), Width::new(8).unwrap());
        let s = compile_program(SRC, &c, &Config::new(2)).unwrap().scheme;
        let t = s.shifted(255, 0xff);
        assert_eq!(t.sp_delta, s.sp_delta.wrapping_add(255) & 0xff);
        for (a, b) in s.globals.iter().zip(&t.globals) {
            assert_eq!(b.delta, (a.delta + 255) & 0xff);
        }
        assert_eq!(t.shifted(1, 0xff), s);
    }
}
