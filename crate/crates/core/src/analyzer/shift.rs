//! Rewriting a build so every runtime data word sits a fixed amount higher
//! beneath the encryption, with the same trace structure and branch
//! outcomes.

use std::collections::BTreeMap;

use rand::Rng;

use crate::cipher::{Cipher, CipherError, Width};
use crate::compiler::{encode_inputs, Compiled, IoError, Role};
use crate::isa::semantics::constants;
use crate::isa::semantics::Violation;
use crate::isa::Instr;
use crate::vm::Inputs;

#[derive(Debug, thiserror::Error)]
pub enum ShiftError {
    #[error("pc {pc}: {violation}")]
    Constant { pc: usize, violation: Violation },
    #[error(transparent)]
    Cipher(#[from] CipherError),
    #[error("pc {0}: floating-point instructions cannot be shifted")]
    Float(usize),
}

/// New plaintext of each constant of `ins` under a shift by `delta`.
///
/// With every operand `delta` higher: an add must subtract it once, a
/// difference must add it back, the three-constant forms absorb it in every
/// constant, and displacements must cancel it so addresses stay put.
/// Immediate adds and branch tests already carry the shift through.
fn shifted_constants(
    w: Width,
    role: Role,
    ins: &Instr,
    ks: &[u64],
    delta: u64,
) -> Option<Vec<u64>> {
    let up = |k: u64| w.add(k, delta);
    let down = |k: u64| w.sub(k, delta);
    Some(match ins {
        Instr::Add { .. } => vec![down(ks[0])],
        Instr::Sub { .. } => vec![up(ks[0])],
        Instr::Tri { .. } | Instr::Long { .. } => ks.iter().map(|&k| up(k)).collect(),
        Instr::Addi { .. } if role == Role::Address => vec![down(ks[0])],
        Instr::Lw { .. } | Instr::Sw { .. } => vec![down(ks[0])],
        Instr::Float { .. } | Instr::Double { .. } | Instr::FBranch { .. } => return None,
        _ => ks.to_vec(),
    })
}

/// Re-encrypt every constant of `c` so all data runs `delta` higher. Each
/// constant keeps its padding; the scheme's planned offsets move by `delta`.
pub fn shift_transform(c: &Compiled, cipher: &Cipher, delta: u64) -> Result<Compiled, ShiftError> {
    let w = cipher.width();
    let delta = delta & w.mask();
    let mut out = c.clone();
    for (pc, ins) in out.program.instrs.iter_mut().enumerate() {
        let ks: Vec<u64> = constants(cipher, ins)
            .map_err(|violation| ShiftError::Constant { pc, violation })?
            .into_iter()
            .map(|(v, _)| v)
            .collect();
        if ks.is_empty() {
            continue;
        }
        let role = c.scheme.pcs[pc].role;
        let new = shifted_constants(w, role, ins, &ks, delta).ok_or(ShiftError::Float(pc))?;
        for (slot, v) in ins.consts_mut().iter_mut().zip(new) {
            let (_, pad) = cipher.decrypt(*slot);
            *slot = cipher.encrypt(v, pad)?;
        }
    }
    out.scheme = c.scheme.shifted(delta, w.mask());
    out.scheme.fingerprint = out.program.fingerprint();
    Ok(out)
}

/// Inputs for a shifted build: the same encoding as for `original`, with
/// every data word `delta` higher. `rng` must be in the state the original
/// inputs were encoded from, so each word keeps its padding.
pub fn shift_inputs<R: Rng + ?Sized>(
    shifted: &Compiled,
    cipher: &Cipher,
    args: &[i128],
    overrides: &BTreeMap<String, Vec<i128>>,
    rng: &mut R,
) -> Result<Inputs, IoError> {
    encode_inputs(&shifted.scheme, cipher, args, overrides, rng)
}
