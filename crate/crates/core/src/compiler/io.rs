//! Encrypting a program's inputs under its scheme and decoding its results.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;

use super::interp::signed_value;
use super::scheme::DeltaScheme;
use super::Outcome;
use crate::cipher::{Cipher, Ciphertext, Width};
use crate::isa::semantics::address_block;
use crate::isa::Reg;
use super::codegen::Compiled;
use crate::vm::{self, Effect, Inputs, RunOutput, Trace, VmConfig, VmError};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum IoError {
    #[error("{entry} takes {want} arguments, got {got}")]
    Arity { entry: String, want: usize, got: usize },
    #[error("no global named `{0}`")]
    UnknownGlobal(String),
    #[error("global `{name}` has {size} words, got {got}")]
    GlobalSize { name: String, size: usize, got: usize },
    #[error("result register {0} was never written")]
    NoResult(Reg),
    #[error("global word `{0}` is not mapped after the run")]
    Unmapped(String),
    #[error("scheme width {scheme} does not match cipher width {cipher}")]
    Width { scheme: u32, cipher: u32 },
}

fn split(w: Width, v: i128) -> (u64, u64) {
    let bits = w.double_bits();
    let u = (v as u128 & ((1u128 << bits) - 1)) as u64;
    (u >> w.bits(), u & w.mask())
}

fn check_width(scheme: &DeltaScheme, cipher: &Cipher) -> Result<Width, IoError> {
    let w = cipher.width();
    if w.bits() != scheme.width {
        return Err(IoError::Width {
            scheme: scheme.width,
            cipher: w.bits(),
        });
    }
    Ok(w)
}

/// The block held by `zer` at entry, for a given inputs set.
fn zer_block(inputs: &Inputs) -> Ciphertext {
    inputs.regs.get(&Reg::ZER).copied().unwrap_or(Ciphertext(0))
}

/// Encrypt entry arguments and global initializers. `overrides` replaces the
/// initial words of named globals.
pub fn encode_inputs<R: Rng + ?Sized>(
    scheme: &DeltaScheme,
    cipher: &Cipher,
    args: &[i128],
    overrides: &BTreeMap<String, Vec<i128>>,
    rng: &mut R,
) -> Result<Inputs, IoError> {
    let w = check_width(scheme, cipher)?;
    if args.len() != scheme.params.len() {
        return Err(IoError::Arity {
            entry: scheme.entry.clone(),
            want: scheme.params.len(),
            got: args.len(),
        });
    }
    let mut inputs = Inputs::default();
    let put = |inputs: &mut Inputs, r: Reg, v: u64, rng: &mut R| {
        inputs.regs.insert(r, cipher.encrypt_data(v, rng));
    };
    for (p, &a) in scheme.params.iter().zip(args) {
        let r = Reg::A0.offset(p.slot as u8);
        if p.long {
            let (hi, lo) = split(w, a);
            put(&mut inputs, r, w.add(hi, p.deltas[0]), rng);
            put(&mut inputs, r.pair_low(), w.add(lo, p.deltas[1]), rng);
        } else {
            put(&mut inputs, r, w.add(w.wrap(a), p.deltas[0]), rng);
        }
    }
    put(&mut inputs, Reg::SP, scheme.sp_delta, rng);
    let zer_value = w.add(scheme.zer_nominal, scheme.zer_delta);
    put(&mut inputs, Reg::ZER, zer_value, rng);
    let sentinel = rng.gen::<u64>();
    put(&mut inputs, Reg::RA, sentinel, rng);

    let mut init: Vec<u64> = scheme
        .globals
        .iter()
        .map(|g| match g.init_addr {
            Some(a) => w.add(scheme.zer_nominal, a as u64),
            None => w.wrap(g.init as i128),
        })
        .collect();
    for (name, words) in overrides {
        let var = scheme
            .global_vars
            .iter()
            .find(|v| &v.name == name)
            .ok_or_else(|| IoError::UnknownGlobal(name.clone()))?;
        if words.len() > var.size {
            return Err(IoError::GlobalSize {
                name: name.clone(),
                size: var.size,
                got: words.len(),
            });
        }
        for (i, &v) in words.iter().enumerate() {
            init[var.offset + i] = w.wrap(v);
        }
    }
    let zer = zer_block(&inputs);
    for (i, g) in scheme.globals.iter().enumerate() {
        let k = w.sub(i as u64, scheme.zer_delta);
        let addr = address_block(cipher, zer, k, g.nonce);
        let value = cipher.encrypt_data(w.add(init[i], g.delta), rng);
        inputs.mem.push((addr, value));
    }
    Ok(inputs)
}

/// Decode the entry function's result and every global word after a run.
pub fn decode_outputs(
    scheme: &DeltaScheme,
    cipher: &Cipher,
    inputs: &Inputs,
    out: &RunOutput,
) -> Result<Outcome, IoError> {
    decode_final(
        scheme,
        cipher,
        inputs,
        |r| out.state.reg(r),
        |a| out.read_mem(a),
    )
}

/// Decode from a recorded trace alone, replaying its writes over `inputs`
/// to recover the final registers and memory.
pub fn decode_trace(
    scheme: &DeltaScheme,
    cipher: &Cipher,
    inputs: &Inputs,
    trace: &Trace,
) -> Result<Outcome, IoError> {
    let mut regs: BTreeMap<Reg, Ciphertext> = inputs.regs.clone();
    let mut mem: HashMap<Ciphertext, Ciphertext> = inputs.mem.iter().copied().collect();
    for ev in &trace.events {
        match ev.effect {
            Effect::Reg { reg, value } | Effect::Load { reg, value, .. } => {
                regs.insert(reg, value);
            }
            Effect::Pair { reg, hi, lo } => {
                regs.insert(reg, hi);
                regs.insert(reg.pair_low(), lo);
            }
            Effect::Store { addr, value, .. } => {
                mem.insert(addr, value);
            }
            Effect::Invalidate { addr } => {
                mem.remove(&addr);
            }
            Effect::Branch { .. } | Effect::Jump => {}
        }
    }
    decode_final(
        scheme,
        cipher,
        inputs,
        |r| regs.get(&r).copied(),
        |a| mem.get(&a).copied(),
    )
}

fn decode_final(
    scheme: &DeltaScheme,
    cipher: &Cipher,
    inputs: &Inputs,
    reg_block: impl Fn(Reg) -> Option<Ciphertext>,
    mem_block: impl Fn(Ciphertext) -> Option<Ciphertext>,
) -> Result<Outcome, IoError> {
    let w = check_width(scheme, cipher)?;
    let reg = |r: Reg| {
        reg_block(r)
            .map(|c| cipher.value(c))
            .ok_or(IoError::NoResult(r))
    };
    let ret = match scheme.ret_deltas.as_slice() {
        [] => None,
        [d] => Some(signed_value(w, false, w.sub(reg(Reg::V0)?, *d))),
        [dh, dl, ..] => {
            let hi = w.sub(reg(Reg::V0)?, *dh);
            let lo = w.sub(reg(Reg::V1)?, *dl);
            Some(signed_value(w, true, hi << w.bits() | lo))
        }
    };
    let zer = zer_block(inputs);
    let mut globals = BTreeMap::new();
    for var in &scheme.global_vars {
        let mut words = Vec::with_capacity(var.size);
        for i in var.offset..var.offset + var.size {
            let g = &scheme.globals[i];
            let addr = address_block(cipher, zer, w.sub(i as u64, scheme.zer_delta), g.nonce);
            let c = mem_block(addr).ok_or_else(|| IoError::Unmapped(g.name.clone()))?;
            let v = w.sub(cipher.value(c), g.delta);
            words.push(signed_value(w, false, v) as i64);
        }
        globals.insert(var.name.clone(), words);
    }
    Ok(Outcome { ret, globals })
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Vm(#[from] VmError),
    #[error("run did not halt: {0:?}")]
    NotHalted(crate::vm::Status),
}

/// Encode inputs, execute on the machine and decode the outcome.
pub fn execute<R: Rng + ?Sized>(
    c: &Compiled,
    cipher: &Cipher,
    args: &[i128],
    overrides: &BTreeMap<String, Vec<i128>>,
    rng: &mut R,
    config: &VmConfig,
) -> Result<(Inputs, RunOutput, Outcome), RunError> {
    let inputs = encode_inputs(&c.scheme, cipher, args, overrides, rng)?;
    let out = vm::run(&c.program, &inputs, cipher, config)?;
    if out.trace.status != crate::vm::Status::Returned {
        return Err(RunError::NotHalted(out.trace.status));
    }
    let outcome = decode_outputs(&c.scheme, cipher, &inputs, &out)?;
    Ok((inputs, out, outcome))
}
