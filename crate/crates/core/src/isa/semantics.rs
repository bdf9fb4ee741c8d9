//! Value semantics of each instruction over encrypted operands. The VM owns
//! registers, memory and control flow; this module decides what a single
//! instruction computes from the blocks it reads.

use thiserror::Error;

use super::fp;
use super::{Cond, FCond, FloatOp, Instr, LongOp, Opcode, Reg, TriOp};
use crate::cipher::{Cipher, Ciphertext, Tag, Width};

/// Hash context shared by `addi` and the effective address of `lw`/`sw`, so a
/// release sequence `addi k1 base k` names the same block the load used.
pub const ADDR_CTX: u64 = 0xadd4_0000_0000_0001;
const LINK_CTX: u64 = 0x11c0_0000_0000_0002;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Violation {
    #[error("constant {position} of {opcode} has tag {found:?}, expected {expected:?}")]
    ConstTag {
        opcode: Opcode,
        position: usize,
        expected: Tag,
        found: Tag,
    },
    #[error("register {reg} holds a block with tag {found:?}")]
    OperandTag { reg: Reg, found: Tag },
    #[error("{opcode} needs 32-bit words")]
    Width { opcode: Opcode },
}

/// Register results of an instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Written {
    One(Reg, Ciphertext),
    Pair(Reg, Ciphertext, Ciphertext),
}

/// Registers an instruction actually reads. `sub r x x k` computes a constant
/// without consulting `x`; so does `subl r x x` when its two subtracted
/// constants agree, since the per-half differences then cancel exactly.
pub fn reads(cipher: &Cipher, instr: &Instr) -> Vec<Reg> {
    use Instr::*;
    match *instr {
        Add { rs1, rs2, .. } | Tri { rs1, rs2, .. } | Branch { rs1, rs2, .. } => vec![rs1, rs2],
        Float { rs1, rs2, .. } | FBranch { rs1, rs2, .. } => vec![rs1, rs2],
        Sub { rs1, rs2, .. } => {
            if rs1 == rs2 {
                vec![]
            } else {
                vec![rs1, rs2]
            }
        }
        Long { op: LongOp::Sub, rs1, rs2, ref k, .. }
            if rs1 == rs2
                && cipher.value(k[2]) == cipher.value(k[4])
                && cipher.value(k[3]) == cipher.value(k[5]) =>
        {
            vec![]
        }
        Long { rs1, rs2, .. } | Double { rs1, rs2, .. } => {
            vec![rs1, rs1.pair_low(), rs2, rs2.pair_low()]
        }
        Addil { rs, .. } => vec![rs, rs.pair_low()],
        Addi { rs, .. } | Mov { rs, .. } | Jr { rs } | Mtspr { rs, .. } => vec![rs],
        Sw { base, src, .. } => vec![base, src],
        Lw { base, .. } => vec![base],
        B { .. } | Jal { .. } | J { .. } => vec![],
    }
}

/// Decrypted constants as (value, nonce), checked against their slot tags.
pub fn constants(cipher: &Cipher, instr: &Instr) -> Result<Vec<(u64, u64)>, Violation> {
    let op = instr.opcode();
    instr
        .consts()
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let (v, pad) = cipher.decrypt(c);
            let expected = op.const_tag(i);
            if pad.tag != expected {
                return Err(Violation::ConstTag {
                    opcode: op,
                    position: i,
                    expected,
                    found: pad.tag,
                });
            }
            Ok((v, pad.nonce))
        })
        .collect()
}

/// Plaintext of a register operand, which must be runtime data.
pub fn operand(cipher: &Cipher, reg: Reg, block: Ciphertext) -> Result<u64, Violation> {
    let (v, pad) = cipher.decrypt(block);
    if !pad.tag.is_data() {
        return Err(Violation::OperandTag { reg, found: pad.tag });
    }
    Ok(v)
}

/// Whether `instr` writes a result computed from operands (everything except
/// copies, control flow and memory).
pub fn is_computation(instr: &Instr) -> bool {
    instr.opcode().is_arith()
}

fn wide_mask(bits: u32) -> u64 {
    if bits >= 64 {
        u64::MAX
    } else {
        (1u64 << bits) - 1
    }
}

fn wide_signed(bits: u32, a: u64) -> i128 {
    let a = a & wide_mask(bits);
    if a >> (bits - 1) & 1 == 1 {
        a as i128 - (1i128 << bits)
    } else {
        a as i128
    }
}

fn wide_wrap(bits: u32, v: i128) -> u64 {
    (v.rem_euclid(1i128 << bits)) as u64
}

pub(crate) fn long_apply(op: LongOp, bits: u32, a: u64, b: u64) -> u64 {
    let m = wide_mask(bits);
    match op {
        LongOp::Add => a.wrapping_add(b) & m,
        LongOp::Sub => a.wrapping_sub(b) & m,
        LongOp::Mul => a.wrapping_mul(b) & m,
        LongOp::Div => {
            let (sa, sb) = (wide_signed(bits, a), wide_signed(bits, b));
            if sb == 0 {
                m
            } else {
                wide_wrap(bits, sa / sb)
            }
        }
    }
}

fn join(w: Width, hi: u64, lo: u64) -> u64 {
    (hi & w.mask()) << w.bits() | (lo & w.mask())
}

/// Per-half subtraction with no borrow between halves.
fn half_sub(w: Width, r: (u64, u64), k: (u64, u64)) -> (u64, u64) {
    (w.sub(r.0, k.0), w.sub(r.1, k.1))
}

fn split(w: Width, v: u64) -> (u64, u64) {
    ((v >> w.bits()) & w.mask(), v & w.mask())
}

pub(crate) fn tri_apply(op: TriOp, w: Width, a: u64, b: u64) -> u64 {
    match op {
        TriOp::Mul => w.mul(a, b),
        TriOp::Div => w.div(a, b),
        TriOp::Rem => w.rem(a, b),
        TriOp::Xor => a ^ b,
        TriOp::And => a & b,
        TriOp::Or => a | b,
    }
}

fn float_apply(op: FloatOp, a: f64, b: f64) -> f64 {
    match op {
        FloatOp::Add => a + b,
        FloatOp::Sub => a - b,
        FloatOp::Mul => a * b,
        FloatOp::Div => a / b,
    }
}

/// Evaluate a computation. `get` returns the current block of a register
/// listed by [`reads`]; other registers are never consulted.
pub fn compute(
    cipher: &Cipher,
    instr: &Instr,
    get: &dyn Fn(Reg) -> Ciphertext,
) -> Result<Written, Violation> {
    let w = cipher.width();
    let ks = constants(cipher, instr)?;
    let kv: Vec<u64> = ks.iter().map(|k| k.0).collect();
    let val = |r: Reg| operand(cipher, r, get(r));
    let op_tag = instr.opcode() as u64;
    let blocks = |regs: &[Reg]| -> Vec<u64> {
        let mut ctx = vec![op_tag];
        ctx.extend(regs.iter().map(|&r| get(r).0));
        ctx.extend(instr.consts().iter().map(|c| c.0));
        ctx
    };
    use Instr::*;
    Ok(match *instr {
        Add { rd, rs1, rs2, .. } => {
            let v = w.add(w.add(val(rs1)?, val(rs2)?), kv[0]);
            Written::One(rd, cipher.seal_derived(v, &blocks(&[rs1, rs2])))
        }
        Addi { rd, rs, .. } => {
            let v = w.add(val(rs)?, kv[0]);
            Written::One(rd, cipher.seal_derived(v, &[ADDR_CTX, get(rs).0, ks[0].1]))
        }
        Sub { rd, rs1, rs2, .. } => {
            if rs1 == rs2 {
                Written::One(rd, cipher.seal_derived(kv[0], &blocks(&[])))
            } else {
                let v = w.add(w.sub(val(rs1)?, val(rs2)?), kv[0]);
                Written::One(rd, cipher.seal_derived(v, &blocks(&[rs1, rs2])))
            }
        }
        Tri { op, rd, rs1, rs2, .. } => {
            let a = w.sub(val(rs1)?, kv[1]);
            let b = w.sub(val(rs2)?, kv[2]);
            let v = w.add(tri_apply(op, w, a, b), kv[0]);
            Written::One(rd, cipher.seal_derived(v, &blocks(&[rs1, rs2])))
        }
        Long { op, rd, rs1, rs2, .. } => {
            let bits = w.bits() * 2;
            let reads_none = op == LongOp::Sub && rs1 == rs2 && kv[2] == kv[4] && kv[3] == kv[5];
            let v = if reads_none {
                join(w, kv[0], kv[1])
            } else {
                let a = half_sub(w, (val(rs1)?, val(rs1.pair_low())?), (kv[2], kv[3]));
                let b = half_sub(w, (val(rs2)?, val(rs2.pair_low())?), (kv[4], kv[5]));
                let r = long_apply(op, bits, join(w, a.0, a.1), join(w, b.0, b.1));
                let (rh, rl) = split(w, r);
                join(w, w.add(rh, kv[0]), w.add(rl, kv[1]))
            };
            let (hi, lo) = split(w, v);
            let ctx = if reads_none {
                blocks(&[])
            } else {
                blocks(&[rs1, rs1.pair_low(), rs2, rs2.pair_low()])
            };
            Written::Pair(
                rd,
                cipher.seal_derived(hi, &[&ctx[..], &[0]].concat()),
                cipher.seal_derived(lo, &[&ctx[..], &[1]].concat()),
            )
        }
        Addil { rd, rs, .. } => {
            let hi = w.add(val(rs)?, kv[0]);
            let lo = w.add(val(rs.pair_low())?, kv[1]);
            let ctx = blocks(&[rs, rs.pair_low()]);
            Written::Pair(
                rd,
                cipher.seal_derived(hi, &[&ctx[..], &[0]].concat()),
                cipher.seal_derived(lo, &[&ctx[..], &[1]].concat()),
            )
        }
        Float { op, rd, rs1, rs2, .. } => {
            if w.bits() != 32 {
                return Err(Violation::Width { opcode: instr.opcode() });
            }
            let a = fp::word_to_f32(w.sub(val(rs1)?, kv[1])) as f64;
            let b = fp::word_to_f32(w.sub(val(rs2)?, kv[2])) as f64;
            let r = fp::f32_to_word(float_apply(op, a, b) as f32);
            let v = w.add(r, kv[0]);
            Written::One(rd, cipher.seal_derived(v, &blocks(&[rs1, rs2])))
        }
        Double { op, rd, rs1, rs2, .. } => {
            if w.bits() != 32 {
                return Err(Violation::Width { opcode: instr.opcode() });
            }
            let (ah, al) = half_sub(w, (val(rs1)?, val(rs1.pair_low())?), (kv[2], kv[3]));
            let (bh, bl) = half_sub(w, (val(rs2)?, val(rs2.pair_low())?), (kv[4], kv[5]));
            let r = float_apply(op, fp::pair_to_f64(ah, al), fp::pair_to_f64(bh, bl));
            let (rh, rl) = fp::f64_to_pair(r);
            let (hi, lo) = (w.add(rh, kv[0]), w.add(rl, kv[1]));
            let ctx = blocks(&[rs1, rs1.pair_low(), rs2, rs2.pair_low()]);
            Written::Pair(
                rd,
                cipher.seal_derived(hi, &[&ctx[..], &[0]].concat()),
                cipher.seal_derived(lo, &[&ctx[..], &[1]].concat()),
            )
        }
        _ => panic!("{} is not a computation", instr.opcode()),
    })
}

/// The diddle bit: lowest nonce bit of a branch's first constant.
pub fn diddle(nonce: u64) -> bool {
    nonce & 1 == 1
}

/// Decide a conditional branch.
pub fn branch_taken(
    cipher: &Cipher,
    instr: &Instr,
    get: &dyn Fn(Reg) -> Ciphertext,
) -> Result<bool, Violation> {
    let w = cipher.width();
    let ks = constants(cipher, instr)?;
    let val = |r: Reg| operand(cipher, r, get(r));
    match *instr {
        Instr::Branch { cond, rs1, rs2, .. } => {
            let z = w.signed(w.sub(w.sub(val(rs1)?, val(rs2)?), ks[0].0));
            Ok(cond.holds(z) ^ diddle(ks[0].1))
        }
        Instr::FBranch { cond, rs1, rs2, .. } => {
            if w.bits() != 32 {
                return Err(Violation::Width { opcode: instr.opcode() });
            }
            let a = fp::word_to_f32(w.sub(val(rs1)?, ks[0].0));
            let b = fp::word_to_f32(w.sub(val(rs2)?, ks[1].0));
            let t = match cond {
                FCond::Eq => a == b,
                FCond::Ne => a != b,
                FCond::Lt => a < b,
                FCond::Ge => a >= b,
            };
            Ok(t ^ diddle(ks[0].1))
        }
        _ => panic!("{} is not a conditional branch", instr.opcode()),
    }
}

/// Effective address block of `lw`/`sw`: the sealed sum of base and
/// displacement, padded exactly as `addi` would pad it.
pub fn effective_address(
    cipher: &Cipher,
    instr: &Instr,
    base_block: Ciphertext,
) -> Result<Ciphertext, Violation> {
    let w = cipher.width();
    let ks = constants(cipher, instr)?;
    let base = match *instr {
        Instr::Sw { base, .. } | Instr::Lw { base, .. } => base,
        _ => panic!("{} has no effective address", instr.opcode()),
    };
    let b = operand(cipher, base, base_block)?;
    Ok(cipher.seal_derived(w.add(b, ks[0].0), &[ADDR_CTX, base_block.0, ks[0].1]))
}

/// Address block reached from base block `base` with a displacement of
/// plaintext `k` and nonce `nonce`, as `lw`/`sw` compute it.
pub fn address_block(cipher: &Cipher, base: Ciphertext, k: u64, nonce: u64) -> Ciphertext {
    let w = cipher.width();
    cipher.seal_derived(w.add(cipher.value(base), k), &[ADDR_CTX, base.0, nonce])
}

/// Return-address block written by `jal` at `pc`.
pub fn link_block(cipher: &Cipher, pc: usize) -> Ciphertext {
    cipher.seal_derived(pc as u64 + 1, &[LINK_CTX, pc as u64])
}

/// Plaintext branch test on the difference, exposed for the reference checks.
pub fn plain_test(w: Width, cond: Cond, r1: u64, r2: u64, k: u64) -> bool {
    cond.holds(w.signed(w.sub(w.sub(r1, r2), k)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cipher::{Key, Padding};
    use std::collections::HashMap;

    fn cipher(w: Width) -> Cipher {
        Cipher::standard(&Key::default(), w)
    }

    fn konst(c: &Cipher, op: Opcode, pos: usize, v: i64, nonce: u64) -> Ciphertext {
        c.encrypt(
            c.width().from_signed(v),
            Padding {
                tag: op.const_tag(pos),
                nonce,
            },
        )
        .unwrap()
    }

    fn data(c: &Cipher, v: i64, nonce: u64) -> Ciphertext {
        c.encrypt(c.width().from_signed(v), Padding::data(nonce)).unwrap()
    }

    fn regs(pairs: &[(Reg, Ciphertext)]) -> HashMap<Reg, Ciphertext> {
        pairs.iter().copied().collect()
    }

    #[test]
    fn add_folds_its_constant() {
        let c = cipher(Width::W16);
        let m = regs(&[(Reg::T0, data(&c, 7, 1)), (Reg::T1, data(&c, 5, 2))]);
        let ins = Instr::Add {
            rd: Reg::T0,
            rs1: Reg::T0,
            rs2: Reg::T1,
            k: konst(&c, Opcode::Add, 0, 100, 9),
        };
        let Written::One(rd, out) = compute(&c, &ins, &|r| m[&r]).unwrap() else {
            panic!()
        };
        assert_eq!(rd, Reg::T0);
        assert_eq!(c.value(out), 112);
        assert!(c.tag(out).is_data());
    }

    #[test]
    fn literal_load_reads_nothing() {
        let c = cipher(Width::W16);
        let ins = Instr::Sub {
            rd: Reg::T0,
            rs1: Reg::T0,
            rs2: Reg::T0,
            k: konst(&c, Opcode::Sub, 0, -86921031, 3),
        };
        assert!(reads(&c, &ins).is_empty());
        let Written::One(_, out) = compute(&c, &ins, &|_| panic!("read")).unwrap() else {
            panic!()
        };
        assert_eq!(c.value(out), Width::W16.from_signed(-86921031));
    }

    #[test]
    fn misplaced_constant_is_a_violation() {
        let c = cipher(Width::W16);
        let m = regs(&[(Reg::T0, data(&c, 1, 1))]);
        let ins = Instr::Addi {
            rd: Reg::T0,
            rs: Reg::T0,
            k: konst(&c, Opcode::Add, 0, 1, 1),
        };
        assert!(matches!(
            compute(&c, &ins, &|r| m[&r]),
            Err(Violation::ConstTag { .. })
        ));
    }

    #[test]
    fn tri_form_subtracts_then_adds() {
        let c = cipher(Width::W16);
        let m = regs(&[(Reg::T0, data(&c, 13, 1)), (Reg::T1, data(&c, 9, 2))]);
        // (13 - 3) * (9 - 4) + 2
        let ins = Instr::Tri {
            op: TriOp::Mul,
            rd: Reg::t(2),
            rs1: Reg::T0,
            rs2: Reg::T1,
            k: [
                konst(&c, Opcode::Mul, 0, 2, 1),
                konst(&c, Opcode::Mul, 1, 3, 1),
                konst(&c, Opcode::Mul, 2, 4, 1),
            ],
        };
        let Written::One(_, out) = compute(&c, &ins, &|r| m[&r]).unwrap() else {
            panic!()
        };
        assert_eq!(c.value(out), 52);
    }

    #[test]
    fn diddle_flips_branch_sense() {
        let c = cipher(Width::W8);
        let m = regs(&[(Reg::T0, data(&c, 5, 1)), (Reg::T1, data(&c, 3, 2))]);
        let mk = |cond: Cond, op: Opcode, nonce: u64| Instr::Branch {
            cond,
            rs1: Reg::T0,
            rs2: Reg::T1,
            disp: 0,
            k: konst(&c, op, 0, 2, nonce),
        };
        let get = |r: Reg| m[&r];
        assert!(branch_taken(&c, &mk(Cond::Eq, Opcode::Beq, 0), &get).unwrap());
        assert!(!branch_taken(&c, &mk(Cond::Ne, Opcode::Bne, 0), &get).unwrap());
        assert!(branch_taken(&c, &mk(Cond::Ne, Opcode::Bne, 1), &get).unwrap());
        assert!(!branch_taken(&c, &mk(Cond::Eq, Opcode::Beq, 1), &get).unwrap());
    }

    #[test]
    fn addi_and_load_address_coincide() {
        let c = cipher(Width::W16);
        let base = data(&c, 1000, 77);
        let nonce = 4242;
        let lw = Instr::Lw {
            rd: Reg::T0,
            base: Reg::SP,
            k: konst(&c, Opcode::Lw, 0, -12, nonce),
        };
        let addi = Instr::Addi {
            rd: Reg::K1,
            rs: Reg::SP,
            k: konst(&c, Opcode::Addi, 0, -12, nonce),
        };
        let ea = effective_address(&c, &lw, base).unwrap();
        let Written::One(_, rel) = compute(&c, &addi, &|_| base).unwrap() else {
            panic!()
        };
        assert_eq!(ea, rel);
        assert_eq!(c.value(ea), 988);
    }

    #[test]
    fn long_add_carries_between_halves() {
        let c = cipher(Width::W8);
        let m = regs(&[
            (Reg::T0, data(&c, 0, 1)),
            (Reg::T0.pair_low(), data(&c, 0xff, 2)),
            (Reg::t(2), data(&c, 0, 3)),
            (Reg::t(2).pair_low(), data(&c, 1, 4)),
        ]);
        let mut k = [Ciphertext(0); 6];
        for (i, slot) in k.iter_mut().enumerate() {
            *slot = konst(&c, Opcode::Addl, i, 0, 5);
        }
        let ins = Instr::Long {
            op: LongOp::Add,
            rd: Reg::T0,
            rs1: Reg::T0,
            rs2: Reg::t(2),
            k,
        };
        let Written::Pair(_, hi, lo) = compute(&c, &ins, &|r| m[&r]).unwrap() else {
            panic!()
        };
        assert_eq!((c.value(hi), c.value(lo)), (1, 0));
    }

    #[test]
    fn addil_halves_do_not_carry() {
        let c = cipher(Width::W16);
        let m = regs(&[
            (Reg::T0, data(&c, 1, 1)),
            (Reg::T0.pair_low(), data(&c, 0xffff, 2)),
        ]);
        let ins = Instr::Addil {
            rd: Reg::T0,
            rs: Reg::T0,
            k: [konst(&c, Opcode::Addil, 0, 0, 3), konst(&c, Opcode::Addil, 1, 1, 3)],
        };
        let Written::Pair(_, hi, lo) = compute(&c, &ins, &|r| m[&r]).unwrap() else {
            panic!()
        };
        assert_eq!((c.value(hi), c.value(lo)), (1, 0));
    }

    #[test]
    fn long_literal_reads_nothing() {
        let c = cipher(Width::W16);
        let ks = [5, 6, 9, 9, 9, 9];
        let k = std::array::from_fn(|i| konst(&c, Opcode::Subl, i, ks[i], 1));
        let ins = Instr::Long {
            op: LongOp::Sub,
            rd: Reg::T0,
            rs1: Reg::T0,
            rs2: Reg::T0,
            k,
        };
        assert!(reads(&c, &ins).is_empty());
        let Written::Pair(_, hi, lo) = compute(&c, &ins, &|_| panic!("read")).unwrap() else {
            panic!()
        };
        assert_eq!((c.value(hi), c.value(lo)), (5, 6));
    }

    #[test]
    fn mulf_matches_host_multiply() {
        let c = cipher(Width::W32);
        let m = regs(&[
            (Reg::T0, data(&c, fp::f32_to_word(2.0) as i64, 1)),
            (Reg::T1, data(&c, fp::f32_to_word(3.0) as i64, 2)),
        ]);
        let k = [0, 1, 2].map(|i| konst(&c, Opcode::Mulf, i, 0, 3));
        let ins = Instr::Float {
            op: FloatOp::Mul,
            rd: Reg::T0,
            rs1: Reg::T0,
            rs2: Reg::T1,
            k,
        };
        let Written::One(_, out) = compute(&c, &ins, &|r| m[&r]).unwrap() else {
            panic!()
        };
        assert_eq!(c.value(out), fp::f32_to_word(6.0));
    }

    #[test]
    fn order_branches_split_evenly_at_w8() {
        // Diddled or not, blt/bge jump on exactly half of all operand pairs.
        let w = Width::W8;
        for cond in [Cond::Lt, Cond::Ge] {
            for k in [0u64, 3, 200] {
                let n = (0..256u64)
                    .flat_map(|a| (0..256u64).map(move |b| (a, b)))
                    .filter(|&(a, b)| plain_test(w, cond, a, b, k))
                    .count();
                assert_eq!(n, 256 * 128);
            }
        }
    }

    #[test]
    fn every_offset_is_reachable_at_w8() {
        // For any target delta d there is a constant shifting add's result by d.
        let c = cipher(Width::W8);
        let m = regs(&[(Reg::T0, data(&c, 40, 1)), (Reg::T1, data(&c, 2, 2))]);
        for d in 0..256i64 {
            let ins = Instr::Add {
                rd: Reg::T0,
                rs1: Reg::T0,
                rs2: Reg::T1,
                k: konst(&c, Opcode::Add, 0, d, 1),
            };
            let Written::One(_, out) = compute(&c, &ins, &|r| m[&r]).unwrap() else {
                panic!()
            };
            assert_eq!(c.value(out), (42 + d as u64) % 256);
        }
    }

    #[test]
    fn float_ops_need_wide_words() {
        let c = cipher(Width::W32);
        let m = regs(&[
            (Reg::T0, data(&c, fp::f32_to_word(1.5) as i64, 1)),
            (Reg::T1, data(&c, fp::f32_to_word(2.25) as i64, 2)),
        ]);
        let k = [0, 1, 2].map(|i| konst(&c, Opcode::Addf, i, 0, 3));
        let ins = Instr::Float {
            op: FloatOp::Add,
            rd: Reg::T0,
            rs1: Reg::T0,
            rs2: Reg::T1,
            k,
        };
        let Written::One(_, out) = compute(&c, &ins, &|r| m[&r]).unwrap() else {
            panic!()
        };
        assert_eq!(fp::word_to_f32(c.value(out)), 3.75);
        let c8 = cipher(Width::W8);
        let k8 = [0, 1, 2].map(|i| konst(&c8, Opcode::Addf, i, 0, 3));
        let ins8 = Instr::Float {
            op: FloatOp::Add,
            rd: Reg::T0,
            rs1: Reg::T0,
            rs2: Reg::T1,
            k: k8,
        };
        let z = data(&c8, 0, 0);
        assert!(matches!(
            compute(&c8, &ins8, &|_| z),
            Err(Violation::Width { .. })
        ));
    }
}
