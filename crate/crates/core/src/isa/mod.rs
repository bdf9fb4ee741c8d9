//! The FxA instruction set: every arithmetic operation folds encrypted
//! additive constants into its result, branches compare against an encrypted
//! offset, and loads/stores add an encrypted displacement to a base register.

pub mod asm;
pub mod fp;
pub mod semantics;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cipher::{Ciphertext, Tag};

pub use asm::{assemble, disassemble, parse_object, write_object, AsmError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IsaError {
    #[error("unknown register `{0}`")]
    BadRegister(String),
    #[error("register {reg} must be even for a paired operand")]
    OddPair { reg: Reg },
    #[error("branch at {pc} targets {target}, outside 0..{len}")]
    TargetRange { pc: usize, target: i64, len: usize },
}

/// Register index 0..32.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Reg(u8);

const REG_NAMES: [&str; 32] = [
    "zer", "sp", "v0", "v1", "a0", "a1", "a2", "a3", "t0", "t1", "t2", "t3", "t4", "t5", "t6",
    "t7", "t8", "t9", "s0", "s1", "s2", "s3", "s4", "s5", "s6", "s7", "s8", "s9", "k0", "k1",
    "at", "ra",
];

impl Reg {
    pub const ZER: Reg = Reg(0);
    pub const SP: Reg = Reg(1);
    pub const V0: Reg = Reg(2);
    pub const V1: Reg = Reg(3);
    pub const A0: Reg = Reg(4);
    pub const T0: Reg = Reg(8);
    pub const T1: Reg = Reg(9);
    pub const K0: Reg = Reg(28);
    pub const K1: Reg = Reg(29);
    pub const AT: Reg = Reg(30);
    pub const RA: Reg = Reg(31);

    pub fn new(index: u8) -> Option<Reg> {
        (index < 32).then_some(Reg(index))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn name(self) -> &'static str {
        REG_NAMES[self.index()]
    }

    /// Argument register `a{i}`.
    pub fn arg(i: usize) -> Reg {
        assert!(i < 4);
        Reg(4 + i as u8)
    }

    /// Temporary `t{i}`.
    pub fn t(i: usize) -> Reg {
        assert!(i < 10);
        Reg(8 + i as u8)
    }

    /// Saved register `s{i}`.
    pub fn s(i: usize) -> Reg {
        assert!(i < 10);
        Reg(18 + i as u8)
    }

    /// Second register of an even/odd pair.
    pub fn pair_low(self) -> Reg {
        Reg(self.0 | 1)
    }

    pub fn is_even(self) -> bool {
        self.0.is_multiple_of(2)
    }

    pub fn offset(self, by: u8) -> Reg {
        Reg(self.0 + by)
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Reg {
    type Err = IsaError;

    fn from_str(s: &str) -> Result<Reg, IsaError> {
        if let Some(i) = REG_NAMES.iter().position(|n| *n == s) {
            return Ok(Reg(i as u8));
        }
        if let Some(num) = s.strip_prefix('r') {
            if let Ok(i) = num.parse::<u8>() {
                if let Some(r) = Reg::new(i) {
                    return Ok(r);
                }
            }
        }
        Err(IsaError::BadRegister(s.to_string()))
    }
}

/// Mnemonics. Diddle pairs (`beq`/`bne`, `blt`/`bge`, `bgt`/`ble`) are distinct
/// opcodes with distinct constant tags but share a structural class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Opcode {
    Add,
    Addi,
    Sub,
    Mul,
    Div,
    Rem,
    Xor,
    And,
    Or,
    Mov,
    Beq,
    Bne,
    Blt,
    Bge,
    Bgt,
    Ble,
    B,
    Sw,
    Lw,
    Jr,
    Jal,
    J,
    Mtspr,
    Addl,
    Subl,
    Mull,
    Divl,
    Addil,
    Addf,
    Subf,
    Mulf,
    Divf,
    Beqf,
    Bnef,
    Bltf,
    Bgef,
    Addd,
    Subd,
    Muld,
    Divd,
}

pub const ALL_OPCODES: [Opcode; 40] = [
    Opcode::Add,
    Opcode::Addi,
    Opcode::Sub,
    Opcode::Mul,
    Opcode::Div,
    Opcode::Rem,
    Opcode::Xor,
    Opcode::And,
    Opcode::Or,
    Opcode::Mov,
    Opcode::Beq,
    Opcode::Bne,
    Opcode::Blt,
    Opcode::Bge,
    Opcode::Bgt,
    Opcode::Ble,
    Opcode::B,
    Opcode::Sw,
    Opcode::Lw,
    Opcode::Jr,
    Opcode::Jal,
    Opcode::J,
    Opcode::Mtspr,
    Opcode::Addl,
    Opcode::Subl,
    Opcode::Mull,
    Opcode::Divl,
    Opcode::Addil,
    Opcode::Addf,
    Opcode::Subf,
    Opcode::Mulf,
    Opcode::Divf,
    Opcode::Beqf,
    Opcode::Bnef,
    Opcode::Bltf,
    Opcode::Bgef,
    Opcode::Addd,
    Opcode::Subd,
    Opcode::Muld,
    Opcode::Divd,
];

impl Opcode {
    pub fn mnemonic(self) -> &'static str {
        use Opcode::*;
        match self {
            Add => "add",
            Addi => "addi",
            Sub => "sub",
            Mul => "mul",
            Div => "div",
            Rem => "rem",
            Xor => "xor",
            And => "and",
            Or => "or",
            Mov => "mov",
            Beq => "beq",
            Bne => "bne",
            Blt => "blt",
            Bge => "bge",
            Bgt => "bgt",
            Ble => "ble",
            B => "b",
            Sw => "sw",
            Lw => "lw",
            Jr => "jr",
            Jal => "jal",
            J => "j",
            Mtspr => "mtspr",
            Addl => "addl",
            Subl => "subl",
            Mull => "mull",
            Divl => "divl",
            Addil => "addil",
            Addf => "addf",
            Subf => "subf",
            Mulf => "mulf",
            Divf => "divf",
            Beqf => "beqf",
            Bnef => "bnef",
            Bltf => "bltf",
            Bgef => "bgef",
            Addd => "addd",
            Subd => "subd",
            Muld => "muld",
            Divd => "divd",
        }
    }

    pub fn from_mnemonic(s: &str) -> Option<Opcode> {
        ALL_OPCODES.iter().copied().find(|o| o.mnemonic() == s)
    }

    /// Number of encrypted constant blocks carried by the opcode.
    pub fn const_count(self) -> usize {
        use Opcode::*;
        match self {
            Add | Addi | Sub | Beq | Bne | Blt | Bge | Bgt | Ble | Sw | Lw => 1,
            Mul | Div | Rem | Xor | And | Or | Addf | Subf | Mulf | Divf => 3,
            Mov | B | Jr | Jal | J | Mtspr => 0,
            Addl | Subl | Mull | Divl | Addd | Subd | Muld | Divd => 6,
            Addil | Beqf | Bnef | Bltf | Bgef => 2,
        }
    }

    /// Context tag for the constant in `position`. Loads and stores share
    /// one displacement class, so a write and the reads of the same alias
    /// carry the same displacement block.
    pub fn const_tag(self, position: usize) -> Tag {
        assert!(position < self.const_count(), "{self:?} has no constant {position}");
        let op = if self == Opcode::Lw { Opcode::Sw } else { self };
        let base: usize = ALL_OPCODES
            .iter()
            .take_while(|&&o| o != op)
            .map(|o| o.const_count())
            .sum();
        Tag((1 + base + position) as u8)
    }

    /// Structural class: diddle partners map to one representative.
    pub fn class(self) -> Opcode {
        use Opcode::*;
        match self {
            Bne => Beq,
            Bge => Blt,
            Ble => Bgt,
            Bnef => Beqf,
            Bgef => Bltf,
            o => o,
        }
    }

    pub fn is_branch(self) -> bool {
        matches!(
            self,
            Opcode::Beq
                | Opcode::Bne
                | Opcode::Blt
                | Opcode::Bge
                | Opcode::Bgt
                | Opcode::Ble
                | Opcode::Beqf
                | Opcode::Bnef
                | Opcode::Bltf
                | Opcode::Bgef
        )
    }

    /// Arithmetic instructions that write a register (the entropy sources).
    pub fn is_arith(self) -> bool {
        use Opcode::*;
        matches!(
            self,
            Add | Addi
                | Sub
                | Mul
                | Div
                | Rem
                | Xor
                | And
                | Or
                | Addl
                | Subl
                | Mull
                | Divl
                | Addil
                | Addf
                | Subf
                | Mulf
                | Divf
                | Addd
                | Subd
                | Muld
                | Divd
        )
    }

    pub fn is_copy(self) -> bool {
        matches!(self, Opcode::Mov | Opcode::Lw | Opcode::Sw)
    }

    pub fn is_float(self) -> bool {
        use Opcode::*;
        matches!(
            self,
            Addf | Subf | Mulf | Divf | Beqf | Bnef | Bltf | Bgef | Addd | Subd | Muld | Divd
        )
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TriOp {
    Mul,
    Div,
    Rem,
    Xor,
    And,
    Or,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cond {
    Eq,
    Ne,
    Lt,
    Ge,
    Gt,
    Le,
}

impl Cond {
    pub fn negate(self) -> Cond {
        match self {
            Cond::Eq => Cond::Ne,
            Cond::Ne => Cond::Eq,
            Cond::Lt => Cond::Ge,
            Cond::Ge => Cond::Lt,
            Cond::Gt => Cond::Le,
            Cond::Le => Cond::Gt,
        }
    }

    /// Test on the signed difference `z = r1 - r2 - k` (order) or on
    /// `r1 == r2 + k` (equality, where `z == 0`).
    pub fn holds(self, z: i64) -> bool {
        match self {
            Cond::Eq => z == 0,
            Cond::Ne => z != 0,
            Cond::Lt => z < 0,
            Cond::Ge => z >= 0,
            Cond::Gt => z > 0,
            Cond::Le => z <= 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LongOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FloatOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FCond {
    Eq,
    Ne,
    Lt,
    Ge,
}

impl FCond {
    pub fn negate(self) -> FCond {
        match self {
            FCond::Eq => FCond::Ne,
            FCond::Ne => FCond::Eq,
            FCond::Lt => FCond::Ge,
            FCond::Ge => FCond::Lt,
        }
    }
}

/// Special-purpose registers reachable through `mtspr`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Spr {
    /// User data TLB entry invalidate register.
    Udtlbeir,
}

/// One machine instruction. Branch displacements are plaintext: the target is
/// `pc + 1 + disp`. Jump targets are absolute instruction indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Instr {
    Add { rd: Reg, rs1: Reg, rs2: Reg, k: Ciphertext },
    Addi { rd: Reg, rs: Reg, k: Ciphertext },
    Sub { rd: Reg, rs1: Reg, rs2: Reg, k: Ciphertext },
    Tri { op: TriOp, rd: Reg, rs1: Reg, rs2: Reg, k: [Ciphertext; 3] },
    Mov { rd: Reg, rs: Reg },
    Branch { cond: Cond, rs1: Reg, rs2: Reg, disp: i64, k: Ciphertext },
    B { disp: i64 },
    Sw { base: Reg, src: Reg, k: Ciphertext },
    Lw { rd: Reg, base: Reg, k: Ciphertext },
    Jr { rs: Reg },
    Jal { target: usize },
    J { target: usize },
    Mtspr { spr: Spr, rs: Reg },
    Long { op: LongOp, rd: Reg, rs1: Reg, rs2: Reg, k: [Ciphertext; 6] },
    Addil { rd: Reg, rs: Reg, k: [Ciphertext; 2] },
    Float { op: FloatOp, rd: Reg, rs1: Reg, rs2: Reg, k: [Ciphertext; 3] },
    FBranch { cond: FCond, rs1: Reg, rs2: Reg, disp: i64, k: [Ciphertext; 2] },
    Double { op: FloatOp, rd: Reg, rs1: Reg, rs2: Reg, k: [Ciphertext; 6] },
}

/// Everything about an instruction except its encrypted constants and the
/// hidden sense of diddle-paired branches.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Shape {
    pub class: Opcode,
    pub regs: Vec<Reg>,
    pub disp: Option<i64>,
}

impl Instr {
    pub fn opcode(&self) -> Opcode {
        use Instr::*;
        match self {
            Add { .. } => Opcode::Add,
            Addi { .. } => Opcode::Addi,
            Sub { .. } => Opcode::Sub,
            Tri { op, .. } => match op {
                TriOp::Mul => Opcode::Mul,
                TriOp::Div => Opcode::Div,
                TriOp::Rem => Opcode::Rem,
                TriOp::Xor => Opcode::Xor,
                TriOp::And => Opcode::And,
                TriOp::Or => Opcode::Or,
            },
            Mov { .. } => Opcode::Mov,
            Branch { cond, .. } => match cond {
                Cond::Eq => Opcode::Beq,
                Cond::Ne => Opcode::Bne,
                Cond::Lt => Opcode::Blt,
                Cond::Ge => Opcode::Bge,
                Cond::Gt => Opcode::Bgt,
                Cond::Le => Opcode::Ble,
            },
            B { .. } => Opcode::B,
            Sw { .. } => Opcode::Sw,
            Lw { .. } => Opcode::Lw,
            Jr { .. } => Opcode::Jr,
            Jal { .. } => Opcode::Jal,
            J { .. } => Opcode::J,
            Mtspr { .. } => Opcode::Mtspr,
            Long { op, .. } => match op {
                LongOp::Add => Opcode::Addl,
                LongOp::Sub => Opcode::Subl,
                LongOp::Mul => Opcode::Mull,
                LongOp::Div => Opcode::Divl,
            },
            Addil { .. } => Opcode::Addil,
            Float { op, .. } => match op {
                FloatOp::Add => Opcode::Addf,
                FloatOp::Sub => Opcode::Subf,
                FloatOp::Mul => Opcode::Mulf,
                FloatOp::Div => Opcode::Divf,
            },
            FBranch { cond, .. } => match cond {
                FCond::Eq => Opcode::Beqf,
                FCond::Ne => Opcode::Bnef,
                FCond::Lt => Opcode::Bltf,
                FCond::Ge => Opcode::Bgef,
            },
            Double { op, .. } => match op {
                FloatOp::Add => Opcode::Addd,
                FloatOp::Sub => Opcode::Subd,
                FloatOp::Mul => Opcode::Muld,
                FloatOp::Div => Opcode::Divd,
            },
        }
    }

    pub fn consts(&self) -> &[Ciphertext] {
        use Instr::*;
        match self {
            Add { k, .. } | Addi { k, .. } | Sub { k, .. } | Branch { k, .. } | Sw { k, .. }
            | Lw { k, .. } => std::slice::from_ref(k),
            Tri { k, .. } | Float { k, .. } => k,
            Long { k, .. } | Double { k, .. } => k,
            Addil { k, .. } | FBranch { k, .. } => k,
            Mov { .. } | B { .. } | Jr { .. } | Jal { .. } | J { .. } | Mtspr { .. } => &[],
        }
    }

    pub fn consts_mut(&mut self) -> &mut [Ciphertext] {
        use Instr::*;
        match self {
            Add { k, .. } | Addi { k, .. } | Sub { k, .. } | Branch { k, .. } | Sw { k, .. }
            | Lw { k, .. } => std::slice::from_mut(k),
            Tri { k, .. } | Float { k, .. } => k,
            Long { k, .. } | Double { k, .. } => k,
            Addil { k, .. } | FBranch { k, .. } => k,
            Mov { .. } | B { .. } | Jr { .. } | Jal { .. } | J { .. } | Mtspr { .. } => &mut [],
        }
    }

    /// Register fields in assembly order.
    pub fn regs(&self) -> Vec<Reg> {
        use Instr::*;
        match *self {
            Add { rd, rs1, rs2, .. } | Sub { rd, rs1, rs2, .. } | Tri { rd, rs1, rs2, .. } => {
                vec![rd, rs1, rs2]
            }
            Long { rd, rs1, rs2, .. } | Float { rd, rs1, rs2, .. } | Double { rd, rs1, rs2, .. } => {
                vec![rd, rs1, rs2]
            }
            Addi { rd, rs, .. } | Mov { rd, rs } | Addil { rd, rs, .. } => vec![rd, rs],
            Branch { rs1, rs2, .. } | FBranch { rs1, rs2, .. } => vec![rs1, rs2],
            Sw { base, src, .. } => vec![base, src],
            Lw { rd, base, .. } => vec![rd, base],
            Jr { rs } | Mtspr { rs, .. } => vec![rs],
            B { .. } | Jal { .. } | J { .. } => vec![],
        }
    }

    pub fn shape(&self) -> Shape {
        use Instr::*;
        let disp = match *self {
            Branch { disp, .. } | FBranch { disp, .. } | B { disp } => Some(disp),
            Jal { target } | J { target } => Some(target as i64),
            _ => None,
        };
        Shape {
            class: self.opcode().class(),
            regs: self.regs(),
            disp,
        }
    }

    /// Absolute control-flow target, if any.
    pub fn target(&self, pc: usize) -> Option<i64> {
        match *self {
            Instr::Branch { disp, .. } | Instr::FBranch { disp, .. } | Instr::B { disp } => {
                Some(pc as i64 + 1 + disp)
            }
            Instr::Jal { target } | Instr::J { target } => Some(target as i64),
            _ => None,
        }
    }

    /// Register written by the instruction (first of a pair for long forms).
    pub fn dest(&self) -> Option<Reg> {
        use Instr::*;
        match *self {
            Add { rd, .. } | Addi { rd, .. } | Sub { rd, .. } | Tri { rd, .. } | Mov { rd, .. }
            | Lw { rd, .. } | Long { rd, .. } | Addil { rd, .. } | Float { rd, .. }
            | Double { rd, .. } => Some(rd),
            Jal { .. } => Some(Reg::RA),
            _ => None,
        }
    }

    pub fn writes_pair(&self) -> bool {
        matches!(self, Instr::Long { .. } | Instr::Addil { .. } | Instr::Double { .. })
    }

    fn check_pairs(&self) -> Result<(), IsaError> {
        if self.writes_pair() {
            for r in self.regs() {
                if !r.is_even() {
                    return Err(IsaError::OddPair { reg: r });
                }
            }
        }
        Ok(())
    }
}

/// An object program: instruction list, entry index and label table.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Program {
    pub instrs: Vec<Instr>,
    pub entry: usize,
    pub labels: BTreeMap<String, usize>,
}

impl Program {
    pub fn new(instrs: Vec<Instr>) -> Program {
        Program {
            instrs,
            entry: 0,
            labels: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.instrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instrs.is_empty()
    }

    pub fn validate(&self) -> Result<(), IsaError> {
        let len = self.instrs.len();
        for (pc, ins) in self.instrs.iter().enumerate() {
            ins.check_pairs()?;
            if let Some(t) = ins.target(pc) {
                if t < 0 || t as usize >= len {
                    return Err(IsaError::TargetRange { pc, target: t, len });
                }
            }
        }
        Ok(())
    }

    pub fn shapes(&self) -> Vec<Shape> {
        self.instrs.iter().map(Instr::shape).collect()
    }

    /// Hash over structure and constant blocks.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.entry.to_le_bytes());
        for ins in &self.instrs {
            h.update(ins.opcode().mnemonic().as_bytes());
            for r in ins.regs() {
                h.update([r.0]);
            }
            if let Some(d) = ins.shape().disp {
                h.update(d.to_le_bytes());
            }
            for c in ins.consts() {
                h.update(c.0.to_le_bytes());
            }
            h.update([0xff]);
        }
        hex::encode(&h.finalize()[..16])
    }
}

/// Positions where two programs differ in structure (ignoring constants).
pub fn structural_diff(a: &Program, b: &Program) -> Vec<usize> {
    let mut diffs: Vec<usize> = a
        .instrs
        .iter()
        .zip(&b.instrs)
        .enumerate()
        .filter(|(_, (x, y))| x.shape() != y.shape())
        .map(|(i, _)| i)
        .collect();
    if a.instrs.len() != b.instrs.len() {
        diffs.push(a.instrs.len().min(b.instrs.len()));
    }
    if a.entry != b.entry {
        diffs.push(usize::MAX);
    }
    diffs
}

/// Positions where constant blocks differ.
pub fn constant_diff(a: &Program, b: &Program) -> Vec<usize> {
    a.instrs
        .iter()
        .zip(&b.instrs)
        .enumerate()
        .filter(|(_, (x, y))| x.consts() != y.consts())
        .map(|(i, _)| i)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn tags_are_distinct_and_nonzero() {
        let mut seen = HashSet::new();
        for op in ALL_OPCODES {
            if op == Opcode::Lw {
                assert_eq!(op.const_tag(0), Opcode::Sw.const_tag(0));
                continue;
            }
            for pos in 0..op.const_count() {
                let t = op.const_tag(pos);
                assert!(!t.is_data());
                assert!(seen.insert(t), "{op:?}/{pos} reuses a tag");
                assert!(t.0 < 128);
            }
        }
    }

    #[test]
    fn register_names_roundtrip() {
        for i in 0..32u8 {
            let r = Reg::new(i).unwrap();
            assert_eq!(r.name().parse::<Reg>().unwrap(), r);
            assert_eq!(format!("r{i}").parse::<Reg>().unwrap(), r);
        }
        assert!("q7".parse::<Reg>().is_err());
        assert!("r32".parse::<Reg>().is_err());
    }

    #[test]
    fn diddle_partners_share_a_class() {
        assert_eq!(Opcode::Bne.class(), Opcode::Beq.class());
        assert_eq!(Opcode::Bge.class(), Opcode::Blt.class());
        assert_ne!(Opcode::Blt.class(), Opcode::Bgt.class());
        for c in [Cond::Eq, Cond::Lt, Cond::Gt] {
            assert_eq!(c.negate().negate(), c);
        }
    }

    #[test]
    fn validate_rejects_bad_targets_and_odd_pairs() {
        let p = Program::new(vec![Instr::B { disp: 5 }]);
        assert!(matches!(p.validate(), Err(IsaError::TargetRange { .. })));
        let z = Ciphertext(0);
        let p = Program::new(vec![Instr::Addil {
            rd: Reg::T1,
            rs: Reg::T0,
            k: [z, z],
        }]);
        assert!(matches!(p.validate(), Err(IsaError::OddPair { .. })));
    }
}
