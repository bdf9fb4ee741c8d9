//! Text assembly and the object file format.
//!
//! One instruction per line, operands separated by spaces or commas, `;`
//! starts a comment, `name:` defines a label and `.entry target` sets the entry
//! point. A constant is `#value`, `#value|nonce` or a raw block `$hex`. Memory
//! operands are written `#k(base)`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use super::{Cond, FCond, FloatOp, Instr, LongOp, Opcode, Program, Reg, Spr, TriOp};
use crate::cipher::{Cipher, Ciphertext, Padding, Width};

pub const OBJECT_MAGIC: &str = "chaotic-object";
pub const OBJECT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AsmError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: plaintext constant needs a key")]
    NeedsKey { line: usize },
    #[error("bad object header: {0}")]
    Header(String),
    #[error(transparent)]
    Isa(#[from] super::IsaError),
}

fn syntax(line: usize, msg: impl Into<String>) -> AsmError {
    AsmError::Syntax {
        line,
        msg: msg.into(),
    }
}

fn parse_int(s: &str) -> Option<i128> {
    let (neg, body) = match s.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let v = if let Some(h) = body.strip_prefix("0x") {
        i128::from_str_radix(h, 16).ok()?
    } else {
        body.parse::<i128>().ok()?
    };
    Some(if neg { -v } else { v })
}

struct Line<'a> {
    no: usize,
    pc: usize,
    mnemonic: &'a str,
    ops: Vec<&'a str>,
}

struct Ctx<'a> {
    cipher: Option<&'a Cipher>,
    labels: &'a BTreeMap<String, usize>,
}

impl Ctx<'_> {
    fn konst(&self, l: &Line, tok: &str, op: Opcode, pos: usize) -> Result<Ciphertext, AsmError> {
        if let Some(h) = tok.strip_prefix('$') {
            let v = u64::from_str_radix(h, 16).map_err(|_| syntax(l.no, format!("bad block `{tok}`")))?;
            return Ok(Ciphertext(v));
        }
        let body = tok
            .strip_prefix('#')
            .ok_or_else(|| syntax(l.no, format!("expected constant, found `{tok}`")))?;
        let cipher = self.cipher.ok_or(AsmError::NeedsKey { line: l.no })?;
        let (vs, ns) = match body.split_once('|') {
            Some((v, n)) => (v, Some(n)),
            None => (body, None),
        };
        let v = parse_int(vs).ok_or_else(|| syntax(l.no, format!("bad value `{vs}`")))?;
        let nonce = match ns {
            Some(n) => {
                let n = parse_int(n).ok_or_else(|| syntax(l.no, format!("bad nonce `{n}`")))?;
                u64::try_from(n).map_err(|_| syntax(l.no, "negative nonce"))?
            }
            None => cipher.keyed_hash(&[0x0a5e, l.pc as u64, pos as u64]),
        };
        let nonce = nonce & cipher.layout().nonce_mask();
        let value = cipher.width().wrap(v);
        cipher
            .encrypt(
                value,
                Padding {
                    tag: op.const_tag(pos),
                    nonce,
                },
            )
            .map_err(|e| syntax(l.no, e.to_string()))
    }

    fn consts<const N: usize>(
        &self,
        l: &Line,
        from: usize,
        op: Opcode,
    ) -> Result<[Ciphertext; N], AsmError> {
        let mut out = [Ciphertext(0); N];
        for (i, slot) in out.iter_mut().enumerate() {
            *slot = self.konst(l, l.ops[from + i], op, i)?;
        }
        Ok(out)
    }

    fn target(&self, l: &Line, tok: &str) -> Result<i64, AsmError> {
        if let Some(v) = parse_int(tok) {
            return Ok(v as i64);
        }
        self.labels
            .get(tok)
            .map(|&t| t as i64)
            .ok_or_else(|| syntax(l.no, format!("unknown label `{tok}`")))
    }

    fn disp(&self, l: &Line, tok: &str) -> Result<i64, AsmError> {
        if let Some(v) = parse_int(tok) {
            return Ok(v as i64);
        }
        Ok(self.target(l, tok)? - l.pc as i64 - 1)
    }

    fn mem(&self, l: &Line, tok: &str, op: Opcode) -> Result<(Ciphertext, Reg), AsmError> {
        let open = tok
            .find('(')
            .filter(|_| tok.ends_with(')'))
            .ok_or_else(|| syntax(l.no, format!("expected `k(base)`, found `{tok}`")))?;
        let k = self.konst(l, &tok[..open], op, 0)?;
        let base = reg(l, &tok[open + 1..tok.len() - 1])?;
        Ok((k, base))
    }
}

fn reg(l: &Line, tok: &str) -> Result<Reg, AsmError> {
    tok.parse::<Reg>().map_err(|e| syntax(l.no, e.to_string()))
}

fn arity(l: &Line, n: usize) -> Result<(), AsmError> {
    if l.ops.len() != n {
        return Err(syntax(
            l.no,
            format!("`{}` takes {n} operands, found {}", l.mnemonic, l.ops.len()),
        ));
    }
    Ok(())
}

fn instr(ctx: &Ctx, l: &Line) -> Result<Instr, AsmError> {
    let op = Opcode::from_mnemonic(l.mnemonic)
        .ok_or_else(|| syntax(l.no, format!("unknown mnemonic `{}`", l.mnemonic)))?;
    let r = |i: usize| reg(l, l.ops[i]);
    use Opcode as O;
    let three = |l: &Line| arity(l, 3 + op.const_count());
    Ok(match op {
        O::Add | O::Sub => {
            three(l)?;
            let k = ctx.konst(l, l.ops[3], op, 0)?;
            let (rd, rs1, rs2) = (r(0)?, r(1)?, r(2)?);
            if op == O::Add {
                Instr::Add { rd, rs1, rs2, k }
            } else {
                Instr::Sub { rd, rs1, rs2, k }
            }
        }
        O::Addi => {
            arity(l, 3)?;
            Instr::Addi {
                rd: r(0)?,
                rs: r(1)?,
                k: ctx.konst(l, l.ops[2], op, 0)?,
            }
        }
        O::Mul | O::Div | O::Rem | O::Xor | O::And | O::Or => {
            three(l)?;
            let tri = match op {
                O::Mul => TriOp::Mul,
                O::Div => TriOp::Div,
                O::Rem => TriOp::Rem,
                O::Xor => TriOp::Xor,
                O::And => TriOp::And,
                _ => TriOp::Or,
            };
            Instr::Tri {
                op: tri,
                rd: r(0)?,
                rs1: r(1)?,
                rs2: r(2)?,
                k: ctx.consts(l, 3, op)?,
            }
        }
        O::Mov => {
            arity(l, 2)?;
            Instr::Mov { rd: r(0)?, rs: r(1)? }
        }
        O::Beq | O::Bne | O::Blt | O::Bge | O::Bgt | O::Ble => {
            arity(l, 4)?;
            let cond = match op {
                O::Beq => Cond::Eq,
                O::Bne => Cond::Ne,
                O::Blt => Cond::Lt,
                O::Bge => Cond::Ge,
                O::Bgt => Cond::Gt,
                _ => Cond::Le,
            };
            Instr::Branch {
                cond,
                rs1: r(0)?,
                rs2: r(1)?,
                disp: ctx.disp(l, l.ops[2])?,
                k: ctx.konst(l, l.ops[3], op, 0)?,
            }
        }
        O::B => {
            arity(l, 1)?;
            Instr::B {
                disp: ctx.disp(l, l.ops[0])?,
            }
        }
        O::Sw => {
            arity(l, 2)?;
            let (k, base) = ctx.mem(l, l.ops[0], op)?;
            Instr::Sw { base, src: r(1)?, k }
        }
        O::Lw => {
            arity(l, 2)?;
            let (k, base) = ctx.mem(l, l.ops[1], op)?;
            Instr::Lw { rd: r(0)?, base, k }
        }
        O::Jr => {
            arity(l, 1)?;
            Instr::Jr { rs: r(0)? }
        }
        O::Jal | O::J => {
            arity(l, 1)?;
            let t = ctx.target(l, l.ops[0])?;
            let target = usize::try_from(t).map_err(|_| syntax(l.no, "negative jump target"))?;
            if op == O::Jal {
                Instr::Jal { target }
            } else {
                Instr::J { target }
            }
        }
        O::Mtspr => {
            arity(l, 2)?;
            if !l.ops[0].eq_ignore_ascii_case("udtlbeir") {
                return Err(syntax(l.no, format!("unknown special register `{}`", l.ops[0])));
            }
            Instr::Mtspr {
                spr: Spr::Udtlbeir,
                rs: r(1)?,
            }
        }
        O::Addl | O::Subl | O::Mull | O::Divl => {
            three(l)?;
            let lop = match op {
                O::Addl => LongOp::Add,
                O::Subl => LongOp::Sub,
                O::Mull => LongOp::Mul,
                _ => LongOp::Div,
            };
            Instr::Long {
                op: lop,
                rd: r(0)?,
                rs1: r(1)?,
                rs2: r(2)?,
                k: ctx.consts(l, 3, op)?,
            }
        }
        O::Addil => {
            arity(l, 4)?;
            Instr::Addil {
                rd: r(0)?,
                rs: r(1)?,
                k: ctx.consts(l, 2, op)?,
            }
        }
        O::Addf | O::Subf | O::Mulf | O::Divf | O::Addd | O::Subd | O::Muld | O::Divd => {
            three(l)?;
            let fop = match op {
                O::Addf | O::Addd => FloatOp::Add,
                O::Subf | O::Subd => FloatOp::Sub,
                O::Mulf | O::Muld => FloatOp::Mul,
                _ => FloatOp::Div,
            };
            let (rd, rs1, rs2) = (r(0)?, r(1)?, r(2)?);
            if matches!(op, O::Addf | O::Subf | O::Mulf | O::Divf) {
                Instr::Float {
                    op: fop,
                    rd,
                    rs1,
                    rs2,
                    k: ctx.consts(l, 3, op)?,
                }
            } else {
                Instr::Double {
                    op: fop,
                    rd,
                    rs1,
                    rs2,
                    k: ctx.consts(l, 3, op)?,
                }
            }
        }
        O::Beqf | O::Bnef | O::Bltf | O::Bgef => {
            arity(l, 5)?;
            let cond = match op {
                O::Beqf => FCond::Eq,
                O::Bnef => FCond::Ne,
                O::Bltf => FCond::Lt,
                _ => FCond::Ge,
            };
            Instr::FBranch {
                cond,
                rs1: r(0)?,
                rs2: r(1)?,
                disp: ctx.disp(l, l.ops[2])?,
                k: ctx.consts(l, 3, op)?,
            }
        }
    })
}

/// Assemble source text. Plaintext constants are encrypted with `cipher`
/// under their slot tags; raw `$` blocks are taken verbatim.
pub fn assemble(src: &str, cipher: Option<&Cipher>) -> Result<Program, AsmError> {
    let mut labels = BTreeMap::new();
    let mut lines = Vec::new();
    let mut entry_tok: Option<(usize, String)> = None;
    let mut pc = 0;
    for (i, raw) in src.lines().enumerate() {
        let no = i + 1;
        let text = raw.split(';').next().unwrap_or("").trim();
        let mut rest = text;
        while let Some(colon) = rest.find(':') {
            let name = rest[..colon].trim();
            if name.is_empty() || name.contains(char::is_whitespace) {
                break;
            }
            if labels.insert(name.to_string(), pc).is_some() {
                return Err(syntax(no, format!("label `{name}` defined twice")));
            }
            rest = rest[colon + 1..].trim();
        }
        if rest.is_empty() {
            continue;
        }
        if let Some(t) = rest.strip_prefix(".entry") {
            entry_tok = Some((no, t.trim().to_string()));
            continue;
        }
        let mut parts = rest
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty());
        let mnemonic = parts.next().unwrap();
        lines.push(Line {
            no,
            pc,
            mnemonic,
            ops: parts.collect(),
        });
        pc += 1;
    }
    let ctx = Ctx {
        cipher,
        labels: &labels,
    };
    let instrs = lines
        .iter()
        .map(|l| instr(&ctx, l))
        .collect::<Result<Vec<_>, _>>()?;
    let entry = match entry_tok {
        None => 0,
        Some((no, tok)) => {
            let l = Line {
                no,
                pc: 0,
                mnemonic: ".entry",
                ops: vec![],
            };
            usize::try_from(ctx.target(&l, &tok)?).map_err(|_| syntax(no, "negative entry"))?
        }
    };
    let p = Program {
        instrs,
        entry,
        labels,
    };
    p.validate()?;
    Ok(p)
}

fn fmt_const(cipher: Option<&Cipher>, c: Ciphertext) -> String {
    match cipher {
        Some(ci) => {
            let (v, pad) = ci.decrypt(c);
            format!("#{}|{}", ci.width().signed(v), pad.nonce)
        }
        None => format!("${:x}", c.0),
    }
}

fn fmt_instr(cipher: Option<&Cipher>, ins: &Instr) -> String {
    let k = |c: Ciphertext| fmt_const(cipher, c);
    let ks = |cs: &[Ciphertext]| cs.iter().map(|&c| k(c)).collect::<Vec<_>>().join(" ");
    let m = ins.opcode().mnemonic();
    use Instr::*;
    match ins {
        Add { rd, rs1, rs2, k: c } | Sub { rd, rs1, rs2, k: c } => {
            format!("{m} {rd} {rs1} {rs2} {}", k(*c))
        }
        Addi { rd, rs, k: c } => format!("{m} {rd} {rs} {}", k(*c)),
        Tri { rd, rs1, rs2, k: c, .. } | Float { rd, rs1, rs2, k: c, .. } => {
            format!("{m} {rd} {rs1} {rs2} {}", ks(c))
        }
        Long { rd, rs1, rs2, k: c, .. } | Double { rd, rs1, rs2, k: c, .. } => {
            format!("{m} {rd} {rs1} {rs2} {}", ks(c))
        }
        Mov { rd, rs } => format!("{m} {rd} {rs}"),
        Branch { rs1, rs2, disp, k: c, .. } => format!("{m} {rs1} {rs2} {disp} {}", k(*c)),
        FBranch { rs1, rs2, disp, k: c, .. } => format!("{m} {rs1} {rs2} {disp} {}", ks(c)),
        B { disp } => format!("{m} {disp}"),
        Sw { base, src, k: c } => format!("{m} {}({base}) {src}", k(*c)),
        Lw { rd, base, k: c } => format!("{m} {rd} {}({base})", k(*c)),
        Jr { rs } => format!("{m} {rs}"),
        Jal { target } | J { target } => format!("{m} {target}"),
        Mtspr { rs, .. } => format!("{m} UDTLBEIR {rs}"),
        Addil { rd, rs, k: c } => format!("{m} {rd} {rs} {}", ks(c)),
    }
}

/// Render a program. With a cipher, constants print as `#value|nonce`, which
/// reassembles to the identical blocks; without one they print as raw blocks.
pub fn disassemble(p: &Program, cipher: Option<&Cipher>) -> String {
    let mut by_pc: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
    for (name, &pc) in &p.labels {
        by_pc.entry(pc).or_default().push(name);
    }
    let mut out = String::new();
    if p.entry != 0 {
        let _ = writeln!(out, ".entry {}", p.entry);
    }
    for (pc, ins) in p.instrs.iter().enumerate() {
        if let Some(names) = by_pc.get(&pc) {
            for n in names {
                let _ = writeln!(out, "{n}:");
            }
        }
        let _ = writeln!(out, "    {}", fmt_instr(cipher, ins));
    }
    if let Some(names) = by_pc.get(&p.instrs.len()) {
        for n in names {
            let _ = writeln!(out, "{n}:");
        }
    }
    out
}

/// Object file: a header line followed by keyless disassembly.
pub fn write_object(p: &Program, width: Width) -> String {
    format!(
        "{OBJECT_MAGIC} {OBJECT_VERSION} w={} entry={} fingerprint={}\n{}",
        width.bits(),
        p.entry,
        p.fingerprint(),
        disassemble(p, None)
    )
}

pub fn parse_object(text: &str) -> Result<(Width, Program), AsmError> {
    let (header, body) = text.split_once('\n').unwrap_or((text, ""));
    let mut it = header.split_whitespace();
    if it.next() != Some(OBJECT_MAGIC) {
        return Err(AsmError::Header("missing magic".into()));
    }
    if it.next() != Some(&OBJECT_VERSION.to_string()) {
        return Err(AsmError::Header("unsupported version".into()));
    }
    let mut width = None;
    let mut entry = 0;
    let mut fingerprint = None;
    for field in it {
        match field.split_once('=') {
            Some(("w", v)) => {
                let bits = v.parse().map_err(|_| AsmError::Header(field.into()))?;
                width = Some(Width::new(bits).map_err(|e| AsmError::Header(e.to_string()))?);
            }
            Some(("entry", v)) => entry = v.parse().map_err(|_| AsmError::Header(field.into()))?,
            Some(("fingerprint", v)) => fingerprint = Some(v.to_string()),
            _ => return Err(AsmError::Header(format!("unknown field `{field}`"))),
        }
    }
    let width = width.ok_or_else(|| AsmError::Header("missing width".into()))?;
    let mut p = assemble(body, None)?;
    p.entry = entry;
    if let Some(f) = fingerprint {
        if f != p.fingerprint() {
            return Err(AsmError::Header("fingerprint mismatch".into()));
        }
    }
    Ok((width, p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cipher::Key;

    fn cipher() -> Cipher {
        Cipher::standard(&Key::default(), Width::W16)
    }

    const SRC: &str = "
        ; literal, arithmetic, loop
        .entry start
    start:
        sub t0 t0 t0 #-86921031|7
        addi t1 t0 #12
        mul t2 t0 t1 #1 #2 #3
    loop: beq t0 t1 done #0|1
        sw #4(sp) t0
        lw t3 #4(sp)
        b loop
    done:
        addl t0 t2 t4 #1 #2 #3 #4 #5 #6
        mtspr UDTLBEIR k1
        jr ra
    ";

    #[test]
    fn labels_resolve_relative_and_absolute() {
        let c = cipher();
        let p = assemble(SRC, Some(&c)).unwrap();
        assert_eq!(p.len(), 10);
        assert_eq!(p.entry, 0);
        assert_eq!(p.labels["done"], 7);
        match p.instrs[3] {
            Instr::Branch { disp, .. } => assert_eq!(disp, 3),
            ref i => panic!("{i:?}"),
        }
        match p.instrs[6] {
            Instr::B { disp } => assert_eq!(disp, -4),
            ref i => panic!("{i:?}"),
        }
        assert_eq!(c.value(p.instrs[0].consts()[0]), Width::W16.wrap(-86921031));
    }

    #[test]
    fn keyed_roundtrip_is_exact() {
        let c = cipher();
        let p = assemble(SRC, Some(&c)).unwrap();
        let q = assemble(&disassemble(&p, Some(&c)), Some(&c)).unwrap();
        assert_eq!(p.instrs, q.instrs);
    }

    #[test]
    fn object_roundtrip_needs_no_key() {
        let c = cipher();
        let p = assemble(SRC, Some(&c)).unwrap();
        let (w, q) = parse_object(&write_object(&p, Width::W16)).unwrap();
        assert_eq!(w, Width::W16);
        assert_eq!(p.instrs, q.instrs);
        assert_eq!(p.fingerprint(), q.fingerprint());
    }

    #[test]
    fn plaintext_without_key_fails() {
        assert!(matches!(
            assemble("addi t0 t0 #1", None),
            Err(AsmError::NeedsKey { line: 1 })
        ));
    }

    #[test]
    fn syntax_errors_carry_lines() {
        let c = cipher();
        for bad in ["frob t0", "add t0 t1 #1", "beq t0 t1 nowhere #0", "lw t0 #1 sp"] {
            let e = assemble(&format!("\n{bad}"), Some(&c)).unwrap_err();
            assert!(matches!(e, AsmError::Syntax { line: 2, .. }), "{bad}: {e}");
        }
    }

    #[test]
    fn tampered_object_is_rejected() {
        let c = cipher();
        let p = assemble(SRC, Some(&c)).unwrap();
        let obj = write_object(&p, Width::W16).replace("b -4", "b -3");
        assert!(parse_object(&obj).is_err());
    }
}
