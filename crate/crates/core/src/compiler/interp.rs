//! Reference interpreter for the lowered program. It uses the compiler's word
//! layout and nominal addresses, with no encryption and no deltas, so its
//! results are what a decoded run must reproduce.

use std::collections::BTreeMap;

use super::ast::{BinOp, CmpOp};
use super::hir::*;
use super::Outcome;
use crate::cipher::Width;
use crate::isa::semantics::{long_apply, tri_apply};
use crate::isa::{LongOp, TriOp};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum InterpError {
    #[error("reference interpreter ran out of fuel")]
    OutOfFuel,
    #[error("argument count: expected {expected}, got {got}")]
    Arity { expected: usize, got: usize },
}

/// Nominal base address of the global area.
pub fn zer_nominal(w: Width) -> u64 {
    1u64 << (w.bits() - 1)
}

struct Frame {
    sp: u64,
    size: usize,
    mem: Vec<u64>,
}

enum Flow {
    Normal,
    Break,
    Continue,
    Return(u64),
    Goto(usize),
}

struct Interp<'p> {
    p: &'p HProgram,
    w: Width,
    fuel: u64,
    globals: Vec<u64>,
    frames: Vec<Frame>,
}

fn contains_label(s: &HStmt, l: usize) -> bool {
    match s {
        HStmt::Label(x) => *x == l,
        HStmt::Block(b) => b.iter().any(|s| contains_label(s, l)),
        HStmt::If(_, t, e) => t.iter().chain(e).any(|s| contains_label(s, l)),
        HStmt::Loop { body, .. } => body.iter().any(|s| contains_label(s, l)),
        _ => false,
    }
}

impl Interp<'_> {
    fn long_bits(&self) -> u32 {
        self.w.bits() * 2
    }

    fn long_mask(&self) -> u64 {
        let b = self.long_bits();
        if b >= 64 {
            u64::MAX
        } else {
            (1 << b) - 1
        }
    }

    fn tick(&mut self) -> Result<(), InterpError> {
        if self.fuel == 0 {
            return Err(InterpError::OutOfFuel);
        }
        self.fuel -= 1;
        Ok(())
    }

    fn frame(&self) -> &Frame {
        self.frames.last().expect("a frame is active")
    }

    fn nominal(&self, word: Word) -> u64 {
        let w = self.w;
        match word.base {
            Base::Frame => {
                let f = self.frame();
                w.wrap(f.sp as i128 - f.size as i128 + word.off as i128)
            }
            Base::Global => w.wrap(zer_nominal(w) as i128 + word.off as i128),
        }
    }

    fn read_word(&self, word: Word) -> u64 {
        match word.base {
            Base::Frame => self.frame().mem[word.off],
            Base::Global => self.globals[word.off],
        }
    }

    fn write_word(&mut self, word: Word, v: u64) {
        let v = v & self.w.mask();
        match word.base {
            Base::Frame => self.frames.last_mut().expect("frame").mem[word.off] = v,
            Base::Global => self.globals[word.off] = v,
        }
    }

    fn resolve(&mut self, place: &Place) -> Result<Option<Word>, InterpError> {
        let w = self.w;
        Ok(match &place.sel {
            Sel::Direct => Some(place.cands[0].word),
            Sel::Index(e) => {
                let i = self.eval(e)?;
                place
                    .cands
                    .iter()
                    .find(|c| w.wrap(c.key) == i)
                    .map(|c| c.word)
            }
            Sel::Addr(e) => {
                let a = self.eval(e)?;
                place
                    .cands
                    .iter()
                    .find(|c| {
                        self.nominal(Word {
                            base: c.word.base,
                            off: c.key as usize,
                        }) == a
                    })
                    .map(|c| c.word)
            }
        })
    }

    fn load(&mut self, place: &Place) -> Result<u64, InterpError> {
        let Some(word) = self.resolve(place)? else {
            return Ok(0);
        };
        Ok(if place.long {
            self.read_word(word) << self.w.bits() | self.read_word(word.next())
        } else {
            self.read_word(word)
        })
    }

    fn store(&mut self, place: &Place, v: u64) -> Result<(), InterpError> {
        let Some(word) = self.resolve(place)? else {
            return Ok(());
        };
        if place.long {
            self.write_word(word, v >> self.w.bits());
            self.write_word(word.next(), v);
        } else {
            self.write_word(word, v);
        }
        Ok(())
    }

    fn eval(&mut self, e: &HExpr) -> Result<u64, InterpError> {
        self.tick()?;
        let w = self.w;
        Ok(match e {
            HExpr::Lit(n) => w.wrap(*n),
            HExpr::LitL(n) => (n.rem_euclid(1i128 << self.long_bits())) as u64,
            HExpr::Load(p) => self.load(p)?,
            HExpr::AddrOf(word) => self.nominal(*word),
            HExpr::Bin(op, a, b) => {
                let (x, y) = (self.eval(a)?, self.eval(b)?);
                match op {
                    BinOp::Add => w.add(x, y),
                    BinOp::Sub => w.sub(x, y),
                    BinOp::Mul => tri_apply(TriOp::Mul, w, x, y),
                    BinOp::Div => tri_apply(TriOp::Div, w, x, y),
                    BinOp::Rem => tri_apply(TriOp::Rem, w, x, y),
                    BinOp::Xor => tri_apply(TriOp::Xor, w, x, y),
                    BinOp::And => tri_apply(TriOp::And, w, x, y),
                    BinOp::Or => tri_apply(TriOp::Or, w, x, y),
                    BinOp::Shl | BinOp::Shr => unreachable!("shifts are lowered away"),
                }
            }
            HExpr::BinL(op, a, b) => {
                let (x, y) = (self.eval(a)?, self.eval(b)?);
                let op = match op {
                    BinOp::Add => LongOp::Add,
                    BinOp::Sub => LongOp::Sub,
                    BinOp::Mul => LongOp::Mul,
                    BinOp::Div => LongOp::Div,
                    _ => unreachable!("other long operators are rejected"),
                };
                long_apply(op, self.long_bits(), x, y)
            }
            HExpr::Bool(c) => self.cond(c)? as u64,
            HExpr::Ternary(c, a, b) => {
                if self.cond(c)? {
                    self.eval(a)?
                } else {
                    self.eval(b)?
                }
            }
            HExpr::Call { func, args, .. } => {
                let mut vals = Vec::with_capacity(args.len());
                for a in args {
                    vals.push(self.eval(a)?);
                }
                self.call(*func, &vals)?
            }
            HExpr::Low(a) => self.eval(a)? & w.mask(),
            HExpr::Widen(a) => {
                let x = self.eval(a)?;
                let hi = if w.signed(x) < 0 { w.mask() } else { 0 };
                (hi << w.bits() | x) & self.long_mask()
            }
        })
    }

    fn cond(&mut self, c: &HCond) -> Result<bool, InterpError> {
        let w = self.w;
        Ok(match c {
            HCond::Cmp(op, a, b) => {
                let (x, y) = (self.eval(a)?, self.eval(b)?);
                let z = w.signed(w.sub(x, y));
                match op {
                    CmpOp::Eq => z == 0,
                    CmpOp::Ne => z != 0,
                    CmpOp::Lt => z < 0,
                    CmpOp::Le => z <= 0,
                    CmpOp::Gt => z > 0,
                    CmpOp::Ge => z >= 0,
                }
            }
            HCond::Truth(e) => self.eval(e)? != 0,
            HCond::Not(c) => !self.cond(c)?,
            HCond::And(a, b) => self.cond(a)? && self.cond(b)?,
            HCond::Or(a, b) => self.cond(a)? || self.cond(b)?,
        })
    }

    fn exec_list(&mut self, ss: &[HStmt], mut resume: Option<usize>) -> Result<Flow, InterpError> {
        let mut i = match resume {
            Some(l) => ss.iter().position(|s| contains_label(s, l)).expect("label is here"),
            None => 0,
        };
        while i < ss.len() {
            match self.exec(&ss[i], resume.take())? {
                Flow::Normal => i += 1,
                Flow::Goto(l) => match ss.iter().position(|s| contains_label(s, l)) {
                    Some(j) => {
                        i = j;
                        resume = Some(l);
                    }
                    None => return Ok(Flow::Goto(l)),
                },
                f => return Ok(f),
            }
        }
        Ok(Flow::Normal)
    }

    fn exec(&mut self, s: &HStmt, resume: Option<usize>) -> Result<Flow, InterpError> {
        self.tick()?;
        Ok(match s {
            HStmt::Assign(p, e) => {
                let v = self.eval(e)?;
                self.store(p, v)?;
                Flow::Normal
            }
            HStmt::Eval(e) => {
                self.eval(e)?;
                Flow::Normal
            }
            HStmt::If(c, t, e) => match resume {
                Some(l) if t.iter().any(|s| contains_label(s, l)) => self.exec_list(t, resume)?,
                Some(_) => self.exec_list(e, resume)?,
                None => {
                    if self.cond(c)? {
                        self.exec_list(t, None)?
                    } else {
                        self.exec_list(e, None)?
                    }
                }
            },
            HStmt::Loop {
                kind,
                cond,
                body,
                step,
                ..
            } => {
                let mut resume = resume;
                let mut skip_check = resume.is_some() || *kind == LoopKind::DoWhile;
                loop {
                    self.tick()?;
                    if !skip_check {
                        if let Some(c) = cond {
                            if !self.cond(c)? {
                                break;
                            }
                        }
                    }
                    skip_check = false;
                    match self.exec_list(body, resume.take())? {
                        Flow::Break => break,
                        Flow::Normal | Flow::Continue => {}
                        f => return Ok(f),
                    }
                    match self.exec_list(step, None)? {
                        Flow::Normal => {}
                        f => return Ok(f),
                    }
                    if *kind == LoopKind::DoWhile {
                        let c = cond.as_ref().expect("do-while has a condition");
                        if !self.cond(c)? {
                            break;
                        }
                        skip_check = true;
                    }
                }
                Flow::Normal
            }
            HStmt::Return(e) => Flow::Return(match e {
                Some(e) => self.eval(e)?,
                None => 0,
            }),
            HStmt::Break => Flow::Break,
            HStmt::Continue => Flow::Continue,
            HStmt::Goto(l) => Flow::Goto(*l),
            HStmt::Label(_) => Flow::Normal,
            HStmt::Block(b) => self.exec_list(b, resume)?,
        })
    }

    fn call(&mut self, func: usize, args: &[u64]) -> Result<u64, InterpError> {
        let f = &self.p.funcs[func];
        if f.params.len() != args.len() {
            return Err(InterpError::Arity {
                expected: f.params.len(),
                got: args.len(),
            });
        }
        let sp = match self.frames.last() {
            Some(c) => self.w.wrap(c.sp as i128 - c.size as i128),
            None => 0,
        };
        let mut frame = Frame {
            sp,
            size: f.frame_size,
            mem: vec![0; f.frame_size],
        };
        let w = self.w;
        for (p, &v) in f.params.iter().zip(args) {
            if p.long {
                frame.mem[p.word] = (v >> w.bits()) & w.mask();
                frame.mem[p.word + 1] = v & w.mask();
            } else {
                frame.mem[p.word] = v & w.mask();
            }
        }
        self.frames.push(frame);
        let flow = self.exec_list(&f.body, None)?;
        self.frames.pop();
        Ok(match flow {
            Flow::Return(v) => v,
            _ => 0,
        })
    }
}

/// Signed value of a word or long.
pub fn signed_value(w: Width, long: bool, v: u64) -> i128 {
    let bits = if long { w.bits() * 2 } else { w.bits() };
    let m = if bits >= 64 { u64::MAX } else { (1u64 << bits) - 1 };
    let v = v & m;
    if v >> (bits - 1) & 1 == 1 {
        v as i128 - (1i128 << bits)
    } else {
        v as i128
    }
}

/// Initial global words, with named overrides applied word by word.
pub fn initial_globals(
    p: &HProgram,
    overrides: &BTreeMap<String, Vec<i128>>,
) -> Vec<u64> {
    let w = p.width;
    let mut g: Vec<u64> = p
        .global_init
        .iter()
        .map(|i| match *i {
            GInit::Val(v) => w.wrap(v),
            GInit::Addr(off) => w.wrap(zer_nominal(w) as i128 + off as i128),
        })
        .collect();
    for gl in &p.globals {
        if let Some(vals) = overrides.get(&gl.name) {
            for (k, &v) in vals.iter().take(gl.size).enumerate() {
                g[gl.off + k] = w.wrap(v);
            }
        }
    }
    g
}

/// Run the entry function on `args` (one value per parameter; longs whole).
pub fn interpret(
    p: &HProgram,
    args: &[i128],
    overrides: &BTreeMap<String, Vec<i128>>,
    fuel: u64,
) -> Result<Outcome, InterpError> {
    let w = p.width;
    let mut it = Interp {
        p,
        w,
        fuel,
        globals: initial_globals(p, overrides),
        frames: Vec::new(),
    };
    let f = &p.funcs[p.entry];
    let vals: Vec<u64> = args
        .iter()
        .zip(&f.params)
        .map(|(&a, prm)| {
            if prm.long {
                (a.rem_euclid(1i128 << (2 * w.bits()))) as u64
            } else {
                w.wrap(a)
            }
        })
        .collect();
    if vals.len() != f.params.len() {
        return Err(InterpError::Arity {
            expected: f.params.len(),
            got: args.len(),
        });
    }
    let r = it.call(p.entry, &vals)?;
    let ret = match f.ret {
        VTy::Void => None,
        VTy::Long => Some(signed_value(w, true, r)),
        _ => Some(signed_value(w, false, r)),
    };
    let globals = p
        .globals
        .iter()
        .map(|g| {
            let words = it.globals[g.off..g.off + g.size]
                .iter()
                .map(|&v| signed_value(w, false, v) as i64)
                .collect();
            (g.name.clone(), words)
        })
        .collect();
    Ok(Outcome { ret, globals })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compiler::{hir::lower, parse::parse};

    fn run(src: &str, w: Width, args: &[i128]) -> Outcome {
        let h = lower(&parse(src).unwrap(), w).unwrap();
        interpret(&h, args, &BTreeMap::new(), 10_000_000).unwrap()
    }

    #[test]
    fn ackermann_3_1_is_13() {
        let src = "int A(int m,int n) { if (m == 0) return n+1; if (n == 0) return A(m-1, 1); \
                   return A(m-1, A(m, n-1)); }";
        assert_eq!(run(src, Width::W16, &[3, 1]).ret, Some(13));
    }

    #[test]
    fn sieve_10_is_7() {
        let src = include_str!("../../fixtures/sieve.c");
        assert_eq!(run(src, Width::W16, &[10]).ret, Some(7));
        assert_eq!(run(src, Width::W8, &[10]).ret, Some(7));
    }

    #[test]
    fn goto_loop() {
        let src = "int f(int n) { int s = 0; top: if (n == 0) goto done; s += n; n--; goto top; done: return s; }";
        assert_eq!(run(src, Width::W16, &[5]).ret, Some(15));
    }

    #[test]
    fn long_halves_and_division_edges() {
        let src = "long f(void) { long x = 65535; x = x + 1; return x; }";
        assert_eq!(run(src, Width::W16, &[]).ret, Some(65536));
        let src = "int f(int a) { return a / 0 + (a % 0) * 100; }";
        assert_eq!(run(src, Width::W16, &[7]).ret, Some(-1 + 700));
    }

    #[test]
    fn out_of_range_pointer_reads_zero() {
        let src = "int A[2] = {4, 5}; int B[2]; int f(void) { restrict A int *p = &B[0]; return *p + A[1]; }";
        assert_eq!(run(src, Width::W16, &[]).ret, Some(5));
    }

    #[test]
    fn globals_reported() {
        let src = "int g[2]; int f(int x) { g[1] = x * 3; return 0; }";
        let o = run(src, Width::W16, &[-2]);
        assert_eq!(o.globals["g"], vec![0, -6]);
    }
}
