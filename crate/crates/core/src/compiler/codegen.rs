//! Code generation. Every value lives under a planned offset ("delta"): a
//! register or memory word holding `x` really holds `x + delta`. Offsets are
//! drawn at random for each write, and the constants folded into each
//! instruction convert between them. At every join all incoming paths agree
//! on each word's offset and alias, so control structure never depends on
//! the draw.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ast::{BinOp, CmpOp};
use super::hir::{
    Base, Cand, GInit, HCond, HExpr, HFunc, HProgram, HStmt, LoopKind, Place, Sel, VTy, Word,
    LINK_WORDS, MAX_DEPTH,
};
use super::interp::{signed_value, zer_nominal};
use super::scheme::{
    DeltaScheme, GlobalVar, GlobalWordSpec, ParamSpec, PcInfo, Role, Snapshot,
};
use super::CompileError;
use crate::cipher::{Cipher, Ciphertext, Padding, Width};
use crate::isa::{Cond, Instr, LongOp, Opcode, Program, Reg, Spr, TriOp};

#[derive(Debug, Clone)]
pub struct Config {
    pub seed: u64,
    /// Return values come back with offset zero.
    pub zero_v0_delta: bool,
    /// Draw every offset as zero. Only useful as a negative control.
    pub zero_deltas: bool,
    /// Record per-word offsets at every join in the scheme.
    pub snapshots: bool,
}

impl Config {
    pub fn new(seed: u64) -> Config {
        Config {
            seed,
            zero_v0_delta: false,
            zero_deltas: false,
            snapshots: true,
        }
    }
}

/// Offset and alias of one word. Two states are the same iff their versions
/// are; offsets are never compared.
#[derive(Debug, Clone, Copy)]
struct WState {
    ver: u32,
    delta: u64,
    nonce: u64,
    class: u32,
}

type Env = Vec<WState>;

fn same(a: &Env, b: &Env) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.ver == y.ver)
}

enum Item {
    I(Instr),
    Br { cond: Cond, rs1: Reg, rs2: Reg, k: Ciphertext, label: usize },
    B(usize),
    Jal(usize),
}

/// Offsets fixed per function: its stack pointer, parameters and result.
#[derive(Clone)]
struct Plan {
    sp: u64,
    sp_class: u32,
    params: Vec<([u64; 2], [u32; 2])>,
    ret: [u64; 2],
    ret_class: [u32; 2],
    start: usize,
}

struct LoopCtx {
    brk: usize,
    brk_env: Env,
    cont: usize,
    cont_env: Env,
}

/// A value in a temporary: offsets of the (hi, lo) words, or just `d[0]`.
#[derive(Clone, Copy)]
struct V {
    long: bool,
    d: [u64; 2],
}

impl V {
    fn int(d: u64) -> V {
        V { long: false, d: [d, 0] }
    }
}

type Res<T> = Result<T, CompileError>;

fn unsupported(msg: impl Into<String>) -> CompileError {
    CompileError::Unsupported {
        line: 0,
        msg: msg.into(),
    }
}

fn internal(msg: impl Into<String>) -> CompileError {
    CompileError::Internal(msg.into())
}

fn branch_opcode(c: Cond) -> Opcode {
    match c {
        Cond::Eq => Opcode::Beq,
        Cond::Ne => Opcode::Bne,
        Cond::Lt => Opcode::Blt,
        Cond::Ge => Opcode::Bge,
        Cond::Gt => Opcode::Bgt,
        Cond::Le => Opcode::Ble,
    }
}

fn cond_of(op: CmpOp) -> Cond {
    match op {
        CmpOp::Eq => Cond::Eq,
        CmpOp::Ne => Cond::Ne,
        CmpOp::Lt => Cond::Lt,
        CmpOp::Le => Cond::Le,
        CmpOp::Gt => Cond::Gt,
        CmpOp::Ge => Cond::Ge,
    }
}

fn tri_op(op: BinOp) -> Option<TriOp> {
    Some(match op {
        BinOp::Mul => TriOp::Mul,
        BinOp::Div => TriOp::Div,
        BinOp::Rem => TriOp::Rem,
        BinOp::Xor => TriOp::Xor,
        BinOp::And => TriOp::And,
        BinOp::Or => TriOp::Or,
        _ => return None,
    })
}

fn tmp(d: usize) -> Res<Reg> {
    if d >= MAX_DEPTH {
        return Err(unsupported("expression nests too deeply"));
    }
    Ok(Reg::T0.offset(2 * d as u8))
}

fn contains_label(ss: &[HStmt]) -> bool {
    ss.iter().any(stmt_has_label)
}

fn stmt_has_label(s: &HStmt) -> bool {
    match s {
        HStmt::Label(_) => true,
        HStmt::If(_, a, b) => contains_label(a) || contains_label(b),
        HStmt::Loop { body, step, .. } => contains_label(body) || contains_label(step),
        HStmt::Block(b) => contains_label(b),
        _ => false,
    }
}

struct Gen<'a> {
    hp: &'a HProgram,
    cipher: &'a Cipher,
    w: Width,
    cfg: &'a Config,
    rng: ChaCha8Rng,
    items: Vec<Item>,
    pcs: Vec<PcInfo>,
    labels: Vec<Option<usize>>,
    label_env: Vec<Option<Env>>,
    label_names: Vec<String>,
    targeted: Vec<bool>,
    next_ver: u32,
    next_class: u32,
    plans: Vec<Plan>,
    zer_delta: u64,
    g: Vec<WState>,
    snapshots: Vec<Snapshot>,
    has_jal: bool,
    // Per function.
    f: usize,
    fs: usize,
    env: Option<Env>,
    live: Vec<(usize, bool)>,
    loops: Vec<LoopCtx>,
    user: Vec<usize>,
}

impl<'a> Gen<'a> {
    fn func(&self) -> &'a HFunc {
        &self.hp.funcs[self.f]
    }

    fn draw(&mut self) -> u64 {
        let v = self.rng.gen::<u64>() & self.w.mask();
        if self.cfg.zero_deltas {
            0
        } else {
            v
        }
    }

    fn nonce(&mut self) -> u64 {
        self.cipher.random_nonce(&mut self.rng)
    }

    fn class(&mut self) -> u32 {
        self.next_class += 1;
        self.next_class
    }

    fn fresh(&mut self) -> WState {
        self.next_ver += 1;
        WState {
            ver: self.next_ver,
            delta: self.draw(),
            nonce: self.nonce(),
            class: self.class(),
        }
    }

    fn fresh_delta(&mut self) -> (u64, u32) {
        (self.draw(), self.class())
    }

    fn enc_n(&self, op: Opcode, pos: usize, v: u64, nonce: u64) -> Ciphertext {
        let pad = Padding {
            tag: op.const_tag(pos),
            nonce,
        };
        self.cipher
            .encrypt(v & self.w.mask(), pad)
            .expect("masked constant fits the layout")
    }

    fn enc(&mut self, op: Opcode, pos: usize, v: u64) -> Ciphertext {
        let n = self.nonce();
        self.enc_n(op, pos, v, n)
    }

    fn emit(&mut self, ins: Instr, role: Role, classes: Vec<u32>) {
        self.items.push(Item::I(ins));
        self.pcs.push(PcInfo { role, classes });
    }

    fn new_label(&mut self, name: &str) -> usize {
        self.labels.push(None);
        self.label_env.push(None);
        self.label_names.push(name.to_string());
        self.targeted.push(false);
        self.labels.len() - 1
    }

    /// Record that control reaches `l` with the current env, and check it
    /// against every other arrival.
    fn arrive(&mut self, l: usize) -> Res<()> {
        let Some(env) = &self.env else { return Ok(()) };
        self.targeted[l] = true;
        match &self.label_env[l] {
            Some(e) if !same(e, env) => Err(internal(format!(
                "offset mismatch at join `{}` in {}",
                self.label_names[l],
                self.func().name
            ))),
            Some(_) => Ok(()),
            None => {
                self.label_env[l] = Some(env.clone());
                Ok(())
            }
        }
    }

    fn place(&mut self, l: usize) -> Res<()> {
        self.arrive(l)?;
        self.labels[l] = Some(self.items.len());
        self.env = self.label_env[l].clone();
        if self.cfg.snapshots {
            if let Some(env) = &self.env {
                let f = self.func();
                let mut deltas = BTreeMap::new();
                for i in f.var_words.clone() {
                    deltas.insert(f.word_names[i].clone(), env[i].delta);
                }
                for (g, name) in self.hp.global_names.iter().enumerate() {
                    deltas.insert(name.clone(), env[self.fs + g].delta);
                }
                self.snapshots.push(Snapshot {
                    function: f.name.clone(),
                    point: self.label_names[l].clone(),
                    pc: self.items.len(),
                    deltas,
                });
            }
        }
        Ok(())
    }

    fn jump(&mut self, l: usize) -> Res<()> {
        self.items.push(Item::B(l));
        self.pcs.push(PcInfo {
            role: Role::Control,
            classes: vec![],
        });
        self.arrive(l)?;
        self.env = None;
        Ok(())
    }

    // Words and addressing.

    fn idx(&self, w: Word) -> usize {
        match w.base {
            Base::Frame => w.off,
            Base::Global => self.fs + w.off,
        }
    }

    fn word_of(&self, i: usize) -> Word {
        if i < self.fs {
            Word { base: Base::Frame, off: i }
        } else {
            Word { base: Base::Global, off: i - self.fs }
        }
    }

    fn base_reg(b: Base) -> Reg {
        match b {
            Base::Frame => Reg::SP,
            Base::Global => Reg::ZER,
        }
    }

    fn base_delta(&self, b: Base) -> u64 {
        match b {
            Base::Frame => self.plans[self.f].sp,
            Base::Global => self.zer_delta,
        }
    }

    /// Nominal address of `w` relative to its base register.
    fn rel(&self, w: Word) -> u64 {
        match w.base {
            Base::Frame => self.w.wrap(w.off as i128 - self.fs as i128),
            Base::Global => self.w.wrap(w.off as i128),
        }
    }

    fn kappa(&self, w: Word) -> u64 {
        self.w.sub(self.rel(w), self.base_delta(w.base))
    }

    fn lw(&mut self, rd: Reg, w: Word, st: WState, role: Role) {
        let k = self.enc_n(Opcode::Lw, 0, self.kappa(w), st.nonce);
        let base = Self::base_reg(w.base);
        self.emit(Instr::Lw { rd, base, k }, role, vec![]);
    }

    fn sw(&mut self, src: Reg, w: Word, st: WState, role: Role) {
        let k = self.enc_n(Opcode::Sw, 0, self.kappa(w), st.nonce);
        let base = Self::base_reg(w.base);
        self.emit(Instr::Sw { base, src, k }, role, vec![]);
    }

    /// Drop the TLB mapping of an alias that will not be used again.
    fn release(&mut self, w: Word, st: WState) {
        let k = self.enc_n(Opcode::Addi, 0, self.kappa(w), st.nonce);
        let rs = Self::base_reg(w.base);
        self.emit(Instr::Addi { rd: Reg::K1, rs, k }, Role::Address, vec![]);
        self.emit(
            Instr::Mtspr {
                spr: Spr::Udtlbeir,
                rs: Reg::K1,
            },
            Role::Address,
            vec![],
        );
    }

    // Arithmetic helpers.

    fn lit(&mut self, rd: Reg, v: i128, d: u64, class: u32) {
        let k = self.enc(Opcode::Sub, 0, self.w.add(self.w.wrap(v), d));
        self.emit(Instr::Sub { rd, rs1: rd, rs2: rd, k }, Role::Data, vec![class]);
    }

    fn lit_long(&mut self, rd: Reg, v: i128, d: [u64; 2], classes: [u32; 2]) {
        let bits = self.w.double_bits();
        let u = (v as u128 & ((1u128 << bits) - 1)) as u64;
        let (hi, lo) = (u >> self.w.bits(), u & self.w.mask());
        let fill = [
            self.rng.gen::<u64>() & self.w.mask(),
            self.rng.gen::<u64>() & self.w.mask(),
        ];
        let vals = [
            self.w.add(hi, d[0]),
            self.w.add(lo, d[1]),
            fill[0],
            fill[1],
            fill[0],
            fill[1],
        ];
        let k = self.enc6(Opcode::Subl, vals);
        self.emit(
            Instr::Long {
                op: LongOp::Sub,
                rd,
                rs1: rd,
                rs2: rd,
                k,
            },
            Role::Data,
            classes.to_vec(),
        );
    }

    fn enc6(&mut self, op: Opcode, v: [u64; 6]) -> [Ciphertext; 6] {
        let mut k = [Ciphertext(0); 6];
        for (i, x) in v.into_iter().enumerate() {
            k[i] = self.enc(op, i, x);
        }
        k
    }

    fn addi(&mut self, rd: Reg, rs: Reg, v: u64, class: u32) {
        let k = self.enc(Opcode::Addi, 0, v);
        self.emit(Instr::Addi { rd, rs, k }, Role::Data, vec![class]);
    }

    fn addil(&mut self, rd: Reg, rs: Reg, v: [u64; 2], classes: [u32; 2]) {
        let k = [self.enc(Opcode::Addil, 0, v[0]), self.enc(Opcode::Addil, 1, v[1])];
        self.emit(Instr::Addil { rd, rs, k }, Role::Data, classes.to_vec());
    }

    /// Move a value in `rs` with offsets `from` to `rd` with offsets `to`.
    fn adjust(&mut self, rd: Reg, rs: Reg, from: V, to: [u64; 2], classes: [u32; 2]) {
        if from.long {
            let k = [self.w.sub(to[0], from.d[0]), self.w.sub(to[1], from.d[1])];
            self.addil(rd, rs, k, classes);
        } else {
            let k = self.w.sub(to[0], from.d[0]);
            self.addi(rd, rs, k, classes[0]);
        }
    }

    fn fresh_v(&mut self, long: bool) -> (V, [u32; 2]) {
        let (a, ca) = self.fresh_delta();
        if long {
            let (b, cb) = self.fresh_delta();
            (V { long, d: [a, b] }, [ca, cb])
        } else {
            (V::int(a), [ca, 0])
        }
    }

    /// Conditional branch to `l` taken iff `a op b` equals `sense`, where the
    /// registers hold `a + da` and `b + db`. Half the time the opposite
    /// mnemonic is emitted with the diddle bit set.
    fn cmp_jump(&mut self, op: Cond, rs1: Reg, rs2: Reg, diff: u64, sense: bool, l: usize) -> Res<()> {
        let eff = if sense { op } else { op.negate() };
        let liar: bool = self.rng.gen();
        let cond = if liar { eff.negate() } else { eff };
        let nonce = (self.nonce() & !1) | liar as u64;
        let k = self.enc_n(branch_opcode(cond), 0, diff, nonce);
        self.items.push(Item::Br {
            cond,
            rs1,
            rs2,
            k,
            label: l,
        });
        self.pcs.push(PcInfo {
            role: Role::Control,
            classes: vec![],
        });
        self.arrive(l)
    }

    // Syncing words between states.

    fn sync_word(&mut self, i: usize, from: WState, to: WState) {
        let w = self.word_of(i);
        self.lw(Reg::K0, w, from, Role::Data);
        let k = self.w.sub(to.delta, from.delta);
        self.addi(Reg::K0, Reg::K0, k, to.class);
        self.sw(Reg::K0, w, to, Role::Data);
        self.release(w, from);
    }

    fn sync_to(&mut self, target: &Env) {
        let Some(env) = self.env.clone() else { return };
        for i in 0..env.len() {
            if env[i].ver != target[i].ver {
                self.sync_word(i, env[i], target[i]);
            }
        }
        self.env = Some(target.clone());
    }

    fn sync_globals(&mut self) {
        let Some(mut target) = self.env.clone() else { return };
        target[self.fs..].copy_from_slice(&self.g);
        self.sync_to(&target);
    }

    /// Every variable word and global with a fresh state.
    fn full_fresh(&mut self, base: &Env) -> Env {
        let mut e = base.clone();
        let f = self.func();
        for i in f.var_words.clone().chain(self.fs..self.fs + self.g.len()) {
            e[i] = self.fresh();
        }
        e
    }

    /// The env to build join states from. Dead code reached through a label
    /// has no env yet; any full set of states does.
    fn base_env(&mut self) -> Env {
        match self.env.clone() {
            Some(e) => e,
            None => {
                let blank = vec![
                    WState {
                        ver: 0,
                        delta: 0,
                        nonce: 0,
                        class: 0
                    };
                    self.fs + self.g.len()
                ];
                self.full_fresh(&blank)
            }
        }
    }

    fn draw_target(&mut self, base: &Env, m: &BTreeSet<usize>) -> Env {
        let mut e = base.clone();
        for &i in m {
            e[i] = self.fresh();
        }
        e
    }

    fn modified(&self, ss: &[HStmt], out: &mut BTreeSet<usize>) {
        for s in ss {
            self.modified_stmt(s, out);
        }
    }

    fn all_globals(&self, out: &mut BTreeSet<usize>) {
        out.extend(self.fs..self.fs + self.g.len());
    }

    fn modified_stmt(&self, s: &HStmt, out: &mut BTreeSet<usize>) {
        match s {
            HStmt::Assign(p, e) => {
                for w in p.words() {
                    out.insert(self.idx(w));
                }
                let sel_call = match &p.sel {
                    Sel::Direct => false,
                    Sel::Index(x) | Sel::Addr(x) => x.has_call(),
                };
                if e.has_call() || sel_call {
                    self.all_globals(out);
                }
            }
            HStmt::Eval(e) => {
                if e.has_call() {
                    self.all_globals(out);
                }
            }
            HStmt::If(_, a, b) => {
                self.modified(a, out);
                self.modified(b, out);
            }
            HStmt::Loop { body, step, .. } => {
                self.modified(body, out);
                self.modified(step, out);
            }
            HStmt::Label(_) => {
                out.extend(self.func().var_words.clone());
                self.all_globals(out);
            }
            HStmt::Block(b) => self.modified(b, out),
            HStmt::Return(_) | HStmt::Break | HStmt::Continue | HStmt::Goto(_) => {}
        }
    }

    fn cur(&self) -> Res<&Env> {
        self.env.as_ref().ok_or_else(|| internal("code emitted on a dead path"))
    }

    fn state(&self, w: Word) -> Res<WState> {
        Ok(self.cur()?[self.idx(w)])
    }

    // Expressions.

    fn expr(&mut self, e: &HExpr, d: usize) -> Res<V> {
        let r = tmp(d)?;
        match e {
            HExpr::Lit(n) => {
                let (dl, c) = self.fresh_delta();
                self.lit(r, *n, dl, c);
                Ok(V::int(dl))
            }
            HExpr::LitL(n) => {
                let (v, c) = self.fresh_v(true);
                self.lit_long(r, *n, v.d, c);
                Ok(v)
            }
            HExpr::Load(p) => self.read_place(p, d),
            HExpr::AddrOf(w) => {
                let (dl, c) = self.fresh_delta();
                let k = self.w.sub(self.w.add(self.rel(*w), dl), self.base_delta(w.base));
                self.addi(r, Self::base_reg(w.base), k, c);
                Ok(V::int(dl))
            }
            HExpr::Bin(op, a, b) => {
                let va = self.expr(a, d)?;
                self.live.push((d, false));
                let vb = self.expr(b, d + 1)?;
                self.live.pop();
                let r2 = tmp(d + 1)?;
                let (dr, c) = self.fresh_delta();
                let w = self.w;
                let ins = match op {
                    BinOp::Add => {
                        let k = w.sub(w.sub(dr, va.d[0]), vb.d[0]);
                        let k = self.enc(Opcode::Add, 0, k);
                        Instr::Add { rd: r, rs1: r, rs2: r2, k }
                    }
                    BinOp::Sub => {
                        let k = w.add(w.sub(dr, va.d[0]), vb.d[0]);
                        let k = self.enc(Opcode::Sub, 0, k);
                        Instr::Sub { rd: r, rs1: r, rs2: r2, k }
                    }
                    _ => {
                        let t = tri_op(*op).ok_or_else(|| unsupported(format!("operator {op:?}")))?;
                        let opc = match t {
                            TriOp::Mul => Opcode::Mul,
                            TriOp::Div => Opcode::Div,
                            TriOp::Rem => Opcode::Rem,
                            TriOp::Xor => Opcode::Xor,
                            TriOp::And => Opcode::And,
                            TriOp::Or => Opcode::Or,
                        };
                        let k = [
                            self.enc(opc, 0, dr),
                            self.enc(opc, 1, va.d[0]),
                            self.enc(opc, 2, vb.d[0]),
                        ];
                        Instr::Tri { op: t, rd: r, rs1: r, rs2: r2, k }
                    }
                };
                self.emit(ins, Role::Data, vec![c]);
                Ok(V::int(dr))
            }
            HExpr::BinL(op, a, b) => {
                let va = self.expr(a, d)?;
                self.live.push((d, true));
                let vb = self.expr(b, d + 1)?;
                self.live.pop();
                let (lop, opc) = match op {
                    BinOp::Add => (LongOp::Add, Opcode::Addl),
                    BinOp::Sub => (LongOp::Sub, Opcode::Subl),
                    BinOp::Mul => (LongOp::Mul, Opcode::Mull),
                    BinOp::Div => (LongOp::Div, Opcode::Divl),
                    _ => return Err(unsupported(format!("long operator {op:?}"))),
                };
                let (v, c) = self.fresh_v(true);
                let k = self.enc6(opc, [v.d[0], v.d[1], va.d[0], va.d[1], vb.d[0], vb.d[1]]);
                let ins = Instr::Long {
                    op: lop,
                    rd: r,
                    rs1: r,
                    rs2: tmp(d + 1)?,
                    k,
                };
                self.emit(ins, Role::Data, c.to_vec());
                Ok(v)
            }
            HExpr::Bool(c) => {
                let (dr, cl) = self.fresh_delta();
                let f = self.new_label("false");
                let end = self.new_label("bool");
                self.cond_jump(c, false, f, d)?;
                self.lit(r, 1, dr, cl);
                self.jump(end)?;
                self.place(f)?;
                self.lit(r, 0, dr, cl);
                self.place(end)?;
                Ok(V::int(dr))
            }
            HExpr::Ternary(c, a, b) => {
                let (v, cl) = self.fresh_v(e.is_long());
                let f = self.new_label("else");
                let end = self.new_label("ternary");
                self.cond_jump(c, false, f, d)?;
                let va = self.expr(a, d)?;
                self.adjust(r, r, va, v.d, cl);
                self.jump(end)?;
                self.place(f)?;
                let vb = self.expr(b, d)?;
                self.adjust(r, r, vb, v.d, cl);
                self.place(end)?;
                Ok(v)
            }
            HExpr::Call { func, args, long } => self.call(*func, args, *long, d),
            HExpr::Low(a) => {
                let va = self.expr(a, d)?;
                let (dr, c) = self.fresh_delta();
                self.addi(r, r.pair_low(), self.w.sub(dr, va.d[1]), c);
                Ok(V::int(dr))
            }
            HExpr::Widen(a) => {
                let va = self.expr(a, d)?;
                let (v, c) = self.fresh_v(true);
                self.addi(r.pair_low(), r, self.w.sub(v.d[1], va.d[0]), c[1]);
                let (dat, cat) = self.fresh_delta();
                self.lit(Reg::AT, 0, dat, cat);
                let neg = self.new_label("negative");
                let end = self.new_label("widen");
                self.cmp_jump(Cond::Lt, r, Reg::AT, self.w.sub(va.d[0], dat), true, neg)?;
                self.lit(r, 0, v.d[0], c[0]);
                self.jump(end)?;
                self.place(neg)?;
                self.lit(r, -1, v.d[0], c[0]);
                self.place(end)?;
                Ok(v)
            }
        }
    }

    fn call(&mut self, func: usize, args: &[HExpr], long: bool, d: usize) -> Res<V> {
        let outer = self.live.clone();
        let mut vs = Vec::new();
        for (i, a) in args.iter().enumerate() {
            vs.push(self.expr(a, d + i)?);
            self.live.push((d + i, a.is_long()));
        }
        self.live.truncate(outer.len());
        let hp = self.hp;
        let callee = &hp.funcs[func];
        let plan = self.plans[func].clone();
        for (i, p) in callee.params.iter().enumerate() {
            let dst = Reg::A0.offset(p.slot as u8);
            let (pd, pc) = plan.params[i];
            self.adjust(dst, tmp(d + i)?, vs[i], pd, pc);
        }
        self.sync_globals();
        let mut saves = Vec::new();
        for &(dep, lg) in &outer {
            for half in 0..=lg as usize {
                let word = Word {
                    base: Base::Frame,
                    off: LINK_WORDS + 2 * dep + half,
                };
                let st = WState {
                    ver: 0,
                    delta: 0,
                    nonce: self.nonce(),
                    class: 0,
                };
                let reg = tmp(dep)?.offset(half as u8);
                self.sw(reg, word, st, Role::Data);
                saves.push((reg, word, st));
            }
        }
        self.emit(Instr::Mov { rd: Reg::K0, rs: Reg::SP }, Role::Data, vec![]);
        let k = self.w.wrap(-(self.fs as i128));
        let k = self.w.sub(self.w.add(k, plan.sp), self.plans[self.f].sp);
        self.addi(Reg::SP, Reg::SP, k, plan.sp_class);
        let n = self.nonce();
        let ksp = self.w.neg(plan.sp);
        let k = self.enc_n(Opcode::Sw, 0, ksp, n);
        self.emit(Instr::Sw { base: Reg::SP, src: Reg::K0, k }, Role::Data, vec![]);
        self.items.push(Item::Jal(func));
        self.pcs.push(PcInfo {
            role: Role::Linkage,
            classes: vec![],
        });
        self.has_jal = true;
        let k = self.enc_n(Opcode::Lw, 0, ksp, n);
        self.emit(Instr::Lw { rd: Reg::K0, base: Reg::SP, k }, Role::Data, vec![]);
        let k = self.enc_n(Opcode::Addi, 0, ksp, n);
        self.emit(Instr::Addi { rd: Reg::K1, rs: Reg::SP, k }, Role::Address, vec![]);
        self.emit(
            Instr::Mtspr {
                spr: Spr::Udtlbeir,
                rs: Reg::K1,
            },
            Role::Address,
            vec![],
        );
        self.emit(Instr::Mov { rd: Reg::SP, rs: Reg::K0 }, Role::Data, vec![]);
        for (reg, word, st) in saves {
            self.lw(reg, word, st, Role::Data);
            self.release(word, st);
        }
        if let Some(env) = &mut self.env {
            env[self.fs..].copy_from_slice(&self.g);
        }
        if matches!(callee.ret, VTy::Void) {
            return Ok(V::int(0));
        }
        let (v, c) = self.fresh_v(long);
        let from = V { long, d: plan.ret };
        self.adjust(tmp(d)?, Reg::V0, from, v.d, c);
        Ok(v)
    }

    /// Load a scalar place into temp `d`.
    fn read_place(&mut self, p: &Place, d: usize) -> Res<V> {
        let r = tmp(d)?;
        let sel = match &p.sel {
            Sel::Direct => {
                let w = p.cands[0].word;
                let st = self.state(w)?;
                self.lw(r, w, st, Role::Data);
                let mut from = V::int(st.delta);
                if p.long {
                    let st2 = self.state(w.next())?;
                    self.lw(r.pair_low(), w.next(), st2, Role::Data);
                    from = V {
                        long: true,
                        d: [st.delta, st2.delta],
                    };
                }
                let (v, c) = self.fresh_v(p.long);
                self.adjust(r, r, from, v.d, c);
                return Ok(v);
            }
            Sel::Index(e) | Sel::Addr(e) => e,
        };
        let vi = self.expr(sel, d + 1)?;
        let ri = tmp(d + 1)?;
        let (v, c) = self.fresh_v(p.long);
        let end = self.new_label("read");
        for cand in &p.cands {
            let next = self.new_label("entry");
            let dat = self.chain_key(&p.sel, cand)?;
            self.cmp_jump(Cond::Eq, ri, Reg::AT, self.w.sub(vi.d[0], dat), false, next)?;
            let st = self.state(cand.word)?;
            self.lw(r, cand.word, st, Role::Data);
            let mut from = V::int(st.delta);
            if p.long {
                let st2 = self.state(cand.word.next())?;
                self.lw(r.pair_low(), cand.word.next(), st2, Role::Data);
                from = V {
                    long: true,
                    d: [st.delta, st2.delta],
                };
            }
            self.adjust(r, r, from, v.d, c);
            self.jump(end)?;
            self.place(next)?;
        }
        if p.long {
            self.lit_long(r, 0, v.d, c);
        } else {
            self.lit(r, 0, v.d[0], c[0]);
        }
        self.place(end)?;
        Ok(v)
    }

    /// Put a candidate's key in `at` under a fresh offset and return it.
    fn chain_key(&mut self, sel: &Sel, cand: &Cand) -> Res<u64> {
        let (dat, c) = self.fresh_delta();
        match sel {
            Sel::Index(_) => self.lit(Reg::AT, cand.key, dat, c),
            Sel::Addr(_) => {
                let kw = Word {
                    base: cand.word.base,
                    off: cand.key as usize,
                };
                let k = self.w.sub(self.w.add(self.rel(kw), dat), self.base_delta(kw.base));
                self.addi(Reg::AT, Self::base_reg(kw.base), k, c);
            }
            Sel::Direct => return Err(internal("chain over a direct place")),
        }
        Ok(dat)
    }

    // Conditions.

    fn cond_jump(&mut self, c: &HCond, sense: bool, l: usize, d: usize) -> Res<()> {
        match c {
            HCond::Cmp(op, a, b) => {
                let va = self.expr(a, d)?;
                self.live.push((d, false));
                let vb = self.expr(b, d + 1)?;
                self.live.pop();
                let diff = self.w.sub(va.d[0], vb.d[0]);
                self.cmp_jump(cond_of(*op), tmp(d)?, tmp(d + 1)?, diff, sense, l)
            }
            HCond::Truth(e) => {
                let va = self.expr(e, d)?;
                let (dz, cz) = self.fresh_delta();
                self.lit(tmp(d + 1)?, 0, dz, cz);
                let diff = self.w.sub(va.d[0], dz);
                self.cmp_jump(Cond::Ne, tmp(d)?, tmp(d + 1)?, diff, sense, l)
            }
            HCond::Not(c) => self.cond_jump(c, !sense, l, d),
            HCond::And(a, b) => {
                if sense {
                    let skip = self.new_label("and");
                    self.cond_jump(a, false, skip, d)?;
                    self.cond_jump(b, true, l, d)?;
                    self.place(skip)
                } else {
                    self.cond_jump(a, false, l, d)?;
                    self.cond_jump(b, false, l, d)
                }
            }
            HCond::Or(a, b) => {
                if sense {
                    self.cond_jump(a, true, l, d)?;
                    self.cond_jump(b, true, l, d)
                } else {
                    let skip = self.new_label("or");
                    self.cond_jump(a, true, skip, d)?;
                    self.cond_jump(b, false, l, d)?;
                    self.place(skip)
                }
            }
        }
    }

    // Statements.

    fn block(&mut self, ss: &[HStmt]) -> Res<()> {
        for s in ss {
            self.stmt(s)?;
        }
        Ok(())
    }

    fn stmt(&mut self, s: &HStmt) -> Res<()> {
        if self.env.is_none() && !stmt_has_label(s) {
            return Ok(());
        }
        match s {
            HStmt::Assign(p, e) => self.assign(p, e),
            HStmt::Eval(e) => self.expr(e, 0).map(|_| ()),
            HStmt::Block(b) => self.block(b),
            HStmt::If(c, a, b) => {
                let base = self.base_env();
                let mut m = BTreeSet::new();
                self.modified(a, &mut m);
                self.modified(b, &mut m);
                let t = self.draw_target(&base, &m);
                let els = self.new_label("else");
                let end = self.new_label("endif");
                self.label_env[end] = Some(t.clone());
                if self.env.is_some() {
                    self.cond_jump(c, false, els, 0)?;
                }
                let saved = self.env.clone();
                self.block(a)?;
                if self.env.is_some() {
                    self.sync_to(&t);
                    self.jump(end)?;
                }
                self.env = saved;
                self.place(els)?;
                self.block(b)?;
                self.sync_to(&t);
                let reached = self.env.is_some() || self.ends_reached(end);
                self.place(end)?;
                if !reached {
                    self.env = None;
                }
                Ok(())
            }
            HStmt::Loop {
                kind,
                cond,
                body,
                step,
                has_continue,
            } => self.lp(kind, cond.as_ref(), body, step, *has_continue),
            HStmt::Return(e) => self.ret(e.as_ref()),
            HStmt::Break => {
                let ctx = self.loops.last().ok_or_else(|| internal("break outside loop"))?;
                let (l, t) = (ctx.brk, ctx.brk_env.clone());
                self.sync_to(&t);
                self.jump(l)
            }
            HStmt::Continue => {
                let ctx = self.loops.last().ok_or_else(|| internal("continue outside loop"))?;
                let (l, t) = (ctx.cont, ctx.cont_env.clone());
                self.sync_to(&t);
                self.jump(l)
            }
            HStmt::Goto(u) => {
                let l = self.user[*u];
                let t = self.label_env[l].clone().expect("user labels are planned");
                self.sync_to(&t);
                self.jump(l)
            }
            HStmt::Label(u) => {
                let l = self.user[*u];
                let t = self.label_env[l].clone().expect("user labels are planned");
                self.sync_to(&t);
                self.place(l)
            }
        }
    }

    /// Whether a live jump has targeted `l` so far. Prefilled labels always
    /// have an env, so reachability is tracked separately.
    fn ends_reached(&self, l: usize) -> bool {
        self.targeted[l]
    }

    fn lp(
        &mut self,
        kind: &LoopKind,
        cond: Option<&HCond>,
        body: &[HStmt],
        step: &[HStmt],
        has_continue: bool,
    ) -> Res<()> {
        let base = self.base_env();
        let mut m = BTreeSet::new();
        self.modified(body, &mut m);
        self.modified(step, &mut m);
        let h = self.draw_target(&base, &m);
        let head = self.new_label("head");
        let exit = self.new_label("exit");
        self.label_env[head] = Some(h.clone());
        self.sync_to(&h);
        match kind {
            LoopKind::While => {
                self.place(head)?;
                self.label_env[exit] = Some(h.clone());
                if let Some(c) = cond {
                    self.cond_jump(c, false, exit, 0)?;
                }
                let (cont, cont_env) = if step.is_empty() {
                    (head, h.clone())
                } else if has_continue {
                    let c = self.draw_target(&h, &m);
                    let l = self.new_label("continue");
                    self.label_env[l] = Some(c.clone());
                    (l, c)
                } else {
                    (usize::MAX, h.clone())
                };
                self.loops.push(LoopCtx {
                    brk: exit,
                    brk_env: h.clone(),
                    cont,
                    cont_env: cont_env.clone(),
                });
                self.block(body)?;
                self.loops.pop();
                if cont != head && cont != usize::MAX {
                    self.sync_to(&cont_env);
                    let reached = self.env.is_some() || self.ends_reached(cont);
                    self.place(cont)?;
                    if !reached {
                        self.env = None;
                    }
                }
                if self.env.is_some() || contains_label(step) {
                    self.block(step)?;
                }
                self.sync_to(&h);
                if self.env.is_some() {
                    self.jump(head)?;
                }
                self.env = None;
                self.place(exit)?;
            }
            LoopKind::DoWhile => {
                let c = self.draw_target(&base, &m);
                let cont = self.new_label("continue");
                self.label_env[cont] = Some(c.clone());
                self.label_env[exit] = Some(c.clone());
                self.place(head)?;
                self.loops.push(LoopCtx {
                    brk: exit,
                    brk_env: c.clone(),
                    cont,
                    cont_env: c.clone(),
                });
                self.block(body)?;
                self.loops.pop();
                self.sync_to(&c);
                let reached = self.env.is_some() || self.ends_reached(cont);
                self.place(cont)?;
                if reached {
                    if let Some(cd) = cond {
                        self.cond_jump(cd, false, exit, 0)?;
                    }
                    self.sync_to(&h);
                    self.jump(head)?;
                }
                self.env = None;
                self.place(exit)?;
            }
        }
        if !self.ends_reached(exit) && cond.is_none() {
            self.env = None;
        }
        Ok(())
    }

    fn ret(&mut self, e: Option<&HExpr>) -> Res<()> {
        let plan = self.plans[self.f].clone();
        if let Some(e) = e {
            let v = self.expr(e, 0)?;
            self.adjust(Reg::V0, Reg::T0, v, plan.ret, plan.ret_class);
        }
        self.sync_globals();
        let env = self.cur()?.clone();
        for i in self.func().var_words.clone() {
            self.release(self.word_of(i), env[i]);
        }
        let epi = self.plans[self.f].start + 1;
        self.items.push(Item::B(epi));
        self.pcs.push(PcInfo {
            role: Role::Control,
            classes: vec![],
        });
        self.env = None;
        Ok(())
    }

    fn assign(&mut self, p: &Place, e: &HExpr) -> Res<()> {
        let v = self.expr(e, 0)?;
        let r = Reg::T0;
        if let Sel::Direct = p.sel {
            let w = p.cands[0].word;
            let words = if p.long { vec![w, w.next()] } else { vec![w] };
            let old: Vec<WState> = words.iter().map(|&w| self.state(w)).collect::<Res<_>>()?;
            let new: Vec<WState> = words.iter().map(|_| self.fresh()).collect();
            let to = [new[0].delta, new.get(1).map_or(0, |s| s.delta)];
            let cl = [new[0].class, new.get(1).map_or(0, |s| s.class)];
            self.adjust(r, r, v, to, cl);
            for (h, &w) in words.iter().enumerate() {
                self.sw(r.offset(h as u8), w, new[h], Role::Data);
            }
            for (h, &w) in words.iter().enumerate() {
                self.release(w, old[h]);
                let i = self.idx(w);
                self.env.as_mut().expect("live")[i] = new[h];
            }
            return Ok(());
        }
        let sel = match &p.sel {
            Sel::Index(x) | Sel::Addr(x) => x,
            Sel::Direct => unreachable!(),
        };
        self.live.push((0, p.long));
        let vi = self.expr(sel, 1)?;
        self.live.pop();
        let ri = tmp(1)?;
        let cur = self.cur()?.clone();
        let mut m: Vec<usize> = p.words().iter().map(|&w| self.idx(w)).collect();
        m.sort_unstable();
        m.dedup();
        let mut target = cur.clone();
        for &i in &m {
            target[i] = self.fresh();
        }
        let end = self.new_label("write");
        for cand in &p.cands {
            let next = self.new_label("entry");
            let dat = self.chain_key(&p.sel, cand)?;
            self.cmp_jump(Cond::Eq, ri, Reg::AT, self.w.sub(vi.d[0], dat), false, next)?;
            let words = if p.long {
                vec![cand.word, cand.word.next()]
            } else {
                vec![cand.word]
            };
            let ids: Vec<usize> = words.iter().map(|&w| self.idx(w)).collect();
            let to = [target[ids[0]].delta, ids.get(1).map_or(0, |&i| target[i].delta)];
            let cl = [target[ids[0]].class, ids.get(1).map_or(0, |&i| target[i].class)];
            self.adjust(Reg::K0, r, v, to, cl);
            for (h, &w) in words.iter().enumerate() {
                self.sw(Reg::K0.offset(h as u8), w, target[ids[h]], Role::Data);
            }
            for (h, &w) in words.iter().enumerate() {
                self.release(w, cur[ids[h]]);
            }
            for &i in &m {
                if !ids.contains(&i) {
                    self.sync_word(i, cur[i], target[i]);
                }
            }
            self.env = Some(target.clone());
            self.jump(end)?;
            self.env = Some(cur.clone());
            self.place(next)?;
        }
        for &i in &m {
            self.sync_word(i, cur[i], target[i]);
        }
        self.env = Some(target);
        self.place(end)
    }

    fn function(&mut self, f: usize) -> Res<()> {
        self.f = f;
        let hp = self.hp;
        let hf = &hp.funcs[f];
        self.fs = hf.frame_size;
        self.loops.clear();
        self.live.clear();
        self.user.clear();
        let start = self.plans[f].start;
        self.labels[start] = Some(self.items.len());
        let blank = WState {
            ver: 0,
            delta: 0,
            nonce: 0,
            class: 0,
        };
        let mut env = vec![blank; self.fs];
        env.extend_from_slice(&self.g);
        self.env = Some(env.clone());
        let ra_word = Word {
            base: Base::Frame,
            off: 1,
        };
        let ra = WState {
            nonce: self.nonce(),
            ..blank
        };
        if hf.has_calls {
            self.sw(Reg::RA, ra_word, ra, Role::Linkage);
        }
        let plan = self.plans[f].clone();
        let mut params = BTreeSet::new();
        for (i, p) in hf.params.iter().enumerate() {
            let halves = if p.long { 2 } else { 1 };
            for h in 0..halves {
                self.next_ver += 1;
                let st = WState {
                    ver: self.next_ver,
                    delta: plan.params[i].0[h],
                    nonce: self.nonce(),
                    class: plan.params[i].1[h],
                };
                let w = Word {
                    base: Base::Frame,
                    off: p.word + h,
                };
                self.sw(Reg::A0.offset((p.slot + h) as u8), w, st, Role::Data);
                params.insert(w.off);
                self.env.as_mut().expect("live")[w.off] = st;
            }
        }
        for i in hf.var_words.clone() {
            if params.contains(&i) {
                continue;
            }
            let st = self.fresh();
            self.lit(Reg::K0, 0, st.delta, st.class);
            self.sw(Reg::K0, self.word_of(i), st, Role::Data);
            self.env.as_mut().expect("live")[i] = st;
        }
        let base = self.cur()?.clone();
        for name in &hf.labels {
            let l = self.new_label(name);
            let t = self.full_fresh(&base);
            self.label_env[l] = Some(t);
            self.user.push(l);
        }
        self.block(&hf.body)?;
        if self.env.is_some() {
            let dflt = match hf.ret {
                VTy::Void => None,
                VTy::Long => Some(HExpr::LitL(0)),
                _ => Some(HExpr::Lit(0)),
            };
            self.ret(dflt.as_ref())?;
        }
        self.labels[start + 1] = Some(self.items.len());
        if hf.has_calls {
            self.lw(Reg::RA, ra_word, ra, Role::Linkage);
            self.release(ra_word, ra);
        }
        self.emit(Instr::Jr { rs: Reg::RA }, Role::Linkage, vec![]);
        Ok(())
    }

    fn resolve(&self) -> Res<Vec<Instr>> {
        let at = |l: usize| self.labels[l].ok_or_else(|| internal("unplaced label"));
        let mut out = Vec::with_capacity(self.items.len());
        for (pc, it) in self.items.iter().enumerate() {
            out.push(match it {
                Item::I(i) => i.clone(),
                Item::Br { cond, rs1, rs2, k, label } => Instr::Branch {
                    cond: *cond,
                    rs1: *rs1,
                    rs2: *rs2,
                    disp: at(*label)? as i64 - pc as i64 - 1,
                    k: *k,
                },
                Item::B(l) => Instr::B {
                    disp: at(*l)? as i64 - pc as i64 - 1,
                },
                Item::Jal(f) => Instr::Jal {
                    target: at(self.plans[*f].start)?,
                },
            });
        }
        Ok(out)
    }
}

/// A compiled program and the offsets needed to encode its inputs and
/// decode its outputs.
#[derive(Debug, Clone)]
pub struct Compiled {
    pub program: Program,
    pub scheme: DeltaScheme,
}

pub fn generate(hp: &HProgram, cipher: &Cipher, cfg: &Config) -> Res<Compiled> {
    let w = hp.width;
    if cipher.width() != w {
        return Err(internal("cipher width differs from program width"));
    }
    let mut g = Gen {
        hp,
        cipher,
        w,
        cfg,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        items: Vec::new(),
        pcs: Vec::new(),
        labels: Vec::new(),
        label_env: Vec::new(),
        label_names: Vec::new(),
        targeted: Vec::new(),
        next_ver: 0,
        next_class: 0,
        plans: Vec::new(),
        zer_delta: 0,
        g: Vec::new(),
        snapshots: Vec::new(),
        has_jal: false,
        f: 0,
        fs: 0,
        env: None,
        live: Vec::new(),
        loops: Vec::new(),
        user: Vec::new(),
    };
    for hf in &hp.funcs {
        let (sp, sp_class) = g.fresh_delta();
        let mut params = Vec::new();
        for p in &hf.params {
            let (a, ca) = g.fresh_delta();
            let (b, cb) = if p.long { g.fresh_delta() } else { (0, 0) };
            params.push(([a, b], [ca, cb]));
        }
        let (mut r0, c0) = g.fresh_delta();
        let (mut r1, c1) = g.fresh_delta();
        if cfg.zero_v0_delta {
            r0 = 0;
            r1 = 0;
        }
        let start = g.new_label(&hf.name);
        g.new_label("epilogue");
        g.plans.push(Plan {
            sp,
            sp_class,
            params,
            ret: [r0, r1],
            ret_class: [c0, c1],
            start,
        });
    }
    g.zer_delta = g.draw();
    g.g = (0..hp.global_size()).map(|_| g.fresh()).collect();
    for f in 0..hp.funcs.len() {
        g.function(f)?;
    }
    let instrs = g.resolve()?;
    if g.has_jal && instrs.len() as u64 >= w.modulus() {
        return Err(unsupported(format!(
            "program of {} instructions is too long for return addresses at width {}",
            instrs.len(),
            w.bits()
        )));
    }
    let mut program = Program::new(instrs);
    program.entry = g.labels[g.plans[hp.entry].start].expect("placed");
    for (i, hf) in hp.funcs.iter().enumerate() {
        program
            .labels
            .insert(hf.name.clone(), g.labels[g.plans[i].start].expect("placed"));
    }
    program
        .validate()
        .map_err(|e| internal(format!("emitted program is invalid: {e}")))?;

    let entry = &hp.funcs[hp.entry];
    let plan = &g.plans[hp.entry];
    let params = entry
        .params
        .iter()
        .enumerate()
        .map(|(i, p)| ParamSpec {
            name: p.name.clone(),
            long: p.long,
            slot: p.slot,
            deltas: plan.params[i].0[..1 + p.long as usize].to_vec(),
            classes: plan.params[i].1[..1 + p.long as usize].to_vec(),
        })
        .collect();
    let ret_deltas = match entry.ret {
        VTy::Void => vec![],
        VTy::Long => plan.ret.to_vec(),
        _ => vec![plan.ret[0]],
    };
    let globals = (0..hp.global_size())
        .map(|i| {
            let (init, init_addr) = match hp.global_init[i] {
                GInit::Val(v) => (signed_value(w, false, w.wrap(v)) as i64, None),
                GInit::Addr(a) => (0, Some(a)),
            };
            GlobalWordSpec {
                name: hp.global_names[i].clone(),
                delta: g.g[i].delta,
                nonce: g.g[i].nonce,
                class: g.g[i].class,
                init,
                init_addr,
            }
        })
        .collect();
    let scheme = DeltaScheme {
        seed: format!("{:016x}", cfg.seed),
        width: w.bits(),
        fingerprint: program.fingerprint(),
        source_hash: String::new(),
        entry: entry.name.clone(),
        params,
        sp_delta: plan.sp,
        sp_class: plan.sp_class,
        zer_nominal: zer_nominal(w),
        zer_delta: g.zer_delta,
        ret_long: matches!(entry.ret, VTy::Long),
        ret_deltas,
        global_vars: hp
            .globals
            .iter()
            .map(|x| GlobalVar {
                name: x.name.clone(),
                offset: x.off,
                size: x.size,
            })
            .collect(),
        globals,
        pcs: g.pcs,
        snapshots: g.snapshots,
    };
    Ok(Compiled { program, scheme })
}
