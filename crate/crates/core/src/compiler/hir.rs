//! Name resolution, typing and word layout. Code generation and the reference
//! interpreter both consume this form, so they agree on where every word
//! lives and what a pointer's value is.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use super::ast::{self, BaseType, BinOp, CmpOp, Designator, ExprKind, Init, StmtKind, UnOp};
use super::parse::const_eval;
use super::CompileError;
use crate::cipher::Width;

/// Frame words reserved for a saved stack pointer and the return address.
pub const LINK_WORDS: usize = 2;
/// Deepest temporary register index.
pub const MAX_DEPTH: usize = 10;
/// Words reserved in a calling function for saving temporaries across calls.
pub const HIDDEN_WORDS: usize = 2 * MAX_DEPTH;
/// Argument registers a0..a3.
pub const ARG_SLOTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Base {
    Frame,
    Global,
}

/// One machine word of storage: a frame word counted up from the frame's low
/// end, or a global word counted from the global base.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Word {
    pub base: Base,
    pub off: usize,
}

impl Word {
    pub fn next(self) -> Word {
        Word {
            base: self.base,
            off: self.off + 1,
        }
    }
}

/// Object types, as laid out in memory.
#[derive(Debug, Clone, PartialEq)]
pub enum Obj {
    Int,
    Long,
    Ptr(Arc<Target>),
    Array(Box<Obj>, usize),
    Agg(usize),
}

/// What a pointer may point at: its declared restrict range.
#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    pub elem: Obj,
    pub stride: usize,
    pub range: Range,
}

/// `count` consecutive elements of `stride` words starting at `start`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Range {
    pub start: Word,
    pub count: usize,
}

/// Value types of expressions. Narrow integers are promoted to `Int`.
#[derive(Debug, Clone, PartialEq)]
pub enum VTy {
    Int,
    Long,
    Ptr(Arc<Target>),
    Void,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggLayout {
    pub is_union: bool,
    pub fields: Vec<(String, usize, Obj)>,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum HExpr {
    Lit(i128),
    LitL(i128),
    Load(Box<Place>),
    AddrOf(Word),
    Bin(BinOp, Box<HExpr>, Box<HExpr>),
    BinL(BinOp, Box<HExpr>, Box<HExpr>),
    Bool(Box<HCond>),
    Ternary(Box<HCond>, Box<HExpr>, Box<HExpr>),
    Call { func: usize, args: Vec<HExpr>, long: bool },
    /// Low half of a long.
    Low(Box<HExpr>),
    /// Sign-extend an int.
    Widen(Box<HExpr>),
}

impl HExpr {
    pub fn is_long(&self) -> bool {
        match self {
            HExpr::LitL(_) | HExpr::BinL(..) | HExpr::Widen(_) => true,
            HExpr::Load(p) => p.long,
            HExpr::Ternary(_, a, _) => a.is_long(),
            HExpr::Call { long, .. } => *long,
            _ => false,
        }
    }

    pub fn has_call(&self) -> bool {
        match self {
            HExpr::Call { .. } => true,
            HExpr::Load(p) => match &p.sel {
                Sel::Direct => false,
                Sel::Index(e) | Sel::Addr(e) => e.has_call(),
            },
            HExpr::Bin(_, a, b) | HExpr::BinL(_, a, b) => a.has_call() || b.has_call(),
            HExpr::Low(a) | HExpr::Widen(a) => a.has_call(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum HCond {
    Cmp(CmpOp, HExpr, HExpr),
    /// Nonzero test.
    Truth(HExpr),
    Not(Box<HCond>),
    And(Box<HCond>, Box<HCond>),
    Or(Box<HCond>, Box<HCond>),
}

/// A scalar lvalue: one word (or long pair) chosen among `cands`.
#[derive(Debug, Clone, PartialEq)]
pub struct Place {
    pub sel: Sel,
    pub cands: Vec<Cand>,
    pub long: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Sel {
    Direct,
    /// Compare the index against each candidate's `key`.
    Index(HExpr),
    /// Compare the address against the nominal address of word `key`.
    Addr(HExpr),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cand {
    pub key: i128,
    pub word: Word,
}

impl Place {
    /// Every word this place may write.
    pub fn words(&self) -> Vec<Word> {
        let mut out = Vec::new();
        for c in &self.cands {
            out.push(c.word);
            if self.long {
                out.push(c.word.next());
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LoopKind {
    While,
    DoWhile,
}

#[derive(Debug, Clone, PartialEq)]
pub enum HStmt {
    Assign(Place, HExpr),
    Eval(HExpr),
    If(HCond, Vec<HStmt>, Vec<HStmt>),
    Loop {
        kind: LoopKind,
        cond: Option<HCond>,
        body: Vec<HStmt>,
        step: Vec<HStmt>,
        has_continue: bool,
    },
    Return(Option<HExpr>),
    Break,
    Continue,
    Goto(usize),
    Label(usize),
    Block(Vec<HStmt>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct HParam {
    pub name: String,
    pub long: bool,
    pub word: usize,
    /// First argument register index.
    pub slot: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HFunc {
    pub name: String,
    pub params: Vec<HParam>,
    pub ret: VTy,
    pub frame_size: usize,
    pub has_calls: bool,
    /// Frame words belonging to source variables (parameters and locals).
    pub var_words: std::ops::Range<usize>,
    pub labels: Vec<String>,
    pub body: Vec<HStmt>,
    pub word_names: Vec<String>,
}

/// Initial content of a global word.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GInit {
    Val(i128),
    /// Nominal address of a global word.
    Addr(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct HGlobal {
    pub name: String,
    pub off: usize,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HProgram {
    pub width: Width,
    pub funcs: Vec<HFunc>,
    pub entry: usize,
    pub globals: Vec<HGlobal>,
    pub global_init: Vec<GInit>,
    pub global_names: Vec<String>,
}

impl HProgram {
    pub fn global_size(&self) -> usize {
        self.global_init.len()
    }
}

fn sem(line: usize, msg: impl Into<String>) -> CompileError {
    CompileError::Semantic {
        line,
        msg: msg.into(),
    }
}

fn unsupported(line: usize, msg: impl Into<String>) -> CompileError {
    CompileError::Unsupported {
        line,
        msg: msg.into(),
    }
}

#[derive(Debug, Clone)]
struct Var {
    word: Word,
    obj: Obj,
}

struct Sig {
    idx: usize,
    params: Vec<VTy>,
    ret: VTy,
}

/// A resolved access path before it is narrowed to a scalar place.
struct Path {
    /// Static word (for pointer paths, `off` is relative to the element).
    word: Word,
    obj: Obj,
    index: Option<(HExpr, usize, usize)>,
    ptr: Option<(HExpr, Arc<Target>)>,
    /// Static array this path sits in, for taking addresses.
    array: Option<(Word, usize, usize)>,
}

/// Globals, their initializers and the name of every global word.
type LoweredGlobals = (Vec<HGlobal>, Vec<GInit>, Vec<String>);

struct Lower<'u> {
    unit: &'u ast::Unit,
    width: Width,
    aggs: Vec<AggLayout>,
    globals: HashMap<String, Var>,
    sigs: HashMap<String, Sig>,
    // Per-function state.
    scopes: Vec<HashMap<String, Var>>,
    frame_next: usize,
    word_names: Vec<String>,
    labels: HashMap<String, usize>,
    loop_depth: usize,
    ret: VTy,
}

fn size_of(obj: &Obj, aggs: &[AggLayout]) -> usize {
    match obj {
        Obj::Int | Obj::Ptr(_) => 1,
        Obj::Long => 2,
        Obj::Array(t, n) => size_of(t, aggs) * n,
        Obj::Agg(i) => aggs[*i].size,
    }
}

fn scalar_vty(obj: &Obj) -> Option<VTy> {
    match obj {
        Obj::Int => Some(VTy::Int),
        Obj::Long => Some(VTy::Long),
        Obj::Ptr(t) => Some(VTy::Ptr(t.clone())),
        _ => None,
    }
}

fn contains_call(e: &ast::Expr) -> bool {
    use ExprKind::*;
    match &e.kind {
        Call(..) => true,
        Num(_) | Var(_) => false,
        Index(a, b) | Binary(_, a, b) | Cmp(_, a, b) | LogAnd(a, b) | LogOr(a, b) => {
            contains_call(a) || contains_call(b)
        }
        Assign(_, a, b) | Comma(a, b) => contains_call(a) || contains_call(b),
        Member(a, _) | Arrow(a, _) | Deref(a) | AddrOf(a) | Unary(_, a) | Cast(_, _, a) => {
            contains_call(a)
        }
        IncDec { target, .. } => contains_call(target),
        Ternary(a, b, c) => contains_call(a) || contains_call(b) || contains_call(c),
    }
}

fn stmt_has_call(s: &ast::Stmt) -> bool {
    use StmtKind::*;
    let init_call = |i: &Init| -> bool {
        fn walk(i: &Init) -> bool {
            match i {
                Init::Expr(e) => contains_call(e),
                Init::List(items) => items.iter().any(|(_, i)| walk(i)),
            }
        }
        walk(i)
    };
    match &s.kind {
        Decl(ds) => ds.iter().any(|d| d.init.as_ref().is_some_and(init_call)),
        Expr(e) | Return(Some(e)) => contains_call(e),
        If(c, t, e) => contains_call(c) || stmt_has_call(t) || e.as_deref().is_some_and(stmt_has_call),
        While(c, b) | DoWhile(b, c) => contains_call(c) || stmt_has_call(b),
        For(i, c, st, b) => {
            i.as_deref().is_some_and(stmt_has_call)
                || c.as_ref().is_some_and(contains_call)
                || st.as_ref().is_some_and(contains_call)
                || stmt_has_call(b)
        }
        Block(ss) => ss.iter().any(stmt_has_call),
        Label(_, s) => stmt_has_call(s),
        Return(None) | Break | Continue | Goto(_) | Empty => false,
    }
}

fn collect_labels(s: &ast::Stmt, out: &mut Vec<(String, usize)>) {
    use StmtKind::*;
    match &s.kind {
        Label(l, inner) => {
            out.push((l.clone(), s.line));
            collect_labels(inner, out);
        }
        If(_, t, e) => {
            collect_labels(t, out);
            if let Some(e) = e {
                collect_labels(e, out);
            }
        }
        While(_, b) | DoWhile(b, _) => collect_labels(b, out),
        For(i, _, _, b) => {
            if let Some(i) = i {
                collect_labels(i, out);
            }
            collect_labels(b, out);
        }
        Block(ss) => ss.iter().for_each(|s| collect_labels(s, out)),
        _ => {}
    }
}

fn has_continue(s: &ast::Stmt) -> bool {
    use StmtKind::*;
    match &s.kind {
        Continue => true,
        If(_, t, e) => has_continue(t) || e.as_deref().is_some_and(has_continue),
        Block(ss) => ss.iter().any(has_continue),
        Label(_, s) => has_continue(s),
        // Nested loops own their continues.
        _ => false,
    }
}

impl<'u> Lower<'u> {
    fn obj_of(&self, base: &BaseType, line: usize) -> Result<Obj, CompileError> {
        Ok(match base {
            BaseType::Void => return Err(sem(line, "object of type void")),
            BaseType::Int | BaseType::Char | BaseType::Short | BaseType::Bool => Obj::Int,
            BaseType::Long => Obj::Long,
            BaseType::Aggregate(i) => Obj::Agg(*i),
        })
    }

    fn size(&self, obj: &Obj) -> usize {
        size_of(obj, &self.aggs)
    }

    fn layout_aggregates(&mut self) -> Result<(), CompileError> {
        for def in &self.unit.aggregates {
            let mut fields = Vec::new();
            let mut size = 0;
            for f in &def.fields {
                let line = f.declarator.line;
                if f.declarator.pointer {
                    return Err(unsupported(line, "pointer fields"));
                }
                let elem = self.obj_of(&f.base, line)?;
                let obj = match f.declarator.dim {
                    Some(n) => Obj::Array(Box::new(elem), n as usize),
                    None => elem,
                };
                let s = self.size(&obj);
                if fields.iter().any(|(n, _, _)| n == &f.declarator.name) {
                    return Err(sem(line, format!("duplicate field `{}`", f.declarator.name)));
                }
                if def.is_union {
                    fields.push((f.declarator.name.clone(), 0, obj));
                    size = size.max(s);
                } else {
                    fields.push((f.declarator.name.clone(), size, obj));
                    size += s;
                }
            }
            if size == 0 {
                return Err(sem(def.line, "empty aggregate"));
            }
            self.aggs.push(AggLayout {
                is_union: def.is_union,
                fields,
                size,
            });
        }
        Ok(())
    }

    fn lookup(&self, name: &str, line: usize) -> Result<Var, CompileError> {
        for s in self.scopes.iter().rev() {
            if let Some(v) = s.get(name) {
                return Ok(v.clone());
            }
        }
        self.globals
            .get(name)
            .cloned()
            .ok_or_else(|| sem(line, format!("undeclared variable `{name}`")))
    }

    /// Pointer target for `restrict range T *`.
    fn target(
        &self,
        range: Option<&str>,
        elem: Obj,
        line: usize,
        globals_only: bool,
    ) -> Result<Arc<Target>, CompileError> {
        let Some(range) = range else {
            return Err(sem(line, "pointer declared without a restrict range"));
        };
        let var = if globals_only {
            self.globals
                .get(range)
                .cloned()
                .ok_or_else(|| sem(line, format!("restrict range `{range}` must be a global")))?
        } else {
            self.lookup(range, line)?
        };
        let stride = self.size(&elem);
        let count = match &var.obj {
            Obj::Array(t, n) if self.size(t) == stride => *n,
            o if self.size(o) == stride => 1,
            _ => {
                return Err(sem(
                    line,
                    format!("restrict range `{range}` does not hold elements of the pointer's type"),
                ))
            }
        };
        Ok(Arc::new(Target {
            elem,
            stride,
            range: Range {
                start: var.word,
                count,
            },
        }))
    }

    fn decl_obj(&self, d: &ast::VarDecl, globals_only: bool) -> Result<Obj, CompileError> {
        let line = d.declarator.line;
        let elem = self.obj_of(&d.base, line)?;
        let base = if d.declarator.pointer {
            Obj::Ptr(self.target(d.restrict.as_deref(), elem, line, globals_only)?)
        } else {
            if d.restrict.is_some() {
                return Err(sem(line, "restrict range on a non-pointer"));
            }
            elem
        };
        Ok(match d.declarator.dim {
            Some(n) => Obj::Array(Box::new(base), n as usize),
            None => base,
        })
    }

    fn name_words(&self, obj: &Obj, name: String, out: &mut Vec<String>) {
        match obj {
            Obj::Int | Obj::Ptr(_) => out.push(name),
            Obj::Long => {
                out.push(format!("{name}.hi"));
                out.push(format!("{name}.lo"));
            }
            Obj::Array(t, n) => {
                for j in 0..*n {
                    self.name_words(t, format!("{name}[{j}]"), out);
                }
            }
            Obj::Agg(i) => {
                let lay = &self.aggs[*i];
                let start = out.len();
                let mut words = vec![String::new(); lay.size];
                for (f, off, fobj) in &lay.fields {
                    let mut sub = Vec::new();
                    self.name_words(fobj, format!("{name}.{f}"), &mut sub);
                    for (k, s) in sub.into_iter().enumerate() {
                        if words[off + k].is_empty() {
                            words[off + k] = s;
                        }
                    }
                }
                out.truncate(start);
                out.extend(words);
            }
        }
    }

    /// Scalar leaves of an initializer, keyed by word offset within `obj`.
    fn leaves<'e>(
        &self,
        obj: &Obj,
        init: Option<&'e Init>,
        off: usize,
        out: &mut BTreeMap<usize, (bool, Option<&'e ast::Expr>)>,
        line: usize,
    ) -> Result<(), CompileError> {
        match obj {
            Obj::Int | Obj::Ptr(_) | Obj::Long => {
                let long = matches!(obj, Obj::Long);
                let e = match init {
                    None => None,
                    Some(Init::Expr(e)) => Some(e),
                    Some(Init::List(items)) => match items.as_slice() {
                        [(None, Init::Expr(e))] => Some(e),
                        _ => return Err(sem(line, "braced initializer for a scalar")),
                    },
                };
                out.remove(&off);
                if long {
                    out.remove(&(off + 1));
                } else if off > 0 && matches!(out.get(&(off - 1)), Some((true, _))) {
                    out.insert(off - 1, (false, None));
                }
                out.insert(off, (long, e));
            }
            Obj::Array(t, n) => {
                let es = self.size(t);
                let items = match init {
                    None => {
                        for j in 0..*n {
                            self.leaves(t, None, off + j * es, out, line)?;
                        }
                        return Ok(());
                    }
                    Some(Init::Expr(_)) => return Err(sem(line, "array initializer needs braces")),
                    Some(Init::List(items)) => items,
                };
                let mut set = vec![None; *n];
                let mut pos = 0i128;
                for (desig, it) in items {
                    let (lo, hi) = match desig {
                        None => (pos, pos),
                        Some(Designator::Index(k)) => (*k, *k),
                        Some(Designator::Range(a, b)) => (*a, *b),
                        Some(Designator::Field(_)) => {
                            return Err(sem(line, "field designator in an array initializer"))
                        }
                    };
                    if lo < 0 || hi >= *n as i128 || lo > hi {
                        return Err(sem(line, "array designator out of range"));
                    }
                    for k in lo..=hi {
                        set[k as usize] = Some(it);
                    }
                    pos = hi + 1;
                }
                for (j, it) in set.into_iter().enumerate() {
                    self.leaves(t, it, off + j * es, out, line)?;
                }
            }
            Obj::Agg(i) => {
                let lay = self.aggs[*i].clone();
                let items: &[(Option<Designator>, Init)] = match init {
                    None => &[],
                    Some(Init::Expr(_)) => return Err(sem(line, "aggregate initializer needs braces")),
                    Some(Init::List(items)) => items,
                };
                let mut set: Vec<Option<&Init>> = vec![None; lay.fields.len()];
                let mut pos = 0;
                for (desig, it) in items {
                    let k = match desig {
                        None => pos,
                        Some(Designator::Field(f)) => lay
                            .fields
                            .iter()
                            .position(|(n, _, _)| n == f)
                            .ok_or_else(|| sem(line, format!("no field `{f}`")))?,
                        Some(_) => return Err(sem(line, "index designator in a struct initializer")),
                    };
                    if k >= lay.fields.len() {
                        return Err(sem(line, "too many initializers"));
                    }
                    set[k] = Some(it);
                    pos = k + 1;
                }
                if lay.is_union {
                    // Zero the whole union through its first member, then
                    // lay the initialized member over it.
                    let words = vec![Obj::Int; lay.size];
                    for (k, o) in words.iter().enumerate() {
                        self.leaves(o, None, off + k, out, line)?;
                    }
                    if let Some(k) = set.iter().position(Option::is_some) {
                        let (_, foff, fobj) = &lay.fields[k];
                        self.leaves(fobj, set[k], off + foff, out, line)?;
                    }
                } else {
                    for (k, (_, foff, fobj)) in lay.fields.iter().enumerate() {
                        self.leaves(fobj, set[k], off + foff, out, line)?;
                    }
                }
            }
        }
        Ok(())
    }

    fn lower_globals(&mut self) -> Result<LoweredGlobals, CompileError> {
        let mut globals = Vec::new();
        let mut init = Vec::new();
        let mut names = Vec::new();
        let w = self.width;
        for d in &self.unit.globals {
            let line = d.declarator.line;
            let name = d.declarator.name.clone();
            if self.globals.contains_key(&name) {
                return Err(sem(line, format!("redefinition of `{name}`")));
            }
            let obj = self.decl_obj(d, true)?;
            let off = init.len();
            let size = self.size(&obj);
            let mut leaves = BTreeMap::new();
            self.leaves(&obj, d.init.as_ref(), 0, &mut leaves, line)?;
            let mut words = vec![GInit::Val(0); size];
            for (k, (long, e)) in leaves {
                let Some(e) = e else { continue };
                if let Some(v) = const_eval(e) {
                    if long {
                        words[k] = GInit::Val((v >> w.bits()) & w.mask() as i128);
                        words[k + 1] = GInit::Val(v & w.mask() as i128);
                    } else {
                        words[k] = GInit::Val(v);
                    }
                } else if let Some(addr) = self.static_address(e) {
                    words[k] = GInit::Addr(addr);
                } else {
                    return Err(sem(line, "global initializer must be constant"));
                }
            }
            init.extend(words);
            self.name_words(&obj, name.clone(), &mut names);
            globals.push(HGlobal {
                name: name.clone(),
                off,
                size,
            });
            self.globals.insert(
                name,
                Var {
                    word: Word {
                        base: Base::Global,
                        off,
                    },
                    obj,
                },
            );
        }
        Ok((globals, init, names))
    }

    /// Global word offset named by `&G`, `&G[k]`, `&G.f` or an array `G`.
    fn static_address(&self, e: &ast::Expr) -> Option<usize> {
        fn walk(l: &Lower, e: &ast::Expr) -> Option<(usize, Obj)> {
            match &e.kind {
                ExprKind::Var(n) => {
                    let v = l.globals.get(n)?;
                    Some((v.word.off, v.obj.clone()))
                }
                ExprKind::Index(a, i) => {
                    let (off, obj) = walk(l, a)?;
                    let Obj::Array(t, n) = obj else { return None };
                    let k = const_eval(i)?;
                    (0..n as i128)
                        .contains(&k)
                        .then(|| (off + k as usize * l.size(&t), *t))
                }
                ExprKind::Member(a, f) => {
                    let (off, obj) = walk(l, a)?;
                    let Obj::Agg(i) = obj else { return None };
                    let (_, foff, fobj) = l.aggs[i].fields.iter().find(|(n, _, _)| n == f)?;
                    Some((off + foff, fobj.clone()))
                }
                _ => None,
            }
        }
        match &e.kind {
            ExprKind::AddrOf(inner) => walk(self, inner).map(|(o, _)| o),
            ExprKind::Var(_) => match walk(self, e)? {
                (o, Obj::Array(..)) => Some(o),
                _ => None,
            },
            _ => None,
        }
    }

    fn signatures(&mut self) -> Result<(), CompileError> {
        for (idx, f) in self.unit.funcs.iter().enumerate() {
            if self.sigs.contains_key(&f.name) {
                return Err(sem(f.line, format!("redefinition of function `{}`", f.name)));
            }
            let mut params = Vec::new();
            for p in &f.params {
                let elem = self.obj_of(&p.base, f.line)?;
                params.push(if p.pointer {
                    VTy::Ptr(self.target(p.restrict.as_deref(), elem, f.line, true)?)
                } else {
                    scalar_vty(&elem).ok_or_else(|| unsupported(f.line, "aggregate parameters"))?
                });
            }
            let ret = match &f.ret {
                BaseType::Void => VTy::Void,
                BaseType::Long => VTy::Long,
                BaseType::Aggregate(_) => return Err(unsupported(f.line, "aggregate return values")),
                _ => VTy::Int,
            };
            self.sigs.insert(f.name.clone(), Sig { idx, params, ret });
        }
        Ok(())
    }

    fn alloc(&mut self, name: &str, obj: Obj) -> Var {
        let word = Word {
            base: Base::Frame,
            off: self.frame_next,
        };
        self.frame_next += self.size(&obj);
        let mut names = Vec::new();
        self.name_words(&obj, name.to_string(), &mut names);
        self.word_names.extend(names);
        let v = Var { word, obj };
        self.scopes
            .last_mut()
            .expect("a scope is open")
            .insert(name.to_string(), v.clone());
        v
    }

    fn lower_func(&mut self, f: &ast::FuncDef) -> Result<HFunc, CompileError> {
        let has_calls = f.body.iter().any(stmt_has_call);
        let reserved = if has_calls { LINK_WORDS + HIDDEN_WORDS } else { 0 };
        self.frame_next = reserved;
        self.word_names = (0..reserved)
            .map(|k| match k {
                0 => "<saved sp>".to_string(),
                1 => "<ra>".to_string(),
                _ => format!("<temp {}>", k - LINK_WORDS),
            })
            .collect();
        self.scopes = vec![HashMap::new()];
        self.loop_depth = 0;
        let sig = &self.sigs[&f.name];
        self.ret = sig.ret.clone();
        let ptys = sig.params.clone();
        let mut labels = Vec::new();
        for s in &f.body {
            collect_labels(s, &mut labels);
        }
        self.labels.clear();
        let mut label_names = Vec::new();
        for (l, line) in labels {
            if self.labels.insert(l.clone(), label_names.len()).is_some() {
                return Err(sem(line, format!("duplicate label `{l}`")));
            }
            label_names.push(l);
        }
        let mut params = Vec::new();
        let mut slot = 0;
        for (p, ty) in f.params.iter().zip(&ptys) {
            let long = *ty == VTy::Long;
            if long {
                slot += slot % 2;
            }
            if slot + 1 + long as usize > ARG_SLOTS {
                return Err(unsupported(f.line, "more argument words than registers a0..a3"));
            }
            if self.scopes[0].contains_key(&p.name) {
                return Err(sem(f.line, format!("duplicate parameter `{}`", p.name)));
            }
            let obj = match ty {
                VTy::Int => Obj::Int,
                VTy::Long => Obj::Long,
                VTy::Ptr(t) => Obj::Ptr(t.clone()),
                VTy::Void => unreachable!("parameters are never void"),
            };
            let v = self.alloc(&p.name, obj);
            params.push(HParam {
                name: p.name.clone(),
                long,
                word: v.word.off,
                slot,
            });
            slot += 1 + long as usize;
        }
        let mut body = self.block(&f.body)?;
        // Falling off the end returns zero.
        body.push(HStmt::Return(match self.ret {
            VTy::Void => None,
            VTy::Long => Some(HExpr::LitL(0)),
            _ => Some(HExpr::Lit(0)),
        }));
        Ok(HFunc {
            name: f.name.clone(),
            params,
            ret: self.ret.clone(),
            frame_size: self.frame_next,
            has_calls,
            var_words: reserved..self.frame_next,
            labels: label_names,
            body,
            word_names: std::mem::take(&mut self.word_names),
        })
    }

    fn block(&mut self, ss: &[ast::Stmt]) -> Result<Vec<HStmt>, CompileError> {
        self.scopes.push(HashMap::new());
        let mut out = Vec::new();
        for s in ss {
            self.stmt(s, &mut out)?;
        }
        self.scopes.pop();
        Ok(out)
    }

    fn sub_block(&mut self, s: &ast::Stmt) -> Result<Vec<HStmt>, CompileError> {
        match &s.kind {
            StmtKind::Block(ss) => self.block(ss),
            _ => self.block(std::slice::from_ref(s)),
        }
    }

    fn decl(&mut self, d: &ast::VarDecl, out: &mut Vec<HStmt>) -> Result<(), CompileError> {
        let line = d.declarator.line;
        let name = &d.declarator.name;
        if self.scopes.last().expect("scope").contains_key(name) {
            return Err(sem(line, format!("redefinition of `{name}`")));
        }
        let obj = self.decl_obj(d, false)?;
        let mut leaves = BTreeMap::new();
        self.leaves(&obj, d.init.as_ref(), 0, &mut leaves, line)?;
        // Initializers see the enclosing scope, except that the variable
        // itself is visible once declared; evaluate before binding.
        let mut vals = Vec::new();
        for (k, (long, e)) in leaves {
            let val = match e {
                None if long => HExpr::LitL(0),
                None => HExpr::Lit(0),
                Some(e) => {
                    let want = if long { VTy::Long } else { VTy::Int };
                    let (v, t) = self.rv(e, true)?;
                    self.coerce(v, &t, &want, e.line, true)?
                }
            };
            vals.push((k, long, val));
        }
        let var = self.alloc(name, obj);
        for (k, long, val) in vals {
            let word = Word {
                base: Base::Frame,
                off: var.word.off + k,
            };
            out.push(HStmt::Assign(
                Place {
                    sel: Sel::Direct,
                    cands: vec![Cand { key: 0, word }],
                    long,
                },
                val,
            ));
        }
        Ok(())
    }

    fn stmt(&mut self, s: &ast::Stmt, out: &mut Vec<HStmt>) -> Result<(), CompileError> {
        let line = s.line;
        match &s.kind {
            StmtKind::Empty => {}
            StmtKind::Decl(ds) => {
                for d in ds {
                    self.decl(d, out)?;
                }
            }
            StmtKind::Expr(e) => self.effect(e, out)?,
            StmtKind::Block(ss) => out.push(HStmt::Block(self.block(ss)?)),
            StmtKind::If(c, t, e) => {
                let c = self.cond(c)?;
                let t = self.sub_block(t)?;
                let e = match e {
                    Some(e) => self.sub_block(e)?,
                    None => Vec::new(),
                };
                out.push(HStmt::If(c, t, e));
            }
            StmtKind::While(c, b) => {
                let cond = self.cond(c)?;
                self.loop_depth += 1;
                let body = self.sub_block(b)?;
                self.loop_depth -= 1;
                out.push(HStmt::Loop {
                    kind: LoopKind::While,
                    cond: Some(cond),
                    body,
                    step: Vec::new(),
                    has_continue: false,
                });
            }
            StmtKind::DoWhile(b, c) => {
                self.loop_depth += 1;
                let body = self.sub_block(b)?;
                self.loop_depth -= 1;
                let cond = self.cond(c)?;
                out.push(HStmt::Loop {
                    kind: LoopKind::DoWhile,
                    cond: Some(cond),
                    body,
                    step: Vec::new(),
                    has_continue: true,
                });
            }
            StmtKind::For(init, c, step, b) => {
                self.scopes.push(HashMap::new());
                let mut blk = Vec::new();
                if let Some(i) = init {
                    self.stmt(i, &mut blk)?;
                }
                let cond = c.as_ref().map(|c| self.cond(c)).transpose()?;
                self.loop_depth += 1;
                let body = self.sub_block(b)?;
                self.loop_depth -= 1;
                let mut st = Vec::new();
                if let Some(e) = step {
                    self.effect(e, &mut st)?;
                }
                self.scopes.pop();
                blk.push(HStmt::Loop {
                    kind: LoopKind::While,
                    cond,
                    body,
                    step: st,
                    has_continue: has_continue(b),
                });
                out.push(HStmt::Block(blk));
            }
            StmtKind::Return(e) => {
                let v = match (e, &self.ret) {
                    (None, VTy::Void) => None,
                    (None, _) => return Err(sem(line, "return without a value")),
                    (Some(_), VTy::Void) => return Err(sem(line, "return with a value in a void function")),
                    (Some(e), want) => {
                        let want = want.clone();
                        let (v, t) = self.rv(e, true)?;
                        Some(self.coerce(v, &t, &want, line, false)?)
                    }
                };
                out.push(HStmt::Return(v));
            }
            StmtKind::Break | StmtKind::Continue => {
                if self.loop_depth == 0 {
                    return Err(sem(line, "break or continue outside a loop"));
                }
                out.push(if s.kind == StmtKind::Break {
                    HStmt::Break
                } else {
                    HStmt::Continue
                });
            }
            StmtKind::Goto(l) => {
                let idx = *self
                    .labels
                    .get(l)
                    .ok_or_else(|| sem(line, format!("goto to undefined label `{l}`")))?;
                out.push(HStmt::Goto(idx));
            }
            StmtKind::Label(l, inner) => {
                out.push(HStmt::Label(self.labels[l]));
                self.stmt(inner, out)?;
            }
        }
        Ok(())
    }

    /// Statement-level expression: assignments, calls, or a discarded value.
    fn effect(&mut self, e: &ast::Expr, out: &mut Vec<HStmt>) -> Result<(), CompileError> {
        let line = e.line;
        match &e.kind {
            ExprKind::Comma(a, b) => {
                self.effect(a, out)?;
                self.effect(b, out)
            }
            ExprKind::Assign(op, target, rhs) => {
                let place = self.place(target)?;
                let want = self.place_vty(target)?;
                let (v, t) = match op {
                    None => self.rv(rhs, true)?,
                    Some(op) => {
                        let (cur, ct) = (HExpr::Load(Box::new(place.clone())), want.clone());
                        let (r, rt) = self.rv(rhs, true)?;
                        self.binary(*op, cur, ct, r, rt, line)?
                    }
                };
                let v = self.coerce(v, &t, &want, line, op.is_none())?;
                out.push(HStmt::Assign(place, v));
                Ok(())
            }
            ExprKind::IncDec { inc, target } => {
                let place = self.place(target)?;
                let want = self.place_vty(target)?;
                let cur = HExpr::Load(Box::new(place.clone()));
                let op = if *inc { BinOp::Add } else { BinOp::Sub };
                let (v, t) = self.binary(op, cur, want.clone(), HExpr::Lit(1), VTy::Int, line)?;
                let v = self.coerce(v, &t, &want, line, false)?;
                out.push(HStmt::Assign(place, v));
                Ok(())
            }
            _ => {
                let (v, _) = self.rv(e, true)?;
                out.push(HStmt::Eval(v));
                Ok(())
            }
        }
    }

    fn place_vty(&mut self, e: &ast::Expr) -> Result<VTy, CompileError> {
        let p = self.path(e)?;
        scalar_vty(&p.obj).ok_or_else(|| unsupported(e.line, "assignment of a whole array or aggregate"))
    }

    fn path(&mut self, e: &ast::Expr) -> Result<Path, CompileError> {
        let line = e.line;
        match &e.kind {
            ExprKind::Var(n) => {
                let v = self.lookup(n, line)?;
                Ok(Path {
                    word: v.word,
                    obj: v.obj,
                    index: None,
                    ptr: None,
                    array: None,
                })
            }
            ExprKind::Member(a, f) => {
                let mut p = self.path(a)?;
                self.member(&mut p, f, line)?;
                Ok(p)
            }
            ExprKind::Arrow(a, f) => {
                let mut p = self.deref_path(a)?;
                self.member(&mut p, f, line)?;
                Ok(p)
            }
            ExprKind::Deref(a) => self.deref_path(a),
            ExprKind::Index(a, i) => {
                let base = self.path(a);
                if let Ok(mut p) = base {
                    if let Obj::Array(t, n) = p.obj.clone() {
                        if p.index.is_some() || p.ptr.is_some() {
                            return Err(unsupported(line, "more than one variable index in one access"));
                        }
                        let (iv, it) = self.rv(i, true)?;
                        if it != VTy::Int {
                            return Err(sem(line, "array index must be an int"));
                        }
                        if let Some(k) = const_eval(i) {
                            if k < 0 || k >= n as i128 {
                                return Err(sem(line, format!("index {k} out of range for length {n}")));
                            }
                        }
                        let stride = self.size(&t);
                        if p.ptr.is_none() {
                            p.array = Some((p.word, n, stride));
                        }
                        p.index = Some((iv, n, stride));
                        p.obj = *t;
                        return Ok(p);
                    }
                }
                // Pointer indexing: *(a + i).
                let (pv, pt) = self.rv(a, true)?;
                let VTy::Ptr(t) = pt.clone() else {
                    return Err(sem(line, "indexing a non-array"));
                };
                let (iv, it) = self.rv(i, true)?;
                let (addr, _) = self.binary(BinOp::Add, pv, pt, iv, it, line)?;
                Ok(self.ptr_path(addr, t))
            }
            _ => Err(sem(line, "expression is not an lvalue")),
        }
    }

    fn ptr_path(&self, addr: HExpr, t: Arc<Target>) -> Path {
        Path {
            word: Word {
                base: t.range.start.base,
                off: 0,
            },
            obj: t.elem.clone(),
            index: None,
            ptr: Some((addr, t)),
            array: None,
        }
    }

    fn deref_path(&mut self, a: &ast::Expr) -> Result<Path, CompileError> {
        let (v, t) = self.rv(a, true)?;
        match t {
            VTy::Ptr(t) => Ok(self.ptr_path(v, t)),
            _ => Err(sem(a.line, "dereferencing a non-pointer")),
        }
    }

    fn member(&self, p: &mut Path, f: &str, line: usize) -> Result<(), CompileError> {
        let Obj::Agg(i) = p.obj else {
            return Err(sem(line, format!("member `{f}` of a non-aggregate")));
        };
        let (_, off, obj) = self.aggs[i]
            .fields
            .iter()
            .find(|(n, _, _)| n == f)
            .ok_or_else(|| sem(line, format!("no field `{f}`")))?;
        p.word.off += off;
        p.obj = obj.clone();
        Ok(())
    }

    fn place(&mut self, e: &ast::Expr) -> Result<Place, CompileError> {
        let p = self.path(e)?;
        let long = match p.obj {
            Obj::Long => true,
            Obj::Int | Obj::Ptr(_) => false,
            _ => return Err(unsupported(e.line, "access to a whole array or aggregate")),
        };
        Ok(if let Some((addr, t)) = p.ptr {
            let cands = (0..t.range.count)
                .map(|j| {
                    let key = t.range.start.off + j * t.stride;
                    Cand {
                        key: key as i128,
                        word: Word {
                            base: t.range.start.base,
                            off: key + p.word.off,
                        },
                    }
                })
                .collect();
            Place {
                sel: Sel::Addr(addr),
                cands,
                long,
            }
        } else if let Some((iv, n, stride)) = p.index {
            // `p.word` has accumulated member offsets past element 0.
            let cands = (0..n)
                .map(|j| Cand {
                    key: j as i128,
                    word: Word {
                        base: p.word.base,
                        off: p.word.off + j * stride,
                    },
                })
                .collect();
            Place {
                sel: Sel::Index(iv),
                cands,
                long,
            }
        } else {
            Place {
                sel: Sel::Direct,
                cands: vec![Cand { key: 0, word: p.word }],
                long,
            }
        })
    }

    fn coerce(&self, v: HExpr, from: &VTy, to: &VTy, line: usize, _assign: bool) -> Result<HExpr, CompileError> {
        match (from, to) {
            (VTy::Void, _) | (_, VTy::Void) => Err(sem(line, "void value used")),
            (VTy::Int, VTy::Long) => match v {
                HExpr::Lit(n) => Ok(HExpr::LitL(n)),
                _ => Err(sem(line, "int used as long without a cast")),
            },
            (VTy::Long, VTy::Long) => Ok(v),
            (VTy::Ptr(_), VTy::Long) => Err(sem(line, "pointer used as long")),
            (VTy::Long, _) => Err(sem(line, "long used as int without a cast")),
            (VTy::Ptr(_) | VTy::Int, VTy::Ptr(_) | VTy::Int) => Ok(v),
        }
    }

    fn cond(&mut self, e: &ast::Expr) -> Result<HCond, CompileError> {
        if contains_call(e) {
            return Err(unsupported(e.line, "function call inside a condition"));
        }
        self.cond_inner(e)
    }

    fn cond_inner(&mut self, e: &ast::Expr) -> Result<HCond, CompileError> {
        let line = e.line;
        Ok(match &e.kind {
            ExprKind::Cmp(op, a, b) => {
                let (av, at) = self.rv(a, false)?;
                let (bv, bt) = self.rv(b, false)?;
                if at == VTy::Long || bt == VTy::Long {
                    return Err(unsupported(line, "comparison of long values"));
                }
                if at == VTy::Void || bt == VTy::Void {
                    return Err(sem(line, "void value used"));
                }
                HCond::Cmp(*op, av, bv)
            }
            ExprKind::LogAnd(a, b) => HCond::And(Box::new(self.cond_inner(a)?), Box::new(self.cond_inner(b)?)),
            ExprKind::LogOr(a, b) => HCond::Or(Box::new(self.cond_inner(a)?), Box::new(self.cond_inner(b)?)),
            ExprKind::Unary(UnOp::Not, a) => HCond::Not(Box::new(self.cond_inner(a)?)),
            _ => {
                let (v, t) = self.rv(e, false)?;
                match t {
                    VTy::Long => return Err(unsupported(line, "long value used as a condition")),
                    VTy::Void => return Err(sem(line, "void value used")),
                    _ => HCond::Truth(v),
                }
            }
        })
    }

    fn scaled(&self, i: HExpr, stride: usize) -> HExpr {
        if stride == 1 {
            i
        } else {
            HExpr::Bin(BinOp::Mul, Box::new(i), Box::new(HExpr::Lit(stride as i128)))
        }
    }

    fn binary(
        &mut self,
        op: BinOp,
        a: HExpr,
        at: VTy,
        b: HExpr,
        bt: VTy,
        line: usize,
    ) -> Result<(HExpr, VTy), CompileError> {
        let (op, b) = match op {
            BinOp::Shl => {
                let HExpr::Lit(n) = b else {
                    return Err(unsupported(line, "shift by a non-constant amount"));
                };
                let bits = if at == VTy::Long { 2 * self.width.bits() } else { self.width.bits() };
                if n < 0 || n >= bits as i128 {
                    return Err(sem(line, "shift amount out of range"));
                }
                (BinOp::Mul, HExpr::Lit(1i128 << n))
            }
            BinOp::Shr => return Err(unsupported(line, "right shift")),
            op => (op, b),
        };
        Ok(match (&at, &bt) {
            (VTy::Void, _) | (_, VTy::Void) => return Err(sem(line, "void value used")),
            (VTy::Int, VTy::Int) => (HExpr::Bin(op, Box::new(a), Box::new(b)), VTy::Int),
            (VTy::Long, _) | (_, VTy::Long) => {
                let a = self.coerce(a, &at, &VTy::Long, line, false)?;
                let b = self.coerce(b, &bt, &VTy::Long, line, false)?;
                if !matches!(op, BinOp::Add | BinOp::Sub | BinOp::Mul | BinOp::Div) {
                    return Err(unsupported(line, "long operator other than + - * /"));
                }
                (HExpr::BinL(op, Box::new(a), Box::new(b)), VTy::Long)
            }
            (VTy::Ptr(t), VTy::Int) if matches!(op, BinOp::Add | BinOp::Sub) => {
                let b = self.scaled(b, t.stride);
                (HExpr::Bin(op, Box::new(a), Box::new(b)), at.clone())
            }
            (VTy::Int, VTy::Ptr(t)) if op == BinOp::Add => {
                let a = self.scaled(a, t.stride);
                (HExpr::Bin(op, Box::new(a), Box::new(b)), bt.clone())
            }
            (VTy::Ptr(t), VTy::Ptr(_)) if op == BinOp::Sub => {
                let d = HExpr::Bin(BinOp::Sub, Box::new(a), Box::new(b));
                let d = if t.stride == 1 {
                    d
                } else {
                    HExpr::Bin(BinOp::Div, Box::new(d), Box::new(HExpr::Lit(t.stride as i128)))
                };
                (d, VTy::Int)
            }
            _ => return Err(sem(line, "invalid pointer arithmetic")),
        })
    }

    /// Address of an lvalue path.
    fn address(&mut self, inner: &ast::Expr) -> Result<(HExpr, VTy), CompileError> {
        let line = inner.line;
        let p = self.path(inner)?;
        if let Some((addr, t)) = p.ptr {
            if p.word.off != 0 {
                return Err(unsupported(line, "address of a member through a pointer"));
            }
            return Ok((addr, VTy::Ptr(t)));
        }
        let stride = self.size(&p.obj);
        let (start, count) = match p.array {
            Some((arr, n, s)) if s == stride => (arr, n),
            Some(_) => return Err(unsupported(line, "address of a member of an array element")),
            None => (p.word, 1),
        };
        let t = Arc::new(Target {
            elem: p.obj.clone(),
            stride,
            range: Range { start, count },
        });
        let v = match p.index {
            None => HExpr::AddrOf(p.word),
            Some((i, _, s)) => HExpr::Bin(
                BinOp::Add,
                Box::new(HExpr::AddrOf(p.word)),
                Box::new(self.scaled(i, s)),
            ),
        };
        Ok((v, VTy::Ptr(t)))
    }

    fn rv(&mut self, e: &ast::Expr, calls: bool) -> Result<(HExpr, VTy), CompileError> {
        let line = e.line;
        Ok(match &e.kind {
            ExprKind::Num(n) => (HExpr::Lit(*n), VTy::Int),
            ExprKind::Var(_) | ExprKind::Index(..) | ExprKind::Member(..) | ExprKind::Arrow(..) | ExprKind::Deref(_) => {
                let p = self.path(e)?;
                if let Obj::Array(..) = p.obj {
                    // Arrays decay to a pointer to their first element.
                    let first = ast::Expr {
                        kind: ExprKind::Index(Box::new(e.clone()), Box::new(ast::Expr { kind: ExprKind::Num(0), line })),
                        line,
                    };
                    return self.address(&first);
                }
                let ty = scalar_vty(&p.obj).ok_or_else(|| unsupported(line, "aggregate used as a value"))?;
                (HExpr::Load(Box::new(self.place(e)?)), ty)
            }
            ExprKind::AddrOf(inner) => self.address(inner)?,
            ExprKind::Unary(op, a) => {
                let (v, t) = self.rv(a, calls)?;
                match op {
                    UnOp::Plus => (v, t),
                    UnOp::Neg => {
                        let zero = if t == VTy::Long { HExpr::LitL(0) } else { HExpr::Lit(0) };
                        let zt = t.clone();
                        if matches!(t, VTy::Ptr(_)) {
                            return Err(sem(line, "negating a pointer"));
                        }
                        self.binary(BinOp::Sub, zero, zt, v, t, line)?
                    }
                    UnOp::BitNot => {
                        if t != VTy::Int {
                            return Err(unsupported(line, "~ on a non-int"));
                        }
                        (HExpr::Bin(BinOp::Xor, Box::new(v), Box::new(HExpr::Lit(-1))), VTy::Int)
                    }
                    UnOp::Not => {
                        if contains_call(a) {
                            return Err(unsupported(line, "function call inside a condition"));
                        }
                        (HExpr::Bool(Box::new(HCond::Not(Box::new(self.cond_inner(a)?)))), VTy::Int)
                    }
                }
            }
            ExprKind::Binary(op, a, b) => {
                let (av, at) = self.rv(a, calls)?;
                let (bv, bt) = self.rv(b, calls)?;
                self.binary(*op, av, at, bv, bt, line)?
            }
            ExprKind::Cmp(..) | ExprKind::LogAnd(..) | ExprKind::LogOr(..) => {
                (HExpr::Bool(Box::new(self.cond(e)?)), VTy::Int)
            }
            ExprKind::Ternary(c, a, b) => {
                if contains_call(e) {
                    return Err(unsupported(line, "function call inside a conditional expression"));
                }
                let c = self.cond_inner(c)?;
                let (av, at) = self.rv(a, false)?;
                let (bv, bt) = self.rv(b, false)?;
                let ty = match (&at, &bt) {
                    (VTy::Long, _) | (_, VTy::Long) => VTy::Long,
                    (VTy::Ptr(_), _) => at.clone(),
                    (_, VTy::Ptr(_)) => bt.clone(),
                    _ => VTy::Int,
                };
                let av = self.coerce(av, &at, &ty, line, false)?;
                let bv = self.coerce(bv, &bt, &ty, line, false)?;
                (HExpr::Ternary(Box::new(c), Box::new(av), Box::new(bv)), ty)
            }
            ExprKind::Call(name, args) => {
                if !calls {
                    return Err(unsupported(line, "function call inside a condition"));
                }
                let (idx, params, ret) = {
                    let s = self
                        .sigs
                        .get(name)
                        .ok_or_else(|| sem(line, format!("call to undefined function `{name}`")))?;
                    (s.idx, s.params.clone(), s.ret.clone())
                };
                if params.len() != args.len() {
                    return Err(sem(
                        line,
                        format!("`{name}` takes {} arguments, got {}", params.len(), args.len()),
                    ));
                }
                let mut hargs = Vec::new();
                for (a, p) in args.iter().zip(&params) {
                    let (v, t) = self.rv(a, true)?;
                    hargs.push(self.coerce(v, &t, p, a.line, false)?);
                }
                if hargs.len() > MAX_DEPTH - 1 {
                    return Err(unsupported(line, "too many arguments"));
                }
                (
                    HExpr::Call {
                        func: idx,
                        args: hargs,
                        long: ret == VTy::Long,
                    },
                    ret,
                )
            }
            ExprKind::Cast(t, ptr, a) => {
                if *ptr {
                    return Err(unsupported(line, "pointer casts"));
                }
                let (v, vt) = self.rv(a, calls)?;
                match (t, &vt) {
                    (BaseType::Void, _) => (v, VTy::Void),
                    (BaseType::Aggregate(_), _) => return Err(unsupported(line, "aggregate casts")),
                    (BaseType::Long, VTy::Long) => (v, vt),
                    (BaseType::Long, VTy::Int) => match v {
                        HExpr::Lit(n) => (HExpr::LitL(n), VTy::Long),
                        v => (HExpr::Widen(Box::new(v)), VTy::Long),
                    },
                    (BaseType::Long, _) => return Err(unsupported(line, "cast to long")),
                    (_, VTy::Long) => (HExpr::Low(Box::new(v)), VTy::Int),
                    (_, VTy::Void) => return Err(sem(line, "void value used")),
                    // Narrow casts are promotions: the word is kept whole.
                    _ => (v, VTy::Int),
                }
            }
            ExprKind::Assign(..) | ExprKind::IncDec { .. } | ExprKind::Comma(..) => {
                return Err(unsupported(line, "assignment inside an expression"))
            }
        })
    }
}

/// Resolve and lay out a parsed unit.
pub fn lower(unit: &ast::Unit, width: Width) -> Result<HProgram, CompileError> {
    if unit.funcs.is_empty() {
        return Err(sem(1, "no functions"));
    }
    let mut l = Lower {
        unit,
        width,
        aggs: Vec::new(),
        globals: HashMap::new(),
        sigs: HashMap::new(),
        scopes: Vec::new(),
        frame_next: 0,
        word_names: Vec::new(),
        labels: HashMap::new(),
        loop_depth: 0,
        ret: VTy::Void,
    };
    l.layout_aggregates()?;
    let (globals, global_init, global_names) = l.lower_globals()?;
    l.signatures()?;
    let mut funcs = Vec::new();
    for f in &unit.funcs {
        funcs.push(l.lower_func(f)?);
    }
    let entry = unit
        .funcs
        .iter()
        .position(|f| f.name == "main")
        .unwrap_or(unit.funcs.len() - 1);
    Ok(HProgram {
        width,
        funcs,
        entry,
        globals,
        global_init,
        global_names,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compiler::parse::parse;

    fn lw(src: &str) -> Result<HProgram, CompileError> {
        lower(&parse(src).unwrap(), Width::W16)
    }

    #[test]
    fn frame_layout_with_calls() {
        let p = lw("int f(int x) { return x; } int main(int a) { int b = f(a); return b; }").unwrap();
        assert!(!p.funcs[0].has_calls);
        assert_eq!(p.funcs[0].frame_size, 1);
        let m = &p.funcs[1];
        assert!(m.has_calls);
        assert_eq!(m.params[0].word, LINK_WORDS + HIDDEN_WORDS);
        assert_eq!(m.frame_size, LINK_WORDS + HIDDEN_WORDS + 2);
        assert_eq!(p.entry, 1);
    }

    #[test]
    fn struct_array_member_scans_only_that_member() {
        let p = lw("struct P { int a; int b; }; struct P A[3]; int f(int i) { return A[i].b; }").unwrap();
        let HStmt::Return(Some(HExpr::Load(pl))) = &p.funcs[0].body[0] else {
            panic!("{:?}", p.funcs[0].body)
        };
        let offs: Vec<usize> = pl.cands.iter().map(|c| c.word.off).collect();
        assert_eq!(offs, vec![1, 3, 5]);
    }

    #[test]
    fn union_members_share_words() {
        let p = lw("union U { int a[2]; long l; }; union U u; int f(void) { u.l = 5; return u.a[1]; }").unwrap();
        let HStmt::Assign(pl, _) = &p.funcs[0].body[0] else { panic!() };
        assert!(pl.long);
        assert_eq!(pl.cands[0].word.off, 0);
    }

    #[test]
    fn pointer_needs_range() {
        assert!(lw("int A[4]; int f(void) { int *p = &A[0]; return *p; }").is_err());
        let p = lw("int A[4]; int f(void) { restrict A int *p = &A[1]; return *p; }").unwrap();
        let HStmt::Return(Some(HExpr::Load(pl))) = &p.funcs[0].body[1] else { panic!() };
        assert!(matches!(pl.sel, Sel::Addr(_)));
        assert_eq!(pl.cands.len(), 4);
    }

    #[test]
    fn static_out_of_range_index_rejected() {
        let e = lw("int f(void) { int a[3]; return a[3]; }").unwrap_err();
        assert!(matches!(e, CompileError::Semantic { .. }), "{e}");
    }

    #[test]
    fn calls_in_conditions_rejected() {
        let e = lw("int g(void) { return 1; } int f(void) { if (g()) return 1; return 0; }").unwrap_err();
        assert!(matches!(e, CompileError::Unsupported { .. }), "{e}");
    }

    #[test]
    fn range_initializer_fills_array() {
        let p = lw("#define N 4\nint S(void) { int a[N] = {[0 ... N-1] = 1,}; return a[0]; }").unwrap();
        let assigns = p.funcs[0]
            .body
            .iter()
            .filter(|s| matches!(s, HStmt::Assign(_, HExpr::Lit(1))))
            .count();
        assert_eq!(assigns, 4);
    }
}
