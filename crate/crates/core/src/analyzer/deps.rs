//! Which observed words share a planned offset, and how many independent
//! offsets a run exposes.
//!
//! Every data word carries the offset of the instruction class that last
//! wrote it: arithmetic results carry their own class, copies carry their
//! source's. Two observations are dependent exactly when they carry the same
//! class, since their plaintext difference is then the same in every
//! recompilation.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::cipher::{Cipher, Ciphertext};
use crate::compiler::{Compiled, Role};
use crate::isa::semantics::address_block;
use crate::isa::{Instr, Reg};
use crate::vm::{Effect, InputLoc, Inputs, Location, Trace, TracePoint};

/// The planned offset an observed word carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Origin {
    Class(u32),
    /// An offset with no other carrier known to the analysis.
    Unique(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Cause {
    /// One instruction observed on different executions.
    SameRegisterSamePoint,
    /// The input and output of a load, store or move.
    Copy,
    /// Different writes constrained to one offset at a join.
    TrailerSpan,
}

impl std::fmt::Display for Cause {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Cause::SameRegisterSamePoint => "same-register-same-point",
            Cause::Copy => "copy",
            Cause::TrailerSpan => "trailer-span",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DataPoint {
    pub point: TracePoint,
    pub pc: usize,
    pub origin: Origin,
    pub copy: bool,
}

/// Data observations of one trace grouped by the offset they carry.
#[derive(Debug, Clone, Default)]
pub struct DependencyReport {
    pub points: Vec<DataPoint>,
    index: HashMap<TracePoint, usize>,
    groups: BTreeMap<Origin, Vec<usize>>,
}

impl DependencyReport {
    pub fn get(&self, p: TracePoint) -> Option<&DataPoint> {
        self.index.get(&p).map(|&i| &self.points[i])
    }

    /// Why `a` and `b` are dependent, if they are. Symmetric.
    pub fn cause(&self, a: TracePoint, b: TracePoint) -> Option<Cause> {
        let (x, y) = (self.get(a)?, self.get(b)?);
        if a == b || x.origin != y.origin {
            return None;
        }
        Some(if x.copy || y.copy {
            Cause::Copy
        } else if x.pc == y.pc {
            Cause::SameRegisterSamePoint
        } else {
            Cause::TrailerSpan
        })
    }

    /// Number of dependent unordered pairs.
    pub fn pair_count(&self) -> usize {
        self.groups.values().map(|g| g.len() * (g.len() - 1) / 2).sum()
    }

    /// Groups of mutually dependent points, largest first.
    pub fn groups(&self) -> Vec<Vec<TracePoint>> {
        let mut g: Vec<Vec<TracePoint>> = self
            .groups
            .values()
            .map(|ix| ix.iter().map(|&i| self.points[i].point).collect())
            .collect();
        g.sort_by_key(|v| std::cmp::Reverse(v.len()));
        g
    }

    /// Every dependent pair with its cause. The count can be quadratic in
    /// the trace length; prefer `groups` or `cause` for large traces.
    pub fn pairs(&self) -> Vec<(TracePoint, TracePoint, Cause)> {
        let mut out = Vec::new();
        for g in self.groups.values() {
            for (i, &a) in g.iter().enumerate() {
                for &b in &g[i + 1..] {
                    let (pa, pb) = (self.points[a].point, self.points[b].point);
                    out.push((pa, pb, self.cause(pa, pb).expect("same group")));
                }
            }
        }
        out
    }
}

fn input_origins(c: &Compiled, cipher: &Cipher, inputs: &Inputs) -> HashMap<InputLoc, Origin> {
    let s = &c.scheme;
    let w = cipher.width();
    let mut m = HashMap::new();
    for p in &s.params {
        for (h, &cl) in p.classes.iter().enumerate() {
            m.insert(
                InputLoc::Reg(Reg::A0.offset((p.slot + h) as u8)),
                Origin::Class(cl),
            );
        }
    }
    m.insert(InputLoc::Reg(Reg::SP), Origin::Class(s.sp_class));
    let zer = inputs.regs.get(&Reg::ZER).copied().unwrap_or(Ciphertext(0));
    for (i, g) in s.globals.iter().enumerate() {
        let addr = address_block(cipher, zer, w.sub(i as u64, s.zer_delta), g.nonce);
        m.insert(InputLoc::Mem(addr), Origin::Class(g.class));
    }
    m
}

/// Trace the offset carried by every data observation of a run.
pub fn dependency_pairs(
    c: &Compiled,
    cipher: &Cipher,
    inputs: &Inputs,
    trace: &Trace,
) -> DependencyReport {
    let known = input_origins(c, cipher, inputs);
    let mut unique = 0usize;
    let mut fresh = || {
        unique += 1;
        Origin::Unique(unique)
    };
    let mut regs: HashMap<Reg, Origin> = HashMap::new();
    let mut mem: HashMap<Ciphertext, Origin> = HashMap::new();
    let reg_origin = |regs: &HashMap<Reg, Origin>, r: Reg, fresh: &mut dyn FnMut() -> Origin| {
        regs.get(&r)
            .copied()
            .or_else(|| known.get(&InputLoc::Reg(r)).copied())
            .unwrap_or_else(fresh)
    };
    let mut rep = DependencyReport::default();
    for (i, ev) in trace.events.iter().enumerate() {
        let info = &c.scheme.pcs[ev.pc];
        let ins = &c.program.instrs[ev.pc];
        let mut obs: Vec<(Location, Origin, bool)> = Vec::new();
        match (ev.effect, ins) {
            (Effect::Reg { reg, .. }, Instr::Mov { rs, .. }) => {
                let o = reg_origin(&regs, *rs, &mut fresh);
                regs.insert(reg, o);
                obs.push((Location::Reg(reg), o, true));
            }
            (Effect::Reg { reg, .. }, _) => {
                let o = info.classes.first().map_or_else(&mut fresh, |&c| Origin::Class(c));
                regs.insert(reg, o);
                obs.push((Location::Reg(reg), o, false));
            }
            (Effect::Pair { reg, .. }, _) => {
                for (h, r) in [reg, reg.pair_low()].into_iter().enumerate() {
                    let o = info.classes.get(h).map_or_else(&mut fresh, |&c| Origin::Class(c));
                    regs.insert(r, o);
                    obs.push((Location::Reg(r), o, false));
                }
            }
            (Effect::Load { reg, addr, .. }, _) => {
                let o = mem
                    .get(&addr)
                    .copied()
                    .or_else(|| known.get(&InputLoc::Mem(addr)).copied())
                    .unwrap_or_else(&mut fresh);
                regs.insert(reg, o);
                obs.push((Location::Reg(reg), o, true));
            }
            (Effect::Store { addr, slot, .. }, Instr::Sw { src, .. }) => {
                let o = reg_origin(&regs, *src, &mut fresh);
                mem.insert(addr, o);
                obs.push((Location::Mem(slot), o, true));
            }
            (Effect::Invalidate { addr }, _) => {
                mem.remove(&addr);
            }
            _ => {}
        }
        if info.role != Role::Data {
            continue;
        }
        for (loc, origin, copy) in obs {
            let point = TracePoint { event: i, loc };
            rep.index.insert(point, rep.points.len());
            rep.groups.entry(origin).or_default().push(rep.points.len());
            rep.points.push(DataPoint {
                point,
                pc: ev.pc,
                origin,
                copy,
            });
        }
    }
    rep.groups.retain(|_, g| g.len() > 1);
    rep
}

/// Independent offsets a run exposes: `n` distinct offset classes among the
/// executed writing instructions (a trailer set or a re-executed
/// instruction counts once) and `m` input words.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FreeDeltaCount {
    pub n: usize,
    pub m: usize,
    /// Entropy bound in bits, `w * (n + m)`.
    pub bound_bits: u64,
}

pub fn free_delta_count(c: &Compiled, trace: &Trace) -> FreeDeltaCount {
    let mut classes = BTreeSet::new();
    for ev in &trace.events {
        let info = &c.scheme.pcs[ev.pc];
        if info.role == Role::Data && ev.opcode.is_arith() {
            classes.extend(info.classes.iter().copied());
        }
    }
    let n = classes.len();
    let m = trace.inputs.len();
    FreeDeltaCount {
        n,
        m,
        bound_bits: c.scheme.width as u64 * (n + m) as u64,
    }
}
