//! Checking that no constant block ever appears as runtime data and that
//! each constant position class owns its blocks.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use crate::cipher::{Cipher, Ciphertext, Tag};
use crate::compiler::Compiled;
use crate::isa::semantics::constants;
use crate::vm::{InputLoc, Inputs, Trace};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditReport {
    /// Distinct constant blocks per context tag.
    pub classes: BTreeMap<u8, usize>,
    pub runtime_blocks: usize,
    /// Constant blocks seen among runtime data, with the pcs holding them.
    pub data_collisions: Vec<(Ciphertext, Vec<usize>)>,
    /// Blocks claimed by more than one constant position class.
    pub class_collisions: Vec<(Ciphertext, Vec<u8>)>,
    /// Constants whose padding tag is wrong for their position.
    pub mistagged: Vec<usize>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.data_collisions.is_empty()
            && self.class_collisions.is_empty()
            && self.mistagged.is_empty()
    }
}

/// Every runtime block of a run: inputs (addresses included) and every block
/// the trace exposes.
pub fn runtime_blocks(inputs: &Inputs, trace: &Trace) -> HashSet<Ciphertext> {
    let mut s: HashSet<Ciphertext> = inputs.regs.values().copied().collect();
    for &(a, v) in &inputs.mem {
        s.insert(a);
        s.insert(v);
    }
    for &(loc, v) in &trace.inputs {
        if let InputLoc::Mem(a) = loc {
            s.insert(a);
        }
        s.insert(v);
    }
    for ev in &trace.events {
        s.extend(ev.blocks());
    }
    s
}

pub fn collision_audit(c: &Compiled, cipher: &Cipher, inputs: &Inputs, trace: &Trace) -> AuditReport {
    let mut owners: HashMap<Ciphertext, (BTreeSet<u8>, BTreeSet<usize>)> = HashMap::new();
    let mut mistagged = Vec::new();
    for (pc, ins) in c.program.instrs.iter().enumerate() {
        if constants(cipher, ins).is_err() {
            mistagged.push(pc);
        }
        for &k in ins.consts() {
            let Tag(t) = cipher.tag(k);
            let e = owners.entry(k).or_default();
            e.0.insert(t);
            e.1.insert(pc);
        }
    }
    let runtime = runtime_blocks(inputs, trace);
    let mut classes: BTreeMap<u8, usize> = BTreeMap::new();
    let mut data_collisions = Vec::new();
    let mut class_collisions = Vec::new();
    for (&k, (tags, pcs)) in &owners {
        for &t in tags {
            *classes.entry(t).or_default() += 1;
        }
        if tags.len() > 1 {
            class_collisions.push((k, tags.iter().copied().collect()));
        }
        if runtime.contains(&k) {
            data_collisions.push((k, pcs.iter().copied().collect()));
        }
    }
    data_collisions.sort();
    class_collisions.sort();
    AuditReport {
        classes,
        runtime_blocks: runtime.len(),
        data_collisions,
        class_collisions,
        mistagged,
    }
}
