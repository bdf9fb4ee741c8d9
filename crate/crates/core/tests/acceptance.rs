//! Acceptance criteria, one line each. Runs without the test harness so the
//! verdict lines always reach the output.

mod common;

use std::collections::{BTreeMap, HashMap};
use std::time::Instant;

use chaotic::analyzer::{
    analyze, collision_audit, free_delta_count, shift_inputs, shift_transform, EnsembleSpec,
    SuiteOptions,
};
use chaotic::cipher::{Cipher, Ciphertext, Width};
use chaotic::compiler::{encode_inputs, Role};
use chaotic::isa::{Instr, Opcode, Reg};
use chaotic::vm::{self, Effect, Inputs, Trace, VmConfig};
use common::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

fn width(bits: u32) -> Width {
    Width::new(bits).unwrap()
}

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

/// Ackermann(3,1) = 13 for 100 seeds at w=16, within 30 s.
fn ackermann() -> Verdict {
    let c = cipher(width(16));
    let start = Instant::now();
    let wrong: Vec<u64> = (0..100u64)
        .filter(|&s| {
            let comp = build(ACKERMANN, &c, s);
            run(&comp, &c, &[3, 1], s).2.ret != Some(13)
        })
        .collect();
    let secs = start.elapsed().as_secs_f64();
    verdict(
        wrong.is_empty() && secs < 30.0,
        format!("100 seeds, {} wrong {wrong:?}, {secs:.2} s (limit 30 s)", wrong.len()),
    )
}

/// Register contents before each event, replayed from the inputs.
fn registers_before(inputs: &Inputs, trace: &Trace) -> Vec<HashMap<Reg, Ciphertext>> {
    let mut regs: HashMap<Reg, Ciphertext> = inputs.regs.iter().map(|(&r, &c)| (r, c)).collect();
    let mut out = Vec::with_capacity(trace.events.len());
    for ev in &trace.events {
        out.push(regs.clone());
        match ev.effect {
            Effect::Reg { reg, value } | Effect::Load { reg, value, .. } => {
                regs.insert(reg, value);
            }
            Effect::Pair { reg, hi, lo } => {
                regs.insert(reg, hi);
                regs.insert(reg.pair_low(), lo);
            }
            _ => {}
        }
    }
    out
}

/// Sieve(10) = 7, and every load reads its word through the base block and
/// displacement block of the store that wrote it.
fn sieve() -> Verdict {
    let c = cipher(width(16));
    let mut pairs = 0;
    let mut mismatches = 0;
    let mut wrong = 0;
    for s in 0..5u64 {
        let comp = build(SIEVE, &c, s);
        let (inputs, out, outcome) = run(&comp, &c, &[10], s);
        if outcome.ret != Some(7) {
            wrong += 1;
        }
        let regs = registers_before(&inputs, &out.trace);
        let mut last_store: HashMap<usize, (Ciphertext, Ciphertext)> = HashMap::new();
        for (i, ev) in out.trace.events.iter().enumerate() {
            let (base, k) = match comp.program.instrs[ev.pc] {
                Instr::Sw { base, k, .. } | Instr::Lw { base, k, .. } => (base, k),
                _ => continue,
            };
            let b = regs[i][&base];
            match ev.effect {
                Effect::Store { slot, .. } => {
                    last_store.insert(slot, (b, k));
                }
                Effect::Load { slot, .. } => {
                    if let Some(&w) = last_store.get(&slot) {
                        pairs += 1;
                        if w != (b, k) {
                            mismatches += 1;
                        }
                    }
                }
                _ => {}
            }
        }
    }
    verdict(
        wrong == 0 && pairs > 0 && mismatches == 0,
        format!("5 seeds, {wrong} wrong results; {pairs} store/load pairs, {mismatches} with differing base or displacement block"),
    )
}

struct CorpusStats {
    fixtures: usize,
    oracle_failures: Vec<String>,
    audit_failures: Vec<String>,
    structural_failures: Vec<String>,
}

/// One pass over the corpus serves criteria 3, 8 and 10: 21 seeds give 21
/// oracle runs and 20 consecutive seed pairs per fixture.
fn corpus_pass() -> CorpusStats {
    let c = cipher(width(16));
    let fixtures = corpus();
    let results: Vec<(Vec<String>, Vec<String>, Vec<String>)> = fixtures
        .par_iter()
        .map(|f| {
            let mut oracle = Vec::new();
            let mut audit = Vec::new();
            let mut structural = Vec::new();
            let expect = reference(&f.src, c.width(), &f.args);
            let mut prev: Option<(chaotic::compiler::Compiled, Trace)> = None;
            for s in 0..21u64 {
                let comp = build(&f.src, &c, 1000 + s);
                let (inputs, out, outcome) = run(&comp, &c, &f.args, 1000 + s);
                if outcome != expect {
                    oracle.push(format!("{}#{s}", f.name));
                }
                if !collision_audit(&comp, &c, &inputs, &out.trace).passed() {
                    audit.push(format!("{}#{s}", f.name));
                }
                if let Some((pc, pt)) = &prev {
                    let same_shape = pc.program.shapes() == comp.program.shapes();
                    let same_trace = pt.structural_diff(&out.trace).is_empty();
                    let consts_differ = pc
                        .program
                        .instrs
                        .iter()
                        .zip(&comp.program.instrs)
                        .any(|(a, b)| a.consts() != b.consts());
                    let blocks_differ = !pt.ciphertext_diff(&out.trace).is_empty();
                    if !(same_shape && same_trace && consts_differ && blocks_differ) {
                        structural.push(format!("{}#{s}", f.name));
                    }
                }
                prev = Some((comp, out.trace));
            }
            (oracle, audit, structural)
        })
        .collect();
    let mut st = CorpusStats {
        fixtures: fixtures.len(),
        oracle_failures: vec![],
        audit_failures: vec![],
        structural_failures: vec![],
    };
    for (o, a, s) in results {
        st.oracle_failures.extend(o);
        st.audit_failures.extend(a);
        st.structural_failures.extend(s);
    }
    st
}

/// Uniformity and independence on one w=8, N=10000 Sieve ensemble.
fn statistics() -> (Verdict, Verdict) {
    let c = cipher(width(8));
    let spec = EnsembleSpec::new(SIEVE, &[10], 10_000, 0xC0FFEE);
    let rep = match analyze(&spec, &c, &SuiteOptions::default()) {
        Ok(r) => r,
        Err(e) => {
            let v = verdict(false, format!("ensemble failed: {e}"));
            return (v, verdict(false, "ensemble failed"));
        }
    };
    eprint!("{}", rep.render());
    let crit = rep.uniformity.first().map_or(0.0, |t| t.critical);
    let uni_powered = rep.uniformity.iter().all(|t| t.pass.is_some());
    let uni = verdict(
        rep.uniformity.len() == 20
            && uni_powered
            && (crit - 310.46).abs() < 0.01
            && rep.uniformity_rejections() <= 1,
        format!(
            "{} points, {} rejections (budget 1), 255 dof, critical {crit:.2}",
            rep.uniformity.len(),
            rep.uniformity_rejections()
        ),
    );
    let unconfirmed = rep.dependent.iter().filter(|d| !d.confirmed()).count();
    let ind_powered = rep.independence.iter().all(|t| t.pass.is_some());
    let ind = verdict(
        rep.independence.len() == 10
            && ind_powered
            && rep.independence_rejections() <= 1
            && !rep.dependent.is_empty()
            && unconfirmed == 0,
        format!(
            "{} pairs, {} rejections (budget 1); {} flagged pairs, {unconfirmed} neither rejected nor block-equal",
            rep.independence.len(),
            rep.independence_rejections(),
            rep.dependent.len()
        ),
    );
    (uni, ind)
}

/// Free-offset counts on the hand-counted fixtures.
fn lemma_counts() -> Verdict {
    let c = cipher(width(16));
    let mut bad = Vec::new();
    for f in COUNT_FIXTURES {
        let comp = build(f.src, &c, 7);
        let (_, out, _) = run(&comp, &c, f.args, 7);
        let got = free_delta_count(&comp, &out.trace);
        if (got.n, got.m) != (f.n, f.m) {
            bad.push(format!("{}: got ({}, {}) want ({}, {})", f.name, got.n, got.m, f.n, f.m));
        }
    }
    let programs: std::collections::BTreeSet<&str> = COUNT_FIXTURES.iter().map(|f| f.src).collect();
    verdict(
        bad.is_empty() && programs.len() >= 5,
        format!("{} runs over {} programs, mismatches {bad:?}", COUNT_FIXTURES.len(), programs.len()),
    )
}

fn shift_check(c: &Cipher, src: &str, args: &[i128], delta: u64, seed: u64) -> Result<(), String> {
    let orig = build(src, c, seed);
    let sh = shift_transform(&orig, c, delta).map_err(|e| e.to_string())?;
    let none = BTreeMap::new();
    let ia = encode_inputs(&orig.scheme, c, args, &none, &mut ChaCha8Rng::seed_from_u64(seed))
        .map_err(|e| e.to_string())?;
    let ib = shift_inputs(&sh, c, args, &none, &mut ChaCha8Rng::seed_from_u64(seed))
        .map_err(|e| e.to_string())?;
    let a = vm::run(&orig.program, &ia, c, &VmConfig::default()).map_err(|e| e.to_string())?;
    let b = vm::run(&sh.program, &ib, c, &VmConfig::default()).map_err(|e| e.to_string())?;
    if !a.trace.structural_diff(&b.trace).is_empty() {
        return Err("structural diff".into());
    }
    if a.trace.branch_outcomes() != b.trace.branch_outcomes() {
        return Err("branch outcomes differ".into());
    }
    let w = c.width();
    for (i, (ea, eb)) in a.trace.events.iter().zip(&b.trace.events).enumerate() {
        if orig.scheme.pcs[ea.pc].role != Role::Data {
            continue;
        }
        for ((_, x), (_, y)) in ea.observations().into_iter().zip(eb.observations()) {
            if w.sub(c.value(y), c.value(x)) != delta {
                return Err(format!("event {i} offset not {delta}"));
            }
        }
    }
    Ok(())
}

fn shift() -> Verdict {
    let c = cipher(width(16));
    let mut bad = Vec::new();
    for delta in [1u64, 7, 255] {
        for (name, src, args) in [("ackermann", ACKERMANN, &[3i128, 1][..]), ("sieve", SIEVE, &[10][..])] {
            if let Err(e) = shift_check(&c, src, args, delta, 21) {
                bad.push(format!("{name} +{delta}: {e}"));
            }
        }
    }
    verdict(bad.is_empty(), format!("deltas 1, 7, 255 on ackermann and sieve; failures {bad:?}"))
}

/// Share of builds in which a source `==` compiles to beq.
fn liar_balance() -> Verdict {
    let c = cipher(width(16));
    let src = "int f(int x, int y) { if (x == y) return 1; return 0; }";
    let mut beq = 0;
    let mut builds = 0;
    for s in 0..2000u64 {
        let comp = build(src, &c, s);
        let eq: Vec<Opcode> = comp
            .program
            .instrs
            .iter()
            .map(Instr::opcode)
            .filter(|o| o.class() == Opcode::Beq)
            .collect();
        if eq.len() != 1 {
            return verdict(false, format!("seed {s}: {} equality branches, expected 1", eq.len()));
        }
        builds += 1;
        if eq[0] == Opcode::Beq {
            beq += 1;
        }
    }
    let share = 100.0 * beq as f64 / builds as f64;
    verdict(
        (47.0..=53.0).contains(&share),
        format!("{beq} of {builds} builds use beq ({share:.1}%, window 47-53%)"),
    )
}

fn main() {
    let mut lines: Vec<(usize, Verdict)> = Vec::new();
    lines.push((1, ackermann()));
    lines.push((2, sieve()));
    let corpus = corpus_pass();
    lines.push((
        3,
        verdict(
            corpus.fixtures >= 25 && corpus.oracle_failures.is_empty(),
            format!(
                "{} fixtures x 21 seeds against the interpreter; mismatches {:?}",
                corpus.fixtures, corpus.oracle_failures
            ),
        ),
    ));
    let (uni, ind) = statistics();
    lines.push((4, uni));
    lines.push((5, ind));
    lines.push((6, lemma_counts()));
    lines.push((7, shift()));
    lines.push((
        8,
        verdict(
            corpus.audit_failures.is_empty(),
            format!(
                "{} corpus runs audited; collisions in {:?}",
                corpus.fixtures * 21,
                corpus.audit_failures
            ),
        ),
    ));
    lines.push((9, liar_balance()));
    lines.push((
        10,
        verdict(
            corpus.structural_failures.is_empty(),
            format!(
                "{} fixtures x 20 seed pairs; failing pairs {:?}",
                corpus.fixtures, corpus.structural_failures
            ),
        ),
    ));
    let mut failed = 0;
    for (n, v) in &lines {
        println!(
            "criterion {n:>2}: {} | {}",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
        if !v.pass {
            failed += 1;
        }
    }
    println!("ACCEPTANCE passed={} failed={failed}", lines.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
