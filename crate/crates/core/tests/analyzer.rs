mod common;

use std::collections::BTreeMap;

use chaotic::analyzer::{
    analyze, build_ensemble, collision_audit, dependency_pairs, point_uniformity,
    shift_inputs, shift_transform, AnalyzeError, EnsembleSpec, SuiteOptions,
};
use chaotic::cipher::{Ciphertext, Width};
use chaotic::compiler::{decode_outputs, Role};
use chaotic::vm::{self, VmConfig};
use common::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn w(bits: u32) -> Width {
    Width::new(bits).unwrap()
}

/// Compile, then run the original and a shifted copy on inputs that share
/// their padding, so the only difference beneath the encryption is `delta`.
fn shifted_pair(src: &str, args: &[i128], delta: u64, seed: u64) {
    let c = cipher(w(16));
    let orig = build(src, &c, seed);
    let sh = shift_transform(&orig, &c, delta).unwrap();
    let none = BTreeMap::new();
    let inputs_a = chaotic::compiler::encode_inputs(
        &orig.scheme,
        &c,
        args,
        &none,
        &mut ChaCha8Rng::seed_from_u64(seed),
    )
    .unwrap();
    let inputs_b = shift_inputs(&sh, &c, args, &none, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let a = vm::run(&orig.program, &inputs_a, &c, &VmConfig::default()).unwrap();
    let b = vm::run(&sh.program, &inputs_b, &c, &VmConfig::default()).unwrap();
    assert!(a.trace.structural_diff(&b.trace).is_empty());
    assert_eq!(a.trace.branch_outcomes(), b.trace.branch_outcomes());
    let wd = c.width();
    let mut data = 0;
    for (i, (ea, eb)) in a.trace.events.iter().zip(&b.trace.events).enumerate() {
        if orig.scheme.pcs[ea.pc].role != Role::Data {
            continue;
        }
        for ((_, x), (_, y)) in ea.observations().into_iter().zip(eb.observations()) {
            assert_eq!(
                wd.sub(c.value(y), c.value(x)),
                delta & wd.mask(),
                "event {i} pc {} {:?}",
                ea.pc,
                ea.opcode
            );
            data += 1;
        }
    }
    assert!(data > 0);
    let out_a = decode_outputs(&orig.scheme, &c, &inputs_a, &a).unwrap();
    let out_b = decode_outputs(&sh.scheme, &c, &inputs_b, &b).unwrap();
    assert_eq!(out_a, out_b);
}

#[test]
fn shift_moves_every_data_word_by_delta() {
    for delta in [0, 1, 7, 255] {
        shifted_pair(ACKERMANN, &[3, 1], delta, 11);
        shifted_pair(SIEVE, &[10], delta, 12);
    }
}

#[test]
fn shift_by_seven_leaves_twenty_raw_in_v0() {
    let c = cipher(w(16));
    let orig = build(ACKERMANN, &c, 5);
    let sh = shift_transform(&orig, &c, 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (_, out, outcome) =
        chaotic::compiler::execute(&sh, &c, &[3, 1], &BTreeMap::new(), &mut rng, &VmConfig::default())
            .unwrap();
    assert_eq!(outcome.ret, Some(13));
    // Decoded under the unshifted scheme's return offset, the word reads 20.
    let v0 = c.value(out.state.reg(chaotic::isa::Reg::V0).unwrap());
    let raw = c.width().sub(v0, orig.scheme.ret_deltas[0]);
    assert_eq!(raw, 20);
}

#[test]
fn audit_passes_on_sieve_and_catches_forged_constant() {
    let c = cipher(w(16));
    let comp = build(SIEVE, &c, 3);
    let (inputs, out, _) = run(&comp, &c, &[10], 3);
    let rep = collision_audit(&comp, &c, &inputs, &out.trace);
    assert!(rep.passed(), "{rep:?}");

    let mut forged = comp.clone();
    let block = out.trace.points()[0].1;
    let pc = forged
        .program
        .instrs
        .iter()
        .position(|i| !i.consts().is_empty())
        .unwrap();
    forged.program.instrs[pc].consts_mut()[0] = block;
    let rep = collision_audit(&forged, &c, &inputs, &out.trace);
    assert!(!rep.passed());
    assert_eq!(rep.data_collisions, vec![(block, vec![pc])]);
    assert_eq!(rep.mistagged, vec![pc]);
}

#[test]
fn copies_are_dependent_and_block_equal() {
    let c = cipher(w(16));
    let comp = build(SIEVE, &c, 4);
    let (inputs, out, _) = run(&comp, &c, &[10], 4);
    let rep = dependency_pairs(&comp, &c, &inputs, &out.trace);
    assert!(rep.pair_count() > 0);
    // Every store carries exactly the block of the register it stores.
    for (i, ev) in out.trace.events.iter().enumerate() {
        if let chaotic::vm::Effect::Store { slot, value, .. } = ev.effect {
            let p = chaotic::vm::TracePoint { event: i, loc: chaotic::vm::Location::Mem(slot) };
            if let Some(d) = rep.get(p) {
                assert!(d.copy);
                assert_ne!(value, Ciphertext(0));
            }
        }
    }
}

#[test]
fn ensemble_is_reproducible_and_invariant() {
    let c = cipher(w(8));
    let spec = EnsembleSpec::new(SIEVE, &[10], 8, 77);
    let a = build_ensemble(&spec, &c, None).unwrap();
    let b = build_ensemble(&spec, &c, None).unwrap();
    assert_eq!(a.blocks, b.blocks);
    assert_eq!(a.len(), 8);
    assert!(a.outcomes.iter().all(|o| o.ret == Some(7)));
    let one = build_ensemble(&EnsembleSpec::new(SIEVE, &[10], 1, 77), &c, None).unwrap();
    assert_eq!(one.len(), 1);
    assert!(matches!(
        build_ensemble(&EnsembleSpec::new(SIEVE, &[10], 0, 77), &c, None),
        Err(AnalyzeError::Empty)
    ));
}

#[test]
fn small_ensemble_is_underpowered() {
    let c = cipher(w(8));
    let e = build_ensemble(&EnsembleSpec::new(ACKERMANN, &[1, 1], 20, 1), &c, None).unwrap();
    let r = point_uniformity(&e, e.points[0]).unwrap();
    assert_eq!(r.pass, None);
}

#[test]
fn zero_deltas_fail_uniformity() {
    let c = cipher(w(8));
    let hp = chaotic::compiler::lower_source(SIEVE, c.width()).unwrap();
    let mut members = Vec::new();
    for s in 0..2560u64 {
        let cfg = chaotic::compiler::Config {
            zero_deltas: true,
            ..chaotic::compiler::Config::new(s)
        };
        let comp = chaotic::compiler::codegen::generate(&hp, &c, &cfg).unwrap();
        let (_, out, _) = run(&comp, &c, &[10], s);
        members.push(out.trace);
    }
    let comp = chaotic::compiler::codegen::generate(
        &hp,
        &c,
        &chaotic::compiler::Config {
            zero_deltas: true,
            ..chaotic::compiler::Config::new(0)
        },
    )
    .unwrap();
    let p = members[0]
        .points()
        .into_iter()
        .map(|(p, _)| p)
        .find(|p| comp.scheme.pcs[members[0].events[p.event].pc].role == Role::Data)
        .unwrap();
    let values: Vec<u64> = members.iter().map(|t| c.value(t.value_at(p).unwrap())).collect();
    let r = chaotic::analyzer::uniformity("broken", &values, 8);
    assert_eq!(r.pass, Some(false), "{r}");
}

#[test]
fn modest_sieve_analysis_passes() {
    let c = cipher(w(8));
    let spec = EnsembleSpec::new(SIEVE, &[10], 3000, 42);
    let rep = analyze(&spec, &c, &SuiteOptions::default()).unwrap();
    println!("{}", rep.render());
    assert!(rep.passed(), "{}", rep.render());
    assert_eq!(rep.uniformity.len(), 20);
    assert_eq!(rep.independence.len(), 10);
}
