mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};

use chaotic::cipher::Width;
use common::*;

#[test]
fn corpus_matches_reference_interpreter() {
    let w = Width::W16;
    let c = cipher(w);
    let mut failed = Vec::new();
    for fx in corpus() {
        let r = catch_unwind(AssertUnwindSafe(|| {
            let want = reference(&fx.src, w, &fx.args);
            for seed in 0..3 {
                let compiled = build(&fx.src, &c, seed);
                let (_, _, got) = run(&compiled, &c, &fx.args, seed);
                assert_eq!(got, want, "{} seed {seed}", fx.name);
            }
        }));
        if r.is_err() {
            failed.push(fx.name.clone());
        }
    }
    assert!(failed.is_empty(), "failing fixtures: {failed:?}");
}

#[test]
fn frames_leave_no_mappings_behind() {
    let c = cipher(Width::W16);
    for (src, args) in [(ACKERMANN, &[2i128, 2][..]), (SIEVE, &[10][..])] {
        let comp = build(src, &c, 6);
        let (inputs, out, _) = run(&comp, &c, args, 6);
        let globals: std::collections::HashSet<_> = inputs.mem.iter().map(|(a, _)| *a).collect();
        let stale: Vec<_> = out.tlb.mapped().filter(|(a, _)| !globals.contains(a)).collect();
        assert!(stale.is_empty(), "{} stale mappings", stale.len());
    }
}
