mod common;

use chaotic::analyzer::free_delta_count;
use chaotic::cipher::Width;
use common::*;

#[test]
fn hand_counted_fixtures() {
    let c = cipher(Width::new(16).unwrap());
    for f in COUNT_FIXTURES {
        for seed in [1, 2, 3] {
            let comp = build(f.src, &c, seed);
            let (_, out, _) = run(&comp, &c, f.args, seed);
            let got = free_delta_count(&comp, &out.trace);
            assert_eq!((got.n, got.m), (f.n, f.m), "{} seed {seed}", f.name);
            assert_eq!(got.bound_bits, 16 * (f.n + f.m) as u64);
        }
    }
}

#[test]
fn bound_is_width_times_count() {
    let c = cipher(Width::new(8).unwrap());
    let comp = build(COUNT_FIXTURES[0].src, &c, 9);
    let (_, out, _) = run(&comp, &c, &[4], 9);
    let got = free_delta_count(&comp, &out.trace);
    assert_eq!(got.bound_bits, 8 * (got.n + got.m) as u64);
}
