mod common;

use std::collections::BTreeMap;

use chaotic::cipher::{Padding, PlainOp, Tag, Width};
use chaotic::compiler::interp::interpret;
use chaotic::compiler::lower_source;
use common::*;
use proptest::prelude::*;

const ARITH: &str = "int f(int a, int b) {
    int x = a * 3 - b;
    if (x < b) x = x + a * b;
    else x = x - 7;
    return x ^ (a & b);
}";

fn op() -> impl Strategy<Value = PlainOp> {
    prop_oneof![
        Just(PlainOp::Add),
        Just(PlainOp::Sub),
        Just(PlainOp::Mul),
        Just(PlainOp::Div),
        Just(PlainOp::Rem),
        Just(PlainOp::Xor),
        Just(PlainOp::And),
        Just(PlainOp::Or),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn encrypt_then_decrypt(bits in prop_oneof![Just(8u32), Just(16), Just(32)], v: u64, nonce: u64, tag in 0u8..128) {
        let c = cipher(Width::new(bits).unwrap());
        let v = v & c.width().mask();
        let p = Padding { tag: Tag(tag), nonce: nonce & c.layout().nonce_mask() };
        let ct = c.encrypt(v, p).unwrap();
        prop_assert_eq!(c.decrypt(ct), (v, p));
    }

    #[test]
    fn lifted_ops_agree_with_plaintext(op in op(), a: u64, b: u64, seed: u64) {
        use rand::SeedableRng;
        let c = cipher(Width::W16);
        let w = c.width();
        let (a, b) = (a & w.mask(), b & w.mask());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x = c.encrypt_data(a, &mut rng);
        let y = c.encrypt_data(b, &mut rng);
        prop_assert_eq!(c.value(c.lift_op(op, x, y)), op.apply(w, a, b));
    }

    #[test]
    fn compiled_matches_interpreter(a in -300i128..300, b in -300i128..300, seed in 0u64..1_000) {
        let c = cipher(Width::W16);
        let hp = lower_source(ARITH, c.width()).unwrap();
        let want = interpret(&hp, &[a, b], &BTreeMap::new(), 100_000).unwrap();
        let comp = build(ARITH, &c, seed);
        let (_, _, got) = run(&comp, &c, &[a, b], seed);
        prop_assert_eq!(got.ret, want.ret);
    }
}
