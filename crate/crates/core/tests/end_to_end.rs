use std::collections::BTreeMap;

use chaotic::cipher::{Cipher, Key, Width};
use chaotic::compiler::interp::interpret;
use chaotic::compiler::{compile_program, execute, lower_source, Config};
use chaotic::vm::VmConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn cipher(w: Width) -> Cipher {
    Cipher::standard(&Key::new(*b"end-to-end-key!!"), w)
}

fn check(src: &str, w: Width, args: &[i128], seeds: u64) {
    let c = cipher(w);
    let hp = lower_source(src, w).unwrap();
    let want = interpret(&hp, args, &BTreeMap::new(), 10_000_000).unwrap();
    for seed in 0..seeds {
        let compiled = compile_program(src, &c, &Config::new(seed)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let (_, _, got) = execute(&compiled, &c, args, &BTreeMap::new(), &mut rng, &VmConfig::default())
            .unwrap_or_else(|e| panic!("seed {seed}: {e}"));
        assert_eq!(got, want, "seed {seed}");
    }
}

#[test]
fn ackermann_runs() {
    check(include_str!("../fixtures/ackermann.c"), Width::W16, &[3, 1], 5);
}

#[test]
fn sieve_runs() {
    check(include_str!("../fixtures/sieve.c"), Width::W16, &[10], 5);
    check(include_str!("../fixtures/sieve.c"), Width::W8, &[10], 5);
}
