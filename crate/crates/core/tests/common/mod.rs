#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use chaotic::cipher::{Cipher, Key, Width};
use chaotic::compiler::interp::interpret;
use chaotic::compiler::{compile_program, execute, lower_source, Compiled, Config, Outcome};
use chaotic::vm::{Inputs, RunOutput, VmConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const ACKERMANN: &str = include_str!("../../fixtures/ackermann.c");
pub const SIEVE: &str = include_str!("../../fixtures/sieve.c");

pub struct Fixture {
    pub name: String,
    pub src: String,
    pub args: Vec<i128>,
}

/// Every corpus program with its arguments, plus the two worked examples.
pub fn corpus() -> Vec<Fixture> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/corpus");
    let mut out = vec![
        Fixture { name: "ackermann".into(), src: ACKERMANN.into(), args: vec![3, 1] },
        Fixture { name: "sieve".into(), src: SIEVE.into(), args: vec![10] },
    ];
    let mut paths: Vec<_> = std::fs::read_dir(&dir)
        .expect("corpus directory")
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "c"))
        .collect();
    paths.sort();
    for p in paths {
        let src = std::fs::read_to_string(&p).unwrap();
        let first = src.lines().next().unwrap_or("");
        let args = first
            .strip_prefix("// args:")
            .unwrap_or_else(|| panic!("{} lacks an args line", p.display()))
            .split_whitespace()
            .map(|a| a.parse().unwrap())
            .collect();
        out.push(Fixture {
            name: p.file_stem().unwrap().to_string_lossy().into_owned(),
            src,
            args,
        });
    }
    out
}

pub fn cipher(w: Width) -> Cipher {
    Cipher::standard(&Key::new(*b"chaotic-test-key"), w)
}

pub fn reference(src: &str, w: Width, args: &[i128]) -> Outcome {
    let hp = lower_source(src, w).unwrap();
    interpret(&hp, args, &BTreeMap::new(), 50_000_000).unwrap()
}

pub fn build(src: &str, c: &Cipher, seed: u64) -> Compiled {
    compile_program(src, c, &Config::new(seed)).unwrap_or_else(|e| panic!("seed {seed}: {e}"))
}

/// Run with inputs drawn from a generator keyed on `seed`.
pub fn run(compiled: &Compiled, c: &Cipher, args: &[i128], seed: u64) -> (Inputs, RunOutput, Outcome) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ 0x5eed);
    execute(compiled, c, args, &BTreeMap::new(), &mut rng, &VmConfig::default())
        .unwrap_or_else(|e| panic!("seed {seed}: {e}"))
}

/// A program, its arguments and the hand-counted free offsets of one run:
/// `n` distinct offset classes among executed data-writing arithmetic, `m`
/// input words.
pub struct CountFixture {
    pub name: &'static str,
    pub src: &'static str,
    pub args: &'static [i128],
    pub n: usize,
    pub m: usize,
}

const STRAIGHT: &str = "int f(int x) { int y = x + 1; int z = y * 3; return z; }";
const BRANCH: &str = "int f(int x) { int z; if (x < 5) z = 1; else z = 2; return z; }";
const SUM: &str = "int f(int n) { int s = 0; for (int i = 0; i < n; i++) s = s + i; return s; }";
const ALTERNATE: &str =
    "int f(int n) { int z = 0; for (int i = 0; i < n; i++) { if (i < 1) z = 1; else z = 2; } return z; }";
const GLOBAL: &str = "int g = 5;\nint f() { return g + 1; }";

// Counting rules for this compiler's output: one literal per uninitialised
// local slot; `a op b` re-offsets each variable operand once, materialises
// a literal operand once, then writes the result and its trailer; a plain
// assignment of a literal is literal + trailer; a condition re-offsets or
// materialises both sides; `return v` re-offsets v, then lands in v0; a
// loop back edge adds one resync per modified variable.
pub const COUNT_FIXTURES: &[CountFixture] = &[
    // 2 slots, y = x + 1 (4), z = y * 3 (4), return (2); inputs sp, a0.
    CountFixture { name: "straight", src: STRAIGHT, args: &[4], n: 12, m: 2 },
    // 1 slot, z's state entering the branch (2), x < 5 (2), then arm:
    // literal, write and join resync (3), return (2).
    CountFixture { name: "one_arm", src: BRANCH, args: &[4], n: 10, m: 2 },
    // The same loop run three and six times exposes the same classes.
    CountFixture { name: "loop_3", src: SUM, args: &[3], n: 20, m: 2 },
    CountFixture { name: "loop_6", src: SUM, args: &[6], n: 20, m: 2 },
    // Both arms run; the else arm adds its literal and write (2) but shares
    // the join trailer with the then arm.
    CountFixture { name: "arms_1", src: ALTERNATE, args: &[1], n: 21, m: 2 },
    CountFixture { name: "arms_2", src: ALTERNATE, args: &[2], n: 23, m: 2 },
    CountFixture { name: "arms_5", src: ALTERNATE, args: &[5], n: 23, m: 2 },
    // Load g, re-offset (1), literal 1, add, v0 (3); inputs zer and g.
    CountFixture { name: "global", src: GLOBAL, args: &[], n: 4, m: 2 },
];
