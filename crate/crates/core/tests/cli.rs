use std::path::Path;
use std::process::{Command, Output};

const ACKERMANN: &str = include_str!("../fixtures/ackermann.c");
const SIEVE: &str = include_str!("../fixtures/sieve.c");

fn chaotic(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chaotic"))
        .args(args)
        .current_dir(dir)
        .env_remove("CHAOTIC_KEY")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("ackermann.c"), ACKERMANN).unwrap();
    std::fs::write(dir.path().join("sieve.c"), SIEVE).unwrap();
    dir
}

#[test]
fn compile_run_decode_prints_thirteen() {
    let d = setup();
    let p = d.path();
    assert_eq!(chaotic(p, &["compile", "ackermann.c", "--seed", "1"]).status.code(), Some(0));
    assert_eq!(chaotic(p, &["run", "ackermann.obj", "3", "1", "--seed", "1"]).status.code(), Some(0));
    let out = chaotic(p, &["decode", "ackermann.trace"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout(&out).trim(), "13");
}

#[test]
fn strict_run_without_inputs_faults() {
    let d = setup();
    let p = d.path();
    chaotic(p, &["compile", "ackermann.c"]);
    let out = chaotic(p, &["run", "ackermann.obj", "--strict"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn exit_codes_for_usage_and_compile_errors() {
    let d = setup();
    let p = d.path();
    assert_eq!(chaotic(p, &["frobnicate"]).status.code(), Some(1));
    assert_eq!(chaotic(p, &["compile", "missing.c"]).status.code(), Some(1));
    assert_eq!(chaotic(p, &["compile", "sieve.c", "--key", "xyz"]).status.code(), Some(1));
    std::fs::write(p.join("bad.c"), "int f( {").unwrap();
    assert_eq!(chaotic(p, &["compile", "bad.c"]).status.code(), Some(2));
    assert_eq!(chaotic(p, &["--help"]).status.code(), Some(0));
}

#[test]
fn identical_command_lines_give_identical_files() {
    let d = setup();
    let p = d.path();
    let mut snapshots = Vec::new();
    for _ in 0..2 {
        chaotic(p, &["compile", "sieve.c", "--seed", "9", "--width", "8"]);
        chaotic(p, &["run", "sieve.obj", "10", "--seed", "9"]);
        let files: Vec<Vec<u8>> = ["sieve.obj", "sieve.scheme.toml", "sieve.trace", "sieve.inputs", "sieve.outputs"]
            .iter()
            .map(|f| std::fs::read(p.join(f)).unwrap())
            .collect();
        snapshots.push(files);
    }
    assert_eq!(snapshots[0], snapshots[1]);
    chaotic(p, &["compile", "sieve.c", "--seed", "10", "--width", "8"]);
    assert_ne!(std::fs::read(p.join("sieve.obj")).unwrap(), snapshots[0][0]);
}

#[test]
fn key_comes_from_environment() {
    let d = setup();
    let p = d.path();
    let key = "00112233445566778899aabbccddeeff";
    let with_env = |args: &[&str]| {
        Command::new(env!("CARGO_BIN_EXE_chaotic"))
            .args(args)
            .current_dir(p)
            .env("CHAOTIC_KEY", key)
            .output()
            .unwrap()
    };
    with_env(&["compile", "ackermann.c"]);
    with_env(&["run", "ackermann.obj", "2", "2"]);
    assert_eq!(stdout(&with_env(&["decode", "ackermann.trace"])).trim(), "7");
    // The default key cannot decode what another key encrypted correctly.
    let wrong = chaotic(p, &["decode", "ackermann.trace"]);
    assert_ne!(stdout(&wrong).trim(), "7");
}

#[test]
fn shift_then_run_decodes_the_same() {
    let d = setup();
    let p = d.path();
    chaotic(p, &["compile", "ackermann.c", "--seed", "4"]);
    assert_eq!(chaotic(p, &["shift", "ackermann.obj", "7"]).status.code(), Some(0));
    chaotic(p, &["run", "ackermann.shifted.obj", "3", "1"]);
    let out = chaotic(p, &["decode", "ackermann.shifted.trace"]);
    assert_eq!(stdout(&out).trim(), "13");
}

#[test]
fn audit_passes_on_a_healthy_run() {
    let d = setup();
    let p = d.path();
    chaotic(p, &["compile", "sieve.c"]);
    chaotic(p, &["run", "sieve.obj", "10"]);
    let out = chaotic(p, &["audit", "sieve.obj", "sieve.trace"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("verdict=pass"));
}

#[test]
fn decode_view_lists_every_event() {
    let d = setup();
    let p = d.path();
    chaotic(p, &["compile", "sieve.c"]);
    chaotic(p, &["run", "sieve.obj", "10"]);
    let trace = std::fs::read_to_string(p.join("sieve.trace")).unwrap();
    let events = trace.lines().skip(1).filter(|l| !l.starts_with("in ")).count();
    let out = stdout(&chaotic(p, &["decode", "sieve.trace", "--view"]));
    assert_eq!(out.lines().count(), events + 1);
    assert_eq!(out.lines().last(), Some("7"));
}

#[test]
fn analyze_sieve_at_width_eight_exits_zero() {
    let d = setup();
    let out = chaotic(d.path(), &["analyze", "sieve.c", "--n", "10000", "--width", "8"]);
    let text = stdout(&out);
    assert_eq!(out.status.code(), Some(0), "{text}");
    assert!(text.lines().any(|l| l.starts_with("SUMMARY") && l.ends_with("verdict=pass")));
    assert_eq!(text.lines().filter(|l| l.starts_with("RESULT")).count(), 42);
}

#[test]
fn undersized_ensemble_is_underpowered_not_failed() {
    let d = setup();
    std::fs::write(d.path().join("tiny.c"), "int f(int x) { return x + 1; }").unwrap();
    let out = chaotic(d.path(), &["analyze", "tiny.c", "5", "--n", "2"]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    assert!(stdout(&out).contains("underpowered"));
}
