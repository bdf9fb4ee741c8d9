//! Command-line front end. Every command is deterministic in its flags: the
//! same command line and seed produce byte-identical files and output.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analyzer::{analyze, collision_audit, shift_transform, EnsembleSpec, SuiteOptions};
use crate::cipher::{Cipher, Key, Width};
use crate::compiler::{compile_program, decode_trace, encode_inputs, Compiled, Config, DeltaScheme, Role};
use crate::isa::{parse_object, write_object, Reg};
use crate::vm::trace::{parse_inputs, parse_trace, write_inputs, write_trace};
use crate::vm::{self, Header, Inputs, Location, VmConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_COMPILE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;
pub const EXIT_STATISTICAL: i32 = 4;

pub const KEY_ENV: &str = "CHAOTIC_KEY";
const DEFAULT_KEY: &str = "00000000000000000000000000000000";

#[derive(Debug, Parser)]
#[command(name = "chaotic", version, about = "Chaotic compiler, encrypted VM and trace analyzer")]
pub struct Cli {
    #[command(flatten)]
    pub opts: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalOpts {
    /// Word width in bits (8, 16 or 32). Files carry their own width.
    #[arg(long, global = true)]
    pub width: Option<u32>,
    /// Cipher key as 32 hex digits.
    #[arg(long, global = true, env = KEY_ENV, default_value = DEFAULT_KEY, hide_env_values = true)]
    pub key: String,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, global = true, default_value_t = 10_000_000)]
    pub fuel: u64,
    /// Fault on reads of missing inputs and on malformed operands.
    #[arg(long, global = true)]
    pub strict: bool,
    /// Compile so return values carry offset zero.
    #[arg(long, global = true)]
    pub zero_v0_delta: bool,
    /// Ensemble size for `analyze`.
    #[arg(long, global = true, default_value_t = 10_000)]
    pub n: usize,
    /// Output path or prefix.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compile C source to an object file and a delta scheme.
    Compile { source: PathBuf },
    /// Encode arguments, run an object and record its trace.
    Run {
        object: PathBuf,
        /// Entry-function arguments. Without them and without --inputs the
        /// machine starts with no inputs.
        #[arg(allow_negative_numbers = true)]
        args: Vec<i128>,
        #[arg(long)]
        scheme: Option<PathBuf>,
        /// Pre-encoded inputs file, used instead of arguments.
        #[arg(long)]
        inputs: Option<PathBuf>,
        /// Global initializer override, `name=v1,v2,...`. Repeatable.
        #[arg(long = "global", value_name = "NAME=VALUES")]
        globals: Vec<String>,
    },
    /// Decode a recorded run under its scheme.
    Decode {
        trace: PathBuf,
        #[arg(long)]
        scheme: Option<PathBuf>,
        #[arg(long)]
        inputs: Option<PathBuf>,
        /// Also print every event with its plaintext.
        #[arg(long)]
        view: bool,
    },
    /// Recompile many times and test the observed values statistically.
    Analyze {
        source: PathBuf,
        #[arg(allow_negative_numbers = true)]
        args: Vec<i128>,
        #[arg(long = "global", value_name = "NAME=VALUES")]
        globals: Vec<String>,
    },
    /// Rewrite an object so all runtime data sits DELTA higher.
    Shift {
        object: PathBuf,
        delta: u64,
        #[arg(long)]
        scheme: Option<PathBuf>,
    },
    /// Check that no constant block appears among a run's runtime blocks.
    Audit {
        object: PathBuf,
        trace: PathBuf,
        #[arg(long)]
        scheme: Option<PathBuf>,
        #[arg(long)]
        inputs: Option<PathBuf>,
    },
}

#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

fn fail(code: i32, message: impl std::fmt::Display) -> Failure {
    Failure {
        code,
        message: message.to_string(),
    }
}

fn usage(message: impl std::fmt::Display) -> Failure {
    fail(EXIT_USAGE, message)
}

/// Result of a command: text for stdout and the exit code.
pub struct Output {
    pub stdout: String,
    pub code: i32,
}

fn ok(stdout: String) -> Result<Output, Failure> {
    Ok(Output {
        stdout,
        code: EXIT_OK,
    })
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

/// `base` with its extension replaced by `ext`, which may contain dots.
fn sibling(base: &Path, ext: &str) -> PathBuf {
    let stem = base.file_stem().map(|s| s.to_os_string()).unwrap_or_default();
    let mut name = stem;
    name.push(".");
    name.push(ext);
    base.with_file_name(name)
}

/// The output prefix: `--out` if given, else `input` without extension.
fn prefix(opts: &GlobalOpts, input: &Path) -> PathBuf {
    opts.out.clone().unwrap_or_else(|| input.with_extension(""))
}

fn with_ext(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_os_string();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn width(opts: &GlobalOpts, file: Option<Width>) -> Result<Width, Failure> {
    match (opts.width, file) {
        (Some(w), Some(f)) if w != f.bits() => Err(usage(format!(
            "--width {w} conflicts with the {}-bit input file",
            f.bits()
        ))),
        (_, Some(f)) => Ok(f),
        (w, None) => Width::new(w.unwrap_or(16)).map_err(usage),
    }
}

fn cipher(opts: &GlobalOpts, w: Width) -> Result<Cipher, Failure> {
    let key = Key::from_hex(&opts.key).map_err(|e| usage(format!("--key: {e}")))?;
    Ok(Cipher::standard(&key, w))
}

fn vm_config(opts: &GlobalOpts) -> VmConfig {
    VmConfig {
        fuel: opts.fuel,
        strict: opts.strict,
        ..VmConfig::default()
    }
}

fn parse_globals(specs: &[String]) -> Result<BTreeMap<String, Vec<i128>>, Failure> {
    let mut out = BTreeMap::new();
    for s in specs {
        let (name, values) = s
            .split_once('=')
            .ok_or_else(|| usage(format!("--global `{s}`: expected NAME=VALUES")))?;
        let words = values
            .split(',')
            .filter(|v| !v.trim().is_empty())
            .map(|v| v.trim().parse::<i128>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| usage(format!("--global `{s}`: {e}")))?;
        out.insert(name.to_string(), words);
    }
    Ok(out)
}

/// Generator for everything a command draws after compilation, keyed on
/// the seed and a per-purpose stream.
fn rng(opts: &GlobalOpts, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(opts.seed);
    r.set_stream(stream);
    r
}

const INPUT_STREAM: u64 = 2;

fn load_compiled(object: &Path, scheme: Option<&Path>) -> Result<Compiled, Failure> {
    let (w, program) = parse_object(&read(object)?).map_err(|e| usage(format!("{}: {e}", object.display())))?;
    let spath = scheme.map(Path::to_path_buf).unwrap_or_else(|| sibling(object, "scheme.toml"));
    let scheme = DeltaScheme::from_toml(&read(&spath)?).map_err(|e| usage(format!("{}: {e}", spath.display())))?;
    if scheme.width != w.bits() || scheme.fingerprint != program.fingerprint() {
        return Err(usage(format!(
            "{} does not belong to {}",
            spath.display(),
            object.display()
        )));
    }
    if scheme.pcs.len() != program.instrs.len() {
        return Err(usage("scheme and object disagree on program length"));
    }
    Ok(Compiled { program, scheme })
}

fn header(c: &Compiled, w: Width) -> Header {
    Header {
        width: w,
        fingerprint: c.scheme.fingerprint.clone(),
    }
}

fn cmd_compile(opts: &GlobalOpts, source: &Path) -> Result<Output, Failure> {
    let w = width(opts, None)?;
    let c = cipher(opts, w)?;
    let src = read(source)?;
    let cfg = Config {
        zero_v0_delta: opts.zero_v0_delta,
        ..Config::new(opts.seed)
    };
    let compiled = compile_program(&src, &c, &cfg).map_err(|e| fail(EXIT_COMPILE, e))?;
    let p = prefix(opts, source);
    let obj = with_ext(&p, "obj");
    let scheme = with_ext(&p, "scheme.toml");
    write(&obj, &write_object(&compiled.program, w))?;
    write(&scheme, &compiled.scheme.to_toml().map_err(usage)?)?;
    ok(format!(
        "{} instructions, w={}, fingerprint {}\nwrote {} and {}\n",
        compiled.program.instrs.len(),
        w.bits(),
        compiled.scheme.fingerprint,
        obj.display(),
        scheme.display()
    ))
}

fn cmd_run(
    opts: &GlobalOpts,
    object: &Path,
    args: &[i128],
    scheme: Option<&Path>,
    inputs: Option<&Path>,
    globals: &[String],
) -> Result<Output, Failure> {
    let compiled = load_compiled(object, scheme)?;
    let w = width(opts, Some(Width::new(compiled.scheme.width).map_err(usage)?))?;
    let c = cipher(opts, w)?;
    let overrides = parse_globals(globals)?;
    let mut r = rng(opts, INPUT_STREAM);
    let inputs = match inputs {
        Some(path) => {
            let (h, inp) = parse_inputs(&read(path)?).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            if h.fingerprint != compiled.scheme.fingerprint {
                return Err(usage(format!("{} was encoded for another build", path.display())));
            }
            inp
        }
        None if args.is_empty() && overrides.is_empty() && !compiled.scheme.params.is_empty() => {
            // Nothing to encode: only the return sentinel is supplied.
            let mut inp = Inputs::default();
            inp.regs.insert(Reg::RA, c.encrypt_data(r.gen(), &mut r));
            inp
        }
        None => encode_inputs(&compiled.scheme, &c, args, &overrides, &mut r).map_err(usage)?,
    };
    let out = vm::run(&compiled.program, &inputs, &c, &vm_config(opts)).map_err(|e| fail(EXIT_RUNTIME, e))?;
    let p = prefix(opts, object);
    let h = header(&compiled, w);
    let tpath = with_ext(&p, "trace");
    let ipath = with_ext(&p, "inputs");
    write(&tpath, &write_trace(&out.trace, &h))?;
    write(&ipath, &write_inputs(&inputs, &h))?;
    let mut final_state = Inputs::default();
    for r in [Reg::V0, Reg::V1] {
        if let Some(v) = out.state.reg(r) {
            final_state.regs.insert(r, v);
        }
    }
    final_state.mem = out.tlb.mapped().filter_map(|(a, s)| Some((a, out.mem[s]?))).collect();
    final_state.mem.sort();
    let opath = with_ext(&p, "outputs");
    write(&opath, &write_inputs(&final_state, &h))?;
    if out.trace.status != vm::Status::Returned {
        return Err(fail(
            EXIT_RUNTIME,
            format!("out of fuel after {} steps; partial trace in {}", out.steps, tpath.display()),
        ));
    }
    ok(format!(
        "{} steps\nwrote {}, {} and {}\n",
        out.steps,
        tpath.display(),
        ipath.display(),
        opath.display()
    ))
}

fn cmd_decode(
    opts: &GlobalOpts,
    trace: &Path,
    scheme: Option<&Path>,
    inputs: Option<&Path>,
    view: bool,
) -> Result<Output, Failure> {
    let (h, t) = parse_trace(&read(trace)?).map_err(|e| usage(format!("{}: {e}", trace.display())))?;
    let spath = scheme.map(Path::to_path_buf).unwrap_or_else(|| sibling(trace, "scheme.toml"));
    let s = DeltaScheme::from_toml(&read(&spath)?).map_err(|e| usage(format!("{}: {e}", spath.display())))?;
    if s.fingerprint != h.fingerprint {
        return Err(usage(format!("{} does not belong to {}", spath.display(), trace.display())));
    }
    let ipath = inputs.map(Path::to_path_buf).unwrap_or_else(|| sibling(trace, "inputs"));
    let (_, inp) = parse_inputs(&read(&ipath)?).map_err(|e| usage(format!("{}: {e}", ipath.display())))?;
    let w = width(opts, Some(h.width))?;
    let c = cipher(opts, w)?;
    let mut out = String::new();
    if view {
        for (i, ev) in t.events.iter().enumerate() {
            let role = s.pcs.get(ev.pc).map(|p| p.role);
            let _ = write!(out, "{i:6} {:5} {:<6}", ev.pc, ev.opcode.to_string());
            for (loc, v) in ev.observations() {
                let at = match loc {
                    Location::Reg(r) => r.to_string(),
                    Location::Mem(slot) => format!("m{slot}"),
                };
                let _ = write!(out, " {at}={}", c.value(v));
            }
            if let vm::Effect::Branch { taken } = ev.effect {
                let _ = write!(out, " {}", if taken { "taken" } else { "not-taken" });
            }
            if role.is_some_and(|r| r != Role::Data) {
                let _ = write!(out, " ({:?})", role.unwrap());
            }
            out.push('\n');
        }
    }
    if t.status != vm::Status::Returned {
        return Err(fail(EXIT_RUNTIME, "trace did not return; nothing to decode"));
    }
    let outcome = decode_trace(&s, &c, &inp, &t).map_err(|e| fail(EXIT_RUNTIME, e))?;
    if let Some(r) = outcome.ret {
        let _ = writeln!(out, "{r}");
    }
    for (name, words) in &outcome.globals {
        let list: Vec<String> = words.iter().map(i64::to_string).collect();
        let _ = writeln!(out, "{name} = {}", list.join(" "));
    }
    ok(out)
}

fn cmd_analyze(opts: &GlobalOpts, source: &Path, args: &[i128], globals: &[String]) -> Result<Output, Failure> {
    let w = width(opts, None)?;
    let c = cipher(opts, w)?;
    let src = read(source)?;
    let defaults;
    let args = if args.is_empty() {
        defaults = default_args(&src)?;
        &defaults[..]
    } else {
        args
    };
    let mut spec = EnsembleSpec::new(&src, args, opts.n, opts.seed);
    spec.overrides = parse_globals(globals)?;
    spec.vm = vm_config(opts);
    let report = analyze(&spec, &c, &SuiteOptions::default()).map_err(|e| match e {
        crate::analyzer::AnalyzeError::Compile(e) => fail(EXIT_COMPILE, e),
        e => fail(EXIT_RUNTIME, e),
    })?;
    let text = report.render();
    if let Some(path) = &opts.out {
        write(path, &text)?;
    }
    Ok(Output {
        stdout: text,
        code: if report.passed() { EXIT_OK } else { EXIT_STATISTICAL },
    })
}

/// Arguments named by a leading `// args: ...` line, if the source has one.
fn default_args(src: &str) -> Result<Vec<i128>, Failure> {
    let Some(list) = src.lines().next().and_then(|l| l.trim().strip_prefix("// args:")) else {
        return Ok(vec![]);
    };
    list.split_whitespace()
        .map(|a| a.parse().map_err(|e| usage(format!("args line: {e}"))))
        .collect()
}

fn cmd_shift(opts: &GlobalOpts, object: &Path, delta: u64, scheme: Option<&Path>) -> Result<Output, Failure> {
    let compiled = load_compiled(object, scheme)?;
    let w = width(opts, Some(Width::new(compiled.scheme.width).map_err(usage)?))?;
    let c = cipher(opts, w)?;
    let shifted = shift_transform(&compiled, &c, delta).map_err(usage)?;
    let p = opts
        .out
        .clone()
        .unwrap_or_else(|| object.with_file_name(format!("{}.shifted", stem(object))));
    let obj = with_ext(&p, "obj");
    let sch = with_ext(&p, "scheme.toml");
    write(&obj, &write_object(&shifted.program, w))?;
    write(&sch, &shifted.scheme.to_toml().map_err(usage)?)?;
    ok(format!("shifted by {}\nwrote {} and {}\n", delta & w.mask(), obj.display(), sch.display()))
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn cmd_audit(
    opts: &GlobalOpts,
    object: &Path,
    trace: &Path,
    scheme: Option<&Path>,
    inputs: Option<&Path>,
) -> Result<Output, Failure> {
    let compiled = load_compiled(object, scheme)?;
    let (h, t) = parse_trace(&read(trace)?).map_err(|e| usage(format!("{}: {e}", trace.display())))?;
    if h.fingerprint != compiled.scheme.fingerprint {
        return Err(usage(format!("{} was recorded from another build", trace.display())));
    }
    let ipath = inputs.map(Path::to_path_buf).unwrap_or_else(|| sibling(trace, "inputs"));
    let (_, inp) = parse_inputs(&read(&ipath)?).map_err(|e| usage(format!("{}: {e}", ipath.display())))?;
    let w = width(opts, Some(h.width))?;
    let c = cipher(opts, w)?;
    let rep = collision_audit(&compiled, &c, &inp, &t);
    let mut out = String::new();
    let total: usize = rep.classes.values().sum();
    let _ = writeln!(
        out,
        "{total} constant blocks in {} position classes, {} runtime blocks",
        rep.classes.len(),
        rep.runtime_blocks
    );
    for (b, pcs) in &rep.data_collisions {
        let _ = writeln!(out, "constant {:x} at pcs {pcs:?} appears as runtime data", b.0);
    }
    for (b, tags) in &rep.class_collisions {
        let _ = writeln!(out, "block {:x} shared by position classes {tags:?}", b.0);
    }
    for pc in &rep.mistagged {
        let _ = writeln!(out, "pc {pc}: constant carries the wrong position tag");
    }
    let _ = writeln!(
        out,
        "SUMMARY audit data-collisions={} class-collisions={} mistagged={} verdict={}",
        rep.data_collisions.len(),
        rep.class_collisions.len(),
        rep.mistagged.len(),
        if rep.passed() { "pass" } else { "fail" }
    );
    Ok(Output {
        stdout: out,
        code: if rep.passed() { EXIT_OK } else { EXIT_STATISTICAL },
    })
}

pub fn execute(cli: &Cli) -> Result<Output, Failure> {
    let o = &cli.opts;
    match &cli.command {
        Command::Compile { source } => cmd_compile(o, source),
        Command::Run {
            object,
            args,
            scheme,
            inputs,
            globals,
        } => cmd_run(o, object, args, scheme.as_deref(), inputs.as_deref(), globals),
        Command::Decode {
            trace,
            scheme,
            inputs,
            view,
        } => cmd_decode(o, trace, scheme.as_deref(), inputs.as_deref(), *view),
        Command::Analyze { source, args, globals } => cmd_analyze(o, source, args, globals),
        Command::Shift { object, delta, scheme } => cmd_shift(o, object, *delta, scheme.as_deref()),
        Command::Audit {
            object,
            trace,
            scheme,
            inputs,
        } => cmd_audit(o, object, trace, scheme.as_deref(), inputs.as_deref()),
    }
}

/// Parse `argv`, run the command and print its output. Returns the exit code.
pub fn main_with<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(out) => {
            // A closed pipe downstream (`| head`) is not an error of ours.
            let mut stdout = std::io::stdout().lock();
            let _ = stdout.write_all(out.stdout.as_bytes()).and_then(|()| stdout.flush());
            out.code
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
