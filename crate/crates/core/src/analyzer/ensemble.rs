//! Ensembles of recompilations: one source, one set of plaintext inputs,
//! many seeds.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::AnalyzeError;
use crate::cipher::{Cipher, Ciphertext, Width};
use crate::compiler::codegen::generate;
use crate::compiler::hir::HProgram;
use crate::compiler::{execute, lower_source, Compiled, Config, Outcome};
use crate::vm::{Inputs, StructKey, Trace, TracePoint, VmConfig};

#[derive(Debug, Clone)]
pub struct EnsembleSpec {
    pub source: String,
    pub args: Vec<i128>,
    pub overrides: BTreeMap<String, Vec<i128>>,
    pub n: usize,
    pub base_seed: u64,
    pub vm: VmConfig,
}

impl EnsembleSpec {
    pub fn new(source: &str, args: &[i128], n: usize, base_seed: u64) -> EnsembleSpec {
        EnsembleSpec {
            source: source.to_string(),
            args: args.to_vec(),
            overrides: BTreeMap::new(),
            n,
            base_seed,
            vm: VmConfig::default(),
        }
    }
}

/// One compilation and its run.
#[derive(Debug, Clone)]
pub struct Member {
    pub seed: u64,
    pub compiled: Compiled,
    pub inputs: Inputs,
    pub trace: Trace,
    pub outcome: Outcome,
}

/// Compilation seed of member `i`.
pub fn member_seed(base: u64, i: usize) -> u64 {
    let mut r = ChaCha8Rng::seed_from_u64(base);
    r.set_stream(i as u64);
    r.gen()
}

fn input_rng(seed: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(u64::MAX);
    r
}

fn run_member(
    hp: &HProgram,
    cipher: &Cipher,
    spec: &EnsembleSpec,
    i: usize,
) -> Result<Member, AnalyzeError> {
    let seed = member_seed(spec.base_seed, i);
    let cfg = Config {
        snapshots: false,
        ..Config::new(seed)
    };
    let compiled = generate(hp, cipher, &cfg)?;
    let mut rng = input_rng(seed);
    let (inputs, out, outcome) =
        execute(&compiled, cipher, &spec.args, &spec.overrides, &mut rng, &spec.vm)?;
    Ok(Member {
        seed,
        compiled,
        inputs,
        trace: out.trace,
        outcome,
    })
}

/// Member 0 of the ensemble `spec` describes, built alone. Its trace fixes
/// the trace points every other member is sampled at.
pub fn reference_member(spec: &EnsembleSpec, cipher: &Cipher) -> Result<Member, AnalyzeError> {
    let hp = lower_source(&spec.source, cipher.width())?;
    run_member(&hp, cipher, spec, 0)
}

/// The observed words at a fixed set of trace points across every member.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub source_id: String,
    pub width: Width,
    pub base_seed: u64,
    pub reference: Member,
    pub points: Vec<TracePoint>,
    /// `blocks[k][m]`: ciphertext at point `k` in member `m`.
    pub blocks: Vec<Vec<Ciphertext>>,
    /// Decrypted values, same layout as `blocks`.
    pub plains: Vec<Vec<u64>>,
    /// Every member's decoded outcome.
    pub outcomes: Vec<Outcome>,
}

impl Ensemble {
    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    pub fn index_of(&self, p: TracePoint) -> Option<usize> {
        self.points.iter().position(|&q| q == p)
    }
}

struct Sample {
    blocks: Vec<Ciphertext>,
    plains: Vec<u64>,
    outcome: Outcome,
}

fn sample(
    m: &Member,
    cipher: &Cipher,
    points: &[TracePoint],
    structure: &[StructKey],
    index: usize,
) -> Result<Sample, AnalyzeError> {
    let s = m.trace.structure();
    if s != structure {
        let at = s
            .iter()
            .zip(structure)
            .position(|(a, b)| a != b)
            .unwrap_or(s.len().min(structure.len()));
        return Err(AnalyzeError::Invariance { member: index, event: at });
    }
    let mut blocks = Vec::with_capacity(points.len());
    for &p in points {
        let b = m.trace.value_at(p).ok_or(AnalyzeError::NoPoint(p))?;
        blocks.push(b);
    }
    let plains = blocks.iter().map(|&b| cipher.value(b)).collect();
    Ok(Sample {
        blocks,
        plains,
        outcome: m.outcome.clone(),
    })
}

/// Compile and run `spec.n` members in parallel and collect their words at
/// `points` (every observed word of member 0 when `None`). Any member whose
/// trace differs structurally from member 0 is a compiler fault.
pub fn build_ensemble(
    spec: &EnsembleSpec,
    cipher: &Cipher,
    points: Option<&[TracePoint]>,
) -> Result<Ensemble, AnalyzeError> {
    if spec.n == 0 {
        return Err(AnalyzeError::Empty);
    }
    let hp = lower_source(&spec.source, cipher.width())?;
    let reference = run_member(&hp, cipher, spec, 0)?;
    let structure = reference.trace.structure();
    let points: Vec<TracePoint> = match points {
        Some(p) => p.to_vec(),
        None => reference.trace.points().into_iter().map(|(p, _)| p).collect(),
    };
    let first = sample(&reference, cipher, &points, &structure, 0)?;
    let rest: Vec<Sample> = (1..spec.n)
        .into_par_iter()
        .map(|i| {
            let m = run_member(&hp, cipher, spec, i)?;
            sample(&m, cipher, &points, &structure, i)
        })
        .collect::<Result<_, _>>()?;
    let mut blocks = vec![Vec::with_capacity(spec.n); points.len()];
    let mut plains = vec![Vec::with_capacity(spec.n); points.len()];
    let mut outcomes = Vec::with_capacity(spec.n);
    for s in std::iter::once(first).chain(rest) {
        for (k, (&b, &v)) in s.blocks.iter().zip(&s.plains).enumerate() {
            blocks[k].push(b);
            plains[k].push(v);
        }
        outcomes.push(s.outcome);
    }
    Ok(Ensemble {
        source_id: hex::encode(&Sha256::digest(spec.source.as_bytes())[..8]),
        width: cipher.width(),
        base_seed: spec.base_seed,
        reference,
        points,
        blocks,
        plains,
        outcomes,
    })
}
