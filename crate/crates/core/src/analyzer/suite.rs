//! The full statistical analysis of one source: an ensemble, sampled
//! uniformity and independence tests, a check that every sampled dependent
//! pair really is dependent, and the free-offset count.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::deps::{dependency_pairs, free_delta_count, Cause, FreeDeltaCount, Origin};
use super::ensemble::{build_ensemble, reference_member, Ensemble, EnsembleSpec};
use super::stats::{independence, point_name as name, uniformity, TestResult};
use super::AnalyzeError;
use crate::cipher::Cipher;
use crate::vm::TracePoint;

#[derive(Debug, Clone)]
pub struct SuiteOptions {
    pub points: usize,
    pub pairs: usize,
    pub dependent_pairs: usize,
    /// Rejections tolerated among the uniformity tests, and separately among
    /// the independence tests.
    pub max_rejections: usize,
}

impl Default for SuiteOptions {
    fn default() -> SuiteOptions {
        SuiteOptions {
            points: 20,
            pairs: 10,
            dependent_pairs: 12,
            max_rejections: 1,
        }
    }
}

/// A pair the dependency analysis links, tested anyway.
#[derive(Debug, Clone)]
pub struct DependentCheck {
    pub a: TracePoint,
    pub b: TracePoint,
    pub cause: Cause,
    pub block_equal: bool,
    pub result: TestResult,
}

impl DependentCheck {
    /// A linked pair must show its link: identical blocks, or a rejected
    /// independence test.
    pub fn confirmed(&self) -> bool {
        self.block_equal || self.result.pass == Some(false)
    }
}

#[derive(Debug, Clone)]
pub struct AnalysisReport {
    pub source_id: String,
    pub width: u32,
    pub members: usize,
    pub base_seed: u64,
    pub free: FreeDeltaCount,
    pub data_points: usize,
    pub origins: usize,
    pub dependent_pairs: usize,
    pub uniformity: Vec<TestResult>,
    pub independence: Vec<TestResult>,
    pub dependent: Vec<DependentCheck>,
    /// Mean plug-in entropy of the sampled histograms, in bits. Advisory.
    pub plugin_entropy: f64,
    pub max_rejections: usize,
}

fn rejections(r: &[TestResult]) -> usize {
    r.iter().filter(|t| t.pass == Some(false)).count()
}

impl AnalysisReport {
    pub fn uniformity_rejections(&self) -> usize {
        rejections(&self.uniformity)
    }

    pub fn independence_rejections(&self) -> usize {
        rejections(&self.independence)
    }

    pub fn underpowered(&self) -> usize {
        self.uniformity
            .iter()
            .chain(&self.independence)
            .filter(|t| t.pass.is_none())
            .count()
    }

    pub fn passed(&self) -> bool {
        self.uniformity_rejections() <= self.max_rejections
            && self.independence_rejections() <= self.max_rejections
            && self.dependent.iter().all(DependentCheck::confirmed)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "source {}  w={}  members={}  base-seed={:#x}",
            self.source_id, self.width, self.members, self.base_seed
        );
        let _ = writeln!(
            out,
            "free offsets: n={} m={} bound={} bits; {} data points over {} offset classes, {} dependent pairs",
            self.free.n,
            self.free.m,
            self.free.bound_bits,
            self.data_points,
            self.origins,
            self.dependent_pairs
        );
        let _ = writeln!(out, "plug-in entropy (advisory): {:.3} bits", self.plugin_entropy);
        for t in self.uniformity.iter().chain(&self.independence) {
            let _ = writeln!(out, "{t}");
            let _ = writeln!(out, "{}", t.machine_line());
        }
        for d in &self.dependent {
            let _ = writeln!(
                out,
                "{}  cause={} block-equal={} {}",
                d.result,
                d.cause,
                d.block_equal,
                if d.confirmed() { "confirmed" } else { "UNCONFIRMED" }
            );
            let _ = writeln!(out, "{} cause={}", d.result.machine_line(), d.cause);
        }
        let _ = writeln!(
            out,
            "SUMMARY uniformity={}/{} independence={}/{} dependent={}/{} underpowered={} budget={} verdict={}",
            self.uniformity.len() - self.uniformity_rejections(),
            self.uniformity.len(),
            self.independence.len() - self.independence_rejections(),
            self.independence.len(),
            self.dependent.iter().filter(|d| d.confirmed()).count(),
            self.dependent.len(),
            self.underpowered(),
            self.max_rejections,
            if self.passed() { "pass" } else { "fail" }
        );
        out
    }
}

fn plugin_entropy(values: &[u64], bits: u32) -> f64 {
    let shift = bits - bits.min(8);
    let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
    for &v in values {
        *counts.entry(v >> shift).or_default() += 1;
    }
    let n = values.len() as f64;
    -counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            p * p.log2()
        })
        .sum::<f64>()
}

/// Points sampled for the tests: one per offset class for the single-point
/// and pair tests, and random pairs inside classes for the dependent checks,
/// spread across causes.
struct Sample {
    singles: Vec<TracePoint>,
    linked: Vec<(TracePoint, TracePoint, Cause)>,
}

fn choose(
    groups: &BTreeMap<Origin, Vec<TracePoint>>,
    report: &super::deps::DependencyReport,
    opts: &SuiteOptions,
    rng: &mut ChaCha8Rng,
) -> Sample {
    let mut classes: Vec<&Vec<TracePoint>> = groups.values().collect();
    classes.shuffle(rng);
    let singles: Vec<TracePoint> = classes
        .iter()
        .take(opts.points.max(2 * opts.pairs))
        .map(|g| g[rng.gen_range(0..g.len())])
        .collect();

    let quota = opts.dependent_pairs.div_ceil(3);
    let mut per_cause: BTreeMap<Cause, usize> = BTreeMap::new();
    let mut linked = Vec::new();
    let mut spare = Vec::new();
    for g in classes.iter().filter(|g| g.len() > 1) {
        if linked.len() == opts.dependent_pairs {
            break;
        }
        let i = rng.gen_range(0..g.len());
        let mut j = rng.gen_range(0..g.len() - 1);
        if j >= i {
            j += 1;
        }
        let (a, b) = (g[i.min(j)], g[i.max(j)]);
        let cause = report.cause(a, b).expect("same class");
        let n = per_cause.entry(cause).or_default();
        if *n < quota {
            *n += 1;
            linked.push((a, b, cause));
        } else {
            spare.push((a, b, cause));
        }
    }
    for s in spare {
        if linked.len() == opts.dependent_pairs {
            break;
        }
        linked.push(s);
    }
    Sample { singles, linked }
}

/// Build the ensemble `spec` describes and run every test on it.
pub fn analyze(
    spec: &EnsembleSpec,
    cipher: &Cipher,
    opts: &SuiteOptions,
) -> Result<AnalysisReport, AnalyzeError> {
    let reference = reference_member(spec, cipher)?;
    let report = dependency_pairs(
        &reference.compiled,
        cipher,
        &reference.inputs,
        &reference.trace,
    );
    let free = free_delta_count(&reference.compiled, &reference.trace);
    let mut groups: BTreeMap<Origin, Vec<TracePoint>> = BTreeMap::new();
    for p in &report.points {
        if matches!(p.origin, Origin::Class(_)) {
            groups.entry(p.origin).or_default().push(p.point);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.base_seed);
    rng.set_stream(1);
    let sample = choose(&groups, &report, opts, &mut rng);

    let mut wanted: Vec<TracePoint> = sample.singles.clone();
    for &(a, b, _) in &sample.linked {
        wanted.extend([a, b]);
    }
    wanted.sort();
    wanted.dedup();
    let e = build_ensemble(spec, cipher, Some(&wanted))?;
    let bits = e.width.bits();
    let at = |p: TracePoint| e.index_of(p).expect("sampled point");

    let uniformity_results: Vec<TestResult> = sample
        .singles
        .iter()
        .take(opts.points)
        .map(|&p| uniformity(&format!("uniformity[{}]", name(p)), &e.plains[at(p)], bits))
        .collect();
    let independence_results: Vec<TestResult> = sample
        .singles
        .chunks_exact(2)
        .take(opts.pairs)
        .map(|ab| pair_test(&e, ab[0], ab[1], bits))
        .collect();
    let dependent = sample
        .linked
        .iter()
        .map(|&(a, b, cause)| {
            let (i, j) = (at(a), at(b));
            DependentCheck {
                a,
                b,
                cause,
                block_equal: e.blocks[i] == e.blocks[j],
                result: pair_test(&e, a, b, bits),
            }
        })
        .collect();
    let plugin = if sample.singles.is_empty() {
        0.0
    } else {
        sample
            .singles
            .iter()
            .map(|&p| plugin_entropy(&e.plains[at(p)], bits))
            .sum::<f64>()
            / sample.singles.len() as f64
    };
    Ok(AnalysisReport {
        source_id: e.source_id.clone(),
        width: bits,
        members: e.len(),
        base_seed: spec.base_seed,
        free,
        data_points: report.points.len(),
        origins: groups.len(),
        dependent_pairs: report.pair_count(),
        uniformity: uniformity_results,
        independence: independence_results,
        dependent,
        plugin_entropy: plugin,
        max_rejections: opts.max_rejections,
    })
}

fn pair_test(e: &Ensemble, a: TracePoint, b: TracePoint, bits: u32) -> TestResult {
    let (i, j) = (e.index_of(a).expect("point"), e.index_of(b).expect("point"));
    independence(
        &format!("independence[{},{}]", name(a), name(b)),
        &e.plains[i],
        &e.plains[j],
        bits,
    )
}
