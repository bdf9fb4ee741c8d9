//! Chi-squared tests on decrypted values across an ensemble.

use std::fmt;

use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::deps::DependencyReport;
use super::ensemble::Ensemble;
use super::AnalyzeError;
use crate::vm::TracePoint;

/// Significance level of every test.
pub const ALPHA: f64 = 0.01;

/// Side of the joint histogram in the independence test.
pub const JOINT_BINS: usize = 16;

/// Smallest expected cell count for which a verdict is given.
pub const MIN_EXPECTED: f64 = 5.0;

#[derive(Debug, Clone, PartialEq)]
pub struct TestResult {
    pub name: String,
    pub statistic: f64,
    pub dof: u64,
    pub critical: f64,
    pub p_value: f64,
    pub samples: usize,
    /// `None` when the sample is too small for the test to have power.
    pub pass: Option<bool>,
}

impl TestResult {
    pub fn verdict(&self) -> &'static str {
        match self.pass {
            Some(true) => "pass",
            Some(false) => "reject",
            None => "underpowered",
        }
    }

    /// One greppable `key=value` line.
    pub fn machine_line(&self) -> String {
        format!(
            "RESULT test={} statistic={:.4} dof={} critical={:.4} p={:.6} n={} verdict={}",
            self.name,
            self.statistic,
            self.dof,
            self.critical,
            self.p_value,
            self.samples,
            self.verdict()
        )
    }
}

impl fmt::Display for TestResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<40} chi2 = {:>10.3}  dof = {:>4}  crit = {:>8.3}  p = {:.4}  {}",
            self.name,
            self.statistic,
            self.dof,
            self.critical,
            self.p_value,
            self.verdict()
        )
    }
}

fn finish(name: String, statistic: f64, dof: u64, samples: usize, powered: bool) -> TestResult {
    let dist = ChiSquared::new(dof.max(1) as f64).expect("positive dof");
    let critical = dist.inverse_cdf(1.0 - ALPHA);
    let p_value = if statistic.is_finite() {
        1.0 - dist.cdf(statistic)
    } else {
        0.0
    };
    TestResult {
        name,
        statistic,
        dof,
        critical,
        p_value,
        samples,
        pass: powered.then_some(statistic <= critical),
    }
}

/// Equal-width bin of a `bits`-bit value among `2^log_bins` bins.
fn bin(v: u64, bits: u32, log_bins: u32) -> usize {
    (v >> (bits - log_bins)) as usize
}

/// Goodness of fit to the uniform distribution over `bits`-bit values,
/// binned into `min(2^bits, 256)` equal bins.
pub fn uniformity(name: &str, values: &[u64], bits: u32) -> TestResult {
    let log_bins = bits.min(8);
    let bins = 1usize << log_bins;
    let mut counts = vec![0u64; bins];
    for &v in values {
        counts[bin(v, bits, log_bins)] += 1;
    }
    let expected = values.len() as f64 / bins as f64;
    let stat = if expected > 0.0 {
        counts
            .iter()
            .map(|&o| (o as f64 - expected).powi(2) / expected)
            .sum()
    } else {
        0.0
    };
    finish(
        name.to_string(),
        stat,
        bins as u64 - 1,
        values.len(),
        expected >= MIN_EXPECTED,
    )
}

/// Pearson independence test on the 16x16 table of the top four bits of
/// paired `bits`-bit values. Empty rows and columns are dropped from the
/// degrees of freedom; a table with a single row or column has no verdict.
pub fn independence(name: &str, xs: &[u64], ys: &[u64], bits: u32) -> TestResult {
    assert_eq!(xs.len(), ys.len(), "paired samples");
    let log = JOINT_BINS.trailing_zeros();
    let mut table = [[0u64; JOINT_BINS]; JOINT_BINS];
    for (&x, &y) in xs.iter().zip(ys) {
        table[bin(x, bits, log)][bin(y, bits, log)] += 1;
    }
    let n = xs.len() as f64;
    let rows: Vec<u64> = table.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<u64> = (0..JOINT_BINS).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    let used_r = rows.iter().filter(|&&r| r > 0).count();
    let used_c = cols.iter().filter(|&&c| c > 0).count();
    let mut stat = 0.0;
    let mut min_expected = f64::INFINITY;
    for (i, &r) in rows.iter().enumerate() {
        for (j, &c) in cols.iter().enumerate() {
            if r == 0 || c == 0 {
                continue;
            }
            let e = r as f64 * c as f64 / n;
            min_expected = min_expected.min(e);
            stat += (table[i][j] as f64 - e).powi(2) / e;
        }
    }
    let dof = (used_r.saturating_sub(1) * used_c.saturating_sub(1)) as u64;
    let powered = used_r > 1 && used_c > 1 && min_expected >= MIN_EXPECTED;
    finish(name.to_string(), stat, dof, xs.len(), powered)
}

pub(crate) fn point_name(p: TracePoint) -> String {
    match p.loc {
        crate::vm::Location::Reg(r) => format!("e{}:{}", p.event, r),
        crate::vm::Location::Mem(s) => format!("e{}:m{}", p.event, s),
    }
}

/// Uniformity of the decrypted values at `p` across the ensemble.
pub fn point_uniformity(e: &Ensemble, p: TracePoint) -> Result<TestResult, AnalyzeError> {
    let k = e.index_of(p).ok_or(AnalyzeError::NoPoint(p))?;
    Ok(uniformity(
        &format!("uniformity[{}]", point_name(p)),
        &e.plains[k],
        e.width.bits(),
    ))
}

/// Joint independence of the values at `a` and `b`. Pairs the dependency
/// report links are refused with their cause.
pub fn pair_independence(
    e: &Ensemble,
    report: &DependencyReport,
    a: TracePoint,
    b: TracePoint,
) -> Result<TestResult, AnalyzeError> {
    if let Some(cause) = report.cause(a, b) {
        return Err(AnalyzeError::Dependent { cause });
    }
    let i = e.index_of(a).ok_or(AnalyzeError::NoPoint(a))?;
    let j = e.index_of(b).ok_or(AnalyzeError::NoPoint(b))?;
    Ok(independence(
        &format!("independence[{},{}]", point_name(a), point_name(b)),
        &e.plains[i],
        &e.plains[j],
        e.width.bits(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn critical_value_for_255_dof() {
        let r = uniformity("u", &vec![0; 10_000], 8);
        assert!((r.critical - 310.457).abs() < 0.01, "{}", r.critical);
        assert_eq!(r.dof, 255);
    }

    #[test]
    fn independence_critical_value_for_225_dof() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<u64> = (0..10_000).map(|_| rng.gen_range(0..256)).collect();
        let ys: Vec<u64> = (0..10_000).map(|_| rng.gen_range(0..256)).collect();
        let r = independence("i", &xs, &ys, 8);
        assert_eq!(r.dof, 225);
        assert!((r.critical - 277.27).abs() < 0.01, "{}", r.critical);
        assert_eq!(r.pass, Some(true), "{r}");
    }

    #[test]
    fn uniform_sample_passes_constant_fails() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xs: Vec<u64> = (0..10_000).map(|_| rng.gen_range(0..256)).collect();
        assert_eq!(uniformity("u", &xs, 8).pass, Some(true));
        assert_eq!(uniformity("c", &vec![42; 10_000], 8).pass, Some(false));
    }

    #[test]
    fn shifted_copy_is_dependent() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xs: Vec<u64> = (0..10_000).map(|_| rng.gen_range(0..256)).collect();
        let ys: Vec<u64> = xs.iter().map(|x| (x + 77) & 0xff).collect();
        assert_eq!(independence("d", &xs, &ys, 8).pass, Some(false));
    }

    #[test]
    fn small_samples_have_no_verdict() {
        assert_eq!(uniformity("u", &[1, 2, 3], 8).pass, None);
        assert_eq!(independence("i", &[1, 200], &[3, 100], 8).pass, None);
    }

    #[test]
    fn wide_values_bin_by_top_bits() {
        let xs: Vec<u64> = (0..65_536u64).step_by(4).collect();
        let r = uniformity("u", &xs, 16);
        assert_eq!(r.dof, 255);
        assert!(r.statistic < 1e-9);
    }
}
