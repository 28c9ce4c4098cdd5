//! Permutation-calibrated tests: the permuted score test, the residual
//! permutation test and a permutation Mann-Whitney test.
//!
//! All three share the same driver: a [`SubsetStatistic`] evaluated on the
//! observed treatment and on B uniformly relabeled copies of it, drawn from
//! a stream keyed by `(seed, key)` so that a gene's null set does not depend
//! on which thread runs it.

mod sampler;
mod stats;

pub use sampler::{for_each_permutation, Draw, PermSampler};
pub use stats::{average_ranks, null_residuals, residual_statistic, RankSum, ResidualKind, ScaledSum, SubsetStatistic};

use ndarray::ArrayView1;

use crate::error::{Error, Result};
use crate::model::{fit_null_nb, CountVector, DesignMatrix, Dispersion};
use crate::rng;
use crate::score::ScoreKernel;
use crate::treatment::Treatment;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Side {
    Left,
    Right,
    #[default]
    TwoSided,
}

impl std::str::FromStr for Side {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "left" => Ok(Side::Left),
            "right" => Ok(Side::Right),
            "two-sided" | "both" => Ok(Side::TwoSided),
            _ => Err(Error::Config(format!("unknown side '{s}'"))),
        }
    }
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Side::Left => "left",
            Side::Right => "right",
            Side::TwoSided => "two-sided",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Method {
    #[default]
    Score,
    Residual,
    MannWhitney,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PermConfig {
    pub b: usize,
    pub side: Side,
    pub seed: u64,
    /// Stream key, normally the gene index.
    pub key: u64,
    /// Use every permutation of the treatment (n ≤ 10) instead of B draws.
    pub exhaustive: bool,
}

impl Default for PermConfig {
    fn default() -> Self {
        Self {
            b: 999,
            side: Side::TwoSided,
            seed: 0,
            key: 0,
            exhaustive: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Completed,
    Futility,
    Rejection,
    Capped,
    Degenerate,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StopReason::Completed => "completed",
            StopReason::Futility => "futility",
            StopReason::Rejection => "rejection",
            StopReason::Capped => "capped",
            StopReason::Degenerate => "degenerate",
        })
    }
}

impl std::str::FromStr for StopReason {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "completed" => StopReason::Completed,
            "futility" => StopReason::Futility,
            "rejection" => StopReason::Rejection,
            "capped" => StopReason::Capped,
            "degenerate" => StopReason::Degenerate,
            _ => return Err(Error::Config(format!("unknown stop reason '{s}'"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestResult {
    pub z_orig: f64,
    pub p: f64,
    pub b_used: usize,
    pub stop_reason: StopReason,
}

impl TestResult {
    pub fn degenerate() -> Self {
        Self {
            z_orig: f64::NAN,
            p: 1.0,
            b_used: 0,
            stop_reason: StopReason::Degenerate,
        }
    }
}

/// Relative slack under which two statistics count as tied.
pub const TIE_RTOL: f64 = 1e-10;

/// a ≥ b, treating values within rounding of each other as equal.
pub fn at_least(a: f64, b: f64) -> bool {
    a >= b - TIE_RTOL * b.abs().max(1.0)
}

/// Permutation p-value (1 + #{nulls on the far side of z_orig}) / (B + 1),
/// counting ties as exceedances.
pub fn perm_p_value(z_orig: f64, z_nulls: &[f64], side: Side) -> f64 {
    let b = z_nulls.len() as f64;
    let left = || (1 + z_nulls.iter().filter(|&&z| at_least(-z, -z_orig)).count()) as f64 / (b + 1.0);
    let right = || (1 + z_nulls.iter().filter(|&&z| at_least(z, z_orig)).count()) as f64 / (b + 1.0);
    match side {
        Side::Left => left(),
        Side::Right => right(),
        Side::TwoSided => (2.0 * left().min(right())).min(1.0),
    }
}

/// Null statistics from `cfg.b` random relabelings (or every permutation).
pub fn null_statistics<S: SubsetStatistic>(stat: &S, x: &Treatment, cfg: &PermConfig) -> Result<Vec<f64>> {
    let n = x.n();
    if cfg.exhaustive {
        if n > 10 {
            return Err(Error::Usage(format!("exhaustive permutation needs n <= 10, got {n}")));
        }
        let xb = x.to_bools();
        let mut out = Vec::new();
        let mut first = true;
        let mut err = None;
        let mut ones = Vec::with_capacity(n);
        for_each_permutation(n, |perm| {
            if first {
                first = false;
                return;
            }
            if err.is_some() {
                return;
            }
            ones.clear();
            ones.extend((0..n).filter(|&i| xb[perm[i]]));
            match stat.eval(Draw::Ones(&ones)) {
                Ok(z) => out.push(z),
                Err(e) => err = Some(e),
            }
        });
        return match err {
            Some(e) => Err(e),
            None => Ok(out),
        };
    }
    let mut sampler = PermSampler::new(n, x.count(), rng::stream(cfg.seed, cfg.key, 0));
    (0..cfg.b).map(|_| stat.eval(sampler.draw())).collect()
}

/// Generic fixed-B permutation test of `stat` at the observed treatment.
pub fn permutation_test<S: SubsetStatistic>(stat: &S, x: &Treatment, cfg: &PermConfig) -> Result<TestResult> {
    if x.is_degenerate() {
        return Ok(TestResult::degenerate());
    }
    let z_orig = stat.eval_treatment(x)?;
    let nulls = null_statistics(stat, x, cfg)?;
    Ok(TestResult {
        z_orig,
        p: perm_p_value(z_orig, &nulls, cfg.side),
        b_used: nulls.len(),
        stop_reason: StopReason::Completed,
    })
}

/// Permuted score test: one null fit, then z for the observed and permuted
/// treatments from the same kernel.
pub fn permuted_score_test(
    y: &CountVector,
    x: &Treatment,
    design: &DesignMatrix,
    disp: Dispersion,
    cfg: &PermConfig,
) -> Result<TestResult> {
    check_lengths(y.len(), x, design)?;
    if x.is_degenerate() {
        return Ok(TestResult::degenerate());
    }
    let fit = fit_null_nb(y, design, disp)?;
    let kernel = ScoreKernel::new(&fit)?;
    permutation_test(&kernel, x, cfg)
}

/// Residual permutation test on null-model residuals.
pub fn residual_perm_test(
    y: &CountVector,
    x: &Treatment,
    design: &DesignMatrix,
    disp: Dispersion,
    kind: ResidualKind,
    cfg: &PermConfig,
) -> Result<TestResult> {
    check_lengths(y.len(), x, design)?;
    if x.is_degenerate() {
        return Ok(TestResult::degenerate());
    }
    let fit = fit_null_nb(y, design, disp)?;
    let stat = ScaledSum::new(null_residuals(&fit, kind));
    permutation_test(&stat, x, cfg)
}

/// Permutation-calibrated Mann-Whitney test (rank-sum of the treated group,
/// average ranks for ties).
pub fn mann_whitney_perm(y: ArrayView1<f64>, x: &Treatment, cfg: &PermConfig) -> Result<TestResult> {
    if y.len() != x.n() {
        return Err(Error::Usage("count and treatment lengths differ".into()));
    }
    if x.is_degenerate() {
        return Ok(TestResult::degenerate());
    }
    permutation_test(&RankSum::new(y), x, cfg)
}

fn check_lengths(n: usize, x: &Treatment, design: &DesignMatrix) -> Result<()> {
    if x.n() != n || design.n() != n {
        return Err(Error::Usage(format!(
            "length mismatch: counts {n}, treatment {}, design {}",
            x.n(),
            design.n()
        )));
    }
    Ok(())
}

/// Closed-form mean and variance of (1/n) Σ c_i x_{π(i)} over uniform π.
pub fn hoeffding_moments(c: &[f64], x: &[f64]) -> (f64, f64) {
    let n = c.len() as f64;
    let cbar = c.iter().sum::<f64>() / n;
    let xbar = x.iter().sum::<f64>() / n;
    let sc: f64 = c.iter().map(|v| (v - cbar).powi(2)).sum();
    let sx: f64 = x.iter().map(|v| (v - xbar).powi(2)).sum();
    (cbar * xbar, sc * sx / ((n - 1.0) * n * n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn p_value_examples() {
        assert_eq!(perm_p_value(-3.0, &[0.1, -0.5, 1.2], Side::Left), 0.25);
        assert_eq!(perm_p_value(-3.0, &[], Side::Left), 1.0);
        assert_eq!(perm_p_value(5.0, &[], Side::TwoSided), 1.0);
        assert_eq!(perm_p_value(0.7, &[0.7, 0.7, 0.7], Side::Left), 1.0);
        assert_eq!(perm_p_value(-3.0, &[0.1, -0.5, 1.2], Side::Right), 1.0);
        assert_eq!(perm_p_value(-3.0, &[0.1, -0.5, 1.2], Side::TwoSided), 0.5);
    }

    #[test]
    fn mann_whitney_all_ties() {
        let y = array![4.0, 4.0, 4.0, 4.0, 4.0, 4.0];
        let x = Treatment::from_bools(&[true, false, true, false, false, true]);
        let cfg = PermConfig {
            b: 50,
            ..Default::default()
        };
        assert_eq!(mann_whitney_perm(y.view(), &x, &cfg).unwrap().p, 1.0);
    }

    #[test]
    fn mann_whitney_separated_exhaustive() {
        // treated are the 2 largest of 5: C(5,2) = 10 subsets, each hit 2!3! = 12 times
        let y = array![1.0, 2.0, 3.0, 10.0, 11.0];
        let x = Treatment::from_bools(&[false, false, false, true, true]);
        let cfg = PermConfig {
            side: Side::Right,
            exhaustive: true,
            ..Default::default()
        };
        let r = mann_whitney_perm(y.view(), &x, &cfg).unwrap();
        assert_eq!(r.b_used, 119);
        assert!((r.p - 0.1).abs() < 1e-15);
    }

    #[test]
    fn degenerate_treatment_gives_degenerate_result() {
        let y = CountVector::new(&[1, 2, 3, 4]).unwrap();
        let d = DesignMatrix::intercept_only(4).unwrap();
        let x = Treatment::from_bools(&[true; 4]);
        let r = permuted_score_test(&y, &x, &d, Dispersion::Fixed(0.1), &PermConfig::default()).unwrap();
        assert_eq!(r.stop_reason, StopReason::Degenerate);
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let y = CountVector::new(&[3, 9, 0, 4, 12, 5, 7, 1, 8, 6, 2, 10]).unwrap();
        let d = DesignMatrix::intercept_only(12).unwrap();
        let x = Treatment::from_bools(&[
            true, false, false, true, true, false, false, true, false, false, true, false,
        ]);
        let cfg = PermConfig {
            b: 200,
            seed: 42,
            key: 3,
            ..Default::default()
        };
        let a = permuted_score_test(&y, &x, &d, Dispersion::Estimate, &cfg).unwrap();
        let b = permuted_score_test(&y, &x, &d, Dispersion::Estimate, &cfg).unwrap();
        assert_eq!(a.z_orig.to_bits(), b.z_orig.to_bits());
        assert_eq!(a.p.to_bits(), b.p.to_bits());
        assert_eq!(a.b_used, 200);
    }
}
