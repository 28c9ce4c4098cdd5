//! Floating-point operation model for the score kernels.
//!
//! Each kernel step reports its additions and multiplications to a [`Tally`]
//! using the step's actual dimensions (n, p and the support size s). The
//! closed-form polynomials in [`flop_count`] are the published totals for B
//! treatment vectors; square roots and the GLM fit itself are not counted.

use crate::error::{Error, Result};

/// Receives operation charges from instrumented kernels.
pub trait Tally {
    fn charge(&mut self, flops: u64);
}

impl Tally for () {
    #[inline(always)]
    fn charge(&mut self, _: u64) {}
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct FlopCounter {
    pub flops: u64,
}

impl Tally for FlopCounter {
    fn charge(&mut self, flops: u64) {
        self.flops += flops;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    R,
    Q,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    SparsityUnaware,
    SparsityExploiting,
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Algorithm::R => "R",
            Algorithm::Q => "Q",
        })
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::SparsityUnaware => "sparsity-unaware",
            Variant::SparsityExploiting => "sparsity-exploiting",
        })
    }
}

/// One cell of the operation-count table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlopQuery {
    pub algorithm: Algorithm,
    pub variant: Variant,
    pub n: u64,
    pub p: u64,
    pub b: u64,
    /// Number of ones s = πn in each treatment vector.
    pub support: u64,
}

impl FlopQuery {
    /// `pi` must make πn integral (within 1e-9) and lie in (0, 1].
    pub fn new(algorithm: Algorithm, variant: Variant, n: u64, p: u64, b: u64, pi: f64) -> Result<Self> {
        if n == 0 || p == 0 {
            return Err(Error::Usage("n and p must be positive".into()));
        }
        if !(pi > 0.0 && pi <= 1.0) {
            return Err(Error::Usage(format!("sparsity fraction must be in (0, 1], got {pi}")));
        }
        let s = pi * n as f64;
        let rounded = s.round();
        if (s - rounded).abs() > 1e-9 {
            return Err(Error::Usage(format!("pi * n = {s} is not an integer")));
        }
        Ok(Self {
            algorithm,
            variant,
            n,
            p,
            b,
            support: rounded as u64,
        })
    }

    pub fn pi(&self) -> f64 {
        self.support as f64 / self.n as f64
    }
}

fn overflow() -> Error {
    Error::Overflow("operation count exceeds u64".into())
}

/// Signed polynomial evaluation in i128 with overflow checks.
struct Poly(i128);

impl Poly {
    fn term(self, coef: i128, factors: &[u64]) -> Result<Self> {
        let mut t = coef;
        for &f in factors {
            t = t.checked_mul(f as i128).ok_or_else(overflow)?;
        }
        Ok(Poly(self.0.checked_add(t).ok_or_else(overflow)?))
    }
}

/// Total operation count for a table cell.
///
/// * R, sparsity-unaware: 2p³ + np² + (1+2B)np + (1+5B)n + Bp − B
/// * Q, sparsity-unaware: n + 4Bnp + 6Bn − 2Bp − B
/// * R, sparsity-exploiting: 2p³ + np² + np + n + Bpπn + Bp + 2Bπn − B
/// * Q, sparsity-exploiting: n + 2Bnp + 2Bpπn + 5Bn − 2Bp + B
pub fn flop_count(q: &FlopQuery) -> Result<u64> {
    let (n, p, b, s) = (q.n, q.p, q.b, q.support);
    let poly = match (q.algorithm, q.variant) {
        (Algorithm::R, Variant::SparsityUnaware) => Poly(0)
            .term(2, &[p, p, p])?
            .term(1, &[n, p, p])?
            .term(1, &[n, p])?
            .term(2, &[b, n, p])?
            .term(1, &[n])?
            .term(5, &[b, n])?
            .term(1, &[b, p])?
            .term(-1, &[b])?,
        (Algorithm::Q, Variant::SparsityUnaware) => Poly(0)
            .term(1, &[n])?
            .term(4, &[b, n, p])?
            .term(6, &[b, n])?
            .term(-2, &[b, p])?
            .term(-1, &[b])?,
        (Algorithm::R, Variant::SparsityExploiting) => Poly(0)
            .term(2, &[p, p, p])?
            .term(1, &[n, p, p])?
            .term(1, &[n, p])?
            .term(1, &[n])?
            .term(1, &[b, p, s])?
            .term(1, &[b, p])?
            .term(2, &[b, s])?
            .term(-1, &[b])?,
        (Algorithm::Q, Variant::SparsityExploiting) => Poly(0)
            .term(1, &[n])?
            .term(2, &[b, n, p])?
            .term(2, &[b, p, s])?
            .term(5, &[b, n])?
            .term(-2, &[b, p])?
            .term(1, &[b])?,
    };
    u64::try_from(poly.0).map_err(|_| overflow())
}
