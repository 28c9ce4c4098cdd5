//! Score-test statistics for adding a candidate vector x to a fitted null
//! model:
//!
//! ```text
//! z = xᵀr̂ / sqrt(xᵀŴx − xᵀŴZ (ZᵀŴZ)⁻¹ ZᵀŴx)
//! ```
//!
//! [`ScoreKernel`] (Algorithm R) is the fast path used by the permutation
//! tests; [`QKernel`] (Algorithm Q) and [`score_test_naive`] are slower
//! reference evaluators. Every kernel step can report its arithmetic to a
//! [`flops::Tally`].

pub mod flops;
mod kernel;
mod q;
mod timing;

pub use flops::{flop_count, Algorithm, FlopCounter, FlopQuery, Tally, Variant};
pub use kernel::{build_kernel_with, score_r_sparse_with, score_r_with, ScoreKernel};
pub use q::{build_q_kernel_with, score_q_sparse_with, score_q_with, score_test_q, QKernel};
pub use timing::{count_kernel_flops, time_kernels, KernelTiming};

use ndarray::{Array1, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_solve, householder_qr, weighted_gram};
use crate::model::NullFit;

/// Relative threshold below which the projected denominator is treated as
/// zero: the residual of x after weighted projection onto Z is then
/// indistinguishable from rounding error in xᵀŴx.
pub const COLLINEARITY_TOL: f64 = 1e-10;

pub(crate) fn collinear(denominator: f64, unprojected: f64) -> bool {
    !(denominator > COLLINEARITY_TOL * unprojected) || !denominator.is_finite()
}

/// Ingredients of the statistic before the final combination.
#[derive(Debug, Clone)]
pub(crate) struct Sums {
    pub top: f64,
    pub bottom_left: f64,
    pub bottom_right: Array1<f64>,
}

pub(crate) fn finish_z(s: Sums) -> Result<f64> {
    let proj: f64 = s.bottom_right.iter().map(|v| v * v).sum();
    let denom = s.bottom_left - proj;
    if collinear(denom, s.bottom_left) {
        return Err(Error::Collinear);
    }
    Ok(s.top / denom.sqrt())
}

/// Build the Algorithm R kernel for `fit`.
pub fn build_kernel(fit: &NullFit) -> Result<ScoreKernel> {
    ScoreKernel::new(fit)
}

pub fn score_test_r(kernel: &ScoreKernel, x: ArrayView1<f64>) -> Result<f64> {
    kernel.score(x)
}

pub fn score_test_r_sparse(kernel: &ScoreKernel, support: &[usize]) -> Result<f64> {
    kernel.score_support(support)
}

/// Direct evaluation through a Cholesky solve with ZᵀŴZ.
pub fn score_test_naive(fit: &NullFit, x: ArrayView1<f64>) -> Result<f64> {
    let n = fit.n();
    if x.len() != n {
        return Err(Error::Usage(format!("vector length {} != {n}", x.len())));
    }
    let z = fit.design.matrix();
    let gram = weighted_gram(z, fit.w.view());
    let wx = &fit.w * &x;
    let ztwx = z.t().dot(&wx);
    let sol = cholesky_solve(gram.view(), ztwx.view())?;
    let xwx = x.dot(&wx);
    let denom = xwx - ztwx.dot(&sol);
    if collinear(denom, xwx) {
        return Err(Error::Collinear);
    }
    Ok(x.dot(&fit.r_hat) / denom.sqrt())
}

/// Linear-model score statistic: OLS of y on Z, then
/// xᵀr̂ / sqrt(xᵀx − xᵀZ(ZᵀZ)⁻¹Zᵀx).
pub fn lm_score_test(x: ArrayView1<f64>, y: ArrayView1<f64>, z: ArrayView2<f64>) -> Result<f64> {
    let (n, p) = z.dim();
    if x.len() != n || y.len() != n {
        return Err(Error::Usage("x, y and Z must have matching rows".into()));
    }
    if n <= p {
        return Err(Error::Design(format!("need n > p, got n={n}, p={p}")));
    }
    let qr = householder_qr(z)?;
    if !(qr.diag_ratio() > 1e-12) {
        return Err(Error::Design("design is rank deficient".into()));
    }
    let fitted = qr.q.dot(&qr.q.t().dot(&y));
    let resid = &y - &fitted;
    let qtx = qr.q.t().dot(&x);
    let xx = x.dot(&x);
    let denom = xx - qtx.dot(&qtx);
    if collinear(denom, xx) {
        return Err(Error::Collinear);
    }
    Ok(x.dot(&resid) / denom.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{fit_null_nb, CountVector, DesignMatrix, Dispersion};
    use ndarray::{array, Array2};

    #[test]
    fn lm_intercept_only_closed_form() {
        let x = array![1.0, -1.0, 2.0, -2.0, 0.5, -0.5];
        let y = array![3.0, 1.0, 4.0, 1.0, 5.0, 9.0];
        let z = Array2::<f64>::ones((6, 1));
        let ybar = y.mean().unwrap();
        let num: f64 = x.iter().zip(y.iter()).map(|(a, b)| a * (b - ybar)).sum();
        let norm = x.dot(&x).sqrt();
        let got = lm_score_test(x.view(), y.view(), z.view()).unwrap();
        assert!((got - num / norm).abs() < 1e-12);
    }

    #[test]
    fn naive_column_of_design_is_collinear() {
        let y = CountVector::new(&[3, 8, 2, 6, 5, 9, 4]).unwrap();
        let cov = array![[0.3], [-1.0], [0.8], [0.1], [-0.4], [1.1], [0.2]];
        let d = DesignMatrix::with_intercept(cov.view(), None).unwrap();
        let fit = fit_null_nb(&y, &d, Dispersion::Fixed(0.1)).unwrap();
        let col = d.matrix().column(1).to_owned();
        assert_eq!(score_test_naive(&fit, col.view()), Err(Error::Collinear));
        let k = build_kernel(&fit).unwrap();
        assert_eq!(k.score(col.view()), Err(Error::Collinear));
    }

    #[test]
    fn naive_intercept_only_hand_arithmetic() {
        // Intercept-only Poisson fit: μ̂ = ȳ, Ŵ = ȳ, r̂ = y − ȳ, so
        // z = Σ x_i (y_i − ȳ) / sqrt(ȳ Σ (x_i − x̄)²).
        let counts = [4u64, 7, 1, 9, 3, 6, 2, 8, 5, 5];
        let y = CountVector::new(&counts).unwrap();
        let d = DesignMatrix::intercept_only(10).unwrap();
        let fit = fit_null_nb(&y, &d, Dispersion::Fixed(0.0)).unwrap();
        let x = array![1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0];
        let ybar = 5.0;
        let xbar = 0.5;
        let num: f64 = counts
            .iter()
            .zip(x.iter())
            .map(|(&c, &xi)| xi * (c as f64 - ybar))
            .sum();
        let ss: f64 = x.iter().map(|xi| (xi - xbar) * (xi - xbar)).sum();
        let expected = num / (ybar * ss).sqrt();
        assert!((score_test_naive(&fit, x.view()).unwrap() - expected).abs() < 1e-10);
    }
}
