//! Algorithm Q: score tests by explicit projection with the Q factor.

use ndarray::{Array1, Array2, ArrayView1};

use super::collinear;
use super::flops::Tally;
use crate::error::{Error, Result};
use crate::model::NullFit;

#[derive(Debug, Clone)]
pub struct QKernel {
    q: Array2<f64>,
    sqrt_w: Array1<f64>,
    /// Ŵ^{1/2} e
    e_sqrt_w: Array1<f64>,
}

impl QKernel {
    pub fn new(fit: &NullFit) -> Self {
        build_q_kernel_with(fit, &mut ())
    }

    pub fn n(&self) -> usize {
        self.sqrt_w.len()
    }

    pub fn p(&self) -> usize {
        self.q.ncols()
    }

    pub fn score(&self, x: ArrayView1<f64>) -> Result<f64> {
        score_q_with(self, x, &mut ())
    }

    pub fn score_support(&self, support: &[usize]) -> Result<f64> {
        score_q_sparse_with(self, support, &mut ())
    }

    /// Shared tail: E = x_w − Qy, then Eᵀ(Ŵ^{1/2}e)/‖E‖.
    fn finish<T: Tally>(&self, x_w: &Array1<f64>, y: &Array1<f64>, tally: &mut T) -> Result<f64> {
        let (n, p) = (self.n(), self.p());
        let mut top = 0.0;
        let mut bottom = 0.0;
        let mut xw_norm2 = 0.0;
        for i in 0..n {
            let row = self.q.row(i);
            let mut proj = 0.0;
            for k in 0..p {
                proj += row[k] * y[k];
            }
            let e = x_w[i] - proj;
            top += e * self.e_sqrt_w[i];
            bottom += e * e;
            xw_norm2 += x_w[i] * x_w[i];
        }
        let (n64, p64) = (n as u64, p as u64);
        // Qy charged p(n − 1) additions, as tallied for the algorithm
        tally.charge(p64 * n64 + p64 * (n64 - 1));
        tally.charge(n64);
        tally.charge(2 * n64 - 1);
        tally.charge(2 * n64 - 1);
        tally.charge(1);
        if collinear(bottom, xw_norm2) {
            return Err(Error::Collinear);
        }
        Ok(top / bottom.sqrt())
    }
}

/// Precompute Ŵ^{1/2}e (n multiplications; square roots are not counted).
pub fn build_q_kernel_with<T: Tally>(fit: &NullFit, tally: &mut T) -> QKernel {
    let sqrt_w = fit.sqrt_w();
    let e_sqrt_w = &sqrt_w * &fit.working_residuals;
    tally.charge(fit.n() as u64);
    QKernel {
        q: fit.q.clone(),
        sqrt_w,
        e_sqrt_w,
    }
}

pub fn score_q_with<T: Tally>(kernel: &QKernel, x: ArrayView1<f64>, tally: &mut T) -> Result<f64> {
    let (n, p) = (kernel.n(), kernel.p());
    if x.len() != n {
        return Err(Error::Usage(format!("vector length {} != {n}", x.len())));
    }
    let x_w = &kernel.sqrt_w * &x;
    tally.charge(n as u64);
    let mut y = Array1::<f64>::zeros(p);
    for i in 0..n {
        let row = kernel.q.row(i);
        for k in 0..p {
            y[k] += row[k] * x_w[i];
        }
    }
    tally.charge(p as u64 * n as u64 + p as u64 * (n as u64 - 1));
    kernel.finish(&x_w, &y, tally)
}

/// Binary x: x_w is a lookup of Ŵ^{1/2} on the support and Qᵀx_w sums s rows.
pub fn score_q_sparse_with<T: Tally>(kernel: &QKernel, support: &[usize], tally: &mut T) -> Result<f64> {
    let (n, p) = (kernel.n(), kernel.p());
    if support.is_empty() || support.len() >= n {
        return Err(Error::DegenerateTreatment(format!(
            "support of size {} out of {n}",
            support.len()
        )));
    }
    let mut x_w = Array1::<f64>::zeros(n);
    let mut y = Array1::<f64>::zeros(p);
    for &i in support {
        let sw = kernel.sqrt_w[i];
        x_w[i] = sw;
        let row = kernel.q.row(i);
        for k in 0..p {
            y[k] += row[k] * sw;
        }
    }
    let s = support.len() as u64;
    tally.charge(s * p as u64 + p as u64 * (s - 1));
    kernel.finish(&x_w, &y, tally)
}

/// Algorithm Q on a fit, optionally through the support of a binary x.
pub fn score_test_q(fit: &NullFit, x: ArrayView1<f64>, sparse_support: Option<&[usize]>) -> Result<f64> {
    let kernel = QKernel::new(fit);
    match sparse_support {
        Some(s) => kernel.score_support(s),
        None => kernel.score(x),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{fit_null_nb, CountVector, DesignMatrix, Dispersion};
    use ndarray::array;

    #[test]
    fn weighted_orthogonal_vector_is_untouched() {
        let y = CountVector::new(&[3, 8, 2, 6, 5, 9]).unwrap();
        let cov = array![[0.3], [-1.0], [0.8], [0.1], [-0.4], [1.1]];
        let d = DesignMatrix::with_intercept(cov.view(), None).unwrap();
        let fit = fit_null_nb(&y, &d, Dispersion::Fixed(0.1)).unwrap();
        // Build x with Ŵ^{1/2}x orthogonal to both columns of Q.
        let v = array![1.0, -2.0, 0.5, 3.0, -1.0, 0.7];
        let proj = fit.q.dot(&fit.q.t().dot(&v));
        let xw = &v - &proj;
        let x = &xw / &fit.sqrt_w();
        let k = QKernel::new(&fit);
        let z = k.score(x.view()).unwrap();
        let e_sw = &fit.sqrt_w() * &fit.working_residuals;
        let expected = xw.dot(&e_sw) / xw.dot(&xw).sqrt();
        assert!((z - expected).abs() < 1e-10);
    }

    #[test]
    fn column_of_design_is_collinear() {
        let y = CountVector::new(&[3, 8, 2, 6, 5, 9]).unwrap();
        let d = DesignMatrix::intercept_only(6).unwrap();
        let fit = fit_null_nb(&y, &d, Dispersion::Fixed(0.1)).unwrap();
        let ones = Array1::<f64>::ones(6);
        assert_eq!(score_test_q(&fit, ones.view(), None), Err(Error::Collinear));
    }
}
