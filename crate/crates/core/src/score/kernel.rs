//! Algorithm R: score tests from the R factor of `Ŵ^{1/2} Z`.
//!
//! With D = (Rᵀ)⁻¹ZᵀŴ the projection term of the score denominator is
//! ‖Dx‖², so after an O(p³ + np²) precomputation every candidate vector
//! costs O(np), or O(sp) when it is binary with s ones.

use ndarray::{Array1, Array2, ArrayView1};

use super::flops::Tally;
use super::{finish_z, Sums};
use crate::error::{Error, Result};
use crate::linalg::invert_lower;
use crate::model::NullFit;

#[derive(Debug, Clone)]
pub struct ScoreKernel {
    r_hat: Array1<f64>,
    w_hat: Array1<f64>,
    /// Dᵀ stored n×p so that column i of D is a contiguous row.
    d_t: Array2<f64>,
    r_sum: f64,
    w_sum: f64,
    /// D·1
    d_ones: Array1<f64>,
}

impl ScoreKernel {
    pub fn new(fit: &NullFit) -> Result<Self> {
        build_kernel_with(fit, &mut ())
    }

    pub fn n(&self) -> usize {
        self.r_hat.len()
    }

    pub fn p(&self) -> usize {
        self.d_t.ncols()
    }

    pub fn r_hat(&self) -> ArrayView1<'_, f64> {
        self.r_hat.view()
    }

    pub fn w_hat(&self) -> ArrayView1<'_, f64> {
        self.w_hat.view()
    }

    /// The p×n matrix D = (Rᵀ)⁻¹ZᵀŴ.
    pub fn d(&self) -> Array2<f64> {
        self.d_t.t().to_owned()
    }

    /// Algorithm R for a dense candidate vector.
    pub fn score(&self, x: ArrayView1<f64>) -> Result<f64> {
        score_r_with(self, x, &mut ())
    }

    /// Algorithm R for a binary vector given by its support.
    pub fn score_support(&self, support: &[usize]) -> Result<f64> {
        let n = self.n();
        if support.is_empty() || support.len() >= n {
            return Err(Error::DegenerateTreatment(format!(
                "support of size {} out of {n}",
                support.len()
            )));
        }
        finish_z(self.support_sums(support, &mut ()))
    }

    /// Score for the binary vector whose zeros are `zeros`, computed from the
    /// complement sums: Σr̂ − top, Σŵ − bottom_left, D·1 − bottom_right.
    pub fn score_complement(&self, zeros: &[usize]) -> Result<f64> {
        let n = self.n();
        if zeros.is_empty() || zeros.len() >= n {
            return Err(Error::DegenerateTreatment(format!(
                "complement of size {} out of {n}",
                zeros.len()
            )));
        }
        let c = self.support_sums(zeros, &mut ());
        finish_z(Sums {
            top: self.r_sum - c.top,
            bottom_left: self.w_sum - c.bottom_left,
            bottom_right: &self.d_ones - &c.bottom_right,
        })
    }

    /// Binary score choosing the cheaper of support and complement.
    pub fn score_binary(&self, support: &[usize], complement: &[usize]) -> Result<f64> {
        if support.len() <= complement.len() {
            self.score_support(support)
        } else {
            self.score_complement(complement)
        }
    }

    pub(crate) fn support_sums<T: Tally>(&self, support: &[usize], tally: &mut T) -> Sums {
        let p = self.p();
        let s = support.len() as u64;
        let mut top = 0.0;
        let mut bl = 0.0;
        let mut br = Array1::<f64>::zeros(p);
        {
            let brs = br.as_slice_mut().expect("contiguous");
            for &i in support {
                top += self.r_hat[i];
                bl += self.w_hat[i];
                let row = self.d_t.row(i);
                for (acc, v) in brs.iter_mut().zip(row.iter()) {
                    *acc += v;
                }
            }
        }
        // s − 1 additions each for top and bottom_left, p(s − 1) for D·x
        tally.charge(2 * (s - 1) + p as u64 * (s - 1));
        Sums {
            top,
            bottom_left: bl,
            bottom_right: br,
        }
    }
}

/// Precompute D and r̂, charging: inverse of Rᵀ (2p³ under the
/// backsubstitution tally), ZᵀŴ (np), (Rᵀ)⁻¹ZᵀŴ (np²), r̂ = Ŵe (n).
pub fn build_kernel_with<T: Tally>(fit: &NullFit, tally: &mut T) -> Result<ScoreKernel> {
    let n = fit.n();
    let p = fit.p();
    let diag: Vec<f64> = fit.r.diag().iter().map(|v| v.abs()).collect();
    let dmax = diag.iter().cloned().fold(0.0, f64::max);
    let dmin = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(dmin >= 1e-12 * dmax) || dmax == 0.0 {
        return Err(Error::Conditioning(format!(
            "R diagonal ratio {:e} below 1e-12",
            if dmax > 0.0 { dmin / dmax } else { 0.0 }
        )));
    }

    let l_inv = invert_lower(fit.r.t());
    let (n64, p64) = (n as u64, p as u64);
    tally.charge(2 * p64 * p64 * p64);

    let z = fit.design.matrix();
    // ZᵀŴ, kept n×p (row i = Ŵ_i z_i)
    let mut ztw = Array2::<f64>::zeros((n, p));
    for i in 0..n {
        for j in 0..p {
            ztw[[i, j]] = z[[i, j]] * fit.w[i];
        }
    }
    tally.charge(n64 * p64);

    // Row k of D uses the k+1 non-zeros in row k of the lower-triangular inverse.
    let mut d_t = Array2::<f64>::zeros((n, p));
    for i in 0..n {
        for k in 0..p {
            let mut acc = l_inv[[k, 0]] * ztw[[i, 0]];
            for j in 1..=k {
                acc += l_inv[[k, j]] * ztw[[i, j]];
            }
            d_t[[i, k]] = acc;
        }
    }
    tally.charge(n64 * p64 * p64);

    let r_hat = &fit.w * &fit.working_residuals;
    tally.charge(n64);

    let r_sum = r_hat.sum();
    let w_sum = fit.w.sum();
    let d_ones = d_t.sum_axis(ndarray::Axis(0));
    Ok(ScoreKernel {
        r_hat,
        w_hat: fit.w.clone(),
        d_t,
        r_sum,
        w_sum,
        d_ones,
    })
}

/// Dense Algorithm R, charging top (2n − 1), bottom_left (3n − 1),
/// D·x (2np − p), ‖D·x‖² (2p − 1) and the final combination (2).
pub fn score_r_with<T: Tally>(kernel: &ScoreKernel, x: ArrayView1<f64>, tally: &mut T) -> Result<f64> {
    let n = kernel.n();
    let p = kernel.p();
    if x.len() != n {
        return Err(Error::Usage(format!("vector length {} != {n}", x.len())));
    }
    let mut top = 0.0;
    let mut bl = 0.0;
    let mut br = Array1::<f64>::zeros(p);
    for i in 0..n {
        let xi = x[i];
        top += kernel.r_hat[i] * xi;
        bl += kernel.w_hat[i] * (xi * xi);
        let row = kernel.d_t.row(i);
        for k in 0..p {
            br[k] += row[k] * xi;
        }
    }
    let (n64, p64) = (n as u64, p as u64);
    tally.charge((2 * n64 - 1) + (3 * n64 - 1) + (2 * n64 * p64 - p64));
    finish_z_counted(
        Sums {
            top,
            bottom_left: bl,
            bottom_right: br,
        },
        tally,
    )
}

/// Sparse Algorithm R on a support set, with the tally of the sparse path.
pub fn score_r_sparse_with<T: Tally>(kernel: &ScoreKernel, support: &[usize], tally: &mut T) -> Result<f64> {
    let n = kernel.n();
    if support.is_empty() || support.len() >= n {
        return Err(Error::DegenerateTreatment(format!(
            "support of size {} out of {n}",
            support.len()
        )));
    }
    let sums = kernel.support_sums(support, tally);
    finish_z_counted(sums, tally)
}

fn finish_z_counted<T: Tally>(sums: Sums, tally: &mut T) -> Result<f64> {
    let p = sums.bottom_right.len() as u64;
    // ‖·‖²: p mults, p − 1 adds; then one subtraction and one division
    tally.charge(2 * p - 1 + 2);
    finish_z(sums)
}
