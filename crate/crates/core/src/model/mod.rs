//! Null-model fitting for the negative-binomial GLM with log link.
//!
//! `fit_null_nb` regresses counts on the nuisance design only; everything the
//! score kernels need (means, weights, score residuals, QR factors of
//! `Ŵ^{1/2} Z`) is captured in the returned [`NullFit`].

mod dispersion;
mod irls;
mod size_factors;

pub use dispersion::{estimate_dispersion, ml_dispersion};
pub use irls::{fit_fixed_dispersion, fit_null_nb, nb_deviance, IrlsControl};
pub use size_factors::estimate_size_factors;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Observed counts for one gene.
#[derive(Debug, Clone, PartialEq)]
pub struct CountVector {
    values: Array1<f64>,
}

impl CountVector {
    pub fn new(counts: &[u64]) -> Result<Self> {
        if counts.len() < 2 {
            return Err(Error::DegenerateData(format!(
                "need at least 2 samples, got {}",
                counts.len()
            )));
        }
        Ok(Self {
            values: counts.iter().map(|&c| c as f64).collect(),
        })
    }

    /// Build from real values that must be non-negative integers.
    pub fn from_f64(values: &[f64]) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::DegenerateData("need at least 2 samples".into()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0 || v.fract() != 0.0) {
            return Err(Error::DegenerateData(format!("invalid count {v}")));
        }
        Ok(Self {
            values: Array1::from(values.to_vec()),
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn view(&self) -> ArrayView1<'_, f64> {
        self.values.view()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.values.as_slice().expect("contiguous")
    }

    pub fn is_all_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn is_constant(&self) -> bool {
        let first = self.values[0];
        self.values.iter().all(|&v| v == first)
    }
}

/// Nuisance design: an n×p matrix with exactly one all-ones intercept column
/// and an optional natural-log offset per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    z: Array2<f64>,
    intercept: usize,
    offset: Option<Array1<f64>>,
}

impl DesignMatrix {
    pub fn new(z: Array2<f64>, offset: Option<Array1<f64>>) -> Result<Self> {
        let (n, p) = z.dim();
        if p == 0 {
            return Err(Error::Design("design has no columns".into()));
        }
        if n <= p {
            return Err(Error::Design(format!("need n > p, got n={n}, p={p}")));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Design("design contains non-finite entries".into()));
        }
        let ones: Vec<usize> = (0..p).filter(|&j| z.column(j).iter().all(|&v| v == 1.0)).collect();
        if ones.len() != 1 {
            return Err(Error::Design(format!(
                "design must contain exactly one intercept column, found {}",
                ones.len()
            )));
        }
        if let Some(o) = &offset {
            if o.len() != n {
                return Err(Error::Design(format!(
                    "offset length {} does not match {n} samples",
                    o.len()
                )));
            }
            if o.iter().any(|v| !v.is_finite()) {
                return Err(Error::Design("offset contains non-finite entries".into()));
            }
        }
        Ok(Self {
            z,
            intercept: ones[0],
            offset,
        })
    }

    /// Prepend an intercept column to `covariates` (n×k, possibly k = 0).
    pub fn with_intercept(covariates: ArrayView2<f64>, offset: Option<Array1<f64>>) -> Result<Self> {
        let (n, k) = covariates.dim();
        let mut z = Array2::<f64>::ones((n, k + 1));
        z.slice_mut(ndarray::s![.., 1..]).assign(&covariates);
        Self::new(z, offset)
    }

    pub fn intercept_only(n: usize) -> Result<Self> {
        Self::new(Array2::ones((n, 1)), None)
    }

    pub fn n(&self) -> usize {
        self.z.nrows()
    }

    pub fn p(&self) -> usize {
        self.z.ncols()
    }

    pub fn matrix(&self) -> ArrayView2<'_, f64> {
        self.z.view()
    }

    pub fn intercept_column(&self) -> usize {
        self.intercept
    }

    pub fn offset(&self) -> Option<ArrayView1<'_, f64>> {
        self.offset.as_ref().map(|o| o.view())
    }

    /// Offset value for sample `i` (zero when absent).
    pub fn offset_at(&self, i: usize) -> f64 {
        self.offset.as_ref().map_or(0.0, |o| o[i])
    }

    pub fn with_offset(self, offset: Option<Array1<f64>>) -> Result<Self> {
        Self::new(self.z, offset)
    }

    /// Design with `x` appended as an extra (last) column.
    pub fn augmented(&self, x: ArrayView1<f64>) -> Result<Self> {
        let (n, p) = self.z.dim();
        if x.len() != n {
            return Err(Error::Design("treatment length does not match design".into()));
        }
        let mut z = Array2::<f64>::zeros((n, p + 1));
        z.slice_mut(ndarray::s![.., ..p]).assign(&self.z);
        z.column_mut(p).assign(&x);
        Self::new(z, self.offset.clone())
    }
}

/// How the NB dispersion enters a fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Dispersion {
    /// User-specified φ̄ ≥ 0 (0 is the Poisson model).
    Fixed(f64),
    /// Co-estimate φ by maximum likelihood.
    Estimate,
}

impl Dispersion {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Dispersion::Fixed(phi) if !(phi >= 0.0 && phi.is_finite()) => Err(Error::Config(format!(
                "dispersion must be a finite value >= 0, got {phi}"
            ))),
            _ => Ok(()),
        }
    }
}

/// Iteration record of a fit.
#[derive(Debug, Clone, PartialEq)]
pub struct Convergence {
    pub iterations: usize,
    pub deviance: f64,
    pub last_change: f64,
    /// Deviance after every accepted IRLS step.
    pub deviance_trace: Vec<f64>,
}

/// Fitted NB GLM under the null (counts on nuisance design only).
#[derive(Debug, Clone)]
pub struct NullFit {
    pub beta: Array1<f64>,
    pub mu: Array1<f64>,
    /// Ŵ_i = μ̂_i / (1 + φ̄ μ̂_i)
    pub w: Array1<f64>,
    /// Working residuals e_i = (Y_i − μ̂_i) / μ̂_i.
    pub working_residuals: Array1<f64>,
    /// Score residuals r̂_i = Ŵ_i e_i = (Y_i − μ̂_i)/(1 + φ̄ μ̂_i).
    pub r_hat: Array1<f64>,
    /// Economy Q factor of Ŵ^{1/2} Z.
    pub q: Array2<f64>,
    /// Upper-triangular R factor of Ŵ^{1/2} Z.
    pub r: Array2<f64>,
    pub phi: f64,
    pub phi_estimated: bool,
    pub convergence: Convergence,
    pub design: DesignMatrix,
    pub y: Array1<f64>,
}

impl NullFit {
    pub fn n(&self) -> usize {
        self.mu.len()
    }

    pub fn p(&self) -> usize {
        self.beta.len()
    }

    /// Zᵀ r̂, which vanishes at the maximum-likelihood estimate.
    pub fn score_vector(&self) -> Array1<f64> {
        self.design.matrix().t().dot(&self.r_hat)
    }

    pub fn sqrt_w(&self) -> Array1<f64> {
        self.w.mapv(f64::sqrt)
    }
}

/// Variance of an NB count with mean `mu` and dispersion `phi`: μ + φμ².
pub fn nb_variance(mu: f64, phi: f64) -> f64 {
    debug_assert!(mu > 0.0 && phi >= 0.0);
    mu + phi * mu * mu
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn nb_variance_examples() {
        assert_eq!(nb_variance(2.0, 0.5), 4.0);
        assert_eq!(nb_variance(7.3, 0.0), 7.3);
        assert_eq!(nb_variance(10.0, 1.0), 110.0);
    }

    #[test]
    fn design_requires_one_intercept() {
        let z = array![[1.0, 0.2], [1.0, 0.4], [1.0, -0.1]];
        assert!(DesignMatrix::new(z, None).is_ok());
        let no_int = array![[2.0, 0.2], [1.0, 0.4], [1.0, -0.1]];
        assert!(matches!(DesignMatrix::new(no_int, None), Err(Error::Design(_))));
        let two = array![[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]];
        assert!(matches!(DesignMatrix::new(two, None), Err(Error::Design(_))));
        let wide = array![[1.0, 0.2], [1.0, 0.4]];
        assert!(matches!(DesignMatrix::new(wide, None), Err(Error::Design(_))));
    }

    #[test]
    fn count_vector_validation() {
        assert!(CountVector::new(&[1]).is_err());
        assert!(CountVector::from_f64(&[1.0, 2.5]).is_err());
        assert!(CountVector::from_f64(&[1.0, -1.0]).is_err());
        let c = CountVector::new(&[0, 0, 0]).unwrap();
        assert!(c.is_all_zero());
    }
}
