//! NB GLM Wald test for the treatment coefficient.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::linalg::spd_inverse;
use crate::model::{fit_null_nb, CountVector, DesignMatrix, Dispersion};
use crate::special::normal_cdf;
use crate::treatment::Treatment;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaldResult {
    pub gamma: f64,
    pub se: f64,
    pub z: f64,
    /// Φ(z)
    pub p_left: f64,
    /// 1 − Φ(z)
    pub p_right: f64,
    /// 2Φ(−|z|)
    pub p_two_sided: f64,
    pub phi: f64,
}

/// Fit the full model (design plus x as the last column) and return
/// γ̂ / se(γ̂), with se from the inverse observed information
/// Σ z_i z_iᵀ μ_i(1 + φy_i)/(1 + φμ_i)².
pub fn nb_wald_test(y: &CountVector, x: &Treatment, design: &DesignMatrix, disp: Dispersion) -> Result<WaldResult> {
    x.ensure_both_classes()?;
    let full = design.augmented(x.to_dense().view())?;
    let fit = fit_null_nb(y, &full, disp).map_err(|e| match e {
        Error::Design(_) => Error::Collinear,
        other => other,
    })?;
    let z = full.matrix();
    let (n, p) = z.dim();
    let phi = fit.phi;
    let mut info = Array2::<f64>::zeros((p, p));
    for i in 0..n {
        let mu = fit.mu[i];
        let w = mu * (1.0 + phi * fit.y[i]) / (1.0 + phi * mu).powi(2);
        for a in 0..p {
            let za = z[[i, a]] * w;
            for b in 0..p {
                info[[a, b]] += za * z[[i, b]];
            }
        }
    }
    let cov = spd_inverse(info.view()).map_err(|_| Error::Collinear)?;
    let gamma = fit.beta[p - 1];
    let se = cov[[p - 1, p - 1]].sqrt();
    let zstat = gamma / se;
    Ok(WaldResult {
        gamma,
        se,
        z: zstat,
        p_left: normal_cdf(zstat),
        p_right: normal_cdf(-zstat),
        p_two_sided: (2.0 * normal_cdf(-zstat.abs())).min(1.0),
        phi,
    })
}
