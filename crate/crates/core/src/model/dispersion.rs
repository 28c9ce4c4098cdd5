//! Maximum-likelihood NB dispersion, alternating with IRLS for β.

use ndarray::ArrayView1;

use super::irls::{fit_fixed_dispersion, IrlsControl};
use super::{CountVector, DesignMatrix, NullFit};
use crate::error::{Error, Result};
use crate::special::{digamma_shift, trigamma_shift};

const THETA_MIN: f64 = 1e-8;
const THETA_MAX: f64 = 1e10;
const MAX_ALTERNATIONS: usize = 25;

/// Score of the NB log-likelihood in the size parameter θ, and its derivative.
fn theta_score(y: ArrayView1<f64>, mu: ArrayView1<f64>, theta: f64) -> (f64, f64) {
    let mut s = 0.0;
    let mut ds = 0.0;
    for (&yi, &mi) in y.iter().zip(mu.iter()) {
        s += digamma_shift(yi, theta) - (mi / theta).ln_1p() + (mi - yi) / (theta + mi);
        ds += trigamma_shift(yi, theta) + mi / (theta * (theta + mi)) - (mi - yi) / (theta + mi).powi(2);
    }
    (s, ds)
}

/// ML estimate of φ = 1/θ for fixed means `mu`.
///
/// Returns 0 when the profile likelihood is maximized at the Poisson
/// boundary (no overdispersion signal).
pub fn ml_dispersion(y: ArrayView1<f64>, mu: ArrayView1<f64>) -> f64 {
    // ∂ℓ/∂φ at φ = 0 is ½ Σ [(y − μ)² − y]; non-positive means no interior max.
    let g0: f64 = y.iter().zip(mu.iter()).map(|(&yi, &mi)| (yi - mi).powi(2) - yi).sum();
    if g0 <= 0.0 {
        return 0.0;
    }
    let f = |u: f64| theta_score(y, mu, u.exp());

    let (mut lo, mut hi) = (THETA_MIN.ln(), THETA_MAX.ln());
    if f(hi).0 >= 0.0 {
        return 0.0;
    }
    if f(lo).0 <= 0.0 {
        return 1.0 / THETA_MIN;
    }

    let sum_mu2: f64 = mu.iter().map(|m| m * m).sum();
    let excess: f64 = y.iter().zip(mu.iter()).map(|(&yi, &mi)| (yi - mi).powi(2) - mi).sum();
    let theta0 = if excess > 0.0 { sum_mu2 / excess } else { 1.0 };
    let mut u = theta0.clamp(THETA_MIN * 10.0, THETA_MAX / 10.0).ln();

    for _ in 0..200 {
        let (s, ds) = f(u);
        if s > 0.0 {
            lo = u;
        } else {
            hi = u;
        }
        let theta = u.exp();
        let slope = theta * ds;
        let mut next = if slope < 0.0 { u - s / slope } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - u).abs() < 1e-12 || (hi - lo) < 1e-12 {
            u = next;
            break;
        }
        u = next;
    }
    let theta = u.exp();
    if theta >= THETA_MAX * 0.999 {
        0.0
    } else {
        1.0 / theta
    }
}

fn moment_phi(y: ArrayView1<f64>) -> f64 {
    let n = y.len() as f64;
    let mean = y.sum() / n;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (var - mean).max(1e-8) / (mean * mean)
}

pub(super) fn fit_with_estimated_dispersion(y: &CountVector, design: &DesignMatrix) -> Result<NullFit> {
    let control = IrlsControl::default();
    let mut phi = moment_phi(y.view());
    let mut fit = fit_fixed_dispersion(y, design, phi, None, &control)?;
    for _ in 0..MAX_ALTERNATIONS {
        let phi_new = ml_dispersion(y.view(), fit.mu.view());
        fit = fit_fixed_dispersion(y, design, phi_new, Some(&fit.beta), &control)?;
        let settled = (phi_new - phi).abs() <= 1e-8 + 1e-6 * phi;
        phi = phi_new;
        if settled {
            fit.phi_estimated = true;
            return Ok(fit);
        }
    }
    Err(Error::Convergence {
        iterations: MAX_ALTERNATIONS,
        last_change: f64::NAN,
        last_beta: fit.beta.to_vec(),
    })
}

/// Estimate φ̂ ≥ 0 jointly with the null-model coefficients.
pub fn estimate_dispersion(y: &CountVector, design: &DesignMatrix) -> Result<f64> {
    fit_with_estimated_dispersion(y, design).map(|f| f.phi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{fit_null_nb, Dispersion};
    use ndarray::Array1;

    #[test]
    fn zero_variance_gives_poisson_boundary() {
        let y = CountVector::new(&[5, 5, 5, 5]).unwrap();
        let d = DesignMatrix::intercept_only(4).unwrap();
        assert_eq!(estimate_dispersion(&y, &d).unwrap(), 0.0);
    }

    #[test]
    fn score_vanishes_at_estimate() {
        let y = Array1::from(vec![0.0, 3.0, 12.0, 1.0, 30.0, 7.0, 2.0, 0.0, 18.0, 5.0]);
        let mu = Array1::from_elem(10, y.mean().unwrap());
        let phi = ml_dispersion(y.view(), mu.view());
        assert!(phi > 0.0);
        let (s, _) = theta_score(y.view(), mu.view(), 1.0 / phi);
        assert!(s.abs() < 1e-8);
    }

    #[test]
    fn theta_derivative_matches_finite_difference() {
        let y = Array1::from(vec![0.0, 3.0, 12.0, 1.0, 80.0, 7.0]);
        let mu = Array1::from(vec![2.0, 4.0, 9.0, 1.5, 50.0, 6.0]);
        for &theta in &[0.3, 2.0, 40.0] {
            let h = 1e-6 * theta;
            let (sp, _) = theta_score(y.view(), mu.view(), theta + h);
            let (sm, _) = theta_score(y.view(), mu.view(), theta - h);
            let (_, ds) = theta_score(y.view(), mu.view(), theta);
            let fd = (sp - sm) / (2.0 * h);
            assert!((fd - ds).abs() < 1e-5 * ds.abs().max(1e-3), "{fd} vs {ds}");
        }
    }

    #[test]
    fn estimated_fit_is_flagged() {
        let y = CountVector::new(&[0, 3, 12, 1, 30, 7, 2, 0, 18, 5]).unwrap();
        let d = DesignMatrix::intercept_only(10).unwrap();
        let fit = fit_null_nb(&y, &d, Dispersion::Estimate).unwrap();
        assert!(fit.phi_estimated);
        assert!(fit.phi > 0.5);
    }
}
