//! Oracles and reporting for the acceptance run.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use permscore::model::{fit_null_nb, CountVector, DesignMatrix, Dispersion, NullFit};
use permscore::perm::for_each_permutation;
use permscore::sim::sample_nb;

/// Result of one acceptance criterion.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }

    pub fn line(&self, id: usize, name: &str) -> String {
        let tag = if self.pass { "PASS" } else { "FAIL" };
        format!("{tag} criterion {id:>2} {name}: {}", self.detail)
    }
}

/// q + k·sqrt(q(1 − q)/n).
pub fn binom_upper(q: f64, n: usize, k: f64) -> f64 {
    q + k * (q * (1.0 - q) / n as f64).sqrt()
}

/// Null NB fit on an intercept plus p − 1 Gaussian covariates.
pub fn random_fit<R: Rng>(rng: &mut R, n: usize, p: usize) -> NullFit {
    let phi = rng.random_range(0.0..1.0);
    let base = rng.random_range(0.5..3.0);
    let scale = rng.random_range(0.0..0.5);
    loop {
        let z = Array2::from_shape_fn((n, p), |(_, j)| if j == 0 { 1.0 } else { rng.sample(StandardNormal) });
        let y: Vec<u64> = (0..n)
            .map(|i| {
                let eta = base + (1..p).map(|j| scale * z[[i, j]] / (p as f64).sqrt()).sum::<f64>();
                sample_nb(rng, eta.exp(), phi)
            })
            .collect();
        let y = CountVector::new(&y).unwrap();
        if y.is_all_zero() {
            continue;
        }
        let design = DesignMatrix::new(z, None).unwrap();
        if let Ok(fit) = fit_null_nb(&y, &design, Dispersion::Fixed(phi)) {
            return fit;
        }
    }
}

/// Mean and variance of Σ c_i x_π(i) / n over all n! permutations.
pub fn enumerated_moments(c: &[f64], x: &[f64]) -> (f64, f64) {
    let n = c.len();
    let mut vals = Vec::new();
    for_each_permutation(n, |perm| {
        vals.push((0..n).map(|i| c[i] * x[perm[i]]).sum::<f64>() / n as f64);
    });
    let k = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / k;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / k;
    (mean, var)
}
