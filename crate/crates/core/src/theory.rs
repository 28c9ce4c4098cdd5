//! Monte-Carlo probes of the asymptotic variances of the score statistic.
//!
//! With W = μ/(1+φ̄μ), S = μ(1+φμ)/(1+φ̄μ)² and the weighted projection
//! residual R = √W (X − γᵀZ), γ = E[ZZᵀW]⁻¹E[ZXW]:
//!
//! ```text
//! σ_p² = E[S] / E[W]                 (permutation distribution)
//! σ_s² = E[R² S/W] / E[R²]           (sampling distribution)
//! ```

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::cholesky_solve;
use crate::model::{fit_null_nb, CountVector, DesignMatrix, Dispersion};
use crate::perm::{Draw, PermSampler};
use crate::rng::stream;
use crate::score::ScoreKernel;
use crate::sim::sample_nb;
use crate::special::{normal_pdf, normal_quantile, CompensatedSum};
use crate::treatment::Treatment;

const BATCH: usize = 1 << 15;

/// Joint law of (X, Z, Y) under the null: Z = (1, N(0, I_p)),
/// X ~ Bern(sigmoid(δᵀZ₋₁)), Y ~ NB(exp(βᵀZ), φ).
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationSpec {
    /// Coefficients including the intercept (length p + 1).
    pub beta: Vec<f64>,
    /// Logistic coefficients of X on the non-intercept covariates (length p).
    pub delta: Vec<f64>,
    pub phi: f64,
    pub phi_bar: f64,
    pub n_draws: usize,
    pub seed: u64,
}

impl Default for PopulationSpec {
    fn default() -> Self {
        Self {
            beta: vec![1.0, 0.5, -0.5],
            delta: vec![0.8, -0.8],
            phi: 1.0,
            phi_bar: 1.0,
            n_draws: 1_000_000,
            seed: 0,
        }
    }
}

impl PopulationSpec {
    pub fn p(&self) -> usize {
        self.beta.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.beta.is_empty() || self.delta.len() + 1 != self.beta.len() {
            return Err(Error::Config("beta must have length p + 1 and delta length p".into()));
        }
        if !(self.phi >= 0.0 && self.phi_bar >= 0.0) {
            return Err(Error::Config("dispersions must be >= 0".into()));
        }
        if self.n_draws < 2 {
            return Err(Error::Config("need at least 2 Monte-Carlo draws".into()));
        }
        Ok(())
    }

    /// One draw of (z, x, μ).
    fn draw_xz(&self, rng: &mut ChaCha8Rng, z: &mut [f64]) -> (f64, f64) {
        z[0] = 1.0;
        let mut eta_x = 0.0;
        let mut eta_y = self.beta[0];
        for j in 1..z.len() {
            let v: f64 = rng.sample(StandardNormal);
            z[j] = v;
            eta_x += self.delta[j - 1] * v;
            eta_y += self.beta[j] * v;
        }
        let x = if rng.random_bool(1.0 / (1.0 + (-eta_x).exp())) {
            1.0
        } else {
            0.0
        };
        (x, eta_y.exp())
    }

    /// Weight, variance ratio S/W and S at mean μ.
    fn wsr(&self, mu: f64) -> (f64, f64) {
        let w = mu / (1.0 + self.phi_bar * mu);
        let s_over_w = (1.0 + self.phi * mu) / (1.0 + self.phi_bar * mu);
        (w, s_over_w)
    }

    /// Visit every draw, batch by batch; batches are reduced in order.
    fn map_reduce<A, F, G>(&self, init: A, f: F, merge: G) -> A
    where
        A: Send + Sync + Clone,
        F: Fn(&mut A, &[f64], f64, f64) + Sync,
        G: Fn(&mut A, &A),
    {
        let nb = self.n_draws.div_ceil(BATCH);
        let parts: Vec<A> = (0..nb)
            .into_par_iter()
            .map(|b| {
                let mut acc = init.clone();
                let mut rng = stream(self.seed, b as u64, 0);
                let mut z = vec![0.0; self.p()];
                let count = BATCH.min(self.n_draws - b * BATCH);
                for _ in 0..count {
                    let (x, mu) = self.draw_xz(&mut rng, &mut z);
                    f(&mut acc, &z, x, mu);
                }
                acc
            })
            .collect();
        let mut out = init;
        for part in &parts {
            merge(&mut out, part);
        }
        out
    }
}

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

/// Running first and second moments of a small vector of per-draw values.
#[derive(Debug, Clone)]
struct Moments {
    n: usize,
    sum: Vec<CompensatedSum>,
    cross: Array2<f64>,
}

impl Moments {
    fn new(k: usize) -> Self {
        Self {
            n: 0,
            sum: vec![CompensatedSum::default(); k],
            cross: Array2::zeros((k, k)),
        }
    }

    fn push(&mut self, v: &[f64]) {
        self.n += 1;
        for (a, &va) in v.iter().enumerate() {
            self.sum[a].add(va);
            for (b, &vb) in v.iter().enumerate() {
                self.cross[[a, b]] += va * vb;
            }
        }
    }

    fn merge(&mut self, o: &Moments) {
        self.n += o.n;
        for (s, t) in self.sum.iter_mut().zip(&o.sum) {
            s.merge(t);
        }
        self.cross += &o.cross;
    }

    fn means(&self) -> Array1<f64> {
        self.sum.iter().map(|s| s.value() / self.n as f64).collect()
    }

    /// Covariance of the sample means.
    fn mean_cov(&self) -> Array2<f64> {
        let n = self.n as f64;
        let m = self.means();
        let k = m.len();
        Array2::from_shape_fn((k, k), |(a, b)| (self.cross[[a, b]] / n - m[a] * m[b]) / (n - 1.0))
    }

    /// sqrt(mean[i]/mean[j]) and its delta-method standard error.
    fn sqrt_ratio(&self, i: usize, j: usize) -> Estimate {
        let m = self.means();
        let c = self.mean_cov();
        let value = (m[i] / m[j]).sqrt();
        // d log(value) = ½ (dm_i/m_i − dm_j/m_j)
        let (gi, gj) = (0.5 / m[i], -0.5 / m[j]);
        let var = gi * gi * c[[i, i]] + 2.0 * gi * gj * c[[i, j]] + gj * gj * c[[j, j]];
        Estimate {
            value,
            se: value * var.max(0.0).sqrt(),
        }
    }
}

/// σ_p = sqrt(E[S]/E[W]).
pub fn mc_sigma_p(spec: &PopulationSpec) -> Result<Estimate> {
    spec.validate()?;
    let mom = spec.map_reduce(
        Moments::new(2),
        |acc, _, _, mu| {
            let (w, sw) = spec.wsr(mu);
            acc.push(&[w * sw, w]);
        },
        |a, b| a.merge(b),
    );
    Ok(mom.sqrt_ratio(0, 1))
}

/// Weighted population projection coefficients γ = E[ZZᵀW]⁻¹E[ZXW].
pub fn projection_coefficients(spec: &PopulationSpec) -> Result<Array1<f64>> {
    spec.validate()?;
    let p = spec.p();
    #[derive(Clone)]
    struct Acc {
        zz: Vec<CompensatedSum>,
        zx: Vec<CompensatedSum>,
    }
    let acc = spec.map_reduce(
        Acc {
            zz: vec![CompensatedSum::default(); p * p],
            zx: vec![CompensatedSum::default(); p],
        },
        |acc, z, x, mu| {
            let (w, _) = spec.wsr(mu);
            for a in 0..p {
                let za = z[a] * w;
                acc.zx[a].add(za * x);
                for b in 0..p {
                    acc.zz[a * p + b].add(za * z[b]);
                }
            }
        },
        |a, b| {
            for (s, t) in a.zz.iter_mut().zip(&b.zz) {
                s.merge(t);
            }
            for (s, t) in a.zx.iter_mut().zip(&b.zx) {
                s.merge(t);
            }
        },
    );
    let n = spec.n_draws as f64;
    let zz = Array2::from_shape_fn((p, p), |(a, b)| acc.zz[a * p + b].value() / n);
    let zx: Array1<f64> = acc.zx.iter().map(|s| s.value() / n).collect();
    cholesky_solve(zz.view(), zx.view())
        .map_err(|_| Error::Conditioning("Monte-Carlo moment matrix E[ZZᵀW] is singular".into()))
}

/// σ_s = sqrt(E[R²S/W]/E[R²]) with the plug-in projection.
pub fn mc_sigma_s(spec: &PopulationSpec) -> Result<Estimate> {
    Ok(sigma_probe(spec)?.sigma_s)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaReport {
    pub phi: f64,
    pub phi_bar: f64,
    pub sigma_p: Estimate,
    pub sigma_s: Estimate,
    /// σ_p/σ_s with a delta-method standard error over the joint draws.
    pub ratio: Estimate,
}

/// σ_p, σ_s and their ratio from one set of draws.
pub fn sigma_probe(spec: &PopulationSpec) -> Result<SigmaReport> {
    let gamma = projection_coefficients(spec)?;
    // per-draw values: S, W, R²S/W, R²
    let mom = spec.map_reduce(
        Moments::new(4),
        |acc, z, x, mu| {
            let (w, sw) = spec.wsr(mu);
            let fitted: f64 = z.iter().zip(gamma.iter()).map(|(a, b)| a * b).sum();
            let r2 = w * (x - fitted).powi(2);
            acc.push(&[w * sw, w, r2 * sw, r2]);
        },
        |a, b| a.merge(b),
    );
    let sigma_p = mom.sqrt_ratio(0, 1);
    let sigma_s = mom.sqrt_ratio(2, 3);
    let m = mom.means();
    let c = mom.mean_cov();
    // log ratio = ½(log m0 − log m1 − log m2 + log m3)
    let g = [0.5 / m[0], -0.5 / m[1], -0.5 / m[2], 0.5 / m[3]];
    let mut var = 0.0;
    for a in 0..4 {
        for b in 0..4 {
            var += g[a] * g[b] * c[[a, b]];
        }
    }
    let ratio = sigma_p.value / sigma_s.value;
    Ok(SigmaReport {
        phi: spec.phi,
        phi_bar: spec.phi_bar,
        sigma_p,
        sigma_s,
        ratio: Estimate {
            value: ratio,
            se: ratio * var.max(0.0).sqrt(),
        },
    })
}

/// Asymptotic type-I error bound α + φ(0)·Φ⁻¹(1−α)·(1 − σ_p/σ_s).
pub fn camp_excess_bound(alpha: f64, sigma_p: f64, sigma_s: f64) -> f64 {
    alpha + normal_pdf(0.0) * normal_quantile(1.0 - alpha) * (1.0 - sigma_p / sigma_s)
}

/// One simulated dataset of size n from the population.
pub fn draw_dataset(spec: &PopulationSpec, n: usize, seed: u64) -> Result<(CountVector, Treatment, DesignMatrix)> {
    spec.validate()?;
    let p = spec.p();
    let mut rng = stream(seed, 0, 0);
    let mut z = Array2::<f64>::zeros((n, p));
    let mut xb = vec![false; n];
    let mut y = vec![0u64; n];
    let mut row = vec![0.0; p];
    for i in 0..n {
        let (x, mu) = spec.draw_xz(&mut rng, &mut row);
        for j in 0..p {
            z[[i, j]] = row[j];
        }
        xb[i] = x == 1.0;
        y[i] = sample_nb(&mut rng, mu, spec.phi);
    }
    Ok((
        CountVector::new(&y)?,
        Treatment::from_bools(&xb),
        DesignMatrix::new(z, None)?,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PermDistribution {
    pub z_orig: f64,
    pub z_perm: Vec<f64>,
}

/// Fit one dataset with dispersion φ̄ and return n_perms permuted score
/// statistics.
pub fn empirical_perm_distribution(
    spec: &PopulationSpec,
    n: usize,
    n_perms: usize,
    seed: u64,
) -> Result<PermDistribution> {
    let (y, x, design) = draw_dataset(spec, n, seed)?;
    x.ensure_both_classes()?;
    let fit = fit_null_nb(&y, &design, Dispersion::Fixed(spec.phi_bar))?;
    let kernel = ScoreKernel::new(&fit)?;
    let z_orig = kernel.score_binary(x.support(), &x.complement())?;
    let mut sampler = PermSampler::new(n, x.count(), stream(seed, 1, 0));
    let z_perm = (0..n_perms)
        .map(|_| match sampler.draw() {
            Draw::Ones(o) => kernel.score_support(o),
            Draw::Zeros(c) => kernel.score_complement(c),
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(PermDistribution { z_orig, z_perm })
}

/// Unpermuted score statistics over independent datasets.
pub fn sampling_distribution(spec: &PopulationSpec, n: usize, reps: usize, seed: u64) -> Result<Vec<f64>> {
    (0..reps)
        .into_par_iter()
        .map(|r| {
            let (y, x, design) = draw_dataset(spec, n, crate::rng::derive_seed(seed, r as u64))?;
            let fit = fit_null_nb(&y, &design, Dispersion::Fixed(spec.phi_bar))?;
            ScoreKernel::new(&fit)?.score(x.to_dense().view())
        })
        .collect()
}

pub fn sample_sd(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}
