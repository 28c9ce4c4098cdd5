//! Synthetic differential-expression experiments.
//!
//! Every random component (covariates, treatment, per-gene coefficients,
//! size factors, counts, zero inflation) draws from its own keyed stream, so
//! changing one knob does not perturb the others. In particular, fixing the
//! size factors at 1 reproduces the mean matrix of the plain NB generator.

use ndarray::{s, Array1, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream};
use crate::treatment::Treatment;

const KEY_COVARIATES: u64 = 1;
const KEY_TREATMENT: u64 = 2;
const KEY_SIZE_FACTORS: u64 = 3;
const KEY_GENES: u64 = 4;
const KEY_ZERO_INFLATION: u64 = 5;
const KEY_SHUFFLE: u64 = 6;

const STREAM_COEF: u64 = 0;
const STREAM_COUNTS: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SizeFactors {
    /// s_i = 1 (no offset).
    Unit,
    /// s_i ~ Uniform(lo, hi).
    Uniform(f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n: usize,
    pub m: usize,
    /// Nuisance covariates, not counting the intercept.
    pub p: usize,
    /// |γ| for alternative genes; signs alternate +, −, +, ...
    pub gamma: f64,
    /// Baseline log-mean (intercept coefficient).
    pub beta0: f64,
    /// Nuisance coefficients are drawn per gene from U(−beta_max, beta_max).
    pub beta_max: f64,
    /// ‖δ‖_∞ of the logistic treatment model; 0 gives X ~ Bern(1/2) ⫫ Z.
    pub delta_max: f64,
    pub phi: f64,
    pub psi: f64,
    /// The first ⌊null_fraction·m⌋ genes are null.
    pub null_fraction: f64,
    pub size_factors: SizeFactors,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            m: 500,
            p: 2,
            gamma: 0.5,
            beta0: 2.0,
            beta_max: 0.5,
            delta_max: 0.0,
            phi: 0.2,
            psi: 0.0,
            null_fraction: 0.9,
            size_factors: SizeFactors::Unit,
            seed: 0,
        }
    }
}

impl SimConfig {
    /// DESeq2-style defaults: n = 50, baseline log(80), s_i ~ U(0.5, 1.5).
    pub fn deseq2() -> Self {
        Self {
            n: 50,
            beta0: 80f64.ln(),
            size_factors: SizeFactors::Uniform(0.5, 1.5),
            ..Self::default()
        }
    }

    pub fn n_null(&self) -> usize {
        (self.null_fraction * self.m as f64).floor() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.m == 0 {
            return Err(Error::Config("need n >= 2 and m >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.psi) || !(0.0..=1.0).contains(&self.null_fraction) {
            return Err(Error::Config("psi and null_fraction must be in [0, 1]".into()));
        }
        if !(self.phi >= 0.0) || !self.gamma.is_finite() || !(self.beta_max >= 0.0) || !self.delta_max.is_finite() {
            return Err(Error::Config(
                "phi and beta_max must be >= 0; gamma, delta finite".into(),
            ));
        }
        if let SizeFactors::Uniform(lo, hi) = self.size_factors {
            if !(lo > 0.0 && hi >= lo) {
                return Err(Error::Config("size-factor range must satisfy 0 < lo <= hi".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimDataset {
    /// m × n
    pub counts: Array2<u64>,
    /// m × n true means
    pub means: Array2<f64>,
    pub x: Treatment,
    /// n × (p + 1), intercept in column 0.
    pub z: Array2<f64>,
    /// true for genes generated under the null.
    pub is_null: Vec<bool>,
    pub gamma: Vec<f64>,
    pub size_factors: Option<Array1<f64>>,
}

impl SimDataset {
    /// Covariate columns without the intercept.
    pub fn nuisance(&self) -> ArrayView2<'_, f64> {
        self.z.slice(s![.., 1..])
    }
}

fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// Draw one NB(μ, φ) count as a Gamma–Poisson mixture.
pub fn sample_nb<R: Rng + ?Sized>(rng: &mut R, mu: f64, phi: f64) -> u64 {
    let lambda = if phi > 0.0 {
        let shape = 1.0 / phi;
        Gamma::new(shape, mu * phi).expect("valid gamma").sample(rng)
    } else {
        mu
    };
    if lambda <= 0.0 {
        return 0;
    }
    Poisson::new(lambda).expect("valid poisson").sample(rng) as u64
}

/// Confounding coefficients δ_j = δ∞·(−1)^j over the nuisance covariates.
pub fn delta_vector(p: usize, delta_max: f64) -> Vec<f64> {
    (0..p)
        .map(|j| if j % 2 == 0 { delta_max } else { -delta_max })
        .collect()
}

fn generate(cfg: &SimConfig) -> Result<SimDataset> {
    cfg.validate()?;
    let (n, m, p) = (cfg.n, cfg.m, cfg.p);

    let mut rz = stream(cfg.seed, KEY_COVARIATES, 0);
    let mut z = Array2::<f64>::ones((n, p + 1));
    for i in 0..n {
        for j in 0..p {
            z[[i, j + 1]] = rz.sample(StandardNormal);
        }
    }

    let mut rx = stream(cfg.seed, KEY_TREATMENT, 0);
    let delta = delta_vector(p, cfg.delta_max);
    let xb: Vec<bool> = (0..n)
        .map(|i| {
            let eta: f64 = (0..p).map(|j| delta[j] * z[[i, j + 1]]).sum();
            rx.random_bool(sigmoid(eta))
        })
        .collect();
    let x = Treatment::from_bools(&xb);

    let size_factors = match cfg.size_factors {
        SizeFactors::Unit => None,
        SizeFactors::Uniform(lo, hi) => {
            let mut rs = stream(cfg.seed, KEY_SIZE_FACTORS, 0);
            Some(Array1::from_shape_fn(n, |_| {
                if hi > lo {
                    rs.random_range(lo..hi)
                } else {
                    lo
                }
            }))
        }
    };

    let m0 = cfg.n_null();
    let mut counts = Array2::<u64>::zeros((m, n));
    let mut means = Array2::<f64>::zeros((m, n));
    let mut gammas = vec![0.0; m];
    for g in 0..m {
        let gene_seed = derive_seed(cfg.seed, KEY_GENES);
        let mut rc = stream(gene_seed, g as u64, STREAM_COEF);
        let beta: Vec<f64> = (0..p)
            .map(|_| {
                if cfg.beta_max > 0.0 {
                    rc.random_range(-cfg.beta_max..cfg.beta_max)
                } else {
                    0.0
                }
            })
            .collect();
        let gamma = if g >= m0 {
            if (g - m0) % 2 == 0 {
                cfg.gamma
            } else {
                -cfg.gamma
            }
        } else {
            0.0
        };
        gammas[g] = gamma;
        let mut ry = stream(gene_seed, g as u64, STREAM_COUNTS);
        for i in 0..n {
            let mut eta = cfg.beta0 + if xb[i] { gamma } else { 0.0 };
            for j in 0..p {
                eta += beta[j] * z[[i, j + 1]];
            }
            let mut mu = eta.exp();
            if let Some(s) = &size_factors {
                mu *= s[i];
            }
            means[[g, i]] = mu;
            counts[[g, i]] = sample_nb(&mut ry, mu, cfg.phi);
        }
    }
    let counts = if cfg.psi > 0.0 {
        zero_inflate(&counts, cfg.psi, derive_seed(cfg.seed, KEY_ZERO_INFLATION))?
    } else {
        counts
    };

    Ok(SimDataset {
        counts,
        means,
        x,
        z,
        is_null: (0..m).map(|g| g < m0).collect(),
        gamma: gammas,
        size_factors,
    })
}

/// NB GLM data; size factors in `cfg` are ignored (all s_i = 1).
pub fn gen_nb_dataset(cfg: &SimConfig) -> Result<SimDataset> {
    generate(&SimConfig {
        size_factors: SizeFactors::Unit,
        ..cfg.clone()
    })
}

/// DESeq2 model: as [`gen_nb_dataset`] plus a log size-factor offset with
/// s_i ~ Uniform(lo, hi).
pub fn gen_deseq2_dataset(cfg: &SimConfig, lo: f64, hi: f64) -> Result<SimDataset> {
    generate(&SimConfig {
        size_factors: SizeFactors::Uniform(lo, hi),
        ..cfg.clone()
    })
}

/// Replace each entry by 0 independently with probability ψ.
pub fn zero_inflate(counts: &Array2<u64>, psi: f64, seed: u64) -> Result<Array2<u64>> {
    if !(0.0..=1.0).contains(&psi) {
        return Err(Error::Config(format!("psi must be in [0, 1], got {psi}")));
    }
    let mut out = counts.clone();
    for (g, mut row) in out.rows_mut().into_iter().enumerate() {
        let mut r = stream(seed, g as u64, 0);
        for v in row.iter_mut() {
            if r.random_bool(psi) {
                *v = 0;
            }
        }
    }
    Ok(out)
}

/// Shuffle every gene's counts across samples, independently per gene.
pub fn negative_control_permute(counts: &Array2<u64>, seed: u64) -> Array2<u64> {
    let mut out = counts.clone();
    let s = derive_seed(seed, KEY_SHUFFLE);
    for (g, mut row) in out.rows_mut().into_iter().enumerate() {
        let mut r = stream(s, g as u64, 0);
        let mut v = row.to_vec();
        v.shuffle(&mut r);
        row.assign(&Array1::from(v));
    }
    out
}
