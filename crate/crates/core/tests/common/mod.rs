#![allow(dead_code)]

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

use permscore::model::{fit_null_nb, CountVector, DesignMatrix, Dispersion, NullFit};
use permscore::rng::stream;
use permscore::sim::sample_nb;

/// NB data with an intercept plus p − 1 Gaussian covariates.
pub fn nb_data(n: usize, p: usize, phi: f64, seed: u64) -> (CountVector, DesignMatrix) {
    let mut rng = stream(seed, 99, 0);
    let scale = rng.random_range(0.1..0.6);
    let base = rng.random_range(0.5..3.0);
    let z = Array2::from_shape_fn((n, p), |(_, j)| if j == 0 { 1.0 } else { rng.sample(StandardNormal) });
    let y: Vec<u64> = (0..n)
        .map(|i| {
            let eta = base + (1..p).map(|j| scale * z[[i, j]] / (p as f64).sqrt()).sum::<f64>();
            sample_nb(&mut rng, eta.exp(), phi)
        })
        .collect();
    (CountVector::new(&y).unwrap(), DesignMatrix::new(z, None).unwrap())
}

pub fn nb_fit(n: usize, p: usize, phi: f64, seed: u64) -> NullFit {
    let (y, d) = nb_data(n, p, phi, seed);
    fit_null_nb(&y, &d, Dispersion::Fixed(phi)).unwrap()
}

/// Gauss-Jordan inverse with partial pivoting, independent of the crate.
pub fn gj_inverse(a: ArrayView2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let mut m = Array2::<f64>::zeros((n, 2 * n));
    for i in 0..n {
        for j in 0..n {
            m[[i, j]] = a[[i, j]];
        }
        m[[i, n + i]] = 1.0;
    }
    for c in 0..n {
        let piv = (c..n)
            .max_by(|&r, &s| m[[r, c]].abs().total_cmp(&m[[s, c]].abs()))
            .unwrap();
        for j in 0..2 * n {
            m.swap([c, j], [piv, j]);
        }
        let d = m[[c, c]];
        for j in 0..2 * n {
            m[[c, j]] /= d;
        }
        for r in 0..n {
            if r != c {
                let f = m[[r, c]];
                for j in 0..2 * n {
                    m[[r, j]] -= f * m[[c, j]];
                }
            }
        }
    }
    m.slice(ndarray::s![.., n..]).to_owned()
}

/// xᵀr / sqrt(xᵀWx − xᵀWZ(ZᵀWZ)⁻¹ZᵀWx) from scratch.
pub fn score_oracle(z: ArrayView2<f64>, w: ArrayView1<f64>, r: ArrayView1<f64>, x: ArrayView1<f64>) -> f64 {
    let (n, p) = z.dim();
    let mut g = Array2::<f64>::zeros((p, p));
    let mut v = Array1::<f64>::zeros(p);
    for i in 0..n {
        for a in 0..p {
            v[a] += z[[i, a]] * w[i] * x[i];
            for b in 0..p {
                g[[a, b]] += z[[i, a]] * w[i] * z[[i, b]];
            }
        }
    }
    let gi = gj_inverse(g.view());
    let top: f64 = (0..n).map(|i| x[i] * r[i]).sum();
    let xwx: f64 = (0..n).map(|i| x[i] * w[i] * x[i]).sum();
    let quad = v.dot(&gi.dot(&v));
    top / (xwx - quad).sqrt()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}

/// Binomial tolerance k·sqrt(q(1−q)/n) above q.
pub fn binom_upper(q: f64, n: usize, k: f64) -> f64 {
    q + k * (q * (1.0 - q) / n as f64).sqrt()
}
