//! Wall-clock timing and instrumented operation counts of the score
//! kernels on synthetic fits.

use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;

use super::flops::{Algorithm, FlopCounter, FlopQuery, Variant};
use super::{
    build_kernel_with, build_q_kernel_with, score_q_sparse_with, score_q_with, score_r_sparse_with, score_r_with,
};
use super::{QKernel, ScoreKernel};
use crate::error::{Error, Result};
use crate::model::{fit_null_nb, CountVector, DesignMatrix, Dispersion, NullFit};
use crate::rng::stream;
use crate::sim::sample_nb;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelTiming {
    pub algorithm: Algorithm,
    pub variant: Variant,
    /// Kernel construction plus B evaluations, excluding the GLM fit.
    pub secs: f64,
    /// Sum of the statistics, so the work cannot be optimized away.
    pub checksum: f64,
}

/// NB fit with an intercept plus p − 1 Gaussian covariates, and B random
/// supports of size s.
fn synthetic(n: usize, p: usize, s: usize, b: usize, seed: u64) -> Result<(NullFit, Vec<Vec<usize>>)> {
    if p == 0 || p >= n || s == 0 || s > n {
        return Err(Error::Usage(format!(
            "need 0 < p < n and 0 < s <= n, got n={n}, p={p}, s={s}"
        )));
    }
    let mut rng = stream(seed, 0, 0);
    let z = Array2::from_shape_fn((n, p), |(_, j)| if j == 0 { 1.0 } else { rng.sample(StandardNormal) });
    let y: Vec<u64> = (0..n)
        .map(|i| {
            let eta: f64 = 1.5 + (1..p).map(|j| 0.3 * z[[i, j]]).sum::<f64>();
            sample_nb(&mut rng, eta.exp(), 0.2)
        })
        .collect();
    let fit = fit_null_nb(
        &CountVector::new(&y)?,
        &DesignMatrix::new(z, None)?,
        Dispersion::Fixed(0.2),
    )?;
    let supports = (0..b).map(|_| sample(&mut rng, n, s).into_vec()).collect();
    Ok((fit, supports))
}

/// Time all four kernel variants on one synthetic fit over the same B
/// random supports of size πn.
pub fn time_kernels(n: usize, p: usize, pi: f64, b: usize, seed: u64) -> Result<Vec<KernelTiming>> {
    let (fit, supports) = synthetic(n, p, (pi * n as f64).round() as usize, b, seed)?;

    let mut dense = Array1::<f64>::zeros(n);
    let mut run = |algorithm, variant| -> Result<KernelTiming> {
        let start = Instant::now();
        let mut checksum = 0.0;
        match (algorithm, variant) {
            (Algorithm::R, Variant::SparsityExploiting) => {
                let k = ScoreKernel::new(&fit)?;
                for sup in &supports {
                    checksum += k.score_support(sup)?;
                }
            }
            (Algorithm::R, Variant::SparsityUnaware) => {
                let k = ScoreKernel::new(&fit)?;
                for sup in &supports {
                    sup.iter().for_each(|&i| dense[i] = 1.0);
                    checksum += k.score(dense.view())?;
                    sup.iter().for_each(|&i| dense[i] = 0.0);
                }
            }
            (Algorithm::Q, Variant::SparsityExploiting) => {
                let k = QKernel::new(&fit);
                for sup in &supports {
                    checksum += k.score_support(sup)?;
                }
            }
            (Algorithm::Q, Variant::SparsityUnaware) => {
                let k = QKernel::new(&fit);
                for sup in &supports {
                    sup.iter().for_each(|&i| dense[i] = 1.0);
                    checksum += k.score(dense.view())?;
                    sup.iter().for_each(|&i| dense[i] = 0.0);
                }
            }
        }
        Ok(KernelTiming {
            algorithm,
            variant,
            secs: start.elapsed().as_secs_f64(),
            checksum,
        })
    };
    [
        (Algorithm::R, Variant::SparsityExploiting),
        (Algorithm::R, Variant::SparsityUnaware),
        (Algorithm::Q, Variant::SparsityExploiting),
        (Algorithm::Q, Variant::SparsityUnaware),
    ]
    .into_iter()
    .map(|(a, v)| run(a, v))
    .collect()
}

/// Run the instrumented kernel for one table cell on a synthetic fit and
/// return the operations it reported.
pub fn count_kernel_flops(q: &FlopQuery, seed: u64) -> Result<u64> {
    let n = q.n as usize;
    let (fit, supports) = synthetic(n, q.p as usize, q.support as usize, q.b as usize, seed)?;
    let mut c = FlopCounter::default();
    let dense = |sup: &[usize]| {
        let mut x = Array1::<f64>::zeros(n);
        sup.iter().for_each(|&i| x[i] = 1.0);
        x
    };
    match q.algorithm {
        Algorithm::R => {
            let k = build_kernel_with(&fit, &mut c)?;
            for sup in &supports {
                match q.variant {
                    Variant::SparsityExploiting => score_r_sparse_with(&k, sup, &mut c)?,
                    Variant::SparsityUnaware => score_r_with(&k, dense(sup).view(), &mut c)?,
                };
            }
        }
        Algorithm::Q => {
            let k = build_q_kernel_with(&fit, &mut c);
            for sup in &supports {
                match q.variant {
                    Variant::SparsityExploiting => score_q_sparse_with(&k, sup, &mut c)?,
                    Variant::SparsityUnaware => score_q_with(&k, dense(sup).view(), &mut c)?,
                };
            }
        }
    }
    Ok(c.flops)
}
