mod common;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;

use common::{nb_data, pearson};
use permscore::model::*;
use permscore::rng::stream;
use permscore::sim::{gen_deseq2_dataset, sample_nb, SimConfig};

/// Newton-Raphson on the NB log-likelihood with observed information.
fn newton_oracle(y: &[f64], z: &Array2<f64>, phi: f64) -> Vec<f64> {
    let (n, p) = z.dim();
    let mut beta = vec![0.0; p];
    beta[0] = (y.iter().sum::<f64>() / n as f64).ln();
    for _ in 0..200 {
        let mut g = Array1::<f64>::zeros(p);
        let mut h = Array2::<f64>::zeros((p, p));
        for i in 0..n {
            let eta: f64 = (0..p).map(|j| z[[i, j]] * beta[j]).sum();
            let mu = eta.exp();
            let d = 1.0 + phi * mu;
            let r = (y[i] - mu) / d;
            let w = mu * (1.0 + phi * y[i]) / (d * d);
            for a in 0..p {
                g[a] += z[[i, a]] * r;
                for b in 0..p {
                    h[[a, b]] += z[[i, a]] * w * z[[i, b]];
                }
            }
        }
        let step = common::gj_inverse(h.view()).dot(&g);
        for j in 0..p {
            beta[j] += step[j];
        }
        if step.iter().all(|s| s.abs() < 1e-14) {
            break;
        }
    }
    beta
}

#[test]
fn irls_matches_newton_oracle() {
    for seed in 0..20 {
        let (y, d) = nb_data(20, 2, 0.4, seed);
        if y.is_all_zero() {
            continue;
        }
        let fit = fit_null_nb(&y, &d, Dispersion::Fixed(0.4)).unwrap();
        let oracle = newton_oracle(y.as_slice(), &d.matrix().to_owned(), 0.4);
        for j in 0..2 {
            assert!(
                (fit.beta[j] - oracle[j]).abs() < 1e-6,
                "seed {seed}: {} vs {}",
                fit.beta[j],
                oracle[j]
            );
        }
    }
}

#[test]
fn converged_fits_satisfy_invariants() {
    for seed in 0..10 {
        let (y, d) = nb_data(200, 4, 0.3, seed);
        let fit = fit_null_nb(&y, &d, Dispersion::Estimate).unwrap();
        let score = fit.score_vector();
        let rnorm = fit.r_hat.dot(&fit.r_hat).sqrt();
        assert!(score.iter().all(|s| s.abs() <= 1e-6 * (1.0 + rnorm)));
        let gram = permscore::linalg::weighted_gram(d.matrix(), fit.w.view());
        let rtr = fit.r.t().dot(&fit.r);
        let scale = permscore::linalg::max_abs(gram.view());
        assert!(permscore::linalg::max_abs((&rtr - &gram).view()) <= 1e-8 * scale);
        let qtq = fit.q.t().dot(&fit.q);
        assert!(permscore::linalg::max_abs((&qtq - &Array2::<f64>::eye(4)).view()) < 1e-10);
        let tr = &fit.convergence.deviance_trace;
        assert!(tr.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
    }
}

fn nb_loglik(y: &[f64], mu: &[f64], phi: f64) -> f64 {
    let theta = 1.0 / phi;
    y.iter()
        .zip(mu)
        .map(|(&y, &m)| {
            ln_gamma(y + theta) - ln_gamma(theta) - ln_gamma(y + 1.0)
                + theta * (theta / (theta + m)).ln()
                + y * (m / (theta + m)).ln()
        })
        .sum()
}

/// Golden-section search of the log-likelihood over log φ.
fn profile_oracle(y: &[f64], mu: &[f64]) -> f64 {
    let f = |t: f64| -nb_loglik(y, mu, t.exp());
    let (mut a, mut b) = (-12.0f64, 5.0f64);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    while b - a > 1e-12 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    ((a + b) / 2.0).exp()
}

#[test]
fn ml_dispersion_matches_profile_likelihood_oracle() {
    for seed in 0..10 {
        let mut rng = stream(seed, 1, 0);
        let mu: Vec<f64> = (0..300).map(|i| 2.0 + (i % 7) as f64).collect();
        let y: Vec<f64> = mu.iter().map(|&m| sample_nb(&mut rng, m, 0.6) as f64).collect();
        let got = ml_dispersion(Array1::from(y.clone()).view(), Array1::from(mu.clone()).view());
        let want = profile_oracle(&y, &mu);
        assert!((got - want).abs() < 1e-6 * want.max(1e-3), "{got} vs {want}");
    }
}

fn intercept_only_estimates(n: usize, phi: f64, mu: f64, reps: usize) -> Vec<f64> {
    let d = DesignMatrix::intercept_only(n).unwrap();
    (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(31, r as u64, (phi * 100.0) as u64);
            let y: Vec<u64> = (0..n).map(|_| sample_nb(&mut rng, mu, phi)).collect();
            estimate_dispersion(&CountVector::new(&y).unwrap(), &d).unwrap()
        })
        .collect()
}

#[test]
fn dispersion_is_small_for_poisson_data() {
    let est = intercept_only_estimates(5000, 0.0, 5.0, 100);
    assert!(
        est.iter().all(|&p| (0.0..=0.05).contains(&p)),
        "{:?}",
        est.iter().cloned().fold(0.0, f64::max)
    );
}

#[test]
fn dispersion_recovers_unit_overdispersion() {
    let est = intercept_only_estimates(10_000, 1.0, 5.0, 100);
    assert!(est.iter().all(|&p| (0.9..=1.1).contains(&p)));
}

#[test]
fn median_of_ratios_tracks_true_size_factors() {
    let cfg = SimConfig {
        n: 20,
        m: 2000,
        seed: 4,
        ..SimConfig::deseq2()
    };
    let data = gen_deseq2_dataset(&cfg, 0.5, 1.5).unwrap();
    let s = estimate_size_factors(data.counts.mapv(|v| v as f64).view()).unwrap();
    let truth = data.size_factors.unwrap();
    let r = pearson(s.as_slice().unwrap(), truth.as_slice().unwrap());
    assert!(r > 0.9, "r = {r}");
}

#[test]
fn returned_fits_always_meet_the_score_invariant() {
    let mut failures = 0;
    for seed in 0..300 {
        let mut rng = stream(seed, 3, 0);
        let n = rng.random_range(15..40);
        let z = Array2::from_shape_fn((n, 8), |(_, j)| if j == 0 { 1.0 } else { rng.sample(StandardNormal) });
        let y: Vec<u64> = (0..n).map(|_| sample_nb(&mut rng, 1.2, 0.8)).collect();
        let y = CountVector::new(&y).unwrap();
        let d = DesignMatrix::new(z, None).unwrap();
        match fit_null_nb(&y, &d, Dispersion::Fixed(0.8)) {
            Ok(fit) => {
                let bound = 1e-6 * (1.0 + fit.r_hat.dot(&fit.r_hat).sqrt());
                assert!(fit.score_vector().iter().all(|s| s.abs() <= bound), "seed {seed}");
            }
            Err(permscore::Error::Convergence { .. }) => failures += 1,
            Err(_) => {}
        }
    }
    assert!(failures < 300);
}
