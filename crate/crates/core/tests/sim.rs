mod common;

use ndarray::Array2;

use common::{mean, pearson};
use permscore::sim::*;
use permscore::theory::{draw_dataset, PopulationSpec};

fn x_f64(d: &SimDataset) -> Vec<f64> {
    d.x.to_dense().to_vec()
}

#[test]
fn unconfounded_treatment_is_independent_of_covariates() {
    let d = gen_nb_dataset(&SimConfig {
        n: 10_000,
        m: 1,
        p: 3,
        delta_max: 0.0,
        seed: 1,
        ..Default::default()
    })
    .unwrap();
    let x = x_f64(&d);
    for j in 1..4 {
        let r = pearson(&x, &d.z.column(j).to_vec());
        assert!(r.abs() < 0.05, "column {j}: {r}");
    }
    assert!((mean(&x) - 0.5).abs() < 0.02);
}

#[test]
fn confounded_treatment_follows_delta_signs() {
    let d = gen_nb_dataset(&SimConfig {
        n: 10_000,
        m: 1,
        p: 2,
        delta_max: 0.8,
        seed: 2,
        ..Default::default()
    })
    .unwrap();
    let x = x_f64(&d);
    assert!(pearson(&x, &d.z.column(1).to_vec()) > 0.2);
    assert!(pearson(&x, &d.z.column(2).to_vec()) < -0.2);
}

#[test]
fn zero_dispersion_gives_poisson_counts() {
    let d = gen_nb_dataset(&SimConfig {
        n: 2000,
        m: 50,
        p: 0,
        beta0: 3.0,
        beta_max: 0.0,
        phi: 0.0,
        null_fraction: 1.0,
        seed: 3,
        ..Default::default()
    })
    .unwrap();
    for row in d.counts.rows() {
        let v: Vec<f64> = row.iter().map(|&c| c as f64).collect();
        let m = mean(&v);
        let var = v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
        assert!((0.8..=1.2).contains(&(var / m)), "var/mean {}", var / m);
    }
}

#[test]
fn nb_moments_match_target_dispersion() {
    let (mu, phi, n) = (8.0, 0.5, 200_000);
    let mut rng = permscore::rng::stream(4, 0, 0);
    let v: Vec<f64> = (0..n).map(|_| sample_nb(&mut rng, mu, phi) as f64).collect();
    let m = mean(&v);
    let var = v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    let target = mu + phi * mu * mu;
    assert!((m - mu).abs() < 4.0 * (target / n as f64).sqrt());
    assert!((var / target - 1.0).abs() < 0.03, "var {var} vs {target}");
}

#[test]
fn zero_inflation_replaces_the_requested_fraction() {
    let base = SimConfig {
        n: 400,
        m: 100,
        beta0: 4.0,
        seed: 5,
        ..Default::default()
    };
    let clean = gen_nb_dataset(&base).unwrap();
    let dirty = gen_nb_dataset(&SimConfig { psi: 0.16, ..base }).unwrap();
    let mut eligible = 0usize;
    let mut zeroed = 0usize;
    for (a, b) in clean.counts.iter().zip(dirty.counts.iter()) {
        if *a > 0 {
            eligible += 1;
            if *b == 0 {
                zeroed += 1;
            }
        } else {
            assert_eq!(*b, 0);
        }
        assert!(*b == *a || *b == 0);
    }
    let frac = zeroed as f64 / eligible as f64;
    let se = (0.16 * 0.84 / eligible as f64).sqrt();
    assert!((frac - 0.16).abs() < 3.0 * se, "{frac}");

    let ones = Array2::<u64>::ones((50, 1000));
    let z = zero_inflate(&ones, 0.16, 9).unwrap();
    let frac = z.iter().filter(|&&c| c == 0).count() as f64 / 50_000.0;
    assert!((frac - 0.16).abs() < 3.0 * (0.16 * 0.84 / 50_000.0f64).sqrt());
    assert!(zero_inflate(&ones, 1.5, 9).is_err());
}

#[test]
fn log_normal_means_have_the_expected_moment() {
    let spec = PopulationSpec::default();
    let (y, _, _) = draw_dataset(&spec, 100_000, 6).unwrap();
    let s2: f64 = spec.beta[1..].iter().map(|b| b * b).sum();
    let e_mu = (spec.beta[0] + s2 / 2.0).exp();
    let e_mu2 = (2.0 * spec.beta[0] + 2.0 * s2).exp();
    let var = e_mu + (1.0 + spec.phi) * e_mu2 - e_mu * e_mu;
    let m = mean(y.as_slice());
    assert!((m - e_mu).abs() < 4.0 * (var / 1e5).sqrt(), "{m} vs {e_mu}");
}

#[test]
fn null_genes_come_first_and_signals_alternate() {
    let cfg = SimConfig {
        n: 50,
        m: 13,
        null_fraction: 0.7,
        gamma: 1.5,
        seed: 7,
        ..Default::default()
    };
    let d = gen_nb_dataset(&cfg).unwrap();
    assert_eq!(cfg.n_null(), 9);
    assert_eq!(d.is_null, (0..13).map(|g| g < 9).collect::<Vec<_>>());
    assert_eq!(d.gamma[9..], [1.5, -1.5, 1.5, -1.5]);
    assert!(d.gamma[..9].iter().all(|&g| g == 0.0));
}

#[test]
fn size_factors_scale_the_means() {
    let cfg = SimConfig {
        n: 30,
        m: 5,
        seed: 8,
        ..SimConfig::deseq2()
    };
    let with = gen_deseq2_dataset(&cfg, 0.5, 1.5).unwrap();
    let without = gen_nb_dataset(&cfg).unwrap();
    let s = with.size_factors.unwrap();
    assert!(s.iter().all(|&v| (0.5..1.5).contains(&v)));
    assert!(without.size_factors.is_none());
    for g in 0..5 {
        for i in 0..30 {
            let r = with.means[[g, i]] / without.means[[g, i]];
            assert!((r - s[i]).abs() < 1e-12);
        }
    }
}

#[test]
fn negative_control_preserves_each_gene_multiset() {
    let d = gen_nb_dataset(&SimConfig {
        n: 60,
        m: 20,
        seed: 9,
        ..Default::default()
    })
    .unwrap();
    let p = negative_control_permute(&d.counts, 1);
    assert_ne!(p, d.counts);
    for (a, b) in d.counts.rows().into_iter().zip(p.rows()) {
        let mut a = a.to_vec();
        let mut b = b.to_vec();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);
    }
    assert_eq!(p, negative_control_permute(&d.counts, 1));
}

#[test]
fn invalid_configs_are_rejected() {
    for cfg in [
        SimConfig {
            n: 1,
            ..Default::default()
        },
        SimConfig {
            psi: -0.1,
            ..Default::default()
        },
        SimConfig {
            phi: -1.0,
            ..Default::default()
        },
        SimConfig {
            size_factors: SizeFactors::Uniform(0.0, 1.0),
            ..Default::default()
        },
    ] {
        assert!(cfg.validate().is_err());
    }
}
