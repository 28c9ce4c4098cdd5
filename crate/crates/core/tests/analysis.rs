mod common;

use ndarray::Array2;

use common::pearson;
use permscore::analysis::*;
use permscore::benchmark::run_benchmark;
use permscore::io::{read_results, write_results, CountMatrix};
use permscore::model::{fit_null_nb, CountVector, DesignMatrix, Dispersion};
use permscore::perm::StopReason;
use permscore::score::ScoreKernel;
use permscore::sim::{gen_nb_dataset, negative_control_permute, SimConfig, SimDataset};
use permscore::wald::nb_wald_test;

fn dataset(cfg: &SimConfig) -> (SimDataset, CountMatrix, DesignMatrix) {
    let d = gen_nb_dataset(cfg).unwrap();
    let counts = CountMatrix::from_array(d.counts.clone());
    let design = DesignMatrix::new(d.z.clone(), None).unwrap();
    (d, counts, design)
}

fn signal_cfg() -> SimConfig {
    SimConfig {
        n: 120,
        m: 80,
        gamma: 1.2,
        phi: 0.3,
        null_fraction: 0.75,
        seed: 21,
        ..Default::default()
    }
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let (d, counts, design) = dataset(&signal_cfg());
    for method in TestMethod::ALL {
        for h in [Some(10), None] {
            let run = |t| {
                let cfg = AnalysisConfig {
                    method,
                    h,
                    b_max: 300,
                    threads: Some(t),
                    seed: 4,
                    ..Default::default()
                };
                run_analysis(&counts, &d.x, &design, &cfg).unwrap()
            };
            assert_eq!(run(1), run(4), "{method} h={h:?}");
        }
    }
}

#[test]
fn adaptive_score_analysis_finds_signal_genes() {
    let (d, counts, design) = dataset(&signal_cfg());
    let t = run_analysis(&counts, &d.x, &design, &AnalysisConfig::default()).unwrap();
    assert_eq!(t.rows.len(), 80);
    let hits: Vec<usize> = (0..80).filter(|&g| t.rows[g].rejected).collect();
    assert!(hits.iter().filter(|&&g| !d.is_null[g]).count() >= 10);
    for r in &t.rows {
        let p = r.p_value.unwrap();
        assert!(p > 0.0 && p <= 1.0);
        if r.rejected {
            assert_eq!(r.stop_reason, Some(StopReason::Rejection));
            assert!(p <= t.threshold);
        }
    }
}

#[test]
fn negative_control_yields_no_permutation_rejections() {
    let (d, _, design) = dataset(&signal_cfg());
    let shuffled = CountMatrix::from_array(negative_control_permute(&d.counts, 2));
    let t = run_analysis(&shuffled, &d.x, &design, &AnalysisConfig::default()).unwrap();
    assert_eq!(t.rejections(), 0);
    let wald = AnalysisConfig {
        method: TestMethod::NbWald,
        ..Default::default()
    };
    let w = run_analysis(&shuffled, &d.x, &design, &wald).unwrap();
    assert!(w.rows.iter().all(|r| r.p_value.is_some()));
    eprintln!("negative control: wald rejections {}", w.rejections());
}

#[test]
fn wald_detects_strong_effect() {
    let (d, counts, design) = dataset(&SimConfig {
        n: 500,
        m: 1,
        gamma: 2.0,
        null_fraction: 0.0,
        seed: 22,
        ..Default::default()
    });
    let cfg = AnalysisConfig {
        method: TestMethod::NbWald,
        ..Default::default()
    };
    let t = run_analysis(&counts, &d.x, &design, &cfg).unwrap();
    assert!(t.rows[0].p_value.unwrap() < 1e-6);
    assert!(t.rows[0].rejected);
}

#[test]
fn wald_and_score_agree_under_null_at_large_n() {
    let d = gen_nb_dataset(&SimConfig {
        n: 2000,
        m: 200,
        null_fraction: 1.0,
        seed: 23,
        ..Default::default()
    })
    .unwrap();
    let design = DesignMatrix::new(d.z.clone(), None).unwrap();
    let (mut zw, mut zs) = (Vec::new(), Vec::new());
    for g in 0..200 {
        let y = CountVector::new(&d.counts.row(g).to_vec()).unwrap();
        zw.push(nb_wald_test(&y, &d.x, &design, Dispersion::Estimate).unwrap().z);
        let fit = fit_null_nb(&y, &design, Dispersion::Estimate).unwrap();
        zs.push(ScoreKernel::new(&fit).unwrap().score(d.x.to_dense().view()).unwrap());
    }
    let r = pearson(&zw, &zs);
    assert!(r > 0.99, "corr {r}");
}

#[test]
fn per_gene_failures_are_recorded_not_fatal() {
    let (d, _, design) = dataset(&SimConfig {
        n: 40,
        m: 3,
        seed: 24,
        ..Default::default()
    });
    let mut c = d.counts.clone();
    c.row_mut(1).fill(0);
    c.row_mut(2).fill(7);
    let counts = CountMatrix::from_array(c);
    for method in TestMethod::ALL {
        let cfg = AnalysisConfig {
            method,
            ..Default::default()
        };
        let t = run_analysis(&counts, &d.x, &design, &cfg).unwrap();
        assert!(t.rows[0].failure.is_none(), "{method}");
        assert_eq!(t.rows[1].failure, Some(FailureCode::Degenerate), "{method}");
        assert!(t.rows[1].p_value.is_none() && !t.rows[1].rejected);
    }
}

#[test]
fn treatment_in_design_is_collinear() {
    let (d, counts, _) = dataset(&SimConfig {
        n: 60,
        m: 2,
        seed: 25,
        ..Default::default()
    });
    let mut z = Array2::<f64>::ones((60, 2));
    for i in 0..60 {
        z[[i, 1]] = if d.x.to_dense()[i] == 1.0 { 1.0 } else { 0.0 };
    }
    let design = DesignMatrix::new(z, None).unwrap();
    let t = run_analysis(&counts, &d.x, &design, &AnalysisConfig::default()).unwrap();
    assert!(t.rows.iter().all(|r| r.failure == Some(FailureCode::Collinear)));
}

#[test]
fn global_problems_abort() {
    let (d, counts, design) = dataset(&SimConfig {
        n: 30,
        m: 2,
        seed: 26,
        ..Default::default()
    });
    let bad = AnalysisConfig {
        alpha: 1.5,
        ..Default::default()
    };
    assert!(run_analysis(&counts, &d.x, &design, &bad).is_err());
    let one_class = permscore::treatment::Treatment::from_bools(&[true; 30]);
    assert!(run_analysis(&counts, &one_class, &design, &AnalysisConfig::default()).is_err());
    let short = DesignMatrix::intercept_only(29).unwrap();
    assert!(run_analysis(&counts, &d.x, &short, &AnalysisConfig::default()).is_err());
}

#[test]
fn result_table_round_trips_through_text() {
    let (d, counts, design) = dataset(&signal_cfg());
    let cfg = AnalysisConfig {
        size_factors: SizeFactorMode::MedianOfRatios,
        ..Default::default()
    };
    let t = run_analysis(&counts, &d.x, &design, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("results.tsv");
    let mut buf = Vec::new();
    write_results(&mut buf, &t).unwrap();
    std::fs::write(&path, &buf).unwrap();
    let back = permscore::io::load_results(&path).unwrap();
    assert_eq!(back, t);
    assert_eq!(read_results(buf.as_slice()).unwrap(), t);
}

#[test]
fn fixed_and_adaptive_modes_agree_on_strong_genes() {
    let (d, counts, design) = dataset(&signal_cfg());
    let fixed = AnalysisConfig {
        h: None,
        b_max: 2000,
        ..Default::default()
    };
    let a = run_analysis(&counts, &d.x, &design, &AnalysisConfig::default()).unwrap();
    let f = run_analysis(&counts, &d.x, &design, &fixed).unwrap();
    assert!(f.rows.iter().all(|r| r.b_used == 2000));
    let both = (0..80).filter(|&g| a.rows[g].rejected && f.rows[g].rejected).count();
    assert!(both * 10 >= 8 * a.rejections().max(f.rejections()));
}

#[test]
fn benchmark_reports_one_row_per_method() {
    let cell = SimConfig {
        n: 80,
        m: 40,
        gamma: 1.0,
        seed: 27,
        ..Default::default()
    };
    let rows = run_benchmark(&[cell], &TestMethod::ALL, &AnalysisConfig::default(), 3).unwrap();
    assert_eq!(rows.len(), 4);
    for r in &rows {
        assert_eq!(r.replicates, 3);
        assert!((0.0..=1.0).contains(&r.fdr));
        assert!(r.runtime_secs >= 0.0);
    }
}
