//! Replicated simulation benchmarks: FDR, true discoveries and runtime.

use std::time::Instant;

use crate::analysis::{run_analysis, AnalysisConfig, TestMethod};
use crate::error::Result;
use crate::io::CountMatrix;
use crate::model::DesignMatrix;
use crate::rng::derive_seed;
use crate::sim::{gen_nb_dataset, SimConfig, SimDataset, SizeFactors};

/// One (grid cell, method) aggregate over replicates.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRow {
    pub cell: usize,
    pub method: TestMethod,
    pub replicates: usize,
    /// Mean of V / max(R, 1).
    pub fdr: f64,
    pub fdr_se: f64,
    pub true_discoveries: f64,
    pub true_discoveries_se: f64,
    pub runtime_secs: f64,
    pub mean_failures: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    fdp: f64,
    fdp2: f64,
    td: f64,
    td2: f64,
    secs: f64,
    failures: f64,
}

fn mean_se(sum: f64, sum2: f64, k: usize) -> (f64, f64) {
    let k = k as f64;
    let mean = sum / k;
    if k < 2.0 {
        return (mean, f64::NAN);
    }
    let var = ((sum2 - k * mean * mean) / (k - 1.0)).max(0.0);
    (mean, (var / k).sqrt())
}

fn simulate(cell: &SimConfig) -> Result<SimDataset> {
    match cell.size_factors {
        SizeFactors::Unit => gen_nb_dataset(cell),
        SizeFactors::Uniform(lo, hi) => crate::sim::gen_deseq2_dataset(cell, lo, hi),
    }
}

/// For every cell and replicate: simulate with seed derived from
/// (cell seed, replicate), analyze with each method, and score the
/// rejections against the truth.
pub fn run_benchmark(
    cells: &[SimConfig],
    methods: &[TestMethod],
    template: &AnalysisConfig,
    replicates: usize,
) -> Result<Vec<BenchmarkRow>> {
    let mut out = Vec::new();
    for (c, cell) in cells.iter().enumerate() {
        let mut tallies = vec![Tally::default(); methods.len()];
        for r in 0..replicates {
            let data = simulate(&SimConfig {
                seed: derive_seed(cell.seed, r as u64),
                ..cell.clone()
            })?;
            let counts = CountMatrix::from_array(data.counts.clone());
            let design = DesignMatrix::new(data.z.clone(), None)?;
            for (k, &method) in methods.iter().enumerate() {
                let cfg = AnalysisConfig {
                    method,
                    seed: derive_seed(template.seed, r as u64),
                    ..template.clone()
                };
                let start = Instant::now();
                let table = run_analysis(&counts, &data.x, &design, &cfg)?;
                let secs = start.elapsed().as_secs_f64();
                let (mut v, mut total) = (0usize, 0usize);
                let mut failures = 0usize;
                for (g, row) in table.rows.iter().enumerate() {
                    if row.rejected {
                        total += 1;
                        if data.is_null[g] {
                            v += 1;
                        }
                    }
                    if row.failure.is_some() {
                        failures += 1;
                    }
                }
                let fdp = v as f64 / total.max(1) as f64;
                let td = (total - v) as f64;
                let t = &mut tallies[k];
                t.fdp += fdp;
                t.fdp2 += fdp * fdp;
                t.td += td;
                t.td2 += td * td;
                t.secs += secs;
                t.failures += failures as f64;
            }
        }
        for (k, &method) in methods.iter().enumerate() {
            let t = tallies[k];
            let (fdr, fdr_se) = mean_se(t.fdp, t.fdp2, replicates);
            let (td, td_se) = mean_se(t.td, t.td2, replicates);
            out.push(BenchmarkRow {
                cell: c,
                method,
                replicates,
                fdr,
                fdr_se,
                true_discoveries: td,
                true_discoveries_se: td_se,
                runtime_secs: t.secs / replicates as f64,
                mean_failures: t.failures / replicates as f64,
            });
        }
    }
    Ok(out)
}
