//! Gene-by-gene analysis of a count matrix with BH correction.

use ndarray::{Array1, ArrayView1};
use rayon::prelude::*;

use crate::adaptive::{adaptive_fdr, bh_rejections, AdaptiveConfig, PermHypothesis};
use crate::error::{Error, Result};
use crate::io::CountMatrix;
use crate::model::{estimate_size_factors, fit_null_nb, CountVector, DesignMatrix, Dispersion};
use crate::perm::{
    null_residuals, permutation_test, Draw, PermConfig, RankSum, ResidualKind, ScaledSum, Side, StopReason,
    SubsetStatistic,
};
use crate::score::ScoreKernel;
use crate::treatment::Treatment;
use crate::wald::nb_wald_test;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TestMethod {
    #[default]
    PermutedScore,
    ResidualPerm,
    MwPerm,
    NbWald,
}

impl TestMethod {
    pub const ALL: [TestMethod; 4] = [
        TestMethod::PermutedScore,
        TestMethod::ResidualPerm,
        TestMethod::MwPerm,
        TestMethod::NbWald,
    ];

    pub fn is_permutation(&self) -> bool {
        !matches!(self, TestMethod::NbWald)
    }
}

impl std::fmt::Display for TestMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TestMethod::PermutedScore => "permuted-score",
            TestMethod::ResidualPerm => "residual-perm",
            TestMethod::MwPerm => "mw-perm",
            TestMethod::NbWald => "nb-wald",
        })
    }
}

impl std::str::FromStr for TestMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        TestMethod::ALL
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown method '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub enum SizeFactorMode {
    #[default]
    None,
    MedianOfRatios,
    Provided(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisConfig {
    pub method: TestMethod,
    pub dispersion: Dispersion,
    pub side: Side,
    /// Fixed number of permutations, or the round cap when adaptive.
    pub b_max: usize,
    /// Futility cap; `Some` switches permutation methods to adaptive mode.
    pub h: Option<usize>,
    pub alpha: f64,
    pub seed: u64,
    pub size_factors: SizeFactorMode,
    pub residual_kind: ResidualKind,
    pub bh_batch: usize,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        let h = crate::adaptive::DEFAULT_H;
        let alpha = 0.1;
        Self {
            method: TestMethod::PermutedScore,
            dispersion: Dispersion::Estimate,
            side: Side::TwoSided,
            b_max: AdaptiveConfig {
                h,
                alpha,
                ..Default::default()
            }
            .effective_round_cap(),
            h: Some(h),
            alpha,
            seed: 0,
            size_factors: SizeFactorMode::None,
            residual_kind: ResidualKind::Response,
            bh_batch: 1,
            threads: None,
        }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must be in (0, 1), got {}", self.alpha)));
        }
        self.dispersion.validate()?;
        if self.h == Some(0) {
            return Err(Error::Config("h must be positive".into()));
        }
        if self.bh_batch == 0 {
            return Err(Error::Config("bh_batch must be positive".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be positive".into()));
        }
        Ok(())
    }

    fn adaptive(&self) -> Option<AdaptiveConfig> {
        match (self.method.is_permutation(), self.h) {
            (true, Some(h)) => Some(AdaptiveConfig {
                h,
                alpha: self.alpha,
                round_cap: Some(self.b_max),
                bh_batch: self.bh_batch,
            }),
            _ => None,
        }
    }
}

/// Reason a gene produced no p-value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureCode {
    FitNonconvergence,
    Degenerate,
    Collinear,
    Design,
    Conditioning,
}

impl FailureCode {
    pub fn from_error(e: &Error) -> Self {
        match e {
            Error::Convergence { .. } => FailureCode::FitNonconvergence,
            Error::Collinear => FailureCode::Collinear,
            Error::Design(_) => FailureCode::Design,
            Error::Conditioning(_) => FailureCode::Conditioning,
            _ => FailureCode::Degenerate,
        }
    }
}

impl std::fmt::Display for FailureCode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FailureCode::FitNonconvergence => "fit-nonconvergence",
            FailureCode::Degenerate => "degenerate",
            FailureCode::Collinear => "collinear",
            FailureCode::Design => "design",
            FailureCode::Conditioning => "conditioning",
        })
    }
}

impl std::str::FromStr for FailureCode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "fit-nonconvergence" => FailureCode::FitNonconvergence,
            "degenerate" => FailureCode::Degenerate,
            "collinear" => FailureCode::Collinear,
            "design" => FailureCode::Design,
            "conditioning" => FailureCode::Conditioning,
            _ => return Err(Error::Config(format!("unknown failure code '{s}'"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneResult {
    pub gene_id: String,
    pub z_orig: Option<f64>,
    pub p_value: Option<f64>,
    pub b_used: usize,
    pub stop_reason: Option<StopReason>,
    pub rejected: bool,
    pub failure: Option<FailureCode>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub rows: Vec<GeneResult>,
    /// BH threshold over the genes with a p-value.
    pub threshold: f64,
}

impl ResultTable {
    pub fn rejections(&self) -> usize {
        self.rows.iter().filter(|r| r.rejected).count()
    }
}

/// Per-gene permutation statistic.
pub enum GeneStatistic {
    Score(ScoreKernel),
    Residual(ScaledSum),
    Rank(RankSum),
}

impl SubsetStatistic for GeneStatistic {
    fn n(&self) -> usize {
        match self {
            GeneStatistic::Score(k) => SubsetStatistic::n(k),
            GeneStatistic::Residual(s) => s.n(),
            GeneStatistic::Rank(r) => r.n(),
        }
    }

    fn eval(&self, draw: Draw<'_>) -> Result<f64> {
        match self {
            GeneStatistic::Score(k) => k.eval(draw),
            GeneStatistic::Residual(s) => s.eval(draw),
            GeneStatistic::Rank(r) => r.eval(draw),
        }
    }
}

fn prepare_statistic(y: &CountVector, design: &DesignMatrix, cfg: &AnalysisConfig) -> Result<GeneStatistic> {
    if y.is_all_zero() {
        return Err(Error::DegenerateData("all counts are zero".into()));
    }
    if cfg.dispersion == Dispersion::Estimate && y.is_constant() {
        return Err(Error::DegenerateData("zero variance with estimated dispersion".into()));
    }
    Ok(match cfg.method {
        TestMethod::PermutedScore => {
            let fit = fit_null_nb(y, design, cfg.dispersion)?;
            GeneStatistic::Score(ScoreKernel::new(&fit)?)
        }
        TestMethod::ResidualPerm => {
            let fit = fit_null_nb(y, design, cfg.dispersion)?;
            GeneStatistic::Residual(ScaledSum::new(null_residuals(&fit, cfg.residual_kind)))
        }
        TestMethod::MwPerm => {
            let v: Array1<f64> = match design.offset() {
                Some(o) => Array1::from_shape_fn(y.len(), |i| y.view()[i] / o[i].exp()),
                None => y.view().to_owned(),
            };
            GeneStatistic::Rank(RankSum::new(v.view()))
        }
        TestMethod::NbWald => unreachable!("Wald has no permutation statistic"),
    })
}

fn side_p(side: Side, left: f64, right: f64, two: f64) -> f64 {
    match side {
        Side::Left => left,
        Side::Right => right,
        Side::TwoSided => two,
    }
}

fn failed(id: &str, e: &Error) -> GeneResult {
    GeneResult {
        gene_id: id.to_string(),
        z_orig: None,
        p_value: None,
        b_used: 0,
        stop_reason: None,
        rejected: false,
        failure: Some(FailureCode::from_error(e)),
    }
}

fn count_vector(row: ArrayView1<u64>) -> Result<CountVector> {
    CountVector::new(&row.to_vec())
}

/// Apply the configured size-factor mode to the design.
pub fn design_with_size_factors(
    counts: &CountMatrix,
    design: &DesignMatrix,
    mode: &SizeFactorMode,
) -> Result<DesignMatrix> {
    let n = counts.n_samples();
    let s: Option<Vec<f64>> = match mode {
        SizeFactorMode::None => None,
        SizeFactorMode::MedianOfRatios => {
            let c = counts.counts.mapv(|v| v as f64);
            Some(estimate_size_factors(c.view())?.to_vec())
        }
        SizeFactorMode::Provided(v) => {
            if v.len() != n || v.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
                return Err(Error::Config(
                    "provided size factors must be positive, one per sample".into(),
                ));
            }
            Some(v.clone())
        }
    };
    match s {
        None => Ok(design.clone()),
        Some(s) => design.clone().with_offset(Some(s.iter().map(|v| v.ln()).collect())),
    }
}

/// Run the configured test on every gene, then BH at `cfg.alpha`.
///
/// Global configuration problems abort; per-gene problems are recorded as
/// failure codes. Gene g draws its permutations from the stream keyed by
/// (seed, g), so output does not depend on the thread count.
pub fn run_analysis(
    counts: &CountMatrix,
    x: &Treatment,
    design: &DesignMatrix,
    cfg: &AnalysisConfig,
) -> Result<ResultTable> {
    cfg.validate()?;
    let n = counts.n_samples();
    if x.n() != n || design.n() != n {
        return Err(Error::Config(format!(
            "sample count mismatch: counts {n}, treatment {}, design {}",
            x.n(),
            design.n()
        )));
    }
    x.ensure_both_classes()?;
    let design = design_with_size_factors(counts, design, &cfg.size_factors)?;
    match cfg.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(|| analyze(counts, x, &design, cfg)),
        None => analyze(counts, x, &design, cfg),
    }
}

fn analyze(counts: &CountMatrix, x: &Treatment, design: &DesignMatrix, cfg: &AnalysisConfig) -> Result<ResultTable> {
    let m = counts.n_genes();
    let mut rows: Vec<GeneResult>;

    if cfg.method == TestMethod::NbWald {
        rows = (0..m)
            .into_par_iter()
            .map(|g| {
                let id = &counts.gene_ids[g];
                let res = count_vector(counts.counts.row(g)).and_then(|y| {
                    if y.is_all_zero() {
                        return Err(Error::DegenerateData("all counts are zero".into()));
                    }
                    nb_wald_test(&y, x, design, cfg.dispersion)
                });
                match res {
                    Ok(w) => GeneResult {
                        gene_id: id.clone(),
                        z_orig: Some(w.z),
                        p_value: Some(side_p(cfg.side, w.p_left, w.p_right, w.p_two_sided)),
                        b_used: 0,
                        stop_reason: Some(StopReason::Completed),
                        rejected: false,
                        failure: None,
                    },
                    Err(e) => failed(id, &e),
                }
            })
            .collect();
    } else {
        let stats: Vec<Result<GeneStatistic>> = (0..m)
            .into_par_iter()
            .map(|g| count_vector(counts.counts.row(g)).and_then(|y| prepare_statistic(&y, design, cfg)))
            .collect();

        if let Some(acfg) = cfg.adaptive() {
            rows = Vec::with_capacity(m);
            let mut hyps = Vec::new();
            let mut slot = Vec::new();
            for (g, st) in stats.into_iter().enumerate() {
                let id = &counts.gene_ids[g];
                match st.and_then(|s| PermHypothesis::new(s, x, cfg.side, cfg.seed, g as u64)) {
                    Ok(h) => {
                        slot.push(rows.len());
                        rows.push(GeneResult {
                            gene_id: id.clone(),
                            z_orig: Some(h.z_orig()),
                            p_value: None,
                            b_used: 0,
                            stop_reason: None,
                            rejected: false,
                            failure: None,
                        });
                        hyps.push(h);
                    }
                    Err(e) => rows.push(failed(id, &e)),
                }
            }
            let out = adaptive_fdr(&mut hyps, &acfg)?;
            for (k, &r) in slot.iter().enumerate() {
                let row = &mut rows[r];
                row.p_value = Some(out.states[k].p);
                row.b_used = out.states[k].t;
                row.stop_reason = Some(out.stop[k]);
                row.rejected = out.stop[k] == StopReason::Rejection;
            }
            return Ok(ResultTable {
                rows,
                threshold: out.threshold,
            });
        }

        rows = stats
            .into_par_iter()
            .enumerate()
            .map(|(g, st)| {
                let id = &counts.gene_ids[g];
                let pcfg = PermConfig {
                    b: cfg.b_max,
                    side: cfg.side,
                    seed: cfg.seed,
                    key: g as u64,
                    exhaustive: false,
                };
                match st.and_then(|s| permutation_test(&s, x, &pcfg)) {
                    Ok(r) => GeneResult {
                        gene_id: id.clone(),
                        z_orig: Some(r.z_orig),
                        p_value: Some(r.p),
                        b_used: r.b_used,
                        stop_reason: Some(r.stop_reason),
                        rejected: false,
                        failure: None,
                    },
                    Err(e) => failed(id, &e),
                }
            })
            .collect();
    }

    let (idx, p): (Vec<usize>, Vec<f64>) = rows
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.p_value.map(|p| (i, p)))
        .unzip();
    let bh = bh_rejections(&p, cfg.alpha);
    for k in bh.rejected {
        rows[idx[k]].rejected = true;
    }
    Ok(ResultTable {
        rows,
        threshold: bh.threshold,
    })
}
