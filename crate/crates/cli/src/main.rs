use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use permscore::analysis::{run_analysis, AnalysisConfig, SizeFactorMode, TestMethod};
use permscore::benchmark::run_benchmark;
use permscore::io::{self as pio, fmt_f64, CountMatrix, CovariateSpec};
use permscore::model::Dispersion;
use permscore::perm::{ResidualKind, Side};
use permscore::score::{count_kernel_flops, flop_count, time_kernels, Algorithm, FlopQuery, Variant};
use permscore::sim::{gen_nb_dataset, negative_control_permute, SimConfig, SimDataset, SizeFactors};
use permscore::theory::{sigma_probe, PopulationSpec};
use permscore::{Error, Result};

#[derive(Parser)]
#[command(
    name = "permscore",
    version,
    about = "Permuted NB score tests for differential expression"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Test every gene in a count matrix for association with a treatment.
    Test(TestArgs),
    /// Write a simulated count matrix, covariates and ground truth.
    Simulate(SimulateArgs),
    /// Replicated FDR / power / runtime benchmark over a parameter grid.
    Benchmark(BenchmarkArgs),
    /// Operation counts of the score kernels.
    Flops(FlopsArgs),
    /// Wall-clock timing of the score kernels.
    Bench(BenchArgs),
    /// Monte-Carlo permutation and sampling standard deviations.
    Sigma(SigmaArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    PermutedScore,
    ResidualPerm,
    MwPerm,
    NbWald,
}

impl From<MethodArg> for TestMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::PermutedScore => TestMethod::PermutedScore,
            MethodArg::ResidualPerm => TestMethod::ResidualPerm,
            MethodArg::MwPerm => TestMethod::MwPerm,
            MethodArg::NbWald => TestMethod::NbWald,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SideArg {
    Left,
    Right,
    TwoSided,
}

impl From<SideArg> for Side {
    fn from(s: SideArg) -> Self {
        match s {
            SideArg::Left => Side::Left,
            SideArg::Right => Side::Right,
            SideArg::TwoSided => Side::TwoSided,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ResidualArg {
    Response,
    Pearson,
    Deviance,
}

impl From<ResidualArg> for ResidualKind {
    fn from(r: ResidualArg) -> Self {
        match r {
            ResidualArg::Response => ResidualKind::Response,
            ResidualArg::Pearson => ResidualKind::Pearson,
            ResidualArg::Deviance => ResidualKind::Deviance,
        }
    }
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum SizeFactorArg {
    None,
    MedianOfRatios,
    Provided,
}

fn parse_dispersion(s: &str) -> std::result::Result<Dispersion, String> {
    if s == "estimate" {
        return Ok(Dispersion::Estimate);
    }
    let phi: f64 = s
        .parse()
        .map_err(|_| format!("expected 'estimate' or a number, got '{s}'"))?;
    let d = Dispersion::Fixed(phi);
    d.validate().map_err(|e| e.to_string())?;
    Ok(d)
}

/// Options shared by `test` and `benchmark`.
#[derive(Args, Clone)]
struct MethodOpts {
    /// 'estimate' or a fixed dispersion value.
    #[arg(long, default_value = "estimate", value_parser = parse_dispersion)]
    dispersion: Dispersion,
    #[arg(long, value_enum, default_value = "two-sided")]
    side: SideArg,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    /// Futility cap for adaptive testing.
    #[arg(long, default_value_t = 20)]
    h: usize,
    /// Use B_max fixed permutations per gene instead of adaptive stopping.
    #[arg(long)]
    fixed: bool,
    /// Permutations per gene (fixed) or round cap (adaptive); defaults to 10·⌈h/α⌉.
    #[arg(long)]
    b_max: Option<usize>,
    #[arg(long, default_value_t = 1)]
    bh_batch: usize,
    #[arg(long, value_enum, default_value = "response")]
    residual_kind: ResidualArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, env = "PERMSCORE_THREADS")]
    threads: Option<usize>,
}

impl MethodOpts {
    fn config(&self, method: TestMethod, size_factors: SizeFactorMode) -> AnalysisConfig {
        let b_max = self
            .b_max
            .unwrap_or_else(|| 10 * (self.h as f64 / self.alpha).ceil().max(1.0) as usize);
        AnalysisConfig {
            method,
            dispersion: self.dispersion,
            side: self.side.into(),
            b_max,
            h: (!self.fixed).then_some(self.h),
            alpha: self.alpha,
            seed: self.seed,
            size_factors,
            residual_kind: self.residual_kind.into(),
            bh_batch: self.bh_batch,
            threads: self.threads,
        }
    }
}

#[derive(Args)]
struct TestArgs {
    /// Gene × sample count TSV.
    #[arg(long)]
    counts: PathBuf,
    /// Sample covariate TSV keyed by sample id.
    #[arg(long)]
    covariates: PathBuf,
    #[arg(long)]
    treatment: String,
    /// Covariate columns to adjust for (repeatable); default all other columns.
    #[arg(long = "covariate")]
    covariate: Vec<String>,
    #[arg(long, value_enum, default_value = "permuted-score")]
    method: MethodArg,
    #[arg(long, value_enum, default_value = "none")]
    size_factors: SizeFactorArg,
    /// Covariate column holding size factors for `--size-factors provided`.
    #[arg(long)]
    size_factor_column: Option<String>,
    #[command(flatten)]
    opts: MethodOpts,
    /// Output path; standard output when absent.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct SimOpts {
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 500)]
    m: usize,
    /// Nuisance covariates besides the intercept.
    #[arg(long, default_value_t = 2)]
    p: usize,
    #[arg(long, default_value_t = 0.5)]
    gamma: f64,
    #[arg(long, default_value_t = 2.0)]
    beta0: f64,
    #[arg(long, default_value_t = 0.5)]
    beta_max: f64,
    #[arg(long, default_value_t = 0.0)]
    delta_max: f64,
    #[arg(long, default_value_t = 0.2)]
    phi: f64,
    #[arg(long, default_value_t = 0.0)]
    psi: f64,
    #[arg(long, default_value_t = 0.9)]
    null_fraction: f64,
    /// Draw size factors from U(lo, hi), given as "lo,hi".
    #[arg(long, value_parser = parse_range)]
    size_factor_range: Option<(f64, f64)>,
    #[arg(long = "sim-seed", default_value_t = 1)]
    sim_seed: u64,
}

fn parse_range(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected lo,hi")?;
    let lo = a.trim().parse().map_err(|_| format!("bad number '{a}'"))?;
    let hi = b.trim().parse().map_err(|_| format!("bad number '{b}'"))?;
    Ok((lo, hi))
}

impl SimOpts {
    fn config(&self) -> SimConfig {
        SimConfig {
            n: self.n,
            m: self.m,
            p: self.p,
            gamma: self.gamma,
            beta0: self.beta0,
            beta_max: self.beta_max,
            delta_max: self.delta_max,
            phi: self.phi,
            psi: self.psi,
            null_fraction: self.null_fraction,
            size_factors: match self.size_factor_range {
                Some((lo, hi)) => SizeFactors::Uniform(lo, hi),
                None => SizeFactors::Unit,
            },
            seed: self.sim_seed,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    sim: SimOpts,
    /// Shuffle every gene's counts independently (negative control).
    #[arg(long)]
    negative_control: bool,
    /// Directory for counts.tsv, covariates.tsv and truth.tsv.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum GridParam {
    Gamma,
    N,
    Psi,
    DeltaMax,
    Phi,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[command(flatten)]
    sim: SimOpts,
    #[arg(long, value_enum)]
    grid: Option<GridParam>,
    /// Comma-separated grid values.
    #[arg(long, value_delimiter = ',')]
    values: Vec<f64>,
    #[arg(long, value_enum, value_delimiter = ',', default_values = ["permuted-score", "nb-wald"])]
    methods: Vec<MethodArg>,
    #[arg(long, default_value_t = 10)]
    replicates: usize,
    #[command(flatten)]
    opts: MethodOpts,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct FlopsArgs {
    #[arg(long, value_delimiter = ',', default_values = ["10", "100"])]
    n: Vec<u64>,
    #[arg(long, value_delimiter = ',', default_values = ["1", "3", "5"])]
    p: Vec<u64>,
    #[arg(long, value_delimiter = ',', default_values = ["0.1", "0.5"])]
    pi: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values = ["1", "10"])]
    b: Vec<u64>,
    /// Also run the instrumented kernels and report their counts.
    #[arg(long)]
    measure: bool,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_values = ["1000", "5000"])]
    n: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values = ["5"])]
    p: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values = ["0.1"])]
    pi: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values = ["3000"])]
    b: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SigmaArgs {
    /// True dispersion.
    #[arg(long, default_value_t = 1.0)]
    phi: f64,
    /// Working dispersions.
    #[arg(long, value_delimiter = ',', default_values = ["0.1", "0.5", "1", "2", "10"])]
    phi_bar: Vec<f64>,
    /// Coefficients including the intercept.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_values = ["1", "0.5", "-0.5"])]
    beta: Vec<f64>,
    /// Logistic treatment coefficients on the non-intercept covariates.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_values = ["0.8", "-0.8"])]
    delta: Vec<f64>,
    #[arg(long, default_value_t = 1_000_000)]
    draws: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(io::BufWriter::new(
            fs::File::create(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(io::BufWriter::new(io::stdout().lock())),
    })
}

fn io_err(e: io::Error) -> Error {
    Error::Io(e.to_string())
}

fn tsv_row(w: &mut dyn Write, cells: &[String]) -> Result<()> {
    writeln!(w, "{}", cells.join("\t")).map_err(io_err)
}

fn run_test(a: TestArgs) -> Result<()> {
    if a.size_factors == SizeFactorArg::Provided && a.size_factor_column.is_none() {
        return Err(Error::Config(
            "--size-factors provided needs --size-factor-column".into(),
        ));
    }
    let counts = pio::load_counts(&a.counts)?;
    let spec = CovariateSpec {
        treatment: a.treatment,
        covariates: (!a.covariate.is_empty()).then_some(a.covariate),
        size_factor_column: a.size_factor_column,
    };
    let samples = pio::load_covariates(&a.covariates, &counts.sample_ids, &spec)?;
    let sf = match a.size_factors {
        SizeFactorArg::None => SizeFactorMode::None,
        SizeFactorArg::MedianOfRatios => SizeFactorMode::MedianOfRatios,
        SizeFactorArg::Provided => SizeFactorMode::Provided(samples.size_factors.clone().unwrap_or_default()),
    };
    let cfg = a.opts.config(a.method.into(), sf);
    let table = run_analysis(&counts, &samples.x, &samples.design, &cfg)?;
    pio::write_results(sink(a.output.as_deref())?, &table)
}

fn simulate(cfg: &SimConfig) -> Result<SimDataset> {
    match cfg.size_factors {
        SizeFactors::Unit => gen_nb_dataset(cfg),
        SizeFactors::Uniform(lo, hi) => permscore::sim::gen_deseq2_dataset(cfg, lo, hi),
    }
}

fn run_simulate(a: SimulateArgs) -> Result<()> {
    let cfg = a.sim.config();
    let data = simulate(&cfg)?;
    let counts = if a.negative_control {
        negative_control_permute(&data.counts, cfg.seed)
    } else {
        data.counts.clone()
    };
    fs::create_dir_all(&a.out_dir).map_err(io_err)?;
    let matrix = CountMatrix::from_array(counts);
    pio::save_counts(a.out_dir.join("counts.tsv"), &matrix)?;
    let names: Vec<String> = (1..data.z.ncols()).map(|j| format!("z{j}")).collect();
    pio::write_covariates(
        sink(Some(&a.out_dir.join("covariates.tsv")))?,
        &matrix.sample_ids,
        "treatment",
        &data.x,
        &names,
        data.nuisance(),
        data.size_factors.as_ref(),
    )?;
    let truth_null: Vec<bool> = if a.negative_control {
        vec![true; cfg.m]
    } else {
        data.is_null.clone()
    };
    let gamma: Vec<f64> = if a.negative_control {
        vec![0.0; cfg.m]
    } else {
        data.gamma.clone()
    };
    pio::write_truth(
        sink(Some(&a.out_dir.join("truth.tsv")))?,
        &matrix.gene_ids,
        &truth_null,
        &gamma,
    )
}

fn run_benchmark_cmd(a: BenchmarkArgs) -> Result<()> {
    let base = a.sim.config();
    let cells: Vec<SimConfig> = match a.grid {
        None => vec![base.clone()],
        Some(g) => {
            if a.values.is_empty() {
                return Err(Error::Config("--grid needs --values".into()));
            }
            a.values
                .iter()
                .map(|&v| {
                    let mut c = base.clone();
                    match g {
                        GridParam::Gamma => c.gamma = v,
                        GridParam::N => c.n = v as usize,
                        GridParam::Psi => c.psi = v,
                        GridParam::DeltaMax => c.delta_max = v,
                        GridParam::Phi => c.phi = v,
                    }
                    c
                })
                .collect()
        }
    };
    let sf = match base.size_factors {
        SizeFactors::Unit => SizeFactorMode::None,
        SizeFactors::Uniform(..) => SizeFactorMode::MedianOfRatios,
    };
    let methods: Vec<TestMethod> = a.methods.iter().map(|&m| m.into()).collect();
    let template = a.opts.config(TestMethod::PermutedScore, sf);
    let rows = run_benchmark(&cells, &methods, &template, a.replicates)?;
    let mut w = sink(a.output.as_deref())?;
    tsv_row(
        &mut *w,
        &[
            "n",
            "m",
            "gamma",
            "phi",
            "psi",
            "delta_max",
            "method",
            "side",
            "replicates",
            "fdr",
            "fdr_se",
            "true_discoveries",
            "true_discoveries_se",
            "runtime_secs",
            "mean_failures",
        ]
        .map(String::from),
    )?;
    for r in rows {
        let c = &cells[r.cell];
        tsv_row(
            &mut *w,
            &[
                c.n.to_string(),
                c.m.to_string(),
                c.gamma.to_string(),
                c.phi.to_string(),
                c.psi.to_string(),
                c.delta_max.to_string(),
                r.method.to_string(),
                template.side.to_string(),
                r.replicates.to_string(),
                fmt_f64(r.fdr),
                fmt_f64(r.fdr_se),
                fmt_f64(r.true_discoveries),
                fmt_f64(r.true_discoveries_se),
                fmt_f64(r.runtime_secs),
                fmt_f64(r.mean_failures),
            ],
        )?;
    }
    w.flush().map_err(io_err)
}

const KERNELS: [(Algorithm, Variant); 4] = [
    (Algorithm::R, Variant::SparsityUnaware),
    (Algorithm::R, Variant::SparsityExploiting),
    (Algorithm::Q, Variant::SparsityUnaware),
    (Algorithm::Q, Variant::SparsityExploiting),
];

fn run_flops(a: FlopsArgs) -> Result<()> {
    let mut w = sink(a.output.as_deref())?;
    let mut header: Vec<String> = ["algorithm", "variant", "n", "p", "pi", "B", "count"]
        .map(String::from)
        .to_vec();
    if a.measure {
        header.push("measured".into());
    }
    tsv_row(&mut *w, &header)?;
    for (alg, var) in KERNELS {
        for &n in &a.n {
            for &p in &a.p {
                for &pi in &a.pi {
                    for &b in &a.b {
                        let q = FlopQuery::new(alg, var, n, p, b, pi).map_err(|e| Error::Config(e.to_string()))?;
                        let mut row = vec![
                            alg.to_string(),
                            var.to_string(),
                            n.to_string(),
                            p.to_string(),
                            pi.to_string(),
                            b.to_string(),
                            flop_count(&q)?.to_string(),
                        ];
                        if a.measure {
                            row.push(count_kernel_flops(&q, 0)?.to_string());
                        }
                        tsv_row(&mut *w, &row)?;
                    }
                }
            }
        }
    }
    w.flush().map_err(io_err)
}

fn run_bench(a: BenchArgs) -> Result<()> {
    let mut w = sink(a.output.as_deref())?;
    tsv_row(
        &mut *w,
        &["algorithm", "variant", "n", "p", "pi", "B", "seconds"].map(String::from),
    )?;
    for &n in &a.n {
        for &p in &a.p {
            for &pi in &a.pi {
                for &b in &a.b {
                    for t in time_kernels(n, p, pi, b, a.seed).map_err(|e| Error::Config(e.to_string()))? {
                        tsv_row(
                            &mut *w,
                            &[
                                t.algorithm.to_string(),
                                t.variant.to_string(),
                                n.to_string(),
                                p.to_string(),
                                pi.to_string(),
                                b.to_string(),
                                fmt_f64(t.secs),
                            ],
                        )?;
                    }
                }
            }
        }
    }
    w.flush().map_err(io_err)
}

fn run_sigma(a: SigmaArgs) -> Result<()> {
    let mut w = sink(a.output.as_deref())?;
    tsv_row(
        &mut *w,
        &[
            "phi",
            "phi_bar",
            "sigma_s",
            "sigma_s_se",
            "sigma_p",
            "sigma_p_se",
            "ratio",
            "ratio_se",
        ]
        .map(String::from),
    )?;
    for &phi_bar in &a.phi_bar {
        let spec = PopulationSpec {
            beta: a.beta.clone(),
            delta: a.delta.clone(),
            phi: a.phi,
            phi_bar,
            n_draws: a.draws,
            seed: a.seed,
        };
        let r = sigma_probe(&spec)?;
        tsv_row(
            &mut *w,
            &[
                fmt_f64(r.phi),
                fmt_f64(r.phi_bar),
                fmt_f64(r.sigma_s.value),
                fmt_f64(r.sigma_s.se),
                fmt_f64(r.sigma_p.value),
                fmt_f64(r.sigma_p.se),
                fmt_f64(r.ratio.value),
                fmt_f64(r.ratio.se),
            ],
        )?;
    }
    w.flush().map_err(io_err)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Parse { .. } | Error::DegenerateTreatment(_) | Error::Io(_) | Error::Usage(_) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let res = match cli.command {
        Command::Test(a) => run_test(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Benchmark(a) => run_benchmark_cmd(a),
        Command::Flops(a) => run_flops(a),
        Command::Bench(a) => run_bench(a),
        Command::Sigma(a) => run_sigma(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
