//! The `piforge` command line: estimation on user data, simulation,
//! benchmark grids and p-value densities.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::baselines::{
    default_permutation_mode, permutation_p_values, permutation_test_proportion, t_test_proportion,
    DecisionVector, Method, PermutationMode,
};
use crate::data_model::{gene_summaries, load_matrix, ExpressionMatrix, GroupSpec};
use crate::error::Error;
use crate::pi_estimator::{estimate_pi, AlgorithmConfig, PiEstimateReport};
use crate::sim::{
    run_study, simulate_dataset, ErrorFamily, SimulationConfig, StudyOptions, StudyTable,
};
use crate::stats::kde_density;

/// Number of points in the p-value density grid.
pub const DENSITY_POINTS: usize = 512;

#[derive(Debug, Parser)]
#[command(
    name = "piforge",
    version,
    about = "Estimate the proportion of differentially expressed genes"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the differentially expressed proportion of an expression file.
    Estimate(EstimateArgs),
    /// Write a simulated expression matrix with its truth flags.
    Simulate(SimulateArgs),
    /// Run the replicated simulation grid for every error family.
    Benchmark(BenchmarkArgs),
    /// Per-gene p-values and their kernel density.
    Pvalues(PvaluesArgs),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Delimited expression file: header of sample ids, gene id first.
    #[arg(long)]
    pub input: PathBuf,
    /// Comma-separated labels in column order, or a `sample,group` file.
    #[arg(long)]
    pub groups: String,
}

#[derive(Debug, Args)]
pub struct PermutationArgs {
    /// Random relabelings per gene; omit for exact enumeration when feasible.
    #[arg(long)]
    pub perm_b: Option<usize>,
}

impl PermutationArgs {
    fn mode(&self, matrix: &ExpressionMatrix, seed: u64) -> PermutationMode {
        match self.perm_b {
            Some(b) => PermutationMode::MonteCarlo { b, seed },
            None => default_permutation_mode(matrix, seed),
        }
    }
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub max_iter: usize,
    /// Null quantile defining the cutoff.
    #[arg(long, default_value_t = 0.95)]
    pub quantile: f64,
    /// Multiple of the null cutoff a candidate effect must exceed.
    #[arg(long, default_value_t = 1.0)]
    pub threshold_multiplier: f64,
    /// Significance level of the test-based methods.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Comma-separated subset of `new,t,perm`.
    #[arg(long, default_value = "new,t,perm")]
    pub methods: String,
    #[command(flatten)]
    pub permutation: PermutationArgs,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Error family: normal, chisq-var, gamma or t5.
    #[arg(long, value_parser = parse_family)]
    pub dist: ErrorFamily,
    #[arg(long, default_value_t = 2.0)]
    pub delta: f64,
    #[arg(long)]
    pub lambda: f64,
    #[arg(long, default_value_t = 10_000)]
    pub genes: usize,
    #[arg(long, default_value_t = 4)]
    pub n1: usize,
    #[arg(long, default_value_t = 4)]
    pub n2: usize,
    #[arg(long)]
    pub seed: u64,
    /// Rescale t5 errors to unit variance.
    #[arg(long)]
    pub scale_t5: bool,
    /// Matrix output; `.csv` is comma-delimited, anything else tab-delimited.
    #[arg(long)]
    pub out: PathBuf,
    /// Truth flags; defaults to `truth.csv` next to the matrix.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Grid {
    /// G = 10000, 10 replicates.
    Default,
    /// G = 2000, 3 replicates.
    Small,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[arg(long, value_enum, default_value_t = Grid::Default)]
    pub grid: Grid,
    /// Replicates per cell; defaults to the grid's count.
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: u64,
    /// Comma-separated subset of error families.
    #[arg(long, default_value = "normal,chisq-var,gamma,t5")]
    pub families: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TestMethod {
    T,
    Perm,
}

#[derive(Debug, Args)]
pub struct PvaluesArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_enum, default_value_t = TestMethod::T)]
    pub method: TestMethod,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub permutation: PermutationArgs,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_family(s: &str) -> Result<ErrorFamily, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Clone, Serialize)]
pub struct InputSummary {
    pub path: String,
    pub genes: usize,
    pub n1: usize,
    pub n2: usize,
    pub group_names: [String; 2],
}

#[derive(Debug, Clone, Serialize)]
pub struct MethodResult {
    pub method: Method,
    pub label: String,
    pub proportion: f64,
}

/// Structured output of `estimate`.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub input: InputSummary,
    pub results: Vec<MethodResult>,
    pub pi_estimate: Option<PiEstimateReport>,
    pub artifacts: Vec<String>,
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Estimate(a) => {
            let report = cmd_estimate(&a)?;
            for r in &report.results {
                println!("{:<17} {:.4}", r.label, r.proportion);
            }
            Ok(())
        }
        Command::Simulate(a) => cmd_simulate(&a).map(|_| ()),
        Command::Benchmark(a) => {
            cmd_benchmark(&a)?;
            print!("{}", fs::read_to_string(a.out.join("tables.txt"))?);
            Ok(())
        }
        Command::Pvalues(a) => cmd_pvalues(&a).map(|_| ()),
    }
}

fn load(input: &InputArgs) -> anyhow::Result<ExpressionMatrix> {
    let spec = GroupSpec::from_arg(&input.groups)?;
    load_matrix(&input.input, &spec).with_context(|| format!("reading {}", input.input.display()))
}

fn ensure_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Writes long-format decisions: `method,gene_id,p_value,flag`.
fn write_decisions(
    path: &Path,
    decisions: &[DecisionVector],
    gene_ids: &[String],
) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["method", "gene_id", "p_value", "flag"])?;
    for d in decisions {
        for (g, id) in gene_ids.iter().enumerate() {
            let p = d
                .p_values
                .as_ref()
                .map(|p| p[g].to_string())
                .unwrap_or_default();
            w.write_record([d.method.tag(), id, &p, if d.flags[g] { "1" } else { "0" }])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_estimate(args: &EstimateArgs) -> anyhow::Result<RunReport> {
    let methods = Method::parse_list(&args.methods)?;
    if methods.is_empty() {
        bail!("no methods requested");
    }
    let matrix = load(&args.input)?;
    ensure_dir(&args.out)?;

    let mut results = Vec::new();
    let mut decisions = Vec::new();
    let mut pi_estimate = None;
    for &m in &methods {
        let d = match m {
            Method::TTest => t_test_proportion(&matrix, args.alpha)?.1,
            Method::Permutation => {
                let mode = args.permutation.mode(&matrix, args.seed);
                permutation_test_proportion(&matrix, args.alpha, mode)?.1
            }
            Method::New => {
                let config = AlgorithmConfig {
                    max_iterations: args.max_iter,
                    null_quantile: args.quantile,
                    threshold_multiplier: args.threshold_multiplier,
                    seed: args.seed,
                    ..AlgorithmConfig::default()
                };
                let est = estimate_pi(&matrix, &config)?;
                if !est.state.converged {
                    log::warn!(
                        "fixed-point iteration stopped after {} iterations without converging",
                        est.state.iteration
                    );
                }
                pi_estimate = Some(est.report(matrix.gene_ids()));
                DecisionVector {
                    method: Method::New,
                    alpha: args.alpha,
                    flags: est.per_gene_exceeds,
                    p_values: None,
                }
            }
        };
        results.push(MethodResult {
            method: m,
            label: m.label().to_string(),
            proportion: d.proportion(),
        });
        decisions.push(d);
    }

    let decisions_path = args.out.join("decisions.csv");
    let report_path = args.out.join("report.json");
    write_decisions(&decisions_path, &decisions, matrix.gene_ids())?;
    let report = RunReport {
        input: InputSummary {
            path: args.input.input.display().to_string(),
            genes: matrix.n_genes(),
            n1: matrix.n1(),
            n2: matrix.n2(),
            group_names: matrix.group_names().clone(),
        },
        results,
        pi_estimate,
        artifacts: vec![
            report_path.display().to_string(),
            decisions_path.display().to_string(),
        ],
    };
    let mut w = BufWriter::new(File::create(&report_path)?);
    serde_json::to_writer_pretty(&mut w, &report)?;
    writeln!(w)?;
    w.flush()?;
    Ok(report)
}

/// Returns the matrix, truth and group-file paths.
pub fn cmd_simulate(args: &SimulateArgs) -> anyhow::Result<[PathBuf; 3]> {
    let config = SimulationConfig {
        genes: args.genes,
        n1: args.n1,
        n2: args.n2,
        lambda: args.lambda,
        delta: args.delta,
        error_family: args.dist,
        seed: args.seed,
        scale_t5: args.scale_t5,
    };
    let (matrix, truth) = simulate_dataset(&config)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    matrix.write_delimited(&args.out)?;

    let dir = args.out.parent().map(Path::to_path_buf).unwrap_or_default();
    let truth_path = args.truth.clone().unwrap_or_else(|| dir.join("truth.csv"));
    let mut w = csv::Writer::from_path(&truth_path)?;
    w.write_record(["gene_id", "de"])?;
    for (id, &t) in matrix.gene_ids().iter().zip(&truth) {
        w.write_record([id.as_str(), if t { "1" } else { "0" }])?;
    }
    w.flush()?;

    let groups_path = dir.join("groups.csv");
    let mut w = csv::Writer::from_path(&groups_path)?;
    w.write_record(["sample", "group"])?;
    for (s, l) in matrix.sample_ids().iter().zip(matrix.labels()) {
        w.write_record([s.as_str(), l.as_str()])?;
    }
    w.flush()?;
    Ok([args.out.clone(), truth_path, groups_path])
}

pub const DEFAULT_LAMBDAS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];
pub const DEFAULT_DELTAS: [f64; 2] = [1.0, 2.0];

/// Runs the study grid per family and writes `table_<family>.csv`,
/// `pfdr.csv` and `tables.txt` under `out`.
pub fn cmd_benchmark(args: &BenchmarkArgs) -> anyhow::Result<Vec<StudyTable>> {
    let (genes, default_reps) = match args.grid {
        Grid::Default => (10_000, 10),
        Grid::Small => (2_000, 3),
    };
    let reps = args.reps.unwrap_or(default_reps);
    let mut families = Vec::new();
    for tok in args
        .families
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
    {
        families.push(tok.parse::<ErrorFamily>()?);
    }
    if families.is_empty() {
        bail!("no error families requested");
    }
    ensure_dir(&args.out)?;

    let options = StudyOptions::default();
    let mut tables = Vec::new();
    let mut text = String::new();
    for (k, &family) in families.iter().enumerate() {
        let base = SimulationConfig {
            genes,
            error_family: family,
            seed: crate::rng::derive_seed(args.seed, &[k as u64]),
            ..SimulationConfig::default()
        };
        let table = run_study(
            &base,
            &DEFAULT_LAMBDAS,
            &DEFAULT_DELTAS,
            &Method::ALL,
            reps,
            &options,
        )?;
        table.write_csv(File::create(
            args.out.join(format!("table_{}.csv", family.tag())),
        )?)?;
        text.push_str(&format!("Table {}\n{}\n", k + 1, table.render_text()));
        tables.push(table);
    }
    for t in &tables {
        text.push_str(&t.render_pfdr_text(Method::New));
        text.push('\n');
    }

    let mut w = csv::Writer::from_path(args.out.join("pfdr.csv"))?;
    w.write_record([
        "family",
        "delta",
        "lambda",
        "pfdr_mean",
        "pfdr_sd",
        "replicates",
    ])?;
    for t in &tables {
        for c in t.cells.iter().filter(|c| c.method == Method::New) {
            w.write_record([
                t.error_family.tag().to_string(),
                c.delta.to_string(),
                c.lambda.to_string(),
                c.pfdr_mean.map(|v| v.to_string()).unwrap_or_default(),
                c.pfdr_sd.map(|v| v.to_string()).unwrap_or_default(),
                c.pfdr_replicates.to_string(),
            ])?;
        }
    }
    w.flush()?;
    fs::write(args.out.join("tables.txt"), &text)?;
    Ok(tables)
}

/// Writes `pvalues.csv` and `density.csv` under `out`.
pub fn cmd_pvalues(args: &PvaluesArgs) -> anyhow::Result<Vec<f64>> {
    let matrix = load(&args.input)?;
    ensure_dir(&args.out)?;
    let p = match args.method {
        TestMethod::T => gene_summaries(&matrix).iter().map(|s| s.p_value).collect(),
        TestMethod::Perm => {
            permutation_p_values(&matrix, args.permutation.mode(&matrix, args.seed))?
        }
    };

    let mut w = csv::Writer::from_path(args.out.join("pvalues.csv"))?;
    w.write_record(["gene_id", "p_value"])?;
    for (id, v) in matrix.gene_ids().iter().zip(&p) {
        w.write_record([id.clone(), v.to_string()])?;
    }
    w.flush()?;

    let grid: Vec<f64> = (0..DENSITY_POINTS)
        .map(|i| i as f64 / (DENSITY_POINTS - 1) as f64)
        .collect();
    let density = kde_density(&p, &grid)?;
    let mut w = csv::Writer::from_path(args.out.join("density.csv"))?;
    w.write_record(["p", "density"])?;
    for (x, d) in density {
        w.write_record([x.to_string(), d.to_string()])?;
    }
    w.flush()?;
    Ok(p)
}
