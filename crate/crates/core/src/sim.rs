//! Simulated two-group experiments and the replicated study grid.

use std::fmt::{self, Write as _};
use std::io::Write;
use std::str::FromStr;

use rand_distr::{ChiSquared, Distribution, Exp1, StandardNormal, StudentT};
use rayon::prelude::*;
use serde::Serialize;

use crate::baselines::{
    default_permutation_mode, permutation_test_proportion, pfdr, t_test_proportion, DecisionVector,
    Method, PermutationMode,
};
use crate::data_model::ExpressionMatrix;
use crate::error::{Error, Result};
use crate::pi_estimator::{estimate_pi, AlgorithmConfig};
use crate::rng::{self, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum ErrorFamily {
    /// Standard normal errors, unit gene variances.
    Normal,
    /// Normal errors with gene variances drawn from `chi2_3 / 3`.
    ChisqVariance,
    /// `Gamma(1, 1) - 1` errors.
    Gamma,
    /// Student t errors with 5 degrees of freedom.
    T5,
}

impl ErrorFamily {
    pub const ALL: [ErrorFamily; 4] = [
        ErrorFamily::Normal,
        ErrorFamily::ChisqVariance,
        ErrorFamily::Gamma,
        ErrorFamily::T5,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            ErrorFamily::Normal => "normal",
            ErrorFamily::ChisqVariance => "chisq-var",
            ErrorFamily::Gamma => "gamma",
            ErrorFamily::T5 => "t5",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            ErrorFamily::Normal => "Normal(0,1)",
            ErrorFamily::ChisqVariance => "N(0,a), a ~ chi2(3)/3",
            ErrorFamily::Gamma => "Gamma(1,1)",
            ErrorFamily::T5 => "t5",
        }
    }
}

impl fmt::Display for ErrorFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ErrorFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "normal" => Ok(ErrorFamily::Normal),
            "chisq-var" | "chisq_variance" | "chisq" => Ok(ErrorFamily::ChisqVariance),
            "gamma" => Ok(ErrorFamily::Gamma),
            "t5" => Ok(ErrorFamily::T5),
            other => Err(Error::Config(format!(
                "unknown error distribution '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationConfig {
    pub genes: usize,
    pub n1: usize,
    pub n2: usize,
    /// Proportion of differentially expressed genes.
    pub lambda: f64,
    /// Group-two mean shift of differentially expressed genes.
    pub delta: f64,
    pub error_family: ErrorFamily,
    pub seed: u64,
    /// Rescale t5 errors to unit variance.
    pub scale_t5: bool,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            genes: 10_000,
            n1: 4,
            n2: 4,
            lambda: 0.0,
            delta: 2.0,
            error_family: ErrorFamily::Normal,
            seed: 0,
            scale_t5: false,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.genes == 0 {
            return Err(Error::Config("at least one gene required".into()));
        }
        if self.n1 < 2 || self.n2 < 2 {
            return Err(Error::Config("each group needs at least 2 samples".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!(
                "lambda must lie in [0, 1], got {}",
                self.lambda
            )));
        }
        if !self.delta.is_finite() {
            return Err(Error::Config("delta must be finite".into()));
        }
        Ok(())
    }

    /// Number of differentially expressed genes, `floor(lambda G)`.
    pub fn n_de(&self) -> usize {
        // guard against 0.3 * 100 = 30.000000000000004 style rounding
        let x = self.lambda * self.genes as f64;
        let r = x.round();
        if (x - r).abs() < 1e-9 * (1.0 + r) {
            r as usize
        } else {
            x.floor() as usize
        }
    }
}

fn gene_stream(config: &SimulationConfig, g: usize) -> StreamRng {
    rng::stream(config.seed, &[rng::TAG_SIMULATE, g as u64])
}

fn draw_sigma(family: ErrorFamily, r: &mut StreamRng) -> f64 {
    match family {
        ErrorFamily::ChisqVariance => {
            let chi = ChiSquared::<f64>::new(3.0).expect("valid degrees of freedom");
            (chi.sample(r) / 3.0).sqrt()
        }
        _ => 1.0,
    }
}

fn draw_error(config: &SimulationConfig, t5: &StudentT<f64>, r: &mut StreamRng) -> f64 {
    match config.error_family {
        ErrorFamily::Normal | ErrorFamily::ChisqVariance => StandardNormal.sample(r),
        ErrorFamily::Gamma => {
            let e: f64 = Exp1.sample(r);
            e - 1.0
        }
        ErrorFamily::T5 => {
            let t = t5.sample(r);
            if config.scale_t5 {
                t * (3.0f64 / 5.0).sqrt()
            } else {
                t
            }
        }
    }
}

/// True per-gene standard deviations of the dataset `config` generates.
pub fn gene_sigmas(config: &SimulationConfig) -> Vec<f64> {
    (0..config.genes)
        .map(|g| draw_sigma(config.error_family, &mut gene_stream(config, g)))
        .collect()
}

/// Generates one dataset and its truth flags. The first `floor(lambda G)`
/// genes are differentially expressed and get `delta` added to group two.
pub fn simulate_dataset(config: &SimulationConfig) -> Result<(ExpressionMatrix, Vec<bool>)> {
    config.validate()?;
    let n = config.n1 + config.n2;
    let n_de = config.n_de();
    let t5 = StudentT::new(5.0).expect("valid degrees of freedom");
    let rows: Vec<Vec<f64>> = (0..config.genes)
        .into_par_iter()
        .map(|g| {
            let mut r = gene_stream(config, g);
            let sigma = draw_sigma(config.error_family, &mut r);
            let shift = if g < n_de { config.delta } else { 0.0 };
            (0..n)
                .map(|j| {
                    let e = sigma * draw_error(config, &t5, &mut r);
                    if j < config.n1 {
                        e
                    } else {
                        e + shift
                    }
                })
                .collect()
        })
        .collect();

    let width = config.genes.to_string().len();
    let gene_ids = (1..=config.genes)
        .map(|g| format!("g{g:0width$}"))
        .collect();
    let sample_ids = (1..=config.n1)
        .map(|j| format!("A{j}"))
        .chain((1..=config.n2).map(|j| format!("B{j}")))
        .collect();
    let labels: Vec<String> = (0..n)
        .map(|j| if j < config.n1 { "A" } else { "B" }.to_string())
        .collect();
    let matrix = ExpressionMatrix::new(gene_ids, sample_ids, rows.concat(), &labels)?;
    let truth = (0..config.genes).map(|g| g < n_de).collect();
    Ok((matrix, truth))
}

/// Settings shared by every replicate of a study.
#[derive(Debug, Clone)]
pub struct StudyOptions {
    pub alpha: f64,
    pub algorithm: AlgorithmConfig,
    /// `None` picks exact enumeration when feasible.
    pub permutation: Option<PermutationMode>,
    pub compute_pfdr: bool,
}

impl Default for StudyOptions {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            algorithm: AlgorithmConfig::default(),
            permutation: None,
            compute_pfdr: true,
        }
    }
}

/// One method's estimates at one `(delta, lambda)` grid point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyCell {
    pub method: Method,
    pub delta: f64,
    pub lambda: f64,
    pub mean: f64,
    pub sd: f64,
    /// Per-replicate estimates in replicate order.
    pub estimates: Vec<f64>,
    /// Mean and sd of pFDR over replicates with at least one discovery.
    pub pfdr_mean: Option<f64>,
    pub pfdr_sd: Option<f64>,
    pub pfdr_replicates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyTable {
    pub error_family: ErrorFamily,
    pub replicates: usize,
    pub deltas: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub methods: Vec<Method>,
    /// Ordered by delta, then method, then lambda.
    pub cells: Vec<StudyCell>,
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    if xs.len() < 2 {
        return (xs.first().copied().unwrap_or(f64::NAN), 0.0);
    }
    crate::stats::mean_sd(xs)
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

impl StudyTable {
    pub fn cell(&self, method: Method, delta: f64, lambda: f64) -> Option<&StudyCell> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.delta == delta && c.lambda == lambda)
    }

    /// Columns `method,delta,lambda,mean,sd,pfdr_mean,pfdr_sd`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "method",
            "delta",
            "lambda",
            "mean",
            "sd",
            "pfdr_mean",
            "pfdr_sd",
        ])?;
        for c in &self.cells {
            w.write_record([
                c.method.tag().to_string(),
                c.delta.to_string(),
                c.lambda.to_string(),
                c.mean.to_string(),
                c.sd.to_string(),
                fmt_opt(c.pfdr_mean),
                fmt_opt(c.pfdr_sd),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    fn render(&self, rows: &[(String, Vec<String>)], first_header: &[&str]) -> String {
        let mut header: Vec<String> = first_header.iter().map(|s| s.to_string()).collect();
        header.extend(self.lambdas.iter().map(|l| format!("{l}")));
        let lead = first_header.len();
        let mut table: Vec<Vec<String>> = vec![header];
        for (label, cells) in rows {
            let mut line: Vec<String> = label.split('\t').map(str::to_string).collect();
            line.extend(cells.iter().cloned());
            table.push(line);
        }
        let cols = lead + self.lambdas.len();
        let widths: Vec<usize> = (0..cols)
            .map(|k| {
                table
                    .iter()
                    .map(|r| r.get(k).map_or(0, |s| s.chars().count()))
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let mut out = String::new();
        for r in &table {
            let line: Vec<String> = (0..cols)
                .map(|k| {
                    let s = r.get(k).map(String::as_str).unwrap_or("");
                    if k < lead {
                        format!("{s:<w$}", w = widths[k])
                    } else {
                        format!("{s:>w$}", w = widths[k])
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
        }
        out
    }

    /// Aligned plain text: one block per delta, one row per method, cells
    /// formatted `mean (sd)`.
    pub fn render_text(&self) -> String {
        let mut rows = Vec::new();
        for &d in &self.deltas {
            for &m in &self.methods {
                let cells = self
                    .lambdas
                    .iter()
                    .map(|&l| {
                        self.cell(m, d, l)
                            .map(|c| format!("{:.3} ({:.3})", c.mean, c.sd))
                            .unwrap_or_default()
                    })
                    .collect();
                rows.push((format!("{d}\t{}", m.label()), cells));
            }
        }
        format!(
            "{}\n{}",
            self.error_family.title(),
            self.render(&rows, &["delta", "true lambda"])
        )
    }

    /// pFDR of `method` per delta, formatted `mean (sd)`.
    pub fn render_pfdr_text(&self, method: Method) -> String {
        let rows: Vec<(String, Vec<String>)> = self
            .deltas
            .iter()
            .map(|&d| {
                let cells = self
                    .lambdas
                    .iter()
                    .map(|&l| match self.cell(method, d, l) {
                        Some(StudyCell {
                            pfdr_mean: Some(m),
                            pfdr_sd: Some(s),
                            ..
                        }) => format!("{m:.4} ({s:.4})"),
                        _ => "NA".to_string(),
                    })
                    .collect();
                (format!("delta = {d}"), cells)
            })
            .collect();
        format!(
            "pFDR for {} with {} errors\n{}",
            method.label(),
            self.error_family.title(),
            self.render(&rows, &["true lambda"])
        )
    }
}

struct ReplicateOutcome {
    estimates: Vec<f64>,
    pfdr: Vec<Option<f64>>,
}

fn evaluate(
    matrix: &ExpressionMatrix,
    truth: &[bool],
    methods: &[Method],
    seed: u64,
    options: &StudyOptions,
) -> Result<ReplicateOutcome> {
    let mut estimates = Vec::with_capacity(methods.len());
    let mut rates = Vec::with_capacity(methods.len());
    for &m in methods {
        let decisions: DecisionVector = match m {
            Method::TTest => t_test_proportion(matrix, options.alpha)?.1,
            Method::Permutation => {
                let mode = options
                    .permutation
                    .unwrap_or_else(|| default_permutation_mode(matrix, seed));
                permutation_test_proportion(matrix, options.alpha, mode)?.1
            }
            Method::New => {
                let config = AlgorithmConfig {
                    seed,
                    ..options.algorithm.clone()
                };
                let est = estimate_pi(matrix, &config)?;
                DecisionVector {
                    method: Method::New,
                    alpha: options.alpha,
                    flags: est.per_gene_exceeds,
                    p_values: None,
                }
            }
        };
        estimates.push(decisions.proportion());
        rates.push(if options.compute_pfdr {
            match pfdr(&decisions, truth) {
                Ok(v) => Some(v),
                Err(Error::NoDiscoveries) => None,
                Err(e) => return Err(e),
            }
        } else {
            None
        });
    }
    Ok(ReplicateOutcome {
        estimates,
        pfdr: rates,
    })
}

/// Seed of replicate `rep` at grid point `(delta, lambda)`.
pub fn replicate_seed(base: u64, delta: f64, lambda: f64, rep: usize) -> u64 {
    rng::derive_seed(
        base,
        &[
            rng::TAG_STUDY,
            delta.to_bits(),
            lambda.to_bits(),
            rep as u64,
        ],
    )
}

/// Runs every method on `replicates` simulated datasets at each grid point
/// and aggregates mean and sd per cell. All methods at a replicate share
/// the same dataset.
pub fn run_study(
    base: &SimulationConfig,
    lambda_grid: &[f64],
    delta_list: &[f64],
    methods: &[Method],
    replicates: usize,
    options: &StudyOptions,
) -> Result<StudyTable> {
    if replicates == 0 {
        return Err(Error::Config("at least one replicate required".into()));
    }
    if methods.is_empty() || lambda_grid.is_empty() || delta_list.is_empty() {
        return Err(Error::Config(
            "study grid and method list must be nonempty".into(),
        ));
    }
    let mut units = Vec::new();
    for &d in delta_list {
        for &l in lambda_grid {
            for rep in 0..replicates {
                units.push((d, l, rep));
            }
        }
    }
    let outcomes: Vec<ReplicateOutcome> = units
        .par_iter()
        .map(|&(delta, lambda, rep)| {
            let seed = replicate_seed(base.seed, delta, lambda, rep);
            let config = SimulationConfig {
                delta,
                lambda,
                seed,
                ..base.clone()
            };
            let (matrix, truth) = simulate_dataset(&config)?;
            evaluate(&matrix, &truth, methods, seed, options)
        })
        .collect::<Result<_>>()?;

    let mut cells = Vec::new();
    for (di, &delta) in delta_list.iter().enumerate() {
        for (mi, &method) in methods.iter().enumerate() {
            for (li, &lambda) in lambda_grid.iter().enumerate() {
                let start = (di * lambda_grid.len() + li) * replicates;
                let reps = &outcomes[start..start + replicates];
                let estimates: Vec<f64> = reps.iter().map(|o| o.estimates[mi]).collect();
                let (mean, sd) = mean_sd(&estimates);
                let rates: Vec<f64> = reps.iter().filter_map(|o| o.pfdr[mi]).collect();
                let (pfdr_mean, pfdr_sd) = if rates.is_empty() {
                    (None, None)
                } else {
                    let (m, s) = mean_sd(&rates);
                    (Some(m), Some(s))
                };
                cells.push(StudyCell {
                    method,
                    delta,
                    lambda,
                    mean,
                    sd,
                    estimates,
                    pfdr_mean,
                    pfdr_sd,
                    pfdr_replicates: rates.len(),
                });
            }
        }
    }
    Ok(StudyTable {
        error_family: base.error_family,
        replicates,
        deltas: delta_list.to_vec(),
        lambdas: lambda_grid.to_vec(),
        methods: methods.to_vec(),
        cells,
    })
}

/// Draws `count` errors of `config`'s family at unit gene variance.
pub fn draw_errors(config: &SimulationConfig, count: usize) -> Vec<f64> {
    let t5 = StudentT::new(5.0).expect("valid degrees of freedom");
    let mut r = rng::stream(config.seed, &[rng::TAG_SIMULATE, u64::MAX]);
    (0..count)
        .map(|_| draw_error(config, &t5, &mut r))
        .collect()
}
