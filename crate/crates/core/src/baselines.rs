//! Comparison estimators: the fraction of genes significant under a
//! two-sample t-test or a permutation test, and the positive false
//! discovery rate of a decision vector.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::data_model::{gene_summaries, pooled_moments, ExpressionMatrix, Group};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Method {
    #[serde(rename = "t")]
    TTest,
    #[serde(rename = "perm")]
    Permutation,
    #[serde(rename = "new")]
    New,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::TTest, Method::Permutation, Method::New];

    pub fn tag(self) -> &'static str {
        match self {
            Method::TTest => "t",
            Method::Permutation => "perm",
            Method::New => "new",
        }
    }

    /// Row label used in rendered tables.
    pub fn label(self) -> &'static str {
        match self {
            Method::TTest => "t-test",
            Method::Permutation => "Permutation test",
            Method::New => "New method",
        }
    }

    /// Parses a comma-separated method list.
    pub fn parse_list(s: &str) -> Result<Vec<Method>> {
        let mut out = Vec::new();
        for tok in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let m: Method = tok.parse()?;
            if !out.contains(&m) {
                out.push(m);
            }
        }
        Ok(out)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "t" | "t-test" | "ttest" => Ok(Method::TTest),
            "perm" | "permutation" => Ok(Method::Permutation),
            "new" => Ok(Method::New),
            other => Err(Error::Config(format!("unknown method '{other}'"))),
        }
    }
}

/// Per-gene significance calls of one method.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecisionVector {
    pub method: Method,
    pub alpha: f64,
    pub flags: Vec<bool>,
    /// Per-gene p-values, for the test-based methods.
    pub p_values: Option<Vec<f64>>,
}

impl DecisionVector {
    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn discoveries(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    pub fn proportion(&self) -> f64 {
        self.discoveries() as f64 / self.flags.len() as f64
    }

    /// Writes `gene_id,p_value,flag` rows.
    pub fn write_csv<W: Write>(&self, out: W, gene_ids: &[String]) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["gene_id", "p_value", "flag"])?;
        for (g, id) in gene_ids.iter().enumerate() {
            let p = self
                .p_values
                .as_ref()
                .map(|p| p[g].to_string())
                .unwrap_or_default();
            w.write_record([id.as_str(), &p, if self.flags[g] { "1" } else { "0" }])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path, gene_ids: &[String]) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?, gene_ids)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )))
    }
}

fn from_p_values(method: Method, alpha: f64, p: Vec<f64>) -> (f64, DecisionVector) {
    let flags: Vec<bool> = p.iter().map(|&p| p < alpha).collect();
    let d = DecisionVector {
        method,
        alpha,
        flags,
        p_values: Some(p),
    };
    (d.proportion(), d)
}

/// Fraction of genes with two-sided pooled-t p-value below `alpha`.
pub fn t_test_proportion(matrix: &ExpressionMatrix, alpha: f64) -> Result<(f64, DecisionVector)> {
    check_alpha(alpha)?;
    let p = gene_summaries(matrix).iter().map(|s| s.p_value).collect();
    Ok(from_p_values(Method::TTest, alpha, p))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PermutationMode {
    /// Enumerate every split of the samples into groups of the observed sizes.
    Exact,
    /// `b` uniformly random relabelings per gene.
    MonteCarlo { b: usize, seed: u64 },
}

/// Upper bound on the number of enumerated splits.
pub const MAX_EXACT_SPLITS: u64 = 20_000;

pub fn binomial(n: u64, k: u64) -> u64 {
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}

/// Every `k`-subset of `0..n` as a bit mask.
fn subsets(n: usize, k: usize) -> Vec<u64> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.iter().fold(0u64, |m, &i| m | (1 << i)));
        // advance to the next combination in lexicographic order
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if idx[i] != i + n - k {
                break;
            }
            if i == 0 && idx[0] == n - k {
                return out;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// |t| for the split whose group-one columns are the bits of `mask`, on a
/// centered row with total sum of squares `q`.
#[inline]
fn split_abs_t(row: &[f64], q: f64, mask: u64, n1: usize) -> f64 {
    let n = row.len();
    let n2 = n - n1;
    let mut s1 = 0.0;
    for (j, &x) in row.iter().enumerate() {
        if mask & (1 << j) != 0 {
            s1 += x;
        }
    }
    // the row is centered, so the group-two sum is -s1
    let (m1, m2) = (s1 / n1 as f64, -s1 / n2 as f64);
    let ss = (q - s1 * s1 / n1 as f64 - s1 * s1 / n2 as f64).max(0.0);
    let diff = (m2 - m1).abs();
    if ss <= 0.0 {
        return if diff == 0.0 { 0.0 } else { f64::INFINITY };
    }
    diff / (ss / (n - 2) as f64 * (1.0 / n1 as f64 + 1.0 / n2 as f64)).sqrt()
}

struct PreparedRow {
    centered: Vec<f64>,
    q: f64,
    degenerate: bool,
}

fn prepare(matrix: &ExpressionMatrix, g: usize) -> PreparedRow {
    let row = matrix.row(g);
    let mean = row.iter().sum::<f64>() / row.len() as f64;
    let centered: Vec<f64> = row.iter().map(|x| x - mean).collect();
    let q = centered.iter().map(|x| x * x).sum();
    let (mut a, mut b) = matrix.split_row(g);
    let (_, _, s) = pooled_moments(&mut a, &mut b);
    PreparedRow {
        centered,
        q,
        degenerate: s == 0.0,
    }
}

#[inline]
fn at_least(t: f64, observed: f64) -> bool {
    // complementary splits give the same |t| up to rounding
    t >= observed * (1.0 - 1e-12)
}

/// Per-gene permutation p-values of |t|, counting the observed split.
pub fn permutation_p_values(matrix: &ExpressionMatrix, mode: PermutationMode) -> Result<Vec<f64>> {
    let n = matrix.n_samples();
    let n1 = matrix.n1();
    if n > 64 {
        return Err(Error::Config(
            "permutation tests support at most 64 samples".into(),
        ));
    }
    let observed_mask = matrix
        .groups()
        .iter()
        .enumerate()
        .filter(|(_, g)| **g == Group::One)
        .fold(0u64, |m, (j, _)| m | (1 << j));

    match mode {
        PermutationMode::Exact => {
            let count = binomial(n as u64, n1 as u64);
            if count > MAX_EXACT_SPLITS {
                return Err(Error::Config(format!(
                    "exact permutation needs {count} splits (limit {MAX_EXACT_SPLITS}); use Monte Carlo"
                )));
            }
            let splits = subsets(n, n1);
            Ok((0..matrix.n_genes())
                .into_par_iter()
                .map(|g| {
                    let row = prepare(matrix, g);
                    if row.degenerate {
                        return 1.0;
                    }
                    let obs = split_abs_t(&row.centered, row.q, observed_mask, n1);
                    let hits = splits
                        .iter()
                        .filter(|&&m| at_least(split_abs_t(&row.centered, row.q, m, n1), obs))
                        .count();
                    hits as f64 / splits.len() as f64
                })
                .collect())
        }
        PermutationMode::MonteCarlo { b, seed } => {
            if b < 100 {
                return Err(Error::Config(format!(
                    "Monte-Carlo permutation needs at least 100 relabelings, got {b}"
                )));
            }
            Ok((0..matrix.n_genes())
                .into_par_iter()
                .map(|g| {
                    let row = prepare(matrix, g);
                    if row.degenerate {
                        return 1.0;
                    }
                    let obs = split_abs_t(&row.centered, row.q, observed_mask, n1);
                    let mut r = rng::stream(seed, &[rng::TAG_PERMUTATION, g as u64]);
                    let mut idx: Vec<usize> = (0..n).collect();
                    let mut hits = 0usize;
                    for _ in 0..b {
                        // partial Fisher-Yates: the first n1 slots form group one
                        let mut mask = 0u64;
                        for i in 0..n1 {
                            let j = r.random_range(i..n);
                            idx.swap(i, j);
                            mask |= 1 << idx[i];
                        }
                        if at_least(split_abs_t(&row.centered, row.q, mask, n1), obs) {
                            hits += 1;
                        }
                    }
                    (1 + hits) as f64 / (b + 1) as f64
                })
                .collect())
        }
    }
}

/// Fraction of genes with permutation p-value below `alpha`.
pub fn permutation_test_proportion(
    matrix: &ExpressionMatrix,
    alpha: f64,
    mode: PermutationMode,
) -> Result<(f64, DecisionVector)> {
    check_alpha(alpha)?;
    let p = permutation_p_values(matrix, mode)?;
    Ok(from_p_values(Method::Permutation, alpha, p))
}

/// Exact enumeration when feasible, otherwise 10,000 random relabelings.
pub fn default_permutation_mode(matrix: &ExpressionMatrix, seed: u64) -> PermutationMode {
    if matrix.n_samples() <= 64
        && binomial(matrix.n_samples() as u64, matrix.n1() as u64) <= MAX_EXACT_SPLITS
    {
        PermutationMode::Exact
    } else {
        PermutationMode::MonteCarlo { b: 10_000, seed }
    }
}

/// False discoveries over discoveries for one replicate.
pub fn pfdr(decisions: &DecisionVector, truth: &[bool]) -> Result<f64> {
    if truth.len() != decisions.len() {
        return Err(Error::Argument(format!(
            "{} decisions against {} truth flags",
            decisions.len(),
            truth.len()
        )));
    }
    let discoveries = decisions.discoveries();
    if discoveries == 0 {
        return Err(Error::NoDiscoveries);
    }
    let false_discoveries = decisions
        .flags
        .iter()
        .zip(truth)
        .filter(|(&d, &t)| d && !t)
        .count();
    Ok(false_discoveries as f64 / discoveries as f64)
}
