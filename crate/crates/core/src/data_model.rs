//! Expression matrices, delimited-file ingestion and per-gene two-sample
//! summaries.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Group {
    One,
    Two,
}

/// Assignment of sample columns to the two groups.
#[derive(Debug, Clone, PartialEq)]
pub enum GroupSpec {
    /// One label per sample column, in column order.
    Inline(Vec<String>),
    /// `(sample id, group label)` pairs, matched against the header.
    Mapping(Vec<(String, String)>),
}

impl GroupSpec {
    /// Interprets a command-line argument: an existing file is read as a
    /// two-column `sample,group` table, anything else as a comma-separated
    /// inline label list.
    pub fn from_arg(arg: &str) -> Result<Self> {
        let path = Path::new(arg);
        if path.is_file() {
            Self::read_mapping(path)
        } else {
            Ok(Self::parse_inline(arg))
        }
    }

    pub fn parse_inline(s: &str) -> Self {
        GroupSpec::Inline(s.split(',').map(|t| t.trim().to_string()).collect())
    }

    pub fn read_mapping(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut pairs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split([',', '\t']).map(str::trim).collect();
            if fields.len() != 2 {
                return Err(Error::Validation(format!(
                    "group file {} line {}: expected 'sample,group'",
                    path.display(),
                    lineno + 1
                )));
            }
            // optional header
            if lineno == 0 && fields[0].eq_ignore_ascii_case("sample") {
                continue;
            }
            pairs.push((fields[0].to_string(), fields[1].to_string()));
        }
        Ok(GroupSpec::Mapping(pairs))
    }

    /// Resolves the spec to one label per column of `sample_ids`.
    fn labels_for(&self, sample_ids: &[String]) -> Result<Vec<String>> {
        match self {
            GroupSpec::Inline(labels) => {
                if labels.len() != sample_ids.len() {
                    return Err(Error::Shape(format!(
                        "{} group labels given for {} sample columns",
                        labels.len(),
                        sample_ids.len()
                    )));
                }
                Ok(labels.clone())
            }
            GroupSpec::Mapping(pairs) => sample_ids
                .iter()
                .map(|id| {
                    pairs
                        .iter()
                        .find(|(s, _)| s == id)
                        .map(|(_, g)| g.clone())
                        .ok_or_else(|| {
                            Error::Validation(format!("sample '{id}' has no group assignment"))
                        })
                })
                .collect(),
        }
    }
}

/// A validated G × (n1 + n2) matrix of normalized intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpressionMatrix {
    gene_ids: Vec<String>,
    sample_ids: Vec<String>,
    /// Row-major, one row per gene.
    values: Vec<f64>,
    groups: Vec<Group>,
    group_names: [String; 2],
    group1_cols: Vec<usize>,
    group2_cols: Vec<usize>,
}

impl ExpressionMatrix {
    /// Builds a matrix from row-major `values` and one group label per
    /// sample column. The first label encountered in column order becomes
    /// group one.
    pub fn new(
        gene_ids: Vec<String>,
        sample_ids: Vec<String>,
        values: Vec<f64>,
        labels: &[String],
    ) -> Result<Self> {
        let n = sample_ids.len();
        if labels.len() != n {
            return Err(Error::Shape(format!(
                "{} group labels for {} samples",
                labels.len(),
                n
            )));
        }
        let mut distinct: Vec<&String> = Vec::new();
        for l in labels {
            if !distinct.contains(&l) {
                distinct.push(l);
            }
        }
        if distinct.len() != 2 {
            return Err(Error::Shape(format!(
                "exactly two groups required, found {}",
                distinct.len()
            )));
        }
        let groups: Vec<Group> = labels
            .iter()
            .map(|l| {
                if l == distinct[0] {
                    Group::One
                } else {
                    Group::Two
                }
            })
            .collect();
        let group_names = [distinct[0].clone(), distinct[1].clone()];
        Self::with_groups(gene_ids, sample_ids, values, groups, group_names)
    }

    pub fn with_groups(
        gene_ids: Vec<String>,
        sample_ids: Vec<String>,
        values: Vec<f64>,
        groups: Vec<Group>,
        group_names: [String; 2],
    ) -> Result<Self> {
        let n = sample_ids.len();
        if groups.len() != n {
            return Err(Error::Shape(format!(
                "{} group labels for {} samples",
                groups.len(),
                n
            )));
        }
        if values.len() != gene_ids.len() * n {
            return Err(Error::Shape(format!(
                "{} values do not fill {} genes x {} samples",
                values.len(),
                gene_ids.len(),
                n
            )));
        }
        if gene_ids.is_empty() {
            return Err(Error::Shape("matrix has no genes".into()));
        }
        let group1_cols: Vec<usize> = (0..n).filter(|&j| groups[j] == Group::One).collect();
        let group2_cols: Vec<usize> = (0..n).filter(|&j| groups[j] == Group::Two).collect();
        if group1_cols.len() < 2 || group2_cols.len() < 2 {
            return Err(Error::Shape(format!(
                "each group needs at least 2 samples (got {} and {})",
                group1_cols.len(),
                group2_cols.len()
            )));
        }
        let mut seen = HashSet::with_capacity(gene_ids.len());
        for id in &gene_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::Validation(format!("duplicate gene id '{id}'")));
            }
        }
        for (k, v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Ingestion {
                    gene: gene_ids[k / n].clone(),
                    column: sample_ids[k % n].clone(),
                    reason: format!("non-finite value {v}"),
                });
            }
        }
        Ok(Self {
            gene_ids,
            sample_ids,
            values,
            groups,
            group_names,
            group1_cols,
            group2_cols,
        })
    }

    pub fn n_genes(&self) -> usize {
        self.gene_ids.len()
    }

    pub fn n_samples(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn n1(&self) -> usize {
        self.group1_cols.len()
    }

    pub fn n2(&self) -> usize {
        self.group2_cols.len()
    }

    pub fn gene_ids(&self) -> &[String] {
        &self.gene_ids
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn group_names(&self) -> &[String; 2] {
        &self.group_names
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, g: usize) -> &[f64] {
        let n = self.n_samples();
        &self.values[g * n..(g + 1) * n]
    }

    /// Group-one and group-two values of gene `g`, in column order.
    pub fn split_row(&self, g: usize) -> (Vec<f64>, Vec<f64>) {
        let row = self.row(g);
        (
            self.group1_cols.iter().map(|&j| row[j]).collect(),
            self.group2_cols.iter().map(|&j| row[j]).collect(),
        )
    }

    /// Sample label per column, as given at construction.
    pub fn labels(&self) -> Vec<String> {
        self.groups
            .iter()
            .map(|g| match g {
                Group::One => self.group_names[0].clone(),
                Group::Two => self.group_names[1].clone(),
            })
            .collect()
    }

    /// Writes the matrix in the ingestion format: a header of sample ids and
    /// one row per gene. Values are written in shortest round-trip form so
    /// that reloading is lossless. `.csv` paths are comma-delimited, anything
    /// else is tab-delimited.
    pub fn write_delimited(&self, path: &Path) -> Result<()> {
        let delim = if path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
        {
            ','
        } else {
            '\t'
        };
        let mut w = BufWriter::new(File::create(path)?);
        write!(w, "gene")?;
        for s in &self.sample_ids {
            write!(w, "{delim}{s}")?;
        }
        writeln!(w)?;
        for g in 0..self.n_genes() {
            write!(w, "{}", self.gene_ids[g])?;
            for v in self.row(g) {
                write!(w, "{delim}{v}")?;
            }
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Reads a delimited expression file and resolves its groups.
pub fn load_matrix(path: &Path, group_spec: &GroupSpec) -> Result<ExpressionMatrix> {
    let file = File::open(path)?;
    read_matrix(BufReader::new(file), group_spec)
}

/// Parses delimited text (tab or comma, detected from the header row).
pub fn read_matrix<R: Read>(reader: R, group_spec: &GroupSpec) -> Result<ExpressionMatrix> {
    let mut reader = BufReader::new(reader);
    let mut header = String::new();
    reader.read_line(&mut header)?;
    let header = header.trim_end_matches(['\n', '\r']);
    if header.is_empty() {
        return Err(Error::Shape("empty input: missing header row".into()));
    }
    let delimiter = if header.contains('\t') { b'\t' } else { b',' };

    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(false)
        .flexible(true)
        .from_reader(header.as_bytes().chain(&b"\n"[..]).chain(reader));

    let mut records = rdr.records();
    let head = records
        .next()
        .ok_or_else(|| Error::Shape("missing header row".into()))??;
    let sample_ids: Vec<String> = head.iter().skip(1).map(|s| s.trim().to_string()).collect();
    if sample_ids.is_empty() {
        return Err(Error::Shape("header has no sample columns".into()));
    }
    let labels = group_spec.labels_for(&sample_ids)?;

    let mut gene_ids = Vec::new();
    let mut values = Vec::new();
    for rec in records {
        let rec = rec?;
        if rec.len() == 1 && rec[0].trim().is_empty() {
            continue;
        }
        let gene = rec.get(0).unwrap_or_default().trim().to_string();
        if rec.len() != sample_ids.len() + 1 {
            return Err(Error::Ingestion {
                gene,
                column: "-".into(),
                reason: format!(
                    "row has {} fields, header has {}",
                    rec.len(),
                    sample_ids.len() + 1
                ),
            });
        }
        for (j, field) in rec.iter().skip(1).enumerate() {
            let field = field.trim();
            if field.is_empty() {
                return Err(Error::Ingestion {
                    gene,
                    column: sample_ids[j].clone(),
                    reason: "missing value".into(),
                });
            }
            let v: f64 = field.parse().map_err(|_| Error::Ingestion {
                gene: gene.clone(),
                column: sample_ids[j].clone(),
                reason: format!("cannot parse '{field}' as a number"),
            })?;
            values.push(v);
        }
        gene_ids.push(gene);
    }
    ExpressionMatrix::new(gene_ids, sample_ids, values, &labels)
}

/// Two-sample summary of one gene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GeneSummary {
    pub mean1: f64,
    pub mean2: f64,
    /// Pooled sample standard deviation.
    pub s_g: f64,
    /// |mean2 - mean1|
    pub tau_hat: f64,
    /// Pooled-variance t statistic, signed as group two minus group one.
    pub t_stat: f64,
    pub p_value: f64,
    /// Zero pooled standard deviation; t is reported as 0 and p as 1.
    pub degenerate: bool,
}

/// Means and pooled standard deviation of two samples.
///
/// Each group is summed in sorted order so results do not depend on the
/// column order within a group.
pub(crate) fn pooled_moments(g1: &mut [f64], g2: &mut [f64]) -> (f64, f64, f64) {
    fn mean_ss(xs: &mut [f64]) -> (f64, f64) {
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let ss = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
        (mean, ss)
    }
    let (m1, ss1) = mean_ss(g1);
    let (m2, ss2) = mean_ss(g2);
    let df = (g1.len() + g2.len() - 2) as f64;
    (m1, m2, ((ss1 + ss2) / df).sqrt())
}

/// Pooled-variance t statistic; zero when the pooled deviation vanishes.
pub(crate) fn t_from_moments(m1: f64, m2: f64, s: f64, n1: usize, n2: usize) -> f64 {
    if s > 0.0 {
        (m2 - m1) / (s * (1.0 / n1 as f64 + 1.0 / n2 as f64).sqrt())
    } else {
        0.0
    }
}

pub(crate) fn two_sided_p(t: f64, dist: &StudentsT) -> f64 {
    (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0)
}

pub(crate) fn t_distribution(df: usize) -> StudentsT {
    StudentsT::new(0.0, 1.0, df as f64).expect("positive degrees of freedom")
}

pub fn gene_summaries(matrix: &ExpressionMatrix) -> Vec<GeneSummary> {
    let (n1, n2) = (matrix.n1(), matrix.n2());
    let tdist = t_distribution(n1 + n2 - 2);
    (0..matrix.n_genes())
        .into_par_iter()
        .map(|g| {
            let (mut a, mut b) = matrix.split_row(g);
            let (mean1, mean2, s_g) = pooled_moments(&mut a, &mut b);
            let degenerate = s_g == 0.0;
            let t_stat = t_from_moments(mean1, mean2, s_g, n1, n2);
            let p_value = if degenerate {
                1.0
            } else {
                two_sided_p(t_stat, &tdist)
            };
            GeneSummary {
                mean1,
                mean2,
                s_g,
                tau_hat: (mean2 - mean1).abs(),
                t_stat,
                p_value,
                degenerate,
            }
        })
        .collect()
}
