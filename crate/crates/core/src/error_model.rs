//! Error-distribution and gene-variance models built from the data.
//!
//! The error distribution is the pooled empirical distribution of
//! Huber-standardized residuals of genes with small |t|. The distribution
//! of gene standard deviations is shrunk on the log scale towards its center,
//! with the amount of shrinkage calibrated by simulating pooled standard
//! deviations of pseudo-data.

use log::warn;
use rayon::prelude::*;

use crate::data_model::{ExpressionMatrix, GeneSummary};
use crate::error::{Error, Result};
use crate::rng;
use crate::stats::{huber_location_scale, kolmogorov_distance, EmpiricalDistribution};

/// Genes used to estimate the error distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct NullGeneSet {
    /// Gene indices in ascending order.
    pub indices: Vec<usize>,
    /// Effective |t| threshold; members satisfy `|t| < t_threshold`.
    pub t_threshold: f64,
    pub requested_threshold: f64,
}

impl NullGeneSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Default minimum size of the null-gene set, `max(200, ceil(0.2 G))`.
pub fn default_min_null_genes(n_genes: usize) -> usize {
    200.max((0.2 * n_genes as f64).ceil() as usize)
}

/// Selects non-degenerate genes with `|t| < t_threshold`, raising the
/// threshold to the smallest value admitting `min_size` genes when needed.
pub fn select_null_genes(
    summaries: &[GeneSummary],
    t_threshold: f64,
    min_size: usize,
) -> Result<NullGeneSet> {
    if summaries.is_empty() {
        return Err(Error::Argument("no gene summaries".into()));
    }
    if !(t_threshold > 0.0) {
        return Err(Error::Argument(format!(
            "t threshold must be positive, got {t_threshold}"
        )));
    }
    let mut abs_t: Vec<f64> = summaries
        .iter()
        .filter(|s| !s.degenerate)
        .map(|s| s.t_stat.abs())
        .collect();
    if abs_t.len() < min_size.max(1) {
        return Err(Error::Estimation(format!(
            "only {} non-degenerate genes, {} needed for the null set",
            abs_t.len(),
            min_size
        )));
    }
    let admitted = abs_t.iter().filter(|&&t| t < t_threshold).count();
    let threshold = if admitted >= min_size {
        t_threshold
    } else {
        abs_t.sort_by(f64::total_cmp);
        abs_t[min_size - 1].next_up()
    };
    let indices = summaries
        .iter()
        .enumerate()
        .filter(|(_, s)| !s.degenerate && s.t_stat.abs() < threshold)
        .map(|(g, _)| g)
        .collect();
    Ok(NullGeneSet {
        indices,
        t_threshold: threshold,
        requested_threshold: t_threshold,
    })
}

/// Pooled standardized residuals.
#[derive(Debug, Clone)]
pub struct ResidualPool {
    pub distribution: EmpiricalDistribution,
    /// Genes contributing residuals.
    pub genes_used: usize,
    /// Genes dropped because their Huber scale was zero.
    pub skipped_genes: usize,
}

/// Standardizes every gene of the null set by its Huber location and scale
/// (both groups pooled) and returns the empirical distribution of all
/// residuals.
pub fn estimate_error_distribution(
    matrix: &ExpressionMatrix,
    null_genes: &NullGeneSet,
    huber_k: f64,
) -> Result<ResidualPool> {
    let per_gene: Vec<Option<Vec<f64>>> = null_genes
        .indices
        .par_iter()
        .map(|&g| {
            let row = matrix.row(g);
            let fit = huber_location_scale(row, huber_k, 1e-9)?;
            if fit.scale > 0.0 {
                Ok(Some(
                    row.iter().map(|x| (x - fit.location) / fit.scale).collect(),
                ))
            } else {
                Ok(None)
            }
        })
        .collect::<Result<_>>()?;
    let skipped_genes = per_gene.iter().filter(|r| r.is_none()).count();
    if skipped_genes > 0 {
        warn!("{skipped_genes} null-set genes have zero Huber scale and were skipped");
    }
    let residuals: Vec<f64> = per_gene.into_iter().flatten().flatten().collect();
    if residuals.is_empty() {
        return Err(Error::Estimation(
            "no residuals left to estimate the error distribution".into(),
        ));
    }
    let genes_used = residuals.len() / matrix.n_samples();
    Ok(ResidualPool {
        distribution: EmpiricalDistribution::new(residuals)?,
        genes_used,
        skipped_genes,
    })
}

/// Distribution of gene standard deviations used to draw `s*` for
/// pseudo-data.
#[derive(Debug, Clone)]
pub struct SigmaModel {
    /// Observed pooled standard deviations of non-degenerate genes.
    pub raw: EmpiricalDistribution,
    /// `exp(m + c (log s - m))` applied to every raw value.
    pub shrunk: EmpiricalDistribution,
    pub shrink_factor: f64,
    /// Multiplier applied to draws from `shrunk`, calibrated so that pseudo
    /// pooled variances match the observed ones on average.
    pub pseudo_scale: f64,
    /// Kolmogorov distance achieved by the selected shrink factor.
    pub calibration_distance: f64,
}

pub const SHRINK_GRID_STEPS: usize = 20;
const MIN_SIGMA_GENES: usize = 50;

impl SigmaModel {
    /// A point mass at `sigma`, without calibration.
    pub fn constant(sigma: f64) -> Self {
        Self {
            raw: EmpiricalDistribution::point_mass(sigma),
            shrunk: EmpiricalDistribution::point_mass(sigma),
            shrink_factor: 1.0,
            pseudo_scale: 1.0,
            calibration_distance: 0.0,
        }
    }

    /// Uses `sample` as is, without shrinkage.
    pub fn from_sample(sample: Vec<f64>) -> Result<Self> {
        let raw = EmpiricalDistribution::new(sample)?;
        Ok(Self {
            shrunk: raw.clone(),
            raw,
            shrink_factor: 1.0,
            pseudo_scale: 1.0,
            calibration_distance: 0.0,
        })
    }

    /// Same model with every standard deviation multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            pseudo_scale: self.pseudo_scale * factor,
            ..self.clone()
        }
    }

    /// Log-scale shrinkage of `raw` by factor `c`.
    pub fn shrink(raw: &EmpiricalDistribution, c: f64) -> EmpiricalDistribution {
        if c == 1.0 {
            return raw.clone();
        }
        let logs: Vec<f64> = raw.values().iter().map(|s| s.ln()).collect();
        let m = logs.iter().sum::<f64>() / logs.len() as f64;
        let values = logs.iter().map(|l| (m + c * (l - m)).exp()).collect();
        EmpiricalDistribution::new(values).expect("finite shrunk values")
    }

    #[inline]
    pub fn draw<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.pseudo_scale * self.shrunk.draw(rng)
    }

    /// Interquartile range of the log of the shrunk values.
    pub fn log_spread(dist: &EmpiricalDistribution) -> f64 {
        dist.quantile(0.75).ln() - dist.quantile(0.25).ln()
    }
}

/// Pooled sample standard deviation of two groups given as one slice.
fn pooled_sd(xs: &[f64], n1: usize) -> f64 {
    let ss = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m) * (x - m)).sum::<f64>()
    };
    ((ss(&xs[..n1]) + ss(&xs[n1..])) / (xs.len() - 2) as f64).sqrt()
}

/// Calibrates the shrink factor over the grid `{0, 0.05, ..., 1}`.
///
/// For each candidate `c`, pseudo pooled standard deviations are simulated
/// with `sigma` drawn from the shrunk distribution and residuals drawn from
/// `error_dist`; the same draws are reused for every `c`. The pseudo sample
/// is rescaled so its mean square matches the observed mean square, and the
/// `c` minimizing the Kolmogorov distance to the observed `s_g` wins (ties go
/// to the smaller `c`).
pub fn estimate_sigma_distribution(
    summaries: &[GeneSummary],
    error_dist: &EmpiricalDistribution,
    n1: usize,
    n2: usize,
    seed: u64,
) -> Result<SigmaModel> {
    let s: Vec<f64> = summaries
        .iter()
        .filter(|g| !g.degenerate)
        .map(|g| g.s_g)
        .collect();
    if s.len() < MIN_SIGMA_GENES {
        return Err(Error::Estimation(format!(
            "gene-variance model needs at least {MIN_SIGMA_GENES} non-degenerate genes, got {}",
            s.len()
        )));
    }
    let raw = EmpiricalDistribution::new(s)?;
    let observed_ms = raw.values().iter().map(|v| v * v).sum::<f64>() / raw.len() as f64;

    let n_cal = 2 * raw.len();
    let n = n1 + n2;
    let draws: Vec<(usize, f64)> = (0..n_cal)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, &[rng::TAG_SIGMA_CALIBRATION, i as u64]);
            let idx = rand::Rng::random_range(&mut r, 0..raw.len());
            let mut buf = [0.0f64; 64];
            let unit = if n <= buf.len() {
                for v in buf[..n].iter_mut() {
                    *v = error_dist.draw(&mut r);
                }
                pooled_sd(&buf[..n], n1)
            } else {
                let v: Vec<f64> = (0..n).map(|_| error_dist.draw(&mut r)).collect();
                pooled_sd(&v, n1)
            };
            (idx, unit)
        })
        .collect();

    let candidates: Vec<(f64, f64, f64, EmpiricalDistribution)> = (0..=SHRINK_GRID_STEPS)
        .into_par_iter()
        .map(|step| {
            let c = step as f64 / SHRINK_GRID_STEPS as f64;
            let shrunk = SigmaModel::shrink(&raw, c);
            let pseudo: Vec<f64> = draws
                .iter()
                .map(|&(idx, unit)| shrunk.values()[idx] * unit)
                .collect();
            let pseudo_ms = pseudo.iter().map(|v| v * v).sum::<f64>() / pseudo.len() as f64;
            let scale = if pseudo_ms > 0.0 {
                (observed_ms / pseudo_ms).sqrt()
            } else {
                1.0
            };
            let pseudo =
                EmpiricalDistribution::new(pseudo.into_iter().map(|v| v * scale).collect())
                    .expect("finite pseudo deviations");
            (c, kolmogorov_distance(&raw, &pseudo), scale, shrunk)
        })
        .collect();

    let all_equal = candidates.iter().all(|cand| cand.1 == candidates[0].1);
    let best = if all_equal {
        warn!("shrinkage calibration is degenerate; using shrink factor 1");
        candidates.last().expect("nonempty grid")
    } else {
        candidates.iter().fold(
            &candidates[0],
            |best, cand| if cand.1 < best.1 { cand } else { best },
        )
    };
    let (c, distance, scale, shrunk) = best.clone();
    Ok(SigmaModel {
        raw,
        shrunk,
        shrink_factor: c,
        pseudo_scale: scale,
        calibration_distance: distance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::gene_summaries;
    use crate::sim::{simulate_dataset, ErrorFamily, SimulationConfig};
    use crate::stats::DEFAULT_HUBER_K;

    fn summary(t: f64) -> GeneSummary {
        GeneSummary {
            mean1: 0.0,
            mean2: 0.0,
            s_g: 1.0,
            tau_hat: 0.0,
            t_stat: t,
            p_value: 0.5,
            degenerate: false,
        }
    }

    fn null_config(genes: usize, seed: u64) -> SimulationConfig {
        SimulationConfig {
            genes,
            lambda: 0.0,
            seed,
            ..SimulationConfig::default()
        }
    }

    #[test]
    fn direct_filter() {
        let s = [summary(0.5), summary(1.5), summary(0.9)];
        let set = select_null_genes(&s, 1.0, 1).unwrap();
        assert_eq!(set.indices, vec![0, 2]);
        assert_eq!(set.t_threshold, 1.0);
    }

    #[test]
    fn all_null_keeps_every_nondegenerate_gene() {
        let mut s = vec![summary(0.0); 5];
        s[3].degenerate = true;
        let set = select_null_genes(&s, 1.0, 2).unwrap();
        assert_eq!(set.indices, vec![0, 1, 2, 4]);
    }

    #[test]
    fn threshold_is_raised_to_reach_min_size() {
        let s = [summary(2.0), summary(-3.0), summary(0.5), summary(2.5)];
        let set = select_null_genes(&s, 1.0, 3).unwrap();
        assert_eq!(set.indices, vec![0, 2, 3]);
        assert!(set.t_threshold > 2.5 && set.t_threshold < 2.5 + 1e-12);
    }

    #[test]
    fn too_few_genes_is_an_error() {
        let s = [summary(0.0), summary(0.2)];
        assert!(matches!(
            select_null_genes(&s, 1.0, 3),
            Err(Error::Estimation(_))
        ));
    }

    #[test]
    fn selection_ignores_gene_order() {
        let s: Vec<GeneSummary> = [0.1, 2.0, 0.7, 1.4, 0.99]
            .iter()
            .map(|&t| summary(t))
            .collect();
        let mut rev = s.clone();
        rev.reverse();
        let a = select_null_genes(&s, 1.0, 4).unwrap();
        let b = select_null_genes(&rev, 1.0, 4).unwrap();
        assert_eq!(a.t_threshold, b.t_threshold);
        let mut mapped: Vec<usize> = b.indices.iter().map(|&i| s.len() - 1 - i).collect();
        mapped.sort();
        assert_eq!(a.indices, mapped);
    }

    #[test]
    fn symmetric_gene_gives_two_point_residuals() {
        let m = ExpressionMatrix::new(
            vec!["g".into()],
            (0..8).map(|j| format!("s{j}")).collect(),
            vec![-1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0],
            &["A", "A", "A", "A", "B", "B", "B", "B"].map(String::from),
        )
        .unwrap();
        let set = NullGeneSet {
            indices: vec![0],
            t_threshold: 1.0,
            requested_threshold: 1.0,
        };
        let pool = estimate_error_distribution(&m, &set, DEFAULT_HUBER_K).unwrap();
        let v = pool.distribution.values();
        assert_eq!(v.len(), 8);
        assert!(v[0] < 0.0 && (v[0] + v[7]).abs() < 1e-12);
        assert!(v[..4].iter().all(|&x| x == v[0]) && v[4..].iter().all(|&x| x == v[7]));
    }

    #[test]
    fn zero_scale_gene_is_skipped() {
        let m = ExpressionMatrix::new(
            vec!["flat".into(), "ok".into()],
            (0..4).map(|j| format!("s{j}")).collect(),
            vec![2.0, 2.0, 2.0, 2.0, 0.1, 0.7, -0.4, 0.3],
            &["A", "A", "B", "B"].map(String::from),
        )
        .unwrap();
        let set = NullGeneSet {
            indices: vec![0, 1],
            t_threshold: 1.0,
            requested_threshold: 1.0,
        };
        let pool = estimate_error_distribution(&m, &set, DEFAULT_HUBER_K).unwrap();
        assert_eq!(pool.skipped_genes, 1);
        assert_eq!(pool.genes_used, 1);
        assert_eq!(pool.distribution.len(), 2 * 4 - 4);
    }

    #[test]
    fn residual_pool_is_self_consistent() {
        let (m, _) = simulate_dataset(&null_config(1000, 4)).unwrap();
        let summaries = gene_summaries(&m);
        let set = select_null_genes(&summaries, 1.0, 200).unwrap();
        let pool = estimate_error_distribution(&m, &set, DEFAULT_HUBER_K).unwrap();
        assert_eq!(pool.distribution.len(), set.len() * 8);
        let refit =
            huber_location_scale(pool.distribution.values(), DEFAULT_HUBER_K, 1e-9).unwrap();
        assert!(refit.location.abs() < 0.02, "{:?}", refit);
        assert!((refit.scale - 1.0).abs() < 0.02, "{:?}", refit);
    }

    #[test]
    fn equal_deviations_give_unit_shrink_factor() {
        let summaries = vec![summary(0.3); 80];
        let errors = EmpiricalDistribution::new(vec![-1.0, -0.5, 0.0, 0.5, 1.0]).unwrap();
        let model = estimate_sigma_distribution(&summaries, &errors, 4, 4, 1).unwrap();
        assert_eq!(model.shrink_factor, 1.0);
        assert_eq!(model.shrunk.min(), model.shrunk.max());
        assert!((model.shrunk.min() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_genes_for_sigma_model() {
        let summaries = vec![summary(0.3); 10];
        let errors = EmpiricalDistribution::point_mass(0.0);
        assert!(estimate_sigma_distribution(&summaries, &errors, 4, 4, 1).is_err());
    }

    fn sigma_model_for(config: &SimulationConfig) -> SigmaModel {
        let (m, _) = simulate_dataset(config).unwrap();
        let summaries = gene_summaries(&m);
        let set = select_null_genes(&summaries, 1.0, default_min_null_genes(m.n_genes())).unwrap();
        let pool = estimate_error_distribution(&m, &set, DEFAULT_HUBER_K).unwrap();
        estimate_sigma_distribution(&summaries, &pool.distribution, 4, 4, config.seed ^ 0x55)
            .unwrap()
    }

    #[test]
    fn constant_sigma_is_shrunk_heavily() {
        let model = sigma_model_for(&null_config(5000, 21));
        assert!(model.shrink_factor < 0.5, "c = {}", model.shrink_factor);
    }

    #[test]
    fn chisq_variances_recover_true_spread() {
        let config = SimulationConfig {
            error_family: ErrorFamily::ChisqVariance,
            ..null_config(5000, 22)
        };
        let model = sigma_model_for(&config);
        let truth = EmpiricalDistribution::new(crate::sim::gene_sigmas(&config)).unwrap();
        let shrunk: Vec<f64> = model
            .shrunk
            .values()
            .iter()
            .map(|v| v * model.pseudo_scale)
            .collect();
        let shrunk = EmpiricalDistribution::new(shrunk).unwrap();
        let ratio = shrunk.iqr() / truth.iqr();
        assert!(
            (0.5..=1.5).contains(&ratio),
            "ratio {ratio}, c = {}",
            model.shrink_factor
        );
    }

    #[test]
    fn log_spread_is_monotone_in_shrink_factor() {
        let model = sigma_model_for(&null_config(1000, 23));
        let raw_spread = SigmaModel::log_spread(&model.raw);
        let mut prev_iqr = 0.0;
        let mut prev_log = 0.0;
        for step in 0..=SHRINK_GRID_STEPS {
            let c = step as f64 / SHRINK_GRID_STEPS as f64;
            let d = SigmaModel::shrink(&model.raw, c);
            assert!(d.iqr() >= prev_iqr - 1e-12);
            let spread = SigmaModel::log_spread(&d);
            assert!(spread <= raw_spread + 1e-12 && spread >= prev_log - 1e-12);
            prev_iqr = d.iqr();
            prev_log = spread;
        }
        assert_eq!(SigmaModel::shrink(&model.raw, 1.0), model.raw);
    }
}
