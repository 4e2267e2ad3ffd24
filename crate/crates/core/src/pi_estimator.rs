//! Fixed-point deconvolution of the observed effect distribution and the
//! resulting estimate of the proportion of differentially expressed genes.
//!
//! Pseudo-data for gene `g` are built as `X*_1j = s* r_1j` and
//! `X*_2j = tau_g + s* r_2j`, with `s*` drawn from the shrunk
//! gene-variance model and `r` resampled from the pooled residuals; the
//! pseudo effect is `tau** = |mean(X*_2) - mean(X*_1)|`.
//!
//! Starting from the observed effects, every iteration pools several
//! pseudo-datasets into `F*` and moves each candidate effect through the
//! quantile map `c <- F_obs^-1(F*(c))`. A fixed point of the map is a set of
//! candidates whose pseudo effects reproduce the observed effect
//! distribution, which is also the stopping rule.

use rayon::prelude::*;
use serde::Serialize;

use crate::data_model::{gene_summaries, ExpressionMatrix};
use crate::error::{Error, Result};
use crate::error_model::{
    default_min_null_genes, estimate_error_distribution, estimate_sigma_distribution,
    select_null_genes, SigmaModel,
};
use crate::rng;
use crate::stats::{kolmogorov_distance, EmpiricalDistribution, DEFAULT_HUBER_K};

/// Mean of the limiting Kolmogorov distribution, `sqrt(pi/2) ln 2`.
const KOLMOGOROV_MEAN: f64 = 0.868_731_160_636_006_2;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlgorithmConfig {
    pub max_iterations: usize,
    /// Pseudo-datasets pooled into `F*` per iteration.
    pub mc_reps_per_iteration: usize,
    /// Kolmogorov distance between `F*` and the observed CDF at which the
    /// iteration stops.
    pub convergence_tol: f64,
    /// Raise the tolerance to the expected Monte-Carlo Kolmogorov distance
    /// between `F*` and the observed CDF when that is larger.
    pub noise_aware_tolerance: bool,
    pub null_quantile: f64,
    pub threshold_multiplier: f64,
    pub t_threshold: f64,
    /// Minimum null-set size; `None` means `max(200, ceil(0.2 G))`.
    pub min_null_genes: Option<usize>,
    pub huber_k: f64,
    pub seed: u64,
}

impl Default for AlgorithmConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            mc_reps_per_iteration: 5,
            convergence_tol: 0.005,
            noise_aware_tolerance: true,
            null_quantile: 0.95,
            threshold_multiplier: 1.0,
            t_threshold: 1.0,
            min_null_genes: None,
            huber_k: DEFAULT_HUBER_K,
            seed: 0,
        }
    }
}

impl AlgorithmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 || self.mc_reps_per_iteration == 0 {
            return Err(Error::Config(
                "iteration and replicate counts must be at least 1".into(),
            ));
        }
        if !(self.null_quantile > 0.0 && self.null_quantile < 1.0) {
            return Err(Error::Config(format!(
                "null quantile must lie in (0, 1), got {}",
                self.null_quantile
            )));
        }
        if !(self.threshold_multiplier >= 0.0) {
            return Err(Error::Config(format!(
                "threshold multiplier must be nonnegative, got {}",
                self.threshold_multiplier
            )));
        }
        if !(self.convergence_tol >= 0.0) || !(self.t_threshold > 0.0) || !(self.huber_k > 0.0) {
            return Err(Error::Config(
                "tolerances and tuning constants must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Stopping tolerance for `genes` observed effects.
    pub fn effective_tolerance(&self, genes: usize) -> f64 {
        if self.noise_aware_tolerance {
            let g = genes as f64;
            let pooled = (self.mc_reps_per_iteration * genes) as f64;
            self.convergence_tol
                .max(KOLMOGOROV_MEAN * (1.0 / g + 1.0 / pooled).sqrt())
        } else {
            self.convergence_tol
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FixedPointState {
    /// Current effect candidates, one per gene.
    pub candidates: Vec<f64>,
    /// Iterations performed (pseudo-data rounds).
    pub iteration: usize,
    /// Kolmogorov distance between `F*` and the observed CDF per iteration.
    pub ks_trace: Vec<f64>,
    pub converged: bool,
    /// Tolerance the trace was compared against.
    pub tolerance: f64,
}

impl FixedPointState {
    pub fn ks_final(&self) -> f64 {
        self.ks_trace.last().copied().unwrap_or(f64::NAN)
    }
}

/// Everything needed to draw pseudo effects.
#[derive(Clone, Copy)]
struct PseudoModel<'a> {
    sigma: &'a SigmaModel,
    errors: &'a EmpiricalDistribution,
    n1: usize,
    n2: usize,
}

impl PseudoModel<'_> {
    #[inline]
    fn tau_star(&self, tau: f64, rng: &mut rng::StreamRng) -> f64 {
        let s = self.sigma.draw(rng);
        let sum1: f64 = (0..self.n1).map(|_| self.errors.draw(rng)).sum();
        let sum2: f64 = (0..self.n2).map(|_| self.errors.draw(rng)).sum();
        (tau + s * (sum2 / self.n2 as f64 - sum1 / self.n1 as f64)).abs()
    }

    /// `reps` pseudo-datasets over `taus`, replicate-major. Unit
    /// `(rep, g)` draws from its own stream keyed by `prefix`, `rep` and `g`.
    fn pooled(&self, taus: &[f64], reps: usize, seed: u64, prefix: &[u64]) -> Vec<f64> {
        let g_count = taus.len();
        let base = rng::derive_seed(seed, prefix);
        (0..reps * g_count)
            .into_par_iter()
            .map(|k| {
                let (rep, g) = (k / g_count, k % g_count);
                let mut r = rng::stream(base, &[rep as u64, g as u64]);
                self.tau_star(taus[g], &mut r)
            })
            .collect()
    }
}

fn check_counts(n1: usize, n2: usize) -> Result<()> {
    if n1 == 0 || n2 == 0 {
        return Err(Error::Argument("group sizes must be positive".into()));
    }
    Ok(())
}

/// One pseudo effect per entry of `tau_sample`.
pub fn generate_pseudo_data(
    tau_sample: &[f64],
    sigma_model: &SigmaModel,
    error_dist: &EmpiricalDistribution,
    n1: usize,
    n2: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    check_counts(n1, n2)?;
    if let Some(t) = tau_sample.iter().find(|t| !(**t >= 0.0) || !t.is_finite()) {
        return Err(Error::Argument(format!(
            "effects must be finite and nonnegative, got {t}"
        )));
    }
    let model = PseudoModel {
        sigma: sigma_model,
        errors: error_dist,
        n1,
        n2,
    };
    Ok(model.pooled(tau_sample, 1, seed, &[rng::TAG_REGENERATE]))
}

/// Null cutoff: the `null_quantile` quantile of pseudo effects generated
/// with every gene's effect at zero, pooled over `mc_reps_per_iteration`
/// datasets of `genes` genes.
pub fn null_tau_quantile(
    sigma_model: &SigmaModel,
    error_dist: &EmpiricalDistribution,
    n1: usize,
    n2: usize,
    genes: usize,
    config: &AlgorithmConfig,
) -> Result<f64> {
    config.validate()?;
    check_counts(n1, n2)?;
    let model = PseudoModel {
        sigma: sigma_model,
        errors: error_dist,
        n1,
        n2,
    };
    let zeros = vec![0.0; genes.max(1)];
    let null = model.pooled(
        &zeros,
        config.mc_reps_per_iteration,
        config.seed,
        &[rng::TAG_NULL_QUANTILE],
    );
    Ok(EmpiricalDistribution::new(null)?.quantile(config.null_quantile))
}

/// Runs the quantile-matching iteration from the observed effects.
pub fn fixed_point_deconvolve(
    observed_tau_hats: &[f64],
    sigma_model: &SigmaModel,
    error_dist: &EmpiricalDistribution,
    n1: usize,
    n2: usize,
    config: &AlgorithmConfig,
) -> Result<FixedPointState> {
    config.validate()?;
    check_counts(n1, n2)?;
    let observed = EmpiricalDistribution::new(observed_tau_hats.to_vec())?;
    if observed.min() < 0.0 {
        return Err(Error::Argument(
            "observed effects must be nonnegative".into(),
        ));
    }
    let model = PseudoModel {
        sigma: sigma_model,
        errors: error_dist,
        n1,
        n2,
    };
    let tolerance = config.effective_tolerance(observed_tau_hats.len());
    let mut candidates = observed_tau_hats.to_vec();
    let mut ks_trace = Vec::with_capacity(config.max_iterations);
    let mut converged = false;

    for it in 1..=config.max_iterations {
        let pseudo = model.pooled(
            &candidates,
            config.mc_reps_per_iteration,
            config.seed,
            &[rng::TAG_FIXED_POINT, it as u64],
        );
        let f_star = EmpiricalDistribution::new(pseudo)
            .map_err(|e| Error::Algorithm(format!("pseudo effects at iteration {it}: {e}")))?;
        let d = kolmogorov_distance(&f_star, &observed);
        ks_trace.push(d);
        if d <= tolerance {
            converged = true;
            break;
        }
        candidates
            .par_iter_mut()
            .for_each(|c| *c = observed.quantile(f_star.cdf(*c)));
        if candidates.iter().any(|c| !c.is_finite()) {
            return Err(Error::Algorithm(format!(
                "non-finite candidate at iteration {it}"
            )));
        }
    }

    Ok(FixedPointState {
        candidates,
        iteration: ks_trace.len(),
        ks_trace,
        converged,
        tolerance,
    })
}

/// Kolmogorov distance between freshly regenerated pseudo effects of
/// `candidates` and the observed effect distribution.
pub fn regenerated_distance(
    candidates: &[f64],
    observed_tau_hats: &[f64],
    sigma_model: &SigmaModel,
    error_dist: &EmpiricalDistribution,
    n1: usize,
    n2: usize,
    reps: usize,
    seed: u64,
) -> Result<f64> {
    check_counts(n1, n2)?;
    let model = PseudoModel {
        sigma: sigma_model,
        errors: error_dist,
        n1,
        n2,
    };
    let pseudo = model.pooled(candidates, reps.max(1), seed, &[rng::TAG_REGENERATE, 1]);
    Ok(kolmogorov_distance(
        &EmpiricalDistribution::new(pseudo)?,
        &EmpiricalDistribution::new(observed_tau_hats.to_vec())?,
    ))
}

/// Result of the full pipeline. Per-gene vectors are in matrix row order.
#[derive(Debug, Clone)]
pub struct PiEstimate {
    /// Estimated proportion of differentially expressed genes.
    pub pi_hat: f64,
    pub eta: f64,
    pub threshold_used: f64,
    pub state: FixedPointState,
    pub per_gene_exceeds: Vec<bool>,
    pub tau_hats: Vec<f64>,
    pub n_null_genes: usize,
    pub null_t_threshold: f64,
    pub residuals_skipped: usize,
    pub sigma_model: SigmaModel,
    pub error_distribution: EmpiricalDistribution,
}

#[derive(Debug, Clone, Serialize)]
pub struct PerGeneReport {
    pub id: String,
    pub tau_hat: f64,
    pub candidate: f64,
    pub exceeds: bool,
}

/// Serialized form of a [`PiEstimate`].
#[derive(Debug, Clone, Serialize)]
pub struct PiEstimateReport {
    pub pi_hat: f64,
    pub eta: f64,
    pub threshold_used: f64,
    pub converged: bool,
    pub iterations: usize,
    pub ks_final: f64,
    pub n_null_genes: usize,
    pub shrink_factor: f64,
    pub per_gene: Vec<PerGeneReport>,
}

impl PiEstimate {
    pub fn report(&self, gene_ids: &[String]) -> PiEstimateReport {
        PiEstimateReport {
            pi_hat: self.pi_hat,
            eta: self.eta,
            threshold_used: self.threshold_used,
            converged: self.state.converged,
            iterations: self.state.iteration,
            ks_final: self.state.ks_final(),
            n_null_genes: self.n_null_genes,
            shrink_factor: self.sigma_model.shrink_factor,
            per_gene: gene_ids
                .iter()
                .enumerate()
                .map(|(g, id)| PerGeneReport {
                    id: id.clone(),
                    tau_hat: self.tau_hats[g],
                    candidate: self.state.candidates[g],
                    exceeds: self.per_gene_exceeds[g],
                })
                .collect(),
        }
    }
}

/// Full pipeline: summaries, null set, residual pool, gene-variance model,
/// null cutoff, deconvolution and exceedance count.
///
/// Genes are processed in gene-id order internally, so the result does not
/// depend on the row order of the matrix.
pub fn estimate_pi(matrix: &ExpressionMatrix, config: &AlgorithmConfig) -> Result<PiEstimate> {
    config.validate()?;
    let (n1, n2) = (matrix.n1(), matrix.n2());
    let genes = matrix.n_genes();
    let summaries = gene_summaries(matrix);

    let min_size = config
        .min_null_genes
        .unwrap_or_else(|| default_min_null_genes(genes));
    let null_set = select_null_genes(&summaries, config.t_threshold, min_size)?;
    let pool = estimate_error_distribution(matrix, &null_set, config.huber_k)?;
    let sigma_model = estimate_sigma_distribution(
        &summaries,
        &pool.distribution,
        n1,
        n2,
        rng::derive_seed(config.seed, &[rng::TAG_SIGMA_CALIBRATION]),
    )?;

    let eta = null_tau_quantile(&sigma_model, &pool.distribution, n1, n2, genes, config)?;

    let mut order: Vec<usize> = (0..genes).collect();
    order.sort_by(|&a, &b| matrix.gene_ids()[a].cmp(&matrix.gene_ids()[b]));
    let observed: Vec<f64> = order.iter().map(|&g| summaries[g].tau_hat).collect();
    let canonical =
        fixed_point_deconvolve(&observed, &sigma_model, &pool.distribution, n1, n2, config)?;

    let mut candidates = vec![0.0; genes];
    for (pos, &g) in order.iter().enumerate() {
        candidates[g] = canonical.candidates[pos];
    }
    let state = FixedPointState {
        candidates,
        ..canonical
    };

    let threshold_used = if config.threshold_multiplier == 0.0 {
        0.0
    } else {
        config.threshold_multiplier * eta
    };
    let per_gene_exceeds: Vec<bool> = state
        .candidates
        .iter()
        .map(|&c| c > threshold_used)
        .collect();
    let pi_hat = per_gene_exceeds.iter().filter(|&&e| e).count() as f64 / genes as f64;

    Ok(PiEstimate {
        pi_hat,
        eta,
        threshold_used,
        state,
        per_gene_exceeds,
        tau_hats: summaries.iter().map(|s| s.tau_hat).collect(),
        n_null_genes: null_set.len(),
        null_t_threshold: null_set.t_threshold,
        residuals_skipped: pool.skipped_genes,
        sigma_model,
        error_distribution: pool.distribution,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{simulate_dataset, SimulationConfig};
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn normal_errors(n: usize, seed: u64) -> EmpiricalDistribution {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        EmpiricalDistribution::new((0..n).map(|_| StandardNormal.sample(&mut r)).collect()).unwrap()
    }

    #[test]
    fn noiseless_pseudo_data_propagate_effects() {
        let taus = vec![3.0; 100];
        let out = generate_pseudo_data(
            &taus,
            &SigmaModel::constant(1.0),
            &EmpiricalDistribution::point_mass(0.0),
            4,
            4,
            1,
        )
        .unwrap();
        assert_eq!(out, taus);
    }

    #[test]
    fn pseudo_data_shape_and_determinism() {
        let errs = normal_errors(1000, 3);
        let taus: Vec<f64> = (0..257).map(|i| i as f64 * 0.01).collect();
        let a = generate_pseudo_data(&taus, &SigmaModel::constant(1.0), &errs, 4, 4, 9).unwrap();
        let b = generate_pseudo_data(&taus, &SigmaModel::constant(1.0), &errs, 4, 4, 9).unwrap();
        assert_eq!(a.len(), taus.len());
        assert_eq!(a, b);
        assert!(generate_pseudo_data(&[-1.0], &SigmaModel::constant(1.0), &errs, 4, 4, 9).is_err());
    }

    #[test]
    fn null_pseudo_quantile_matches_half_normal() {
        // |N(0, 2/4)| has 0.95 quantile 1.959964 * sqrt(0.5) = 1.385904
        let errs = normal_errors(200_000, 5);
        let taus = vec![0.0; 100_000];
        let out = generate_pseudo_data(&taus, &SigmaModel::constant(1.0), &errs, 4, 4, 6).unwrap();
        let q = EmpiricalDistribution::new(out).unwrap().quantile(0.95);
        assert!((q - 1.385_904).abs() < 0.03, "{q}");
    }

    #[test]
    fn eta_behaves_like_a_scaled_quantile() {
        let errs = normal_errors(100_000, 7);
        let config = AlgorithmConfig {
            seed: 3,
            ..AlgorithmConfig::default()
        };
        let sigma = SigmaModel::constant(1.0);
        let eta = null_tau_quantile(&sigma, &errs, 4, 4, 10_000, &config).unwrap();
        assert!((eta - 1.385_904).abs() < 0.03, "{eta}");

        let doubled = null_tau_quantile(&sigma.scaled(2.0), &errs, 4, 4, 10_000, &config).unwrap();
        assert!((doubled / eta - 2.0).abs() < 0.06, "{doubled} vs {eta}");

        let median = AlgorithmConfig {
            null_quantile: 0.5,
            ..config.clone()
        };
        assert!(null_tau_quantile(&sigma, &errs, 4, 4, 10_000, &median).unwrap() < eta);
    }

    #[test]
    fn noiseless_errors_converge_immediately() {
        let observed: Vec<f64> = (0..500).map(|i| (i as f64 * 0.37) % 3.0).collect();
        let state = fixed_point_deconvolve(
            &observed,
            &SigmaModel::constant(1.0),
            &EmpiricalDistribution::point_mass(0.0),
            4,
            4,
            &AlgorithmConfig::default(),
        )
        .unwrap();
        assert!(state.converged);
        assert_eq!(state.iteration, 1);
        assert_eq!(state.ks_trace, vec![0.0]);
        assert_eq!(state.candidates, observed);
    }

    #[test]
    fn config_validation() {
        let bad = AlgorithmConfig {
            null_quantile: 1.0,
            ..AlgorithmConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = AlgorithmConfig {
            mc_reps_per_iteration: 0,
            ..AlgorithmConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = AlgorithmConfig {
            threshold_multiplier: f64::NAN,
            ..AlgorithmConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn candidates_stay_nonnegative_and_converged_state_meets_tolerance() {
        let (m, _) = simulate_dataset(&SimulationConfig {
            genes: 2000,
            lambda: 0.4,
            delta: 2.0,
            seed: 12,
            ..SimulationConfig::default()
        })
        .unwrap();
        let est = estimate_pi(&m, &AlgorithmConfig::default()).unwrap();
        assert!(est.state.candidates.iter().all(|&c| c >= 0.0));
        if est.state.converged {
            assert!(est.state.ks_final() <= est.state.tolerance);
        }
        assert_eq!(
            est.pi_hat,
            est.per_gene_exceeds.iter().filter(|&&e| e).count() as f64 / 2000.0
        );
    }

    #[test]
    fn threshold_multiplier_extremes() {
        let (m, _) = simulate_dataset(&SimulationConfig {
            genes: 1000,
            lambda: 0.3,
            delta: 2.0,
            seed: 13,
            ..SimulationConfig::default()
        })
        .unwrap();
        let inf = estimate_pi(
            &m,
            &AlgorithmConfig {
                threshold_multiplier: f64::INFINITY,
                ..AlgorithmConfig::default()
            },
        )
        .unwrap();
        assert_eq!(inf.pi_hat, 0.0);
        let zero = estimate_pi(
            &m,
            &AlgorithmConfig {
                threshold_multiplier: 0.0,
                ..AlgorithmConfig::default()
            },
        )
        .unwrap();
        let positive = zero.state.candidates.iter().filter(|&&c| c > 0.0).count() as f64 / 1000.0;
        assert_eq!(zero.pi_hat, positive);
    }
}
