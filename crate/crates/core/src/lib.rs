//! Estimation of the proportion of differentially expressed genes in
//! two-group comparative expression experiments.
//!
//! The pipeline pools Huber-standardized residuals of low-|t| genes into an
//! error distribution, calibrates a shrunk distribution of gene standard
//! deviations, and deconvolves the observed absolute mean differences with a
//! quantile-matching fixed-point iteration driven by pseudo-data. Genes whose
//! deconvolved effect exceeds the null cutoff are counted as differentially
//! expressed.
//!
//! The t-test and permutation-test proportion estimators, a simulation
//! harness for replicated study grids, and the `piforge` command line tool
//! live alongside the estimator.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod baselines;
pub mod cli;
pub mod data_model;
pub mod error;
pub mod error_model;
pub mod pi_estimator;
pub mod rng;
pub mod sim;
pub mod stats;

pub use baselines::{
    permutation_test_proportion, pfdr, t_test_proportion, DecisionVector, Method, PermutationMode,
};
pub use data_model::{
    gene_summaries, load_matrix, ExpressionMatrix, GeneSummary, Group, GroupSpec,
};
pub use error::{Error, Result};
pub use error_model::{
    estimate_error_distribution, estimate_sigma_distribution, select_null_genes, NullGeneSet,
    ResidualPool, SigmaModel,
};
pub use pi_estimator::{
    estimate_pi, fixed_point_deconvolve, generate_pseudo_data, null_tau_quantile, AlgorithmConfig,
    FixedPointState, PiEstimate,
};
pub use sim::{
    run_study, simulate_dataset, ErrorFamily, SimulationConfig, StudyOptions, StudyTable,
};
pub use stats::{ecdf, huber_location_scale, kde_density, kolmogorov_distance, resample};
pub use stats::{EmpiricalDistribution, HuberFit};
