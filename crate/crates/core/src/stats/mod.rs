//! Robust location/scale, empirical distributions and density estimation.

mod ecdf;
mod huber;
mod kde;

pub use ecdf::{ecdf, kolmogorov_distance, resample, EmpiricalDistribution};
pub use huber::{huber_location_scale, HuberFit, DEFAULT_HUBER_K};
pub use kde::{kde_density, silverman_bandwidth, BANDWIDTH_FLOOR};

/// Sample mean and unbiased standard deviation.
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
