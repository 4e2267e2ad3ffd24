use rayon::prelude::*;

use super::mean_sd;
use crate::error::{Error, Result};

/// Smallest bandwidth used; engages for (near) constant samples.
pub const BANDWIDTH_FLOOR: f64 = 1e-3;

/// Silverman's rule of thumb, `0.9 min(sd, IQR/1.34) n^(-1/5)`.
pub fn silverman_bandwidth(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let (_, sd) = mean_sd(values);
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| {
        // linear interpolation between order statistics
        let h = p * (sorted.len() - 1) as f64;
        let lo = h.floor() as usize;
        let hi = h.ceil() as usize;
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    };
    let iqr = q(0.75) - q(0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    (0.9 * spread * n.powf(-0.2)).max(BANDWIDTH_FLOOR)
}

/// Gaussian-kernel density estimate at each grid point.
pub fn kde_density(values: &[f64], grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    if values.len() < 2 {
        return Err(Error::Argument(
            "density estimate needs at least 2 values".into(),
        ));
    }
    if values.iter().chain(grid).any(|v| !v.is_finite()) {
        return Err(Error::Argument("non-finite value in density input".into()));
    }
    let h = silverman_bandwidth(values);
    let norm = 1.0 / (values.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    Ok(grid
        .par_iter()
        .map(|&x| {
            let s: f64 = values
                .iter()
                .map(|&v| {
                    let z = (x - v) / h;
                    (-0.5 * z * z).exp()
                })
                .sum();
            (x, s * norm)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn degenerate_sample_uses_floor() {
        let d = kde_density(&[0.5; 10], &[0.5]).unwrap();
        let peak = 1.0 / (BANDWIDTH_FLOOR * (2.0 * std::f64::consts::PI).sqrt());
        assert!(d[0].1.is_finite());
        assert!((d[0].1 - peak).abs() < 1e-9 * peak);
    }

    #[test]
    fn integrates_to_one() {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let xs: Vec<f64> = (0..500).map(|_| StandardNormal.sample(&mut r)).collect();
        let grid: Vec<f64> = (0..=4000).map(|i| -10.0 + i as f64 * 0.005).collect();
        let d = kde_density(&xs, &grid).unwrap();
        let integral: f64 = d
            .windows(2)
            .map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0))
            .sum();
        assert!((integral - 1.0).abs() < 0.02, "{integral}");
        assert!(d.iter().all(|&(_, y)| y >= 0.0));
    }

    #[test]
    fn symmetric_input_gives_symmetric_density() {
        let xs = [-3.0, -1.5, -0.2, 0.2, 1.5, 3.0];
        let grid: Vec<f64> = (0..=200).map(|i| -5.0 + i as f64 * 0.05).collect();
        let d = kde_density(&xs, &grid).unwrap();
        for i in 0..d.len() {
            let j = d.len() - 1 - i;
            assert!((d[i].1 - d[j].1).abs() < 1e-9);
        }
    }

    #[test]
    fn single_value_rejected() {
        assert!(kde_density(&[1.0], &[0.0]).is_err());
    }
}
