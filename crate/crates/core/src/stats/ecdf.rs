use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

/// An immutable sorted sample viewed as a step-function distribution.
///
/// `cdf` is right-continuous; `quantile` is the left-continuous generalized
/// inverse (the ⌈pm⌉-th order statistic), so that
/// `cdf(quantile(p)) >= p` and `quantile(cdf(x)) <= x`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDistribution {
    values: Vec<f64>,
}

impl EmpiricalDistribution {
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Argument(
                "empirical distribution of an empty sample".into(),
            ));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Argument(format!("non-finite sample value {v}")));
        }
        values.sort_by(f64::total_cmp);
        Ok(Self { values })
    }

    pub fn point_mass(x: f64) -> Self {
        Self::new(vec![x]).expect("finite point mass")
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// Number of sample points `<= x`.
    #[inline]
    pub fn count_le(&self, x: f64) -> usize {
        self.values.partition_point(|&v| v <= x)
    }

    #[inline]
    pub fn cdf(&self, x: f64) -> f64 {
        self.count_le(x) as f64 / self.values.len() as f64
    }

    /// Generalized inverse; `p` is clamped into (0, 1].
    #[inline]
    pub fn quantile(&self, p: f64) -> f64 {
        let m = self.values.len();
        let x = p * m as f64;
        // p = i/m computed in floating point must still select order statistic i
        let r = x.round();
        let k = if (x - r).abs() <= 1e-12 * (1.0 + x.abs()) {
            r
        } else {
            x.ceil()
        };
        let k = (k as usize).clamp(1, m);
        self.values[k - 1]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Interquartile range using the type-1 quantile.
    pub fn iqr(&self) -> f64 {
        self.quantile(0.75) - self.quantile(0.25)
    }

    /// One uniform draw from the support.
    #[inline]
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.values[rng.random_range(0..self.values.len())]
    }
}

/// Empirical CDF of a nonempty finite sample.
pub fn ecdf(values: &[f64]) -> Result<EmpiricalDistribution> {
    EmpiricalDistribution::new(values.to_vec())
}

/// `n` draws with replacement, deterministic in `seed`.
pub fn resample(dist: &EmpiricalDistribution, n: usize, seed: u64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::Argument("resample size must be at least 1".into()));
    }
    let mut r = rng::stream(seed, &[rng::TAG_RESAMPLE]);
    Ok((0..n).map(|_| dist.draw(&mut r)).collect())
}

/// Sup-norm distance between two empirical CDFs, evaluated exactly at every
/// jump point of either function.
pub fn kolmogorov_distance(a: &EmpiricalDistribution, b: &EmpiricalDistribution) -> f64 {
    let (xa, xb) = (a.values(), b.values());
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < xa.len() || j < xb.len() {
        let x = match (xa.get(i), xb.get(j)) {
            (Some(&u), Some(&v)) => u.min(v),
            (Some(&u), None) => u,
            (None, Some(&v)) => v,
            (None, None) => unreachable!(),
        };
        while i < xa.len() && xa[i] <= x {
            i += 1;
        }
        while j < xb.len() && xb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn step_function_values() {
        let d = ecdf(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(d.cdf(2.5), 0.5);
        assert_eq!(d.cdf(0.0), 0.0);
        assert_eq!(d.cdf(1.0), 0.25);
        assert_eq!(d.quantile(1.0), 4.0);
        assert_eq!(d.quantile(0.5), 2.0);
        assert_eq!(d.quantile(0.51), 3.0);
    }

    #[test]
    fn empty_and_non_finite_rejected() {
        assert!(ecdf(&[]).is_err());
        assert!(ecdf(&[1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn uniform_sample_is_close_to_identity() {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let xs: Vec<f64> = (0..10_000).map(|_| r.random::<f64>()).collect();
        let d = ecdf(&xs).unwrap();
        // sup over jump points of |F_n - t| on both sides of each jump
        let m = xs.len() as f64;
        let sup = d
            .values()
            .iter()
            .enumerate()
            .map(|(k, &t)| ((k + 1) as f64 / m - t).abs().max((t - k as f64 / m).abs()))
            .fold(0.0, f64::max);
        assert!(sup < 0.02, "{sup}");
    }

    #[test]
    fn resample_of_a_point_mass() {
        let d = EmpiricalDistribution::point_mass(7.0);
        assert_eq!(resample(&d, 5, 3).unwrap(), vec![7.0; 5]);
        assert!(resample(&d, 0, 3).is_err());
    }

    #[test]
    fn resample_is_deterministic() {
        let d = ecdf(&[0.1, 0.5, 0.9, 2.0]).unwrap();
        assert_eq!(resample(&d, 50, 42).unwrap(), resample(&d, 50, 42).unwrap());
        assert_ne!(resample(&d, 50, 42).unwrap(), resample(&d, 50, 43).unwrap());
    }

    #[test]
    fn resample_mean_matches_law_of_large_numbers() {
        let d = ecdf(&[0.0, 1.0]).unwrap();
        let xs = resample(&d, 100_000, 5).unwrap();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        assert!((mean - 0.5).abs() < 0.01, "{mean}");
    }

    #[test]
    fn kolmogorov_identity_and_disjoint() {
        let a = ecdf(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(kolmogorov_distance(&a, &a), 0.0);
        let z = EmpiricalDistribution::point_mass(0.0);
        let o = EmpiricalDistribution::point_mass(1.0);
        assert_eq!(kolmogorov_distance(&z, &o), 1.0);
    }

    fn brute_force_ks(a: &[f64], b: &[f64]) -> f64 {
        let f =
            |xs: &[f64], t: f64| xs.iter().filter(|&&v| v <= t).count() as f64 / xs.len() as f64;
        a.iter()
            .chain(b)
            .map(|&t| (f(a, t) - f(b, t)).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn kolmogorov_matches_exhaustive_evaluation() {
        let (a, b) = ([1.0, 2.0, 3.0], [1.5, 2.5, 3.5]);
        let expected = brute_force_ks(&a, &b);
        assert!((expected - 1.0 / 3.0).abs() < 1e-15);
        let d = kolmogorov_distance(&ecdf(&a).unwrap(), &ecdf(&b).unwrap());
        assert_eq!(d, expected);
    }

    proptest! {
        #[test]
        fn galois_connection(xs in prop::collection::vec(-1e3f64..1e3, 1..60), p in 1e-6f64..=1.0) {
            let d = ecdf(&xs).unwrap();
            prop_assert!(d.cdf(d.quantile(p)) >= p - 1e-12);
            for &x in &xs {
                prop_assert!(d.quantile(d.cdf(x)) <= x);
            }
        }

        #[test]
        fn quantile_nondecreasing(xs in prop::collection::vec(-10f64..10.0, 1..40), p in 1e-6f64..1.0, q in 1e-6f64..1.0) {
            let d = ecdf(&xs).unwrap();
            let (lo, hi) = if p <= q { (p, q) } else { (q, p) };
            prop_assert!(d.quantile(lo) <= d.quantile(hi));
        }

        #[test]
        fn kolmogorov_agrees_with_brute_force(
            a in prop::collection::vec(-5i32..5, 1..20),
            b in prop::collection::vec(-5i32..5, 1..20),
        ) {
            let a: Vec<f64> = a.into_iter().map(f64::from).collect();
            let b: Vec<f64> = b.into_iter().map(f64::from).collect();
            let d = kolmogorov_distance(&ecdf(&a).unwrap(), &ecdf(&b).unwrap());
            prop_assert!((d - brute_force_ks(&a, &b)).abs() < 1e-12);
        }

        #[test]
        fn resample_stays_in_support(xs in prop::collection::vec(-10f64..10.0, 1..30), seed in any::<u64>()) {
            let d = ecdf(&xs).unwrap();
            for v in resample(&d, 40, seed).unwrap() {
                prop_assert!(xs.contains(&v));
            }
        }
    }
}
