use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};

pub const DEFAULT_HUBER_K: f64 = 1.5;
const MAX_ITERATIONS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HuberFit {
    pub location: f64,
    pub scale: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// `E[psi_k(Z)^2]` for standard normal `Z`; makes the scale consistent at
/// the normal model.
pub(crate) fn normal_consistency(k: f64) -> f64 {
    let z = Normal::standard();
    let tail = 1.0 - z.cdf(k);
    (2.0 * z.cdf(k) - 1.0) - 2.0 * k * z.pdf(k) + 2.0 * k * k * tail
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Joint Huber M-estimate of location and scale (Proposal 2).
///
/// Solves `sum psi((x - mu)/s) = 0` and `sum psi((x - mu)/s)^2 = n * beta`
/// by alternating a winsorized-mean location step with a scale rescaling
/// step, starting from the median and normalized MAD. Iteration stops once
/// both parameters move by less than `tol` relative to the current scale,
/// or after 100 rounds.
pub fn huber_location_scale(xs: &[f64], k: f64, tol: f64) -> Result<HuberFit> {
    if xs.len() < 2 {
        return Err(Error::Argument(
            "Huber estimate needs at least 2 values".into(),
        ));
    }
    if !(k > 0.0) || !(tol > 0.0) {
        return Err(Error::Argument(format!("invalid Huber k={k} or tol={tol}")));
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::Argument("non-finite value in Huber sample".into()));
    }
    if xs.iter().all(|&x| x == xs[0]) {
        return Ok(HuberFit {
            location: xs[0],
            scale: 0.0,
            iterations: 0,
            converged: true,
        });
    }

    let n = xs.len() as f64;
    let beta = normal_consistency(k);
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut mu = median(&sorted);
    let mut dev: Vec<f64> = sorted.iter().map(|x| (x - mu).abs()).collect();
    dev.sort_by(f64::total_cmp);
    let mut s = median(&dev) / 0.674_489_750_196_081_7;
    if s == 0.0 {
        // more than half the sample ties at the median
        let (_, sd) = super::mean_sd(xs);
        s = sd;
    }

    for it in 1..=MAX_ITERATIONS {
        let (lo, hi) = (mu - k * s, mu + k * s);
        let mu_new = sorted.iter().map(|x| x.clamp(lo, hi)).sum::<f64>() / n;
        let psi2: f64 = sorted
            .iter()
            .map(|x| ((x - mu_new) / s).clamp(-k, k).powi(2))
            .sum();
        let s_new = s * (psi2 / (n * beta)).sqrt();
        let done = (mu_new - mu).abs() < tol * s && (s_new - s).abs() < tol * s;
        mu = mu_new;
        s = s_new;
        if done {
            return Ok(HuberFit {
                location: mu,
                scale: s,
                iterations: it,
                converged: true,
            });
        }
    }
    Ok(HuberFit {
        location: mu,
        scale: s,
        iterations: MAX_ITERATIONS,
        converged: false,
    })
}
