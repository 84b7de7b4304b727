//! Small sampling and density helpers shared by the model and sampler.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson};

use crate::error::{HohsmmError, Result};

/// Floor applied to gamma variates before Dirichlet normalization.
pub const DIRICHLET_FLOOR: f64 = 1e-300;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

pub fn normal_logpdf(y: f64, mu: f64, sigma: f64) -> f64 {
    let z = (y - mu) / sigma;
    -0.5 * z * z - sigma.ln() - LN_SQRT_2PI
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Normalize log-weights into probabilities, failing when every weight is `-inf`.
pub fn normalize_log_weights(log_weights: &[f64]) -> Result<Vec<f64>> {
    let max = log_weights
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(HohsmmError::NumericalUnderflow(format!(
            "log-weights {log_weights:?}"
        )));
    }
    let mut probs: Vec<f64> = log_weights.iter().map(|w| (w - max).exp()).collect();
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    Ok(probs)
}

/// Draw an index from unnormalized log-weights.
pub fn sample_log_weights<R: Rng + ?Sized>(rng: &mut R, log_weights: &[f64]) -> Result<usize> {
    let probs = normalize_log_weights(log_weights)?;
    Ok(sample_categorical(rng, &probs))
}

/// Draw an index from a probability vector (need not be exactly normalized).
pub fn sample_categorical<R: Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    let total: f64 = probs.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
            if u < p {
                return i;
            }
            u -= p;
        }
    }
    last_positive
}

pub fn gamma_draw<R: Rng + ?Sized>(rng: &mut R, shape: f64) -> f64 {
    Gamma::new(shape, 1.0)
        .expect("gamma shape must be positive and finite")
        .sample(rng)
}

/// Dirichlet draw via normalized gamma variates, each floored at [`DIRICHLET_FLOOR`].
pub fn dirichlet<R: Rng + ?Sized>(rng: &mut R, concentration: &[f64]) -> Vec<f64> {
    let mut g: Vec<f64> = concentration
        .iter()
        .map(|&a| gamma_draw(rng, a).max(DIRICHLET_FLOOR))
        .collect();
    let total: f64 = g.iter().sum();
    g.iter_mut().for_each(|x| *x /= total);
    g
}

pub fn normal_draw<R: Rng + ?Sized>(rng: &mut R, mu: f64, sigma: f64) -> f64 {
    Normal::new(mu, sigma)
        .expect("normal sd must be positive")
        .sample(rng)
}

/// Poisson draw conditioned on being at least one.
pub fn zero_truncated_poisson<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> u64 {
    let poisson = Poisson::new(mean).expect("poisson intensity must be positive");
    loop {
        let d: f64 = poisson.sample(rng);
        if d >= 1.0 {
            return d as u64;
        }
    }
}

/// Percentile with linear interpolation between order statistics: position
/// `p * (n - 1)` in the sorted sample, `p` in `[0, 1]`.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Most frequent value; ties go to the smallest value.
pub fn mode_smallest(values: &[usize]) -> Option<usize> {
    let max = *values.iter().max()?;
    let mut counts = vec![0usize; max + 1];
    for &v in values {
        counts[v] += 1;
    }
    let best = *counts.iter().max()?;
    counts.iter().position(|&n| n == best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn log_sum_exp_handles_extremes() {
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
        let v = log_sum_exp(&[-1000.0, -1000.0]);
        assert!((v - (-1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn all_neg_inf_weights_underflow() {
        let err = normalize_log_weights(&[f64::NEG_INFINITY; 3]).unwrap_err();
        assert!(matches!(err, HohsmmError::NumericalUnderflow(_)));
    }

    #[test]
    fn dirichlet_is_normalized_and_floored() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let d = dirichlet(&mut rng, &[1e-3, 1e-3, 1e-3]);
            assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(d.iter().all(|&x| x > 0.0));
        }
    }

    #[test]
    fn truncated_poisson_never_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        assert!((0..5000).all(|_| zero_truncated_poisson(&mut rng, 0.5) >= 1));
    }

    #[test]
    fn percentile_interpolates() {
        let s = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(percentile_sorted(&s, 0.0), 1.0);
        assert_eq!(percentile_sorted(&s, 0.5), 3.0);
        assert!((percentile_sorted(&s, 0.05) - 1.2).abs() < 1e-12);
    }

    #[test]
    fn mode_ties_to_smallest() {
        assert_eq!(mode_smallest(&[2, 3, 3, 2]), Some(2));
        assert_eq!(mode_smallest(&[1, 1, 2]), Some(1));
        assert_eq!(mode_smallest(&[]), None);
    }
}
