//! Conjugate parameter updates given the current states and allocations.

use rand::Rng;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};

use super::counts::TransitionCounts;
use crate::dist::{dirichlet, gamma_draw, normal_draw, DIRICHLET_FLOOR};
use crate::model::{AllocationDistributions, EmissionParams, LagSpec, RowTensor};
use crate::segmentation::SegmentStats;

/// Support of the geometric auxiliaries attached to each observed transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GeometricSupport {
    /// Failures before the first success, `{0, 1, ...}`.
    #[default]
    Failures,
    /// Trials up to and including the first success, `{1, 2, ...}`.
    Trials,
}

/// Raw row and its self-excluded image.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaRow {
    pub lambda: Vec<f64>,
    pub lambda_bar: Vec<f64>,
}

fn rows_from_gammas(gammas: &[f64], i: usize) -> LambdaRow {
    let total: f64 = gammas.iter().sum();
    let rest: f64 = gammas.iter().enumerate().filter(|(c, _)| *c != i).map(|(_, g)| g).sum();
    LambdaRow {
        lambda: gammas.iter().map(|g| g / total).collect(),
        lambda_bar: gammas
            .iter()
            .enumerate()
            .map(|(c, g)| if c == i { 0.0 } else { g / rest })
            .collect(),
    }
}

/// Sum of `n` geometric auxiliaries with success probability `1 - lambda_ii`.
pub fn sample_auxiliary_sum<R: Rng + ?Sized>(
    rng: &mut R,
    n: u64,
    lambda_ii: f64,
    support: GeometricSupport,
) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = (1.0 - lambda_ii).clamp(1e-12, 1.0);
    let geo = Geometric::new(p).expect("success probability in (0, 1]");
    let failures: f64 = (0..n).map(|_| geo.sample(rng) as f64).sum();
    match support {
        GeometricSupport::Failures => failures,
        GeometricSupport::Trials => failures + n as f64,
    }
}

/// One auxiliary-variable update of row `(i, ...)`: draw the geometric
/// auxiliaries under the current `lambda(i)`, then the row from
/// `Dir(alpha lambda0 + n)` with the auxiliary total on entry `i`.
///
/// `lambda_bar` is normalized from the gamma variates of the other entries,
/// so it stays well defined even when `lambda(i)` rounds to one.
pub fn sample_lambda_row<R: Rng + ?Sized>(
    rng: &mut R,
    counts: &[u64],
    i: usize,
    lambda0: &[f64],
    current_lambda_ii: f64,
    alpha_conc: f64,
    support: GeometricSupport,
) -> LambdaRow {
    let n: u64 = counts.iter().sum();
    let rho = sample_auxiliary_sum(rng, n, current_lambda_ii, support);
    let gammas: Vec<f64> = (0..counts.len())
        .map(|c| {
            let extra = if c == i { rho } else { counts[c] as f64 };
            gamma_draw(rng, alpha_conc * lambda0[c] + extra).max(DIRICHLET_FLOOR)
        })
        .collect();
    rows_from_gammas(&gammas, i)
}

/// Row draw with no auxiliary mass on entry `i`, used for rows without a
/// previous value. Its `lambda_bar` has the exact conditional
/// `Dir(alpha lambda0(c) + n(c), c != i)`.
pub fn sample_fresh_lambda_row<R: Rng + ?Sized>(
    rng: &mut R,
    counts: &[u64],
    i: usize,
    lambda0: &[f64],
    alpha_conc: f64,
) -> LambdaRow {
    let gammas: Vec<f64> = (0..counts.len())
        .map(|c| gamma_draw(rng, alpha_conc * lambda0[c] + counts[c] as f64).max(DIRICHLET_FLOOR))
        .collect();
    rows_from_gammas(&gammas, i)
}

/// Update every row of `(lambda, lambda_bar)` in place. With `fresh` set,
/// rows are drawn without reference to the previous `lambda`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn sample_lambda_rows<R: Rng + ?Sized>(
    rng: &mut R,
    counts: &TransitionCounts,
    lambda0: &[f64],
    lambda: &mut RowTensor,
    lambda_bar: &mut RowTensor,
    alpha_conc: f64,
    support: GeometricSupport,
    fresh: bool,
) {
    for r in 0..counts.num_rows() {
        let i = counts.leading_class(r);
        let row = if fresh {
            sample_fresh_lambda_row(rng, counts.row(r), i, lambda0, alpha_conc)
        } else {
            let current = lambda.row(r)[i];
            sample_lambda_row(rng, counts.row(r), i, lambda0, current, alpha_conc, support)
        };
        lambda.row_mut(r).copy_from_slice(&row.lambda);
        lambda_bar.row_mut(r).copy_from_slice(&row.lambda_bar);
    }
}

/// Chinese-restaurant table counts `m(c)` for one row: `sum_r Bernoulli(a / (r - 1 + a))`.
pub fn sample_table_count<R: Rng + ?Sized>(rng: &mut R, n: u64, a: f64) -> u64 {
    (1..=n)
        .filter(|&r| rng.random::<f64>() < a / ((r - 1) as f64 + a))
        .count() as u64
}

/// Draw table counts for every row and then `lambda0 ~ Dir(alpha0 / C + m0)`.
/// Returns the new `lambda0` and the per-state totals `m0`.
pub fn sample_lambda0<R: Rng + ?Sized>(
    rng: &mut R,
    counts: &TransitionCounts,
    lambda0: &[f64],
    alpha_conc: f64,
    alpha0_conc: f64,
) -> (Vec<f64>, Vec<u64>) {
    let c = counts.num_states();
    let mut m0 = vec![0u64; c];
    for r in 0..counts.num_rows() {
        for (s, &n) in counts.row(r).iter().enumerate() {
            if n > 0 {
                m0[s] += sample_table_count(rng, n, alpha_conc * lambda0[s]);
            }
        }
    }
    let base = alpha0_conc / c as f64;
    let conc: Vec<f64> = m0.iter().map(|&m| base + m as f64).collect();
    (dirichlet(rng, &conc), m0)
}

/// Allocation rows `pi^{(j)}(s) ~ Dir(gamma_j + #{τ : z[τ][j] = h, c[τ-j-1] = s})`
/// for lags `j >= 2`; lag 1 stays the identity.
pub fn sample_pi<R: Rng + ?Sized>(
    rng: &mut R,
    c_all: &[Vec<usize>],
    z_all: &[Vec<Vec<usize>>],
    lags: &LagSpec,
    gamma: &[f64],
) -> AllocationDistributions {
    let q = lags.order();
    let cs = lags.num_states();
    let mut alloc = AllocationDistributions::hard(lags, &vec![vec![0; cs]; q]);
    for j in 1..q {
        let k = lags.k()[j];
        let mut tally = vec![vec![0u64; k]; cs];
        for (c, z) in c_all.iter().zip(z_all) {
            for tau in q..c.len() {
                tally[c[tau - j - 1]][z[tau][j]] += 1;
            }
        }
        for s in 0..cs {
            alloc.pi[j][s] = if k == 1 {
                vec![1.0]
            } else {
                let conc: Vec<f64> = tally[s].iter().map(|&n| gamma[j] + n as f64).collect();
                dirichlet(rng, &conc)
            };
        }
    }
    alloc
}

/// Weak empirical normal-inverse-gamma prior on `(mu_c, sigma_c^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalInvGamma {
    pub mu0: f64,
    pub kappa0: f64,
    pub a0: f64,
    pub b0: f64,
}

impl NormalInvGamma {
    /// Centered at the grand mean with one pseudo-observation and scale equal
    /// to the grand variance.
    pub fn empirical(pooled: &SegmentStats) -> Self {
        let var = if pooled.count > 1 {
            pooled.m2 / (pooled.count - 1) as f64
        } else {
            1.0
        };
        NormalInvGamma {
            mu0: pooled.mean,
            kappa0: 1.0,
            a0: 1.0,
            b0: var.max(1e-12),
        }
    }

    pub fn posterior(&self, stats: &SegmentStats) -> NormalInvGamma {
        let n = stats.count as f64;
        if stats.count == 0 {
            return *self;
        }
        let kappa = self.kappa0 + n;
        let dev = stats.mean - self.mu0;
        NormalInvGamma {
            mu0: (self.kappa0 * self.mu0 + n * stats.mean) / kappa,
            kappa0: kappa,
            a0: self.a0 + 0.5 * n,
            b0: self.b0 + 0.5 * stats.m2 + 0.5 * self.kappa0 * n * dev * dev / kappa,
        }
    }

    /// Draw `(mu, sigma)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        let var = self.b0 / gamma_draw(rng, self.a0).max(DIRICHLET_FLOOR);
        let mu = normal_draw(rng, self.mu0, (var / self.kappa0).sqrt());
        (mu, var.sqrt())
    }
}

/// Per-state posterior draw given the pooled statistics of the segments
/// currently assigned to each state; unvisited states draw from the prior.
pub fn sample_emission_params<R: Rng + ?Sized>(
    rng: &mut R,
    per_state: &[SegmentStats],
    prior: &NormalInvGamma,
) -> EmissionParams {
    let (mu, sigma) = per_state
        .iter()
        .map(|stats| prior.posterior(stats).sample(rng))
        .unzip();
    EmissionParams { mu, sigma }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_self_mass_gives_unit_trials() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(sample_auxiliary_sum(&mut rng, 7, 0.0, GeometricSupport::Trials), 7.0);
        assert_eq!(sample_auxiliary_sum(&mut rng, 7, 0.0, GeometricSupport::Failures), 0.0);
    }

    #[test]
    fn prior_draw_mean_matches_lambda0() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let lambda0 = [0.5, 0.3, 0.2];
        let mut mean = [0.0; 3];
        let draws = 50_000;
        let mut current = 0.5;
        for _ in 0..draws {
            let row = sample_lambda_row(&mut rng, &[0, 0, 0], 0, &lambda0, current, 1.0, GeometricSupport::Failures);
            current = row.lambda[0];
            for (m, x) in mean.iter_mut().zip(&row.lambda) {
                *m += x / draws as f64;
            }
        }
        for (m, l) in mean.iter().zip(&lambda0) {
            assert!((m - l).abs() < 0.01, "{mean:?}");
        }
    }

    #[test]
    fn single_customer_opens_a_table() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!((0..100).all(|_| sample_table_count(&mut rng, 1, 0.01) == 1));
    }

    #[test]
    fn table_count_expectation_is_harmonic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let draws = 100_000;
        let mean = (0..draws)
            .map(|_| sample_table_count(&mut rng, 10, 1.0) as f64)
            .sum::<f64>()
            / draws as f64;
        let expected: f64 = (1..=10).map(|r| 1.0 / r as f64).sum();
        assert!((mean - expected).abs() < 0.02, "{mean} vs {expected}");
    }

    #[test]
    fn emission_posterior_concentrates_on_sample_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let values: Vec<f64> = (0..10_000).map(|_| normal_draw(&mut rng, 2.0, 0.5)).collect();
        let stats = SegmentStats::from_values(&values);
        let prior = NormalInvGamma::empirical(&SegmentStats::from_values(&[-3.0, 0.0, 3.0]));
        let draws = 2_000;
        let mean_mu = (0..draws)
            .map(|_| sample_emission_params(&mut rng, &[stats], &prior).mu[0])
            .sum::<f64>()
            / draws as f64;
        assert!((mean_mu - stats.mean).abs() < 0.05);
    }

    #[test]
    fn unvisited_state_uses_prior() {
        let prior = NormalInvGamma {
            mu0: 1.0,
            kappa0: 1.0,
            a0: 2.0,
            b0: 1.0,
        };
        let empty = SegmentStats::from_values(&[]);
        assert_eq!(prior.posterior(&empty), prior);
    }
}
