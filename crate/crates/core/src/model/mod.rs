//! HOHSMM domain types and the deterministic probability computations.
//!
//! States are 0-based indices `0..C`, ordered by ascending emission center.
//! A history is given oldest first, `[c_{τ-q}, ..., c_{τ-1}]`, and lag `j`
//! (1-based, as in `k_j`) lives at `LagSpec::k()[j - 1]`.
//!
//! The transition kernel is factorized through latent allocation classes:
//! the lag-1 class is the previous state itself (`k_1 = C`), which is what
//! lets every row `λ̄_{i,h_2..h_q}` put exactly zero mass on state `i`.

mod tensor;
mod transition;

use serde::{Deserialize, Serialize};

pub use tensor::RowTensor;
pub use transition::{exclude_self_transitions, TransitionTable, TransitionView};

use crate::dist::normal_logpdf;
use crate::error::{HohsmmError, Result};
use crate::segmentation::{ClusterRule, JumpSupport, SegmentStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EmissionFamily {
    #[default]
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DurationFamily {
    #[default]
    Poisson,
}

/// Fixed structural choices of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub num_states: usize,
    pub max_order: usize,
    #[serde(default)]
    pub emission_family: EmissionFamily,
    #[serde(default)]
    pub duration_family: DurationFamily,
    #[serde(default)]
    pub random_seed: u64,
}

impl ModelSpec {
    pub fn new(num_states: usize, max_order: usize, random_seed: u64) -> Result<Self> {
        let spec = ModelSpec {
            num_states,
            max_order,
            emission_family: EmissionFamily::Normal,
            duration_family: DurationFamily::Poisson,
            random_seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_states < 2 {
            return Err(HohsmmError::InvalidSpec(format!(
                "need at least 2 states, got {}",
                self.num_states
            )));
        }
        if self.max_order < 1 {
            return Err(HohsmmError::InvalidSpec("max order must be at least 1".into()));
        }
        Ok(())
    }
}

/// Number of latent classes per lag. `k[0]` (lag 1) always equals `C`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LagSpec {
    k: Vec<usize>,
}

impl LagSpec {
    pub fn new(k: Vec<usize>, num_states: usize) -> Result<Self> {
        if k.is_empty() {
            return Err(HohsmmError::InvalidSpec("lag spec needs at least one lag".into()));
        }
        if k[0] != num_states {
            return Err(HohsmmError::InvalidSpec(format!(
                "lag-1 class count must equal C = {num_states}, got {}",
                k[0]
            )));
        }
        if let Some(bad) = k.iter().find(|&&kj| kj == 0 || kj > num_states) {
            return Err(HohsmmError::InvalidSpec(format!(
                "class count {bad} outside 1..={num_states}"
            )));
        }
        Ok(LagSpec { k })
    }

    /// Every lag at full resolution, `k = (C, ..., C)`.
    pub fn full(num_states: usize, order: usize) -> Self {
        LagSpec {
            k: vec![num_states; order],
        }
    }

    /// Only lag 1 is important, `k = (C, 1, ..., 1)`.
    pub fn first_order(num_states: usize, order: usize) -> Self {
        let mut k = vec![1; order];
        k[0] = num_states;
        LagSpec { k }
    }

    pub fn k(&self) -> &[usize] {
        &self.k
    }

    pub fn order(&self) -> usize {
        self.k.len()
    }

    pub fn num_states(&self) -> usize {
        self.k[0]
    }

    /// Whether lag `lag` (1-based) is important, i.e. `k_lag > 1`.
    pub fn is_important(&self, lag: usize) -> bool {
        self.k[lag - 1] > 1
    }

    pub fn num_rows(&self) -> usize {
        self.k.iter().product()
    }
}

/// Transition rows before (`lambda`) and after (`lambda_bar`) self-transition
/// exclusion, plus the shared Dirichlet mean `lambda0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionTensor {
    pub lambda: RowTensor,
    pub lambda_bar: RowTensor,
    pub lambda0: Vec<f64>,
}

impl TransitionTensor {
    /// Build from raw rows; `lambda_bar` is derived row by row.
    pub fn from_lambda(lambda: RowTensor, lambda0: Vec<f64>) -> Result<Self> {
        let mut lambda_bar = RowTensor::zeros(lambda.class_dims(), lambda.num_states());
        for r in 0..lambda.num_rows() {
            let i = lambda.leading_class(r);
            let excluded = exclude_self_transitions(lambda.row(r), i)?;
            lambda_bar.row_mut(r).copy_from_slice(&excluded);
        }
        Ok(TransitionTensor {
            lambda,
            lambda_bar,
            lambda0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        for (r, row) in self.lambda_bar.rows().enumerate() {
            let i = self.lambda_bar.leading_class(r);
            check_probability_vector(row, 1e-10, "lambda_bar row")?;
            if row[i] != 0.0 {
                return Err(HohsmmError::InvalidSpec(format!(
                    "lambda_bar row {r} has self-transition mass {}",
                    row[i]
                )));
            }
        }
        check_probability_vector(&self.lambda0, 1e-10, "lambda0")
    }
}

/// Allocation distributions `pi[j][s]` over the `k_{j+1}` classes of lag `j + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationDistributions {
    pub pi: Vec<Vec<Vec<f64>>>,
}

impl AllocationDistributions {
    /// Hard allocations from per-lag partitions: `classes[j][s]` is the class of
    /// state `s` at lag `j + 1`. Lag 1 is forced to the identity.
    pub fn hard(lags: &LagSpec, classes: &[Vec<usize>]) -> Self {
        let c = lags.num_states();
        let pi = (0..lags.order())
            .map(|j| {
                (0..c)
                    .map(|s| {
                        let mut row = vec![0.0; lags.k()[j]];
                        let class = if j == 0 { s } else { classes[j][s] };
                        row[class] = 1.0;
                        row
                    })
                    .collect()
            })
            .collect();
        AllocationDistributions { pi }
    }

    /// Identity allocation at every lag (requires `k_j = C`), i.e. the full-order chain.
    pub fn identity(lags: &LagSpec) -> Self {
        let c = lags.num_states();
        let classes: Vec<Vec<usize>> = (0..lags.order()).map(|_| (0..c).collect()).collect();
        Self::hard(lags, &classes)
    }

    pub fn validate(&self, lags: &LagSpec) -> Result<()> {
        let c = lags.num_states();
        if self.pi.len() != lags.order() {
            return Err(HohsmmError::Schema("allocation lag count mismatch".into()));
        }
        for (j, per_state) in self.pi.iter().enumerate() {
            if per_state.len() != c {
                return Err(HohsmmError::Schema(format!("pi[{j}] has wrong state count")));
            }
            for (s, row) in per_state.iter().enumerate() {
                if row.len() != lags.k()[j] {
                    return Err(HohsmmError::Schema(format!("pi[{j}][{s}] has wrong class count")));
                }
                check_probability_vector(row, 1e-10, "allocation row")?;
                if j == 0 && (row[s] != 1.0) {
                    return Err(HohsmmError::InvalidSpec(
                        "lag-1 allocation must be one-hot".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// State-specific normal emission parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmissionParams {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl EmissionParams {
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        let e = EmissionParams { mu, sigma };
        e.validate()?;
        Ok(e)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mu.len() != self.sigma.len() {
            return Err(HohsmmError::Schema("mu and sigma lengths differ".into()));
        }
        if self.sigma.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(HohsmmError::InvalidSpec("sigma must be positive".into()));
        }
        Ok(())
    }

    pub fn num_states(&self) -> usize {
        self.mu.len()
    }

    /// Log normal density of a single observation under `state`.
    pub fn loglik(&self, state: usize, y: f64) -> f64 {
        normal_logpdf(y, self.mu[state], self.sigma[state])
    }

    /// Log density of every observation in a segment, from its sufficient statistics.
    pub fn segment_loglik(&self, state: usize, stats: &SegmentStats) -> f64 {
        let mu = self.mu[state];
        let sigma = self.sigma[state];
        let n = stats.count as f64;
        let dev = stats.mean - mu;
        let sq = stats.m2 + n * dev * dev;
        -n * (sigma.ln() + 0.918_938_533_204_672_8) - sq / (2.0 * sigma * sigma)
    }
}

/// Poisson duration intensities per state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurationParams {
    pub xi: Vec<f64>,
}

impl DurationParams {
    pub fn new(xi: Vec<f64>) -> Result<Self> {
        if xi.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(HohsmmError::InvalidSpec("duration intensities must be positive".into()));
        }
        Ok(DurationParams { xi })
    }

    /// Poisson log-pmf of a duration `d >= 1`.
    pub fn logpmf(&self, state: usize, d: u64) -> Result<f64> {
        if d < 1 {
            return Err(HohsmmError::DurationDomain(d));
        }
        let xi = self.xi[state];
        Ok(d as f64 * xi.ln() - xi - statrs::function::factorial::ln_factorial(d))
    }

    /// Mean duration; for the Poisson family this is the intensity itself.
    pub fn mean(&self, state: usize) -> f64 {
        self.xi[state]
    }
}

/// Dirichlet / prior hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperparams {
    /// Concentration of each transition row around `lambda0`.
    pub alpha_conc: f64,
    /// Concentration of the symmetric prior on `lambda0`.
    pub alpha0_conc: f64,
    /// Symmetric Dirichlet parameter of the allocation rows, per lag.
    pub gamma: Vec<f64>,
    /// Rate of the prior `p(k_j) ∝ exp(-phi * j * k)` on class counts.
    pub phi: f64,
}

impl Hyperparams {
    pub fn defaults(num_states: usize, order: usize) -> Self {
        Hyperparams {
            alpha_conc: 1.0,
            alpha0_conc: 1.0,
            gamma: vec![1.0 / num_states as f64; order],
            phi: 1.0,
        }
    }

    pub fn validate(&self, order: usize) -> Result<()> {
        let ok = self.alpha_conc > 0.0
            && self.alpha0_conc > 0.0
            && self.phi > 0.0
            && self.gamma.iter().all(|&g| g > 0.0);
        if !ok {
            return Err(HohsmmError::InvalidConfig("hyperparameters must be positive".into()));
        }
        if self.gamma.len() < order {
            return Err(HohsmmError::InvalidConfig(format!(
                "need {order} gamma values, got {}",
                self.gamma.len()
            )));
        }
        Ok(())
    }
}

/// A learned explicit-duration HOHSMM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HohsmmModel {
    pub spec: ModelSpec,
    pub lags: LagSpec,
    pub transitions: TransitionTensor,
    pub allocations: AllocationDistributions,
    pub emissions: EmissionParams,
    pub durations: DurationParams,
    pub alpha_star: f64,
    pub jump_support: JumpSupport,
    pub cluster_rule: ClusterRule,
    pub failure_state: Option<usize>,
}

impl HohsmmModel {
    pub fn chain(&self) -> TransitionView<'_> {
        TransitionView::new(&self.lags, &self.transitions.lambda_bar, &self.allocations)
    }

    pub fn num_states(&self) -> usize {
        self.spec.num_states
    }

    pub fn order(&self) -> usize {
        self.spec.max_order
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.lags.num_states() != self.spec.num_states || self.lags.order() != self.spec.max_order
        {
            return Err(HohsmmError::Schema("lag spec does not match model spec".into()));
        }
        self.transitions.validate()?;
        if self.transitions.lambda_bar.class_dims() != self.lags.k() {
            return Err(HohsmmError::Schema("transition tensor shape does not match k".into()));
        }
        self.allocations.validate(&self.lags)?;
        self.emissions.validate()?;
        if self.emissions.num_states() != self.spec.num_states
            || self.durations.xi.len() != self.spec.num_states
        {
            return Err(HohsmmError::Schema("parameter vectors have wrong length".into()));
        }
        if let Some(f) = self.failure_state {
            if f >= self.spec.num_states {
                return Err(HohsmmError::StateIndex {
                    index: f,
                    num_states: self.spec.num_states,
                });
            }
        }
        self.cluster_rule.validate()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: HohsmmModel = serde_json::from_str(text)?;
        model.validate()?;
        Ok(model)
    }
}

pub(crate) fn check_probability_vector(v: &[f64], tol: f64, what: &str) -> Result<()> {
    let sum: f64 = v.iter().sum();
    if v.iter().any(|&x| !(x >= 0.0)) || (sum - 1.0).abs() > tol {
        return Err(HohsmmError::InvalidSpec(format!(
            "{what} is not a probability vector (sum = {sum})"
        )));
    }
    Ok(())
}
