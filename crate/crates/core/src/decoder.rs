//! Posterior-mode decoding of new sequences under a trained model.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist::mode_smallest;
use crate::error::{HohsmmError, Result};
use crate::model::HohsmmModel;
use crate::sampler::{
    log_mean_exp, mh_update_alpha, sample_allocations_z, sample_states_c, AllocationMode,
    ParameterDraw, SequenceState, StateContext,
};
use crate::segmentation::{segment_with_rule, LabeledSegmentation, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub outer_iters: usize,
    pub sweeps: usize,
    pub burn_in: f64,
    pub initial_temperature: f64,
    pub temperature_decay: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            outer_iters: 20,
            sweeps: 100,
            burn_in: 0.5,
            initial_temperature: 10.0,
            temperature_decay: 0.9,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.outer_iters == 0 || self.sweeps == 0 {
            return Err(HohsmmError::InvalidConfig("decode iteration counts must be at least 1".into()));
        }
        if !(self.burn_in >= 0.0 && self.burn_in < 1.0) {
            return Err(HohsmmError::InvalidConfig("burn-in fraction must lie in [0, 1)".into()));
        }
        if !(self.initial_temperature >= 1.0) || !(self.temperature_decay > 0.0 && self.temperature_decay <= 1.0) {
            return Err(HohsmmError::InvalidConfig("invalid annealing schedule".into()));
        }
        Ok(())
    }

    fn burn(&self, n: usize) -> usize {
        ((n as f64 * self.burn_in).floor() as usize).min(n - 1)
    }

    fn temperature(&self, sweep: usize) -> f64 {
        (self.initial_temperature * self.temperature_decay.powi(sweep as i32)).max(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeResult {
    pub unit_id: String,
    pub segmentation: LabeledSegmentation,
    /// `state_histograms[τ][c]` counts the kept samples with `c_τ = c`.
    pub state_histograms: Vec<Vec<usize>>,
    pub decoded: Vec<usize>,
    pub alpha_star_local: f64,
    /// Segments whose decoded state equals the previous segment's; left unmerged.
    pub repeated_segments: Vec<usize>,
}

/// Most frequent state; ties go to the smallest index.
pub fn mode_per_segment(samples: &[usize]) -> Result<usize> {
    mode_smallest(samples).ok_or_else(|| HohsmmError::Empty("no samples for the segment mode".into()))
}

/// The model's own parameters as a single draw.
pub fn point_draw(model: &HohsmmModel) -> ParameterDraw {
    ParameterDraw {
        k: model.lags.k().to_vec(),
        lambda: model.transitions.lambda.clone(),
        lambda_bar: model.transitions.lambda_bar.clone(),
        lambda0: model.transitions.lambda0.clone(),
        pi: model.allocations.clone(),
        emissions: model.emissions.clone(),
    }
}

struct ChainOutput {
    segmentation: LabeledSegmentation,
    samples: Vec<Vec<usize>>,
    log_likelihoods: Vec<f64>,
}

fn run_chain<R: Rng + ?Sized>(
    model: &HohsmmModel,
    draws: &[ParameterDraw],
    traj: &Trajectory,
    alpha: f64,
    config: &DecodeConfig,
    rng: &mut R,
) -> Result<ChainOutput> {
    let q = model.order();
    let segmentation = segment_with_rule(traj, alpha, &model.cluster_rule);
    let mut seq = SequenceState::new(segmentation.stats(traj), segmentation.states.clone(), q);
    seq.init_soft_allocations(&draws[0].pi, rng);
    let burn = config.burn(config.sweeps);
    let mut samples = Vec::with_capacity(config.sweeps - burn);
    let mut log_likelihoods = Vec::with_capacity(config.sweeps - burn);
    for sweep in 0..config.sweeps {
        let d = &draws[sweep % draws.len()];
        let ctx = StateContext {
            lags: &model.lags,
            lambda_bar: &d.lambda_bar,
            emissions: &d.emissions,
            mode: AllocationMode::Soft(&d.pi),
        };
        sample_states_c(&mut seq, &ctx, config.temperature(sweep), rng)?;
        seq.sync_lag_one();
        sample_allocations_z(&mut seq, &model.lags, &d.lambda_bar, &d.pi, rng)?;
        if sweep >= burn {
            samples.push(seq.c.clone());
            log_likelihoods.push(seq.emission_loglik(&d.emissions));
        }
    }
    Ok(ChainOutput {
        segmentation,
        samples,
        log_likelihoods,
    })
}

/// Decode one trajectory. The threshold is walked by Metropolis-Hastings on
/// the draw-averaged likelihood; states are then sampled at the averaged
/// threshold, cycling through `draws`, and summarized by per-segment modes.
/// An empty `draws` falls back to the model's point estimates.
pub fn decode<R: Rng + ?Sized>(
    model: &HohsmmModel,
    draws: &[ParameterDraw],
    traj: &Trajectory,
    config: &DecodeConfig,
    rng: &mut R,
) -> Result<DecodeResult> {
    config.validate()?;
    let q = model.order();
    if traj.dim() != model.cluster_rule.dim() {
        return Err(HohsmmError::Schema(format!(
            "trajectory {} has dimension {}, the model expects {}",
            traj.unit_id,
            traj.dim(),
            model.cluster_rule.dim()
        )));
    }
    if traj.len() < q + 2 {
        return Err(HohsmmError::TrajectoryTooShort {
            unit: traj.unit_id.clone(),
            length: traj.len(),
            needed: q + 2,
        });
    }
    let fallback;
    let draws = if draws.is_empty() {
        fallback = [point_draw(model)];
        &fallback[..]
    } else {
        draws
    };
    if let Some(bad) = draws.iter().find(|d| d.k != model.lags.k()) {
        return Err(HohsmmError::Schema(format!(
            "posterior draw has k = {:?}, model has {:?}",
            bad.k,
            model.lags.k()
        )));
    }
    let support = model.jump_support;
    let mut alpha = support.sample(rng);
    let mut log_lik = -1e10;
    let mut chain = Vec::with_capacity(config.outer_iters);
    for _ in 0..config.outer_iters {
        let proposed = support.sample(rng);
        let out = run_chain(model, draws, traj, proposed, config, rng)?;
        let ll = log_mean_exp(&out.log_likelihoods)?;
        (alpha, log_lik, _) = mh_update_alpha(rng, alpha, log_lik, proposed, ll);
        chain.push(alpha);
    }
    let burn = config.burn(chain.len());
    let alpha_local = chain[burn..].iter().sum::<f64>() / (chain.len() - burn) as f64;

    let out = run_chain(model, draws, traj, alpha_local, config, rng)?;
    let c = model.num_states();
    let segments = out.segmentation.num_segments();
    let mut state_histograms = vec![vec![0usize; c]; segments];
    for sample in &out.samples {
        for (tau, &s) in sample.iter().enumerate() {
            state_histograms[tau][s] += 1;
        }
    }
    let decoded = (0..segments)
        .map(|tau| {
            let column: Vec<usize> = out.samples.iter().map(|s| s[tau]).collect();
            mode_per_segment(&column)
        })
        .collect::<Result<Vec<_>>>()?;
    let repeated_segments = (1..segments).filter(|&t| decoded[t] == decoded[t - 1]).collect();
    Ok(DecodeResult {
        unit_id: traj.unit_id.clone(),
        segmentation: out.segmentation,
        state_histograms,
        decoded,
        alpha_star_local: alpha_local,
        repeated_segments,
    })
}

impl DecodeResult {
    /// The last `q` decoded states, the history used for RUL simulation.
    pub fn tail(&self, q: usize) -> Result<Vec<usize>> {
        if self.decoded.len() < q {
            return Err(HohsmmError::TrajectoryTooShort {
                unit: self.unit_id.clone(),
                length: self.decoded.len(),
                needed: q,
            });
        }
        Ok(self.decoded[self.decoded.len() - q..].to_vec())
    }

    /// Decoded state at every time point.
    pub fn pointwise(&self) -> Vec<usize> {
        self.decoded
            .iter()
            .zip(&self.segmentation.durations)
            .flat_map(|(&s, &d)| std::iter::repeat_n(s, d))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segment_mode_tie_rule() {
        assert_eq!(mode_per_segment(&[0, 0, 1]).unwrap(), 0);
        assert_eq!(mode_per_segment(&[1, 2, 2, 1]).unwrap(), 1);
        assert!(mode_per_segment(&[]).is_err());
    }
}
