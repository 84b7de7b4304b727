//! Two-stage Gibbs inference with an outer Metropolis-Hastings walk over the
//! jump threshold.
//!
//! Each outer iteration proposes a threshold from the uniform support,
//! re-segments every training sequence, runs stage 1 (lag selection under
//! hard allocations) and stage 2 (all parameters with latent allocations),
//! and accepts the threshold on the posterior-mean emission likelihood. A
//! final run at the averaged threshold produces the returned model.

mod counts;
mod ssvs;
mod states;
mod updates;

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use counts::{count_transitions, TransitionCounts};
pub use ssvs::{
    canonicalize, collapsed_log_likelihood, hard_counts, ln_stirling2, log_partition_prior,
    quantile_partition, update_partitions,
};
pub use states::{
    pooled_state_stats, sample_allocations_z, sample_states_c, AllocationMode, SequenceState,
    StateContext,
};
pub use updates::{
    sample_auxiliary_sum, sample_emission_params, sample_fresh_lambda_row, sample_lambda0,
    sample_lambda_row, sample_pi, sample_table_count, GeometricSupport, LambdaRow, NormalInvGamma,
};

use crate::dist::{log_sum_exp, mode_smallest};
use crate::error::{HohsmmError, Result};
use crate::model::{
    AllocationDistributions, DurationParams, EmissionParams, HohsmmModel, Hyperparams, LagSpec,
    ModelSpec, RowTensor, TransitionTensor,
};
use crate::segmentation::{
    jump_support, merge_runs, segment_all, ClusterRule, JumpSupport, LabeledSegmentation,
    SegmentStats, Trajectory,
};

/// Iteration counts, priors and schedules for [`fit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GibbsConfig {
    /// Outer threshold iterations `l`.
    pub outer_iters: usize,
    pub stage1_iters: usize,
    pub stage2_iters: usize,
    /// Fraction of every chain discarded before summaries are taken.
    pub burn_in: f64,
    /// Defaults to [`Hyperparams::defaults`] for the model size.
    pub hyper: Option<Hyperparams>,
    pub initial_temperature: f64,
    pub temperature_decay: f64,
    pub geometric_support: GeometricSupport,
    /// Partition proposals per lag per stage-1 sweep.
    pub ssvs_moves: usize,
    /// Tail window used to identify the failure state.
    pub failure_window: usize,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        GibbsConfig {
            outer_iters: 50,
            stage1_iters: 200,
            stage2_iters: 200,
            burn_in: 0.5,
            hyper: None,
            initial_temperature: 10.0,
            temperature_decay: 0.9,
            geometric_support: GeometricSupport::Failures,
            ssvs_moves: 5,
            failure_window: 5,
        }
    }
}

impl GibbsConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(HohsmmError::InvalidConfig(msg.into()));
        if self.outer_iters == 0 || self.stage1_iters == 0 || self.stage2_iters == 0 {
            return bad("iteration counts must be at least 1");
        }
        if !(self.burn_in >= 0.0 && self.burn_in < 1.0) {
            return bad("burn-in fraction must lie in [0, 1)");
        }
        if !(self.initial_temperature >= 1.0) || !(self.temperature_decay > 0.0 && self.temperature_decay <= 1.0) {
            return bad("annealing needs initial temperature >= 1 and decay in (0, 1]");
        }
        if self.failure_window == 0 {
            return bad("failure window must be at least 1");
        }
        if let Some(h) = &self.hyper {
            h.validate(1)?;
        }
        Ok(())
    }

    /// Number of leading iterations discarded out of `iters`.
    pub fn burn_in_count(&self, iters: usize) -> usize {
        ((iters as f64 * self.burn_in).floor() as usize).min(iters - 1)
    }

    /// Annealing temperature at a 0-based sweep of a stage.
    pub fn temperature(&self, sweep: usize) -> f64 {
        (self.initial_temperature * self.temperature_decay.powi(sweep as i32)).max(1.0)
    }

    pub fn hyper_for(&self, spec: &ModelSpec) -> Result<Hyperparams> {
        let h = self
            .hyper
            .clone()
            .unwrap_or_else(|| Hyperparams::defaults(spec.num_states, spec.max_order));
        h.validate(spec.max_order)?;
        Ok(h)
    }
}

/// One stored set of transition, allocation and emission parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterDraw {
    pub k: Vec<usize>,
    pub lambda: RowTensor,
    pub lambda_bar: RowTensor,
    pub lambda0: Vec<f64>,
    pub pi: AllocationDistributions,
    pub emissions: EmissionParams,
}

impl ParameterDraw {
    pub fn lags(&self) -> Result<LagSpec> {
        LagSpec::new(self.k.clone(), self.emissions.num_states())
    }
}

/// A post-burn-in stage-2 sweep of the final run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawRecord {
    pub sweep: usize,
    pub alpha: f64,
    pub log_likelihood: f64,
    #[serde(flatten)]
    pub params: ParameterDraw,
    pub states: Vec<Vec<usize>>,
    pub allocations: Vec<Vec<Vec<usize>>>,
}

/// Summary of one outer threshold iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterRecord {
    pub iteration: usize,
    pub proposed_alpha: f64,
    pub proposed_log_likelihood: Option<f64>,
    pub accepted: bool,
    pub alpha: f64,
    pub log_likelihood: f64,
    pub k: Option<Vec<usize>>,
    pub inclusion: Option<Vec<f64>>,
}

/// Line of the newline-delimited trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceRecord {
    Outer(OuterRecord),
    Draw(DrawRecord),
}

/// Everything the sampler keeps besides the point-estimate model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub jump_support: JumpSupport,
    pub alpha_chain: Vec<f64>,
    pub alpha_star: f64,
    pub outer: Vec<OuterRecord>,
    /// Stage-1 `k` at every sweep of the final run.
    pub k_trace: Vec<Vec<usize>>,
    /// Per-lag inclusion probabilities of the final run (lag 1 first).
    pub inclusion: Vec<f64>,
    pub draws: Vec<DrawRecord>,
    /// Modal states of the final run after merging equal neighbours.
    pub segmentations: Vec<LabeledSegmentation>,
    /// Segment counts at the threshold, before modal merging.
    pub raw_segment_counts: Vec<usize>,
}

impl PosteriorDraws {
    pub fn trace_records(&self) -> impl Iterator<Item = TraceRecord> + '_ {
        self.outer
            .iter()
            .cloned()
            .map(TraceRecord::Outer)
            .chain(self.draws.iter().cloned().map(TraceRecord::Draw))
    }

    pub fn parameter_draws(&self) -> Vec<ParameterDraw> {
        self.draws.iter().map(|d| d.params.clone()).collect()
    }
}

/// Result of running both stages on a fixed segmentation.
#[derive(Debug, Clone)]
pub struct InnerRun {
    pub lags: LagSpec,
    pub partitions: Vec<Vec<usize>>,
    pub k_trace: Vec<Vec<usize>>,
    pub inclusion: Vec<f64>,
    pub draws: Vec<DrawRecord>,
    pub sequences: Vec<SequenceState>,
}

impl InnerRun {
    /// Log of the draw-averaged emission likelihood.
    pub fn log_likelihood(&self) -> Result<f64> {
        let values: Vec<f64> = self.draws.iter().map(|d| d.log_likelihood).collect();
        log_mean_exp(&values)
    }
}

/// `ln((1/N) sum_j exp(v_j))`.
pub fn log_mean_exp(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(HohsmmError::Empty("no posterior draws for the likelihood estimate".into()));
    }
    Ok(log_sum_exp(values) - (values.len() as f64).ln())
}

/// Posterior-mean likelihood estimate: the emission likelihood of every
/// sequence under each draw's states and parameters, averaged over draws
/// in linear space.
pub fn marginal_likelihood_estimate(draws: &[DrawRecord], stats: &[Vec<SegmentStats>]) -> Result<f64> {
    let values: Vec<f64> = draws
        .iter()
        .map(|d| {
            d.states
                .iter()
                .zip(stats)
                .flat_map(|(c, st)| c.iter().zip(st))
                .map(|(&s, st)| d.params.emissions.segment_loglik(s, st))
                .sum()
        })
        .collect();
    log_mean_exp(&values)
}

/// Independence Metropolis-Hastings step for the threshold; prior and
/// proposal ratios cancel. Returns `(alpha, log_likelihood, accepted)`.
pub fn mh_update_alpha<R: Rng + ?Sized>(
    rng: &mut R,
    current_alpha: f64,
    current_ll: f64,
    proposed_alpha: f64,
    proposed_ll: f64,
) -> (f64, f64, bool) {
    let log_ratio = proposed_ll - current_ll;
    if log_ratio >= 0.0 || rng.random::<f64>() < log_ratio.exp() {
        (proposed_alpha, proposed_ll, true)
    } else {
        (current_alpha, current_ll, false)
    }
}

/// Poisson intensities as the pooled mean duration of each state.
pub fn duration_mle(segmentations: &[LabeledSegmentation], num_states: usize) -> Result<DurationParams> {
    let mut total = vec![0usize; num_states];
    let mut count = vec![0usize; num_states];
    for seg in segmentations {
        for (&s, &d) in seg.states.iter().zip(&seg.durations) {
            total[s] += d;
            count[s] += 1;
        }
    }
    if let Some(missing) = count.iter().position(|&n| n == 0) {
        return Err(HohsmmError::MissingState(missing));
    }
    DurationParams::new(total.iter().zip(&count).map(|(&t, &n)| t as f64 / n as f64).collect())
}

fn check_trajectories(trajectories: &[Trajectory], order: usize) -> Result<()> {
    if trajectories.is_empty() {
        return Err(HohsmmError::Empty("no training trajectories".into()));
    }
    for tr in trajectories {
        if tr.dim() != 1 {
            return Err(HohsmmError::Schema(format!(
                "trajectory {} has dimension {}; fuse features to one channel first",
                tr.unit_id,
                tr.dim()
            )));
        }
        if tr.len() < order + 2 {
            return Err(HohsmmError::TrajectoryTooShort {
                unit: tr.unit_id.clone(),
                length: tr.len(),
                needed: order + 2,
            });
        }
    }
    Ok(())
}

/// Build the sampler state of each sequence from a labeled segmentation.
pub fn sequence_states(
    trajectories: &[Trajectory],
    segmentations: &[LabeledSegmentation],
    order: usize,
) -> Vec<SequenceState> {
    trajectories
        .iter()
        .zip(segmentations)
        .map(|(tr, seg)| SequenceState::new(seg.stats(tr), seg.states.clone(), order))
        .collect()
}

fn most_frequent<T: Ord + Clone>(items: impl Iterator<Item = T>) -> Option<T> {
    let mut tally: BTreeMap<T, usize> = BTreeMap::new();
    for item in items {
        *tally.entry(item).or_default() += 1;
    }
    let best = *tally.values().max()?;
    tally.into_iter().find(|(_, n)| *n == best).map(|(k, _)| k)
}

fn fresh_rows<R: Rng + ?Sized>(
    rng: &mut R,
    counts: &TransitionCounts,
    lambda0: &[f64],
    lags: &LagSpec,
    alpha_conc: f64,
) -> (RowTensor, RowTensor) {
    let c = lags.num_states();
    let mut lambda = RowTensor::zeros(lags.k(), c);
    let mut lambda_bar = RowTensor::zeros(lags.k(), c);
    updates::sample_lambda_rows(
        rng,
        counts,
        lambda0,
        &mut lambda,
        &mut lambda_bar,
        alpha_conc,
        GeometricSupport::Failures,
        true,
    );
    (lambda, lambda_bar)
}

/// Run stage 1 and stage 2 on fixed segment statistics, starting from the
/// states already stored in `sequences`.
pub fn run_stages<R: Rng + ?Sized>(
    mut sequences: Vec<SequenceState>,
    spec: &ModelSpec,
    config: &GibbsConfig,
    alpha: f64,
    rng: &mut R,
) -> Result<InnerRun> {
    let c = spec.num_states;
    let q = spec.max_order;
    let hyper = config.hyper_for(spec)?;
    let all_stats = sequences
        .iter()
        .flat_map(|s| s.stats.iter())
        .fold(SegmentStats::from_values(&[]), |acc, st| acc.merge(st));
    let prior = NormalInvGamma::empirical(&all_stats);
    let ln_s = ln_stirling2(c);

    // stage 1: hard allocations, partition search
    let mut partitions: Vec<Vec<usize>> = (0..q)
        .map(|j| {
            if j == 0 {
                (0..c).collect()
            } else {
                quantile_partition(c, 2.min(c))
            }
        })
        .collect();
    let mut lambda0 = vec![1.0 / c as f64; c];
    for seq in sequences.iter_mut() {
        seq.set_hard_allocations(&partitions);
    }
    let mut lags = ssvs::lags_of(&partitions);
    let (mut lambda, mut lambda_bar) =
        fresh_rows(rng, &hard_counts(&sequences, &partitions), &lambda0, &lags, hyper.alpha_conc);

    let burn1 = config.burn_in_count(config.stage1_iters);
    let mut k_trace = Vec::with_capacity(config.stage1_iters);
    let mut kept: Vec<Vec<Vec<usize>>> = Vec::new();
    for sweep in 0..config.stage1_iters {
        let moved = if q > 1 {
            update_partitions(
                rng,
                &sequences,
                &mut partitions,
                &lambda0,
                hyper.alpha_conc,
                hyper.phi,
                config.ssvs_moves,
                &ln_s,
            ) > 0
        } else {
            false
        };
        let counts = hard_counts(&sequences, &partitions);
        if moved {
            lags = ssvs::lags_of(&partitions);
            (lambda, lambda_bar) = fresh_rows(rng, &counts, &lambda0, &lags, hyper.alpha_conc);
        } else {
            updates::sample_lambda_rows(
                rng,
                &counts,
                &lambda0,
                &mut lambda,
                &mut lambda_bar,
                hyper.alpha_conc,
                config.geometric_support,
                false,
            );
        }
        lambda0 = sample_lambda0(rng, &counts, &lambda0, hyper.alpha_conc, hyper.alpha0_conc).0;
        let emissions = sample_emission_params(rng, &pooled_state_stats(&sequences, c), &prior);
        let ctx = StateContext {
            lags: &lags,
            lambda_bar: &lambda_bar,
            emissions: &emissions,
            mode: AllocationMode::Hard(&partitions),
        };
        let temperature = config.temperature(sweep);
        for seq in sequences.iter_mut() {
            sample_states_c(seq, &ctx, temperature, rng)?;
        }
        k_trace.push(lags.k().to_vec());
        if sweep >= burn1 {
            kept.push(partitions.clone());
        }
    }
    let inclusion: Vec<f64> = (0..q)
        .map(|j| {
            if j == 0 {
                1.0
            } else {
                kept.iter().filter(|p| ssvs::num_blocks(&p[j]) > 1).count() as f64 / kept.len() as f64
            }
        })
        .collect();
    let modal_k = most_frequent(kept.iter().map(|p| ssvs::lags_of(p).k().to_vec()))
        .expect("at least one kept sweep");
    partitions = most_frequent(
        kept.iter()
            .filter(|p| ssvs::lags_of(p).k() == modal_k.as_slice())
            .cloned(),
    )
    .expect("modal k is attained");
    let lags = LagSpec::new(modal_k, c)?;

    // stage 2: latent allocations with k fixed
    for seq in sequences.iter_mut() {
        seq.set_hard_allocations(&partitions);
        seq.sync_lag_one();
    }
    let c_all = |seqs: &[SequenceState]| seqs.iter().map(|s| s.c.clone()).collect::<Vec<_>>();
    let z_all = |seqs: &[SequenceState]| seqs.iter().map(|s| s.z.clone()).collect::<Vec<_>>();
    let mut lambda = RowTensor::zeros(lags.k(), c);
    let mut lambda_bar = RowTensor::zeros(lags.k(), c);
    let burn2 = config.burn_in_count(config.stage2_iters);
    let mut draws = Vec::with_capacity(config.stage2_iters - burn2);
    for sweep in 0..config.stage2_iters {
        let cs = c_all(&sequences);
        let zs = z_all(&sequences);
        let counts = count_transitions(&cs, &zs, &lags)?;
        updates::sample_lambda_rows(
            rng,
            &counts,
            &lambda0,
            &mut lambda,
            &mut lambda_bar,
            hyper.alpha_conc,
            config.geometric_support,
            sweep == 0,
        );
        lambda0 = sample_lambda0(rng, &counts, &lambda0, hyper.alpha_conc, hyper.alpha0_conc).0;
        let alloc = sample_pi(rng, &cs, &zs, &lags, &hyper.gamma);
        let emissions = sample_emission_params(rng, &pooled_state_stats(&sequences, c), &prior);
        let ctx = StateContext {
            lags: &lags,
            lambda_bar: &lambda_bar,
            emissions: &emissions,
            mode: AllocationMode::Soft(&alloc),
        };
        let temperature = config.temperature(sweep);
        for seq in sequences.iter_mut() {
            sample_states_c(seq, &ctx, temperature, rng)?;
            seq.sync_lag_one();
            sample_allocations_z(seq, &lags, &lambda_bar, &alloc, rng)?;
        }
        debug_assert!(TransitionTensor {
            lambda: lambda.clone(),
            lambda_bar: lambda_bar.clone(),
            lambda0: lambda0.clone()
        }
        .validate()
        .is_ok());
        if sweep >= burn2 {
            let log_likelihood: f64 = sequences.iter().map(|s| s.emission_loglik(&emissions)).sum();
            if !log_likelihood.is_finite() {
                return Err(HohsmmError::NonFinite(format!(
                    "emission log-likelihood {log_likelihood} at stage-2 sweep {sweep}"
                )));
            }
            draws.push(DrawRecord {
                sweep,
                alpha,
                log_likelihood,
                params: ParameterDraw {
                    k: lags.k().to_vec(),
                    lambda: lambda.clone(),
                    lambda_bar: lambda_bar.clone(),
                    lambda0: lambda0.clone(),
                    pi: alloc.clone(),
                    emissions: emissions.clone(),
                },
                states: c_all(&sequences),
                allocations: z_all(&sequences),
            });
        }
    }
    Ok(InnerRun {
        lags,
        partitions,
        k_trace,
        inclusion,
        draws,
        sequences,
    })
}

/// Segment at `alpha` and run both stages; `None` when the threshold leaves
/// fewer distinct segments than states.
fn run_at_alpha<R: Rng + ?Sized>(
    trajectories: &[Trajectory],
    spec: &ModelSpec,
    config: &GibbsConfig,
    alpha: f64,
    rng: &mut R,
) -> Result<Option<(ClusterRule, Vec<LabeledSegmentation>, InnerRun)>> {
    let (rule, segs) = match segment_all(trajectories, alpha, spec.num_states, rng) {
        Ok(x) => x,
        Err(HohsmmError::UnderPopulated { .. }) => return Ok(None),
        Err(e) => return Err(e),
    };
    let seqs = sequence_states(trajectories, &segs, spec.max_order);
    let run = run_stages(seqs, spec, config, alpha, rng)?;
    Ok(Some((rule, segs, run)))
}

fn mean_tensor<'a>(tensors: impl Iterator<Item = &'a RowTensor>, like: &RowTensor) -> RowTensor {
    let mut out = RowTensor::zeros(like.class_dims(), like.num_states());
    let mut sum = vec![0.0; like.as_slice().len()];
    for t in tensors {
        for (s, x) in sum.iter_mut().zip(t.as_slice()) {
            *s += x;
        }
    }
    for r in 0..out.num_rows() {
        let c = like.num_states();
        let row = &sum[r * c..(r + 1) * c];
        let total: f64 = row.iter().sum();
        out.row_mut(r).iter_mut().zip(row).for_each(|(o, s)| *o = s / total);
    }
    out
}

fn mean_vec<'a>(vs: impl Iterator<Item = &'a Vec<f64>>) -> Vec<f64> {
    let mut sum: Vec<f64> = Vec::new();
    let mut n = 0.0;
    for v in vs {
        if sum.is_empty() {
            sum = vec![0.0; v.len()];
        }
        sum.iter_mut().zip(v).for_each(|(s, x)| *s += x);
        n += 1.0;
    }
    sum.iter().map(|s| s / n).collect()
}

/// Posterior-mean parameters of a set of draws sharing one `k`.
pub fn posterior_mean(draws: &[ParameterDraw]) -> Result<ParameterDraw> {
    let first = draws
        .first()
        .ok_or_else(|| HohsmmError::Empty("no draws to average".into()))?;
    let lambda = mean_tensor(draws.iter().map(|d| &d.lambda), &first.lambda);
    let lambda_bar = mean_tensor(draws.iter().map(|d| &d.lambda_bar), &first.lambda_bar);
    let lambda0 = mean_vec(draws.iter().map(|d| &d.lambda0));
    let pi = first
        .pi
        .pi
        .iter()
        .enumerate()
        .map(|(j, per_state)| {
            (0..per_state.len())
                .map(|s| {
                    let row = mean_vec(draws.iter().map(|d| &d.pi.pi[j][s]));
                    let total: f64 = row.iter().sum();
                    row.iter().map(|x| x / total).collect()
                })
                .collect()
        })
        .collect();
    let emissions = EmissionParams::new(
        mean_vec(draws.iter().map(|d| &d.emissions.mu)),
        mean_vec(draws.iter().map(|d| &d.emissions.sigma)),
    )?;
    Ok(ParameterDraw {
        k: first.k.clone(),
        lambda,
        lambda_bar,
        lambda0,
        pi: AllocationDistributions { pi },
        emissions,
    })
}

/// Per-segment modal state over draws, merged into a segmentation.
pub fn modal_segmentation(
    draws: &[DrawRecord],
    sequence: usize,
    durations: &[usize],
) -> LabeledSegmentation {
    let modal: Vec<usize> = (0..durations.len())
        .map(|tau| {
            let samples: Vec<usize> = draws.iter().map(|d| d.states[sequence][tau]).collect();
            mode_smallest(&samples).expect("at least one draw")
        })
        .collect();
    let (states, durations) = merge_runs(&modal, durations);
    let mut boundaries = Vec::with_capacity(states.len());
    let mut start = 0;
    for d in &durations {
        boundaries.push(start);
        start += d;
    }
    LabeledSegmentation {
        boundaries,
        durations,
        states,
    }
}

/// Full training run. Returns the point-estimate model and the stored draws.
pub fn fit<R: Rng + ?Sized>(
    trajectories: &[Trajectory],
    spec: &ModelSpec,
    config: &GibbsConfig,
    rng: &mut R,
) -> Result<(HohsmmModel, PosteriorDraws)> {
    spec.validate()?;
    config.validate()?;
    config.hyper_for(spec)?;
    check_trajectories(trajectories, spec.max_order)?;
    let support = jump_support(trajectories)?;

    let mut alpha = support.sample(rng);
    let mut log_lik = -1e10;
    let mut chain = Vec::with_capacity(config.outer_iters);
    let mut outer = Vec::with_capacity(config.outer_iters);
    for iteration in 0..config.outer_iters {
        let proposed = support.sample(rng);
        let run = run_at_alpha(trajectories, spec, config, proposed, rng)?;
        let (proposed_ll, k, inclusion) = match &run {
            Some((_, _, inner)) => (
                Some(inner.log_likelihood()?),
                Some(inner.lags.k().to_vec()),
                Some(inner.inclusion.clone()),
            ),
            None => (None, None, None),
        };
        let accepted = match proposed_ll {
            Some(ll) => {
                let (a, l, acc) = mh_update_alpha(rng, alpha, log_lik, proposed, ll);
                alpha = a;
                log_lik = l;
                acc
            }
            None => false,
        };
        chain.push(alpha);
        outer.push(OuterRecord {
            iteration,
            proposed_alpha: proposed,
            proposed_log_likelihood: proposed_ll,
            accepted,
            alpha,
            log_likelihood: log_lik,
            k,
            inclusion,
        });
    }
    let burn = config.burn_in_count(chain.len());
    let alpha_star = chain[burn..].iter().sum::<f64>() / (chain.len() - burn) as f64;

    let (rule, raw_segs, run) = run_at_alpha(trajectories, spec, config, alpha_star, rng)?.ok_or(
        HohsmmError::UnderPopulated {
            needed: spec.num_states,
            found: 0,
        },
    )?;
    let segmentations: Vec<LabeledSegmentation> = raw_segs
        .iter()
        .enumerate()
        .map(|(p, seg)| modal_segmentation(&run.draws, p, &seg.durations))
        .collect();
    let durations = duration_mle(&segmentations, spec.num_states)?;
    let state_lists: Vec<Vec<usize>> = segmentations.iter().map(|s| s.states.clone()).collect();
    let failure_state =
        crate::rul::identify_failure_state(&state_lists, config.failure_window, spec.num_states).ok();

    let mean = posterior_mean(&run.parameter_draws())?;
    let transitions = TransitionTensor {
        lambda: mean.lambda,
        lambda_bar: mean.lambda_bar,
        lambda0: mean.lambda0,
    };
    let model = HohsmmModel {
        spec: spec.clone(),
        lags: run.lags.clone(),
        transitions,
        allocations: mean.pi,
        emissions: mean.emissions,
        durations,
        alpha_star,
        jump_support: support,
        cluster_rule: rule,
        failure_state,
    };
    model.validate()?;
    let draws = PosteriorDraws {
        jump_support: support,
        alpha_chain: chain,
        alpha_star,
        outer,
        k_trace: run.k_trace,
        inclusion: run.inclusion,
        raw_segment_counts: raw_segs.iter().map(|s| s.num_segments()).collect(),
        draws: run.draws,
        segmentations,
    };
    Ok((model, draws))
}

impl InnerRun {
    pub fn parameter_draws(&self) -> Vec<ParameterDraw> {
        self.draws.iter().map(|d| d.params.clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn alpha_mh_boundaries() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(mh_update_alpha(&mut rng, 1.0, -10.0, 2.0, -5.0).2);
        assert!(!(0..1000).any(|_| mh_update_alpha(&mut rng, 1.0, 0.0, 2.0, -1e18).2));
    }

    #[test]
    fn alpha_mh_half_acceptance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let trials = 100_000;
        let hits = (0..trials)
            .filter(|_| mh_update_alpha(&mut rng, 1.0, 0.0, 2.0, 0.5f64.ln()).2)
            .count();
        assert!((hits as f64 / trials as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn log_mean_exp_of_identical_terms() {
        assert!((log_mean_exp(&[-3.0]).unwrap() + 3.0).abs() < 1e-12);
        assert!((log_mean_exp(&[-3.0; 5]).unwrap() + 3.0).abs() < 1e-12);
        assert!(log_mean_exp(&[]).is_err());
    }

    #[test]
    fn duration_means_and_missing_state() {
        let seg = |states: Vec<usize>, durations: Vec<usize>| LabeledSegmentation {
            boundaries: vec![0; states.len()],
            durations,
            states,
        };
        let d = duration_mle(&[seg(vec![0, 1], vec![14, 3]), seg(vec![1, 0], vec![5, 16])], 2).unwrap();
        assert_eq!(d.xi, vec![15.0, 4.0]);
        let err = duration_mle(&[seg(vec![0, 1], vec![1, 1])], 3).unwrap_err();
        assert!(matches!(err, HohsmmError::MissingState(2)));
    }

    #[test]
    fn burn_in_and_schedule() {
        let cfg = GibbsConfig::default();
        assert_eq!(cfg.burn_in_count(200), 100);
        assert_eq!(cfg.temperature(0), 10.0);
        assert_eq!(cfg.temperature(100), 1.0);
        assert!((cfg.temperature(1) - 9.0).abs() < 1e-12);
    }
}
