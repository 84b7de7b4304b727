use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist::{normal_draw, zero_truncated_poisson};
use crate::error::{HohsmmError, Result};
use crate::model::{
    AllocationDistributions, DurationParams, EmissionParams, HohsmmModel, LagSpec, ModelSpec,
    RowTensor, TransitionTensor,
};
use crate::segmentation::{ClusterRule, JumpSupport, LabeledSegmentation, Trajectory};

/// Settings of the benchmark generator: a full-order chain with
/// stick-broken transition rows, Poisson durations and normal emissions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub num_states: usize,
    pub order: usize,
    pub num_sequences: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub xi: Vec<f64>,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_states: 3,
            order: 3,
            num_sequences: 3,
            min_len: 800,
            max_len: 1000,
            mu: vec![-3.0, 0.0, 3.0],
            sigma: vec![0.5; 3],
            xi: vec![15.0, 10.0, 5.0],
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        ModelSpec::new(self.num_states, self.order, 0)?;
        let c = self.num_states;
        if self.mu.len() != c || self.sigma.len() != c || self.xi.len() != c {
            return Err(HohsmmError::InvalidConfig(format!(
                "mu, sigma and xi need {c} entries each"
            )));
        }
        if self.num_sequences == 0 {
            return Err(HohsmmError::InvalidConfig("need at least one sequence".into()));
        }
        if self.min_len > self.max_len || self.min_len < self.order + 2 {
            return Err(HohsmmError::InvalidConfig(format!(
                "length range [{}, {}] must be ordered and at least q + 2",
                self.min_len, self.max_len
            )));
        }
        EmissionParams::new(self.mu.clone(), self.sigma.clone())?;
        DurationParams::new(self.xi.clone())?;
        Ok(())
    }
}

/// Generator output with everything needed to score an inference run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub model: HohsmmModel,
    pub segmentations: Vec<LabeledSegmentation>,
}

impl GroundTruth {
    pub fn segment_counts(&self) -> Vec<usize> {
        self.segmentations.iter().map(|s| s.num_segments()).collect()
    }
}

fn stick(u: f64) -> f64 {
    u * u / (u * u + (1.0 - u) * (1.0 - u))
}

/// One raw row: entry `c < C - 1` takes the fraction `s(u_c)` of the mass left.
pub fn stick_row<R: Rng + ?Sized>(rng: &mut R, num_states: usize) -> Vec<f64> {
    let mut row = Vec::with_capacity(num_states);
    let mut left = 1.0;
    for _ in 0..num_states - 1 {
        let p = stick(rng.random::<f64>()) * left;
        row.push(p);
        left -= p;
    }
    row.push(left.max(0.0));
    row
}

/// Ground-truth model with full-order rows; rows whose self mass is
/// numerically one are redrawn.
pub fn ground_truth_model<R: Rng + ?Sized>(config: &SyntheticConfig, rng: &mut R) -> Result<HohsmmModel> {
    let c = config.num_states;
    let q = config.order;
    let lags = LagSpec::full(c, q);
    let mut lambda = RowTensor::zeros(lags.k(), c);
    for r in 0..lambda.num_rows() {
        let i = lambda.leading_class(r);
        let row = loop {
            let row = stick_row(rng, c);
            if row[i] < 1.0 - 1e-9 {
                break row;
            }
        };
        lambda.row_mut(r).copy_from_slice(&row);
    }
    let transitions = TransitionTensor::from_lambda(lambda, vec![1.0 / c as f64; c])?;
    let mut centers: Vec<Vec<f64>> = config.mu.iter().map(|&m| vec![m]).collect();
    centers.sort_by(|a, b| a[0].total_cmp(&b[0]));
    Ok(HohsmmModel {
        spec: ModelSpec::new(c, q, 0)?,
        allocations: AllocationDistributions::identity(&lags),
        lags,
        transitions,
        emissions: EmissionParams::new(config.mu.clone(), config.sigma.clone())?,
        durations: DurationParams::new(config.xi.clone())?,
        alpha_star: 1.0,
        jump_support: JumpSupport {
            alpha_min: 0.0,
            alpha_max: 1.0,
        },
        cluster_rule: ClusterRule::new(centers)?,
        failure_state: None,
    })
}

/// Uniform draw of `n` states with no two neighbours equal.
pub fn initial_states<R: Rng + ?Sized>(rng: &mut R, num_states: usize, n: usize) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::with_capacity(n);
    for t in 0..n {
        let s = match out.last() {
            None => rng.random_range(0..num_states),
            Some(&prev) => {
                let s = rng.random_range(0..num_states - 1);
                if s >= prev {
                    s + 1
                } else {
                    s
                }
            }
        };
        out.push(s);
        debug_assert!(t == 0 || out[t] != out[t - 1]);
    }
    out
}

/// Simulate one sequence of `len` points from `model`; the final segment is
/// cut at `len`.
pub fn simulate_sequence<R: Rng + ?Sized>(
    model: &HohsmmModel,
    len: usize,
    unit_id: &str,
    rng: &mut R,
) -> Result<(Trajectory, LabeledSegmentation)> {
    let q = model.order();
    let c = model.num_states();
    let chain = model.chain();
    let mut states = initial_states(rng, c, q);
    let mut durations = Vec::new();
    let mut boundaries = Vec::new();
    let mut values = Vec::with_capacity(len);
    let mut tau = 0;
    while values.len() < len {
        if tau >= states.len() {
            let next = chain.sample_next_state(&states[tau - q..tau], rng)?;
            states.push(next);
        }
        let s = states[tau];
        let d = (zero_truncated_poisson(rng, model.durations.xi[s]) as usize).min(len - values.len());
        boundaries.push(values.len());
        durations.push(d);
        for _ in 0..d {
            values.push(normal_draw(rng, model.emissions.mu[s], model.emissions.sigma[s]));
        }
        tau += 1;
    }
    states.truncate(tau);
    let seg = LabeledSegmentation {
        boundaries,
        durations,
        states,
    };
    Ok((Trajectory::univariate(unit_id, values)?, seg))
}

/// Draw a ground-truth model and `num_sequences` sequences from it.
pub fn generate_synthetic<R: Rng + ?Sized>(
    config: &SyntheticConfig,
    rng: &mut R,
) -> Result<(Vec<Trajectory>, GroundTruth)> {
    config.validate()?;
    let model = ground_truth_model(config, rng)?;
    let mut trajectories = Vec::with_capacity(config.num_sequences);
    let mut segmentations = Vec::with_capacity(config.num_sequences);
    for p in 0..config.num_sequences {
        let len = rng.random_range(config.min_len..=config.max_len);
        let (tr, seg) = simulate_sequence(&model, len, &(p + 1).to_string(), rng)?;
        trajectories.push(tr);
        segmentations.push(seg);
    }
    Ok((trajectories, GroundTruth { model, segmentations }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn truth_rows_are_self_excluded() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = ground_truth_model(&SyntheticConfig::default(), &mut rng).unwrap();
        model.transitions.validate().unwrap();
        for row in model.transitions.lambda.rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sequences_have_consistent_ground_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (trs, truth) = generate_synthetic(&SyntheticConfig::default(), &mut rng).unwrap();
        for (tr, seg) in trs.iter().zip(&truth.segmentations) {
            assert!((800..=1000).contains(&tr.len()));
            seg.validate(tr.len()).unwrap();
        }
    }

    #[test]
    fn emission_and_duration_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let config = SyntheticConfig {
            num_sequences: 1,
            min_len: 60_000,
            max_len: 60_000,
            ..SyntheticConfig::default()
        };
        let (trs, truth) = generate_synthetic(&config, &mut rng).unwrap();
        let seg = &truth.segmentations[0];
        let mut sums = [0.0; 3];
        let mut counts = [0usize; 3];
        let mut dur = [0usize; 3];
        let mut visits = [0usize; 3];
        let states = seg.pointwise_states();
        for (&s, &y) in states.iter().zip(trs[0].values()) {
            sums[s] += y;
            counts[s] += 1;
        }
        let last = seg.num_segments() - 1;
        for (tau, (&s, &d)) in seg.states.iter().zip(&seg.durations).enumerate() {
            if tau < last {
                dur[s] += d;
                visits[s] += 1;
            }
        }
        for s in 0..3 {
            assert!((sums[s] / counts[s] as f64 - config.mu[s]).abs() < 0.05);
            let mean = dur[s] as f64 / visits[s] as f64;
            // zero truncation raises the mean by xi e^{-xi} / (1 - e^{-xi})
            let xi = config.xi[s];
            assert!((mean - xi).abs() / xi < 0.05, "state {s}: {mean}");
        }
    }
}
