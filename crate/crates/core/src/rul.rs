//! Failure-state identification and Monte-Carlo remaining useful life.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::zero_truncated_poisson;
use crate::error::{HohsmmError, Result};
use crate::model::{HohsmmModel, TransitionTable};

/// Most frequent value with ties going to the largest state index.
fn mode_largest(values: &[usize], num_states: usize) -> usize {
    let mut counts = vec![0usize; num_states];
    for &v in values {
        counts[v] += 1;
    }
    let best = *counts.iter().max().unwrap_or(&0);
    counts.iter().rposition(|&n| n == best).unwrap_or(0)
}

/// Modal state of the last `f` super-states of each sequence, then the mode
/// across sequences. Ties at either level go to the highest state index,
/// which under the canonical ordering is the most degraded center.
pub fn identify_failure_state(sequences: &[Vec<usize>], f: usize, num_states: usize) -> Result<usize> {
    if sequences.is_empty() {
        return Err(HohsmmError::Empty("no sequences for failure-state identification".into()));
    }
    let tails = sequences
        .iter()
        .enumerate()
        .map(|(p, s)| {
            if s.len() < f {
                return Err(HohsmmError::FailureWindow {
                    sequence: p,
                    segments: s.len(),
                    window: f,
                });
            }
            Ok(mode_largest(&s[s.len() - f..], num_states))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(mode_largest(&tails, num_states))
}

/// Options for path simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RulConfig {
    pub num_paths: usize,
    pub max_steps: usize,
    /// Draw each visited duration instead of using its mean.
    pub sampled_durations: bool,
}

impl Default for RulConfig {
    fn default() -> Self {
        RulConfig {
            num_paths: 100,
            max_steps: 10_000,
            sampled_durations: false,
        }
    }
}

/// One simulated path from the current history to the failure state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedPath {
    pub states: Vec<usize>,
    pub rul: f64,
    pub censored: bool,
}

/// Draw future super-states until `failure_state` is first entered, adding
/// the duration of every visited state including the failure state itself.
pub fn simulate_path<R: rand::Rng + ?Sized>(
    model: &HohsmmModel,
    table: &TransitionTable,
    history: &[usize],
    failure_state: usize,
    config: &RulConfig,
    rng: &mut R,
) -> Result<SimulatedPath> {
    let q = model.order();
    if history.len() != q {
        return Err(HohsmmError::HistoryLength {
            got: history.len(),
            expected: q,
        });
    }
    let mut path = SimulatedPath {
        states: Vec::new(),
        rul: 0.0,
        censored: false,
    };
    if history[q - 1] == failure_state {
        return Ok(path);
    }
    let mut code = table.encode(history);
    loop {
        if path.states.len() >= config.max_steps {
            path.censored = true;
            return Ok(path);
        }
        let next = crate::dist::sample_categorical(rng, table.row(code));
        path.rul += if config.sampled_durations {
            zero_truncated_poisson(rng, model.durations.xi[next]) as f64
        } else {
            model.durations.mean(next)
        };
        path.states.push(next);
        if next == failure_state {
            return Ok(path);
        }
        code = table.shift(code, next);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RulEstimate {
    pub mean_rul: f64,
    pub per_path_ruls: Vec<f64>,
    pub num_paths: usize,
    pub path_lengths: Vec<usize>,
    pub num_censored: usize,
    pub failure_state: usize,
}

/// Average RUL over `num_paths` simulated paths. Path `i` uses the ChaCha
/// stream `i` of `seed`, so the result does not depend on thread scheduling.
pub fn estimate_rul(
    model: &HohsmmModel,
    history: &[usize],
    failure_state: usize,
    config: &RulConfig,
    seed: u64,
) -> Result<RulEstimate> {
    if config.num_paths == 0 {
        return Err(HohsmmError::InvalidConfig("need at least one path".into()));
    }
    let c = model.num_states();
    if failure_state >= c {
        return Err(HohsmmError::StateIndex {
            index: failure_state,
            num_states: c,
        });
    }
    model.chain().transition_distribution(history)?;
    let table = TransitionTable::build(model.chain())?;
    let paths = (0..config.num_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            simulate_path(model, &table, history, failure_state, config, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let finished: Vec<&SimulatedPath> = paths.iter().filter(|p| !p.censored).collect();
    if finished.is_empty() {
        return Err(HohsmmError::AllPathsCensored(paths.len()));
    }
    let per_path_ruls: Vec<f64> = finished.iter().map(|p| p.rul).collect();
    Ok(RulEstimate {
        mean_rul: per_path_ruls.iter().sum::<f64>() / per_path_ruls.len() as f64,
        path_lengths: finished.iter().map(|p| p.states.len()).collect(),
        num_paths: config.num_paths,
        num_censored: paths.len() - finished.len(),
        per_path_ruls,
        failure_state,
    })
}

/// Piecewise-linear benchmark `RUL(t) = min(cap, total_life - t)` for
/// `t = 1..=total_life`.
pub fn piecewise_true_rul(total_life: usize, cap: f64) -> Vec<f64> {
    (1..=total_life)
        .map(|t| cap.min((total_life - t) as f64))
        .collect()
}
