//! Segment-level updates of super-states `c` and lag allocations `z`.

use rand::Rng;

use crate::dist::sample_log_weights;
use crate::error::Result;
use crate::model::{AllocationDistributions, EmissionParams, LagSpec, RowTensor};
use crate::segmentation::SegmentStats;

/// How lag classes are obtained from the state sequence.
#[derive(Debug, Clone, Copy)]
pub enum AllocationMode<'a> {
    /// Deterministic classes from per-lag partitions of the states.
    Hard(&'a [Vec<usize>]),
    /// Latent classes `z` with allocation distributions `pi`.
    Soft(&'a AllocationDistributions),
}

/// Per-sequence latent state: segment statistics are fixed for a sweep,
/// `c` and `z` are resampled. `z[τ][j]` is only meaningful for `τ >= q`.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceState {
    pub stats: Vec<SegmentStats>,
    pub c: Vec<usize>,
    pub z: Vec<Vec<usize>>,
}

impl SequenceState {
    pub fn new(stats: Vec<SegmentStats>, c: Vec<usize>, order: usize) -> Self {
        let z = vec![vec![0; order]; c.len()];
        let mut s = SequenceState { stats, c, z };
        s.sync_lag_one();
        s
    }

    pub fn num_segments(&self) -> usize {
        self.c.len()
    }

    /// Restore `z[τ][0] = c[τ - 1]`.
    pub fn sync_lag_one(&mut self) {
        for t in 1..self.c.len() {
            self.z[t][0] = self.c[t - 1];
        }
    }

    /// Overwrite `z` with the classes implied by hard partitions.
    pub fn set_hard_allocations(&mut self, partitions: &[Vec<usize>]) {
        let q = partitions.len();
        for t in q..self.c.len() {
            for j in 0..q {
                self.z[t][j] = partitions[j][self.c[t - j - 1]];
            }
        }
    }

    /// Draw `z[τ][j]` for lags `j >= 2` from their prior `pi^{(j)}(c_{τ-j})`.
    pub fn init_soft_allocations<R: Rng + ?Sized>(&mut self, alloc: &AllocationDistributions, rng: &mut R) {
        let q = alloc.pi.len();
        self.sync_lag_one();
        for t in q..self.c.len() {
            for j in 1..q {
                self.z[t][j] = crate::dist::sample_categorical(rng, &alloc.pi[j][self.c[t - j - 1]]);
            }
        }
    }

    /// Emission log-likelihood of the whole sequence under the current states.
    pub fn emission_loglik(&self, emissions: &EmissionParams) -> f64 {
        self.c
            .iter()
            .zip(&self.stats)
            .map(|(&s, st)| emissions.segment_loglik(s, st))
            .sum()
    }
}

/// Everything the state updates condition on.
#[derive(Debug, Clone, Copy)]
pub struct StateContext<'a> {
    pub lags: &'a LagSpec,
    pub lambda_bar: &'a RowTensor,
    pub emissions: &'a EmissionParams,
    pub mode: AllocationMode<'a>,
}

impl StateContext<'_> {
    fn fill_classes(&self, c: &[usize], z: &[Vec<usize>], t: usize, buf: &mut [usize]) {
        buf[0] = c[t - 1];
        match self.mode {
            AllocationMode::Hard(parts) => {
                for j in 1..buf.len() {
                    buf[j] = parts[j][c[t - j - 1]];
                }
            }
            AllocationMode::Soft(_) => buf[1..].copy_from_slice(&z[t][1..]),
        }
    }

    fn log_transition(&self, c: &[usize], z: &[Vec<usize>], t: usize, buf: &mut [usize]) -> f64 {
        self.fill_classes(c, z, t, buf);
        self.lambda_bar.row(self.lambda_bar.row_index(buf))[c[t]].ln()
    }

    /// Log prior weight of `c[τ] = x` from every transition and allocation
    /// term involving segment `τ`. Initial segments (`τ < q`) carry a uniform
    /// prior over blocks without adjacent repeats.
    fn candidate_log_prior(&self, seq: &mut SequenceState, tau: usize, x: usize, buf: &mut [usize]) -> f64 {
        let q = self.lags.order();
        let s_len = seq.c.len();
        if tau < q {
            if (tau >= 1 && seq.c[tau - 1] == x) || (tau + 1 < q.min(s_len) && seq.c[tau + 1] == x) {
                return f64::NEG_INFINITY;
            }
        }
        seq.c[tau] = x;
        let mut lp = 0.0;
        for t in tau.max(q)..=(tau + q).min(s_len - 1) {
            lp += self.log_transition(&seq.c, &seq.z, t, buf);
            if lp == f64::NEG_INFINITY {
                return lp;
            }
        }
        if let AllocationMode::Soft(alloc) = self.mode {
            for j in 1..q {
                let t = tau + j + 1;
                if t < s_len && t >= q {
                    lp += alloc.pi[j][x][seq.z[t][j]].ln();
                }
            }
        }
        lp
    }
}

/// One sweep over the segments of a sequence. Each state is proposed from
/// the full conditional with the emission term tempered by `1 / temperature`
/// and accepted by a Metropolis-Hastings correction, so the target is the
/// untempered conditional. Returns the number of accepted proposals.
pub fn sample_states_c<R: Rng + ?Sized>(
    seq: &mut SequenceState,
    ctx: &StateContext<'_>,
    temperature: f64,
    rng: &mut R,
) -> Result<usize> {
    let c_count = ctx.lags.num_states();
    let q = ctx.lags.order();
    let inv_t = 1.0 / temperature.max(1.0);
    let mut buf = vec![0usize; q];
    let mut prior = vec![0.0; c_count];
    let mut emis = vec![0.0; c_count];
    let mut proposal = vec![0.0; c_count];
    let mut accepted = 0;
    for tau in 0..seq.c.len() {
        let current = seq.c[tau];
        for x in 0..c_count {
            prior[x] = ctx.candidate_log_prior(seq, tau, x, &mut buf);
            emis[x] = ctx.emissions.segment_loglik(x, &seq.stats[tau]);
            proposal[x] = prior[x] + emis[x] * inv_t;
        }
        seq.c[tau] = current;
        let x = sample_log_weights(rng, &proposal)?;
        if x == current {
            continue;
        }
        let log_ratio = (1.0 - inv_t) * (emis[x] - emis[current]);
        if log_ratio >= 0.0 || rng.random::<f64>() < log_ratio.exp() {
            seq.c[tau] = x;
            if tau + 1 < seq.c.len() {
                seq.z[tau + 1][0] = x;
            }
            accepted += 1;
        }
    }
    if let AllocationMode::Hard(parts) = ctx.mode {
        seq.set_hard_allocations(parts);
    }
    Ok(accepted)
}

/// Gibbs update of the latent classes for lags `j >= 2` with `k_j > 1`:
/// `p(z[τ][j] = h) ∝ lambda_bar_{..h..}(c_τ) pi^{(j)}_h(c_{τ-j})`.
pub fn sample_allocations_z<R: Rng + ?Sized>(
    seq: &mut SequenceState,
    lags: &LagSpec,
    lambda_bar: &RowTensor,
    alloc: &AllocationDistributions,
    rng: &mut R,
) -> Result<()> {
    let q = lags.order();
    let mut buf = vec![0usize; q];
    for t in q..seq.c.len() {
        seq.z[t][0] = seq.c[t - 1];
        for j in 1..q {
            let k = lags.k()[j];
            if k == 1 {
                seq.z[t][j] = 0;
                continue;
            }
            let prev = seq.c[t - j - 1];
            let weights: Vec<f64> = (0..k)
                .map(|h| {
                    buf.copy_from_slice(&seq.z[t]);
                    buf[j] = h;
                    let row = lambda_bar.row(lambda_bar.row_index(&buf));
                    row[seq.c[t]].ln() + alloc.pi[j][prev][h].ln()
                })
                .collect();
            seq.z[t][j] = sample_log_weights(rng, &weights)?;
        }
    }
    Ok(())
}

/// Pool segment statistics by assigned state.
pub fn pooled_state_stats(seqs: &[SequenceState], num_states: usize) -> Vec<SegmentStats> {
    let mut out = vec![SegmentStats::from_values(&[]); num_states];
    for seq in seqs {
        for (&s, st) in seq.c.iter().zip(&seq.stats) {
            out[s] = out[s].merge(st);
        }
    }
    out
}
