use rand::Rng;

use super::{AllocationDistributions, LagSpec, RowTensor};
use crate::dist::sample_categorical;
use crate::error::{HohsmmError, Result};

/// Zero the excluded state `i` and renormalize the remaining mass.
///
/// The denominator is the mass on the other states, which equals
/// `1 - row[i]` for a normalized row.
pub fn exclude_self_transitions(row: &[f64], i: usize) -> Result<Vec<f64>> {
    if i >= row.len() {
        return Err(HohsmmError::StateIndex {
            index: i,
            num_states: row.len(),
        });
    }
    let rest: f64 = row
        .iter()
        .enumerate()
        .filter(|&(c, _)| c != i)
        .map(|(_, &x)| x)
        .sum();
    if row[i] >= 1.0 - 1e-12 || !(rest > 0.0) {
        return Err(HohsmmError::DegenerateRow {
            state: i,
            mass: row[i],
        });
    }
    Ok(row
        .iter()
        .enumerate()
        .map(|(c, &x)| if c == i { 0.0 } else { x / rest })
        .collect())
}

/// Borrowed view of the pieces that define `p(c_τ | c_{τ-q..τ-1})`.
#[derive(Debug, Clone, Copy)]
pub struct TransitionView<'a> {
    lags: &'a LagSpec,
    lambda_bar: &'a RowTensor,
    allocations: &'a AllocationDistributions,
}

impl<'a> TransitionView<'a> {
    pub fn new(
        lags: &'a LagSpec,
        lambda_bar: &'a RowTensor,
        allocations: &'a AllocationDistributions,
    ) -> Self {
        TransitionView {
            lags,
            lambda_bar,
            allocations,
        }
    }

    pub fn num_states(&self) -> usize {
        self.lags.num_states()
    }

    pub fn order(&self) -> usize {
        self.lags.order()
    }

    pub fn lags(&self) -> &LagSpec {
        self.lags
    }

    fn check_history(&self, history: &[usize]) -> Result<()> {
        if history.len() != self.order() {
            return Err(HohsmmError::HistoryLength {
                got: history.len(),
                expected: self.order(),
            });
        }
        let c = self.num_states();
        if let Some(&bad) = history.iter().find(|&&s| s >= c) {
            return Err(HohsmmError::StateIndex {
                index: bad,
                num_states: c,
            });
        }
        Ok(())
    }

    /// Distribution of the next state given the `q` most recent states.
    ///
    /// The lag-1 allocation is one-hot, so the sum over `i` collapses onto
    /// `i = c_{τ-1}`; only the classes of lags `2..q` are marginalized.
    pub fn transition_distribution(&self, history: &[usize]) -> Result<Vec<f64>> {
        self.check_history(history)?;
        let q = self.order();
        let c = self.num_states();
        let k = self.lags.k();
        let mut out = vec![0.0; c];
        let mut classes = vec![0usize; q];
        classes[0] = history[q - 1];
        loop {
            let mut weight = 1.0;
            for j in 1..q {
                weight *= self.allocations.pi[j][history[q - 1 - j]][classes[j]];
                if weight == 0.0 {
                    break;
                }
            }
            if weight > 0.0 {
                let row = self.lambda_bar.row(self.lambda_bar.row_index(&classes));
                for (o, &p) in out.iter_mut().zip(row) {
                    *o += weight * p;
                }
            }
            // odometer over lags 2..q
            let mut j = q;
            loop {
                j -= 1;
                if j == 0 {
                    return Ok(out);
                }
                classes[j] += 1;
                if classes[j] < k[j] {
                    break;
                }
                classes[j] = 0;
            }
        }
    }

    pub fn transition_prob(&self, history: &[usize], next: usize) -> Result<f64> {
        if next >= self.num_states() {
            return Err(HohsmmError::StateIndex {
                index: next,
                num_states: self.num_states(),
            });
        }
        Ok(self.transition_distribution(history)?[next])
    }

    /// Distribution of `c_{T+r}` given the `q` most recent states, by a forward
    /// pass over history tuples.
    pub fn r_step_transition(&self, history: &[usize], r: usize) -> Result<Vec<f64>> {
        if r == 0 {
            return Err(HohsmmError::InvalidConfig("r must be at least 1".into()));
        }
        if r == 1 {
            return self.transition_distribution(history);
        }
        self.check_history(history)?;
        let c = self.num_states();
        let table = TransitionTable::build(*self)?;
        let mut mass = vec![0.0; table.num_histories()];
        mass[table.encode(history)] = 1.0;
        for _ in 0..r - 1 {
            let mut next = vec![0.0; mass.len()];
            for (h, &m) in mass.iter().enumerate() {
                if m == 0.0 {
                    continue;
                }
                for (s, &p) in table.row(h).iter().enumerate() {
                    if p > 0.0 {
                        next[table.shift(h, s)] += m * p;
                    }
                }
            }
            mass = next;
        }
        let mut out = vec![0.0; c];
        for (h, &m) in mass.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            for (o, &p) in out.iter_mut().zip(table.row(h)) {
                *o += m * p;
            }
        }
        Ok(out)
    }

    /// Draw the next state; never returns `c_{τ-1}`.
    pub fn sample_next_state<R: Rng + ?Sized>(&self, history: &[usize], rng: &mut R) -> Result<usize> {
        let dist = self.transition_distribution(history)?;
        Ok(sample_categorical(rng, &dist))
    }
}

/// Transition distributions precomputed for all `C^q` histories.
///
/// History tuples are encoded base `C`, oldest state most significant.
#[derive(Debug, Clone)]
pub struct TransitionTable {
    num_states: usize,
    order: usize,
    probs: Vec<f64>,
}

impl TransitionTable {
    pub fn build(view: TransitionView<'_>) -> Result<Self> {
        let c = view.num_states();
        let q = view.order();
        let n = c
            .checked_pow(q as u32)
            .filter(|&n| n <= 20_000_000 / c)
            .ok_or_else(|| HohsmmError::InvalidConfig(format!("C^q too large ({c}^{q})")))?;
        let mut probs = Vec::with_capacity(n * c);
        let mut history = vec![0usize; q];
        for h in 0..n {
            decode_into(h, c, &mut history);
            probs.extend(view.transition_distribution(&history)?);
        }
        Ok(TransitionTable {
            num_states: c,
            order: q,
            probs,
        })
    }

    pub fn num_histories(&self) -> usize {
        self.probs.len() / self.num_states
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn encode(&self, history: &[usize]) -> usize {
        history.iter().fold(0, |acc, &s| acc * self.num_states + s)
    }

    pub fn decode(&self, code: usize) -> Vec<usize> {
        let mut h = vec![0; self.order];
        decode_into(code, self.num_states, &mut h);
        h
    }

    /// Drop the oldest state and append `next`.
    pub fn shift(&self, code: usize, next: usize) -> usize {
        let top = self.num_states.pow(self.order as u32 - 1);
        (code % top) * self.num_states + next
    }

    /// Most recent state of an encoded history.
    pub fn last(&self, code: usize) -> usize {
        code % self.num_states
    }

    pub fn row(&self, code: usize) -> &[f64] {
        &self.probs[code * self.num_states..(code + 1) * self.num_states]
    }
}

fn decode_into(mut code: usize, c: usize, out: &mut [usize]) {
    for slot in out.iter_mut().rev() {
        *slot = code % c;
        code /= c;
    }
}
