use serde::{Deserialize, Serialize};

use crate::error::{HohsmmError, Result};
use crate::model::LagSpec;

/// Transition tallies `n_{i,h_2..h_q}(c)` pooled over sequences.
///
/// Rows share the mixed-radix layout of [`crate::model::RowTensor`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionCounts {
    class_dims: Vec<usize>,
    num_states: usize,
    n: Vec<u64>,
}

impl TransitionCounts {
    pub fn zeros(lags: &LagSpec) -> Self {
        let c = lags.num_states();
        TransitionCounts {
            class_dims: lags.k().to_vec(),
            num_states: c,
            n: vec![0; lags.num_rows() * c],
        }
    }

    pub fn num_rows(&self) -> usize {
        self.n.len() / self.num_states
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn row(&self, r: usize) -> &[u64] {
        &self.n[r * self.num_states..(r + 1) * self.num_states]
    }

    pub fn row_total(&self, r: usize) -> u64 {
        self.row(r).iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.n.iter().sum()
    }

    pub fn row_index(&self, classes: &[usize]) -> usize {
        classes
            .iter()
            .zip(&self.class_dims)
            .fold(0, |acc, (&h, &k)| acc * k + h)
    }

    pub fn leading_class(&self, r: usize) -> usize {
        let trailing: usize = self.class_dims[1..].iter().product();
        r / trailing
    }

    pub(crate) fn add(&mut self, classes: &[usize], next: usize) {
        let r = self.row_index(classes);
        self.n[r * self.num_states + next] += 1;
    }

    pub fn get(&self, classes: &[usize], next: usize) -> u64 {
        self.n[self.row_index(classes) * self.num_states + next]
    }

    /// Elementwise sum, used to pool per-sequence tallies.
    pub fn accumulate(&mut self, other: &TransitionCounts) {
        for (a, b) in self.n.iter_mut().zip(&other.n) {
            *a += b;
        }
    }
}

/// Tally transitions for every segment `τ >= q`. `z_all[p][τ][j]` is the class
/// of the state `j + 1` lags back, so `z[τ][0]` must equal `c[τ - 1]`.
pub fn count_transitions(
    c_all: &[Vec<usize>],
    z_all: &[Vec<Vec<usize>>],
    lags: &LagSpec,
) -> Result<TransitionCounts> {
    let q = lags.order();
    let mut counts = TransitionCounts::zeros(lags);
    for (p, (c, z)) in c_all.iter().zip(z_all).enumerate() {
        for tau in q..c.len() {
            let classes = &z[tau];
            if classes[0] != c[tau - 1] {
                return Err(HohsmmError::AllocationConsistency {
                    sequence: p,
                    segment: tau,
                });
            }
            if c[tau] == classes[0] {
                return Err(HohsmmError::Schema(format!(
                    "self-transition in sequence {p} at segment {tau}"
                )));
            }
            counts.add(classes, c[tau]);
        }
    }
    Ok(counts)
}

/// Hard allocation classes of a sequence: `z[τ][j] = partition[j][c[τ - j - 1]]`.
#[cfg(test)]
pub(crate) fn hard_allocations(c: &[usize], partitions: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let q = partitions.len();
    (0..c.len())
        .map(|tau| {
            if tau < q {
                vec![0; q]
            } else {
                (0..q).map(|j| partitions[j][c[tau - j - 1]]).collect()
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lag1(c: &[usize]) -> Vec<Vec<usize>> {
        (0..c.len())
            .map(|t| vec![if t == 0 { 0 } else { c[t - 1] }])
            .collect()
    }

    #[test]
    fn hand_count_first_order() {
        let c = vec![0, 1, 0, 1];
        let lags = LagSpec::full(2, 1);
        let n = count_transitions(&[c.clone()], &[lag1(&c)], &lags).unwrap();
        assert_eq!(n.get(&[0], 1), 2);
        assert_eq!(n.get(&[1], 0), 1);
        assert_eq!(n.get(&[0], 0), 0);
    }

    #[test]
    fn short_sequences_give_zero_counts() {
        let lags = LagSpec::full(3, 3);
        let c = vec![0, 1, 2];
        let z = hard_allocations(&c, &vec![vec![0, 1, 2]; 3]);
        let n = count_transitions(&[c], &[z], &lags).unwrap();
        assert_eq!(n.total(), 0);
    }

    #[test]
    fn pooled_equals_sum_of_parts() {
        let lags = LagSpec::new(vec![3, 2], 3).unwrap();
        let parts = vec![vec![0, 1, 2], vec![0, 0, 1]];
        let seqs = [vec![0, 1, 2, 0, 2, 1, 0], vec![2, 0, 1, 0, 2, 0]];
        let zs: Vec<_> = seqs.iter().map(|c| hard_allocations(c, &parts)).collect();
        let pooled = count_transitions(&seqs, &zs, &lags).unwrap();
        let mut summed = TransitionCounts::zeros(&lags);
        for (c, z) in seqs.iter().zip(&zs) {
            summed.accumulate(&count_transitions(&[c.clone()], &[z.clone()], &lags).unwrap());
        }
        assert_eq!(pooled, summed);
        assert_eq!(pooled.total(), 5 + 4);
    }

    #[test]
    fn broken_lag_one_identity_is_reported() {
        let c = vec![0, 1, 0];
        let mut z = lag1(&c);
        z[2][0] = 2;
        let err = count_transitions(&[c], &[z], &LagSpec::full(3, 1)).unwrap_err();
        assert!(matches!(err, HohsmmError::AllocationConsistency { sequence: 0, segment: 2 }));
    }
}
