//! Evaluation helpers: label matching, decoding accuracy and RUL error.

use crate::error::{HohsmmError, Result};

fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut perm: Vec<usize> = (0..n).collect();
    fn heap(k: usize, perm: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(perm.clone());
            return;
        }
        for i in 0..k {
            heap(k - 1, perm, out);
            let j = if k % 2 == 0 { i } else { 0 };
            perm.swap(j, k - 1);
        }
    }
    heap(n, &mut perm, &mut out);
    out
}

/// Minimum-cost assignment by enumeration. `cost[i][j]` is the cost of
/// mapping estimated label `i` to true label `j`; returns the map `i -> j`.
/// Ties keep the lexicographically first permutation.
pub fn assign_min_cost(cost: &[Vec<f64>]) -> Result<Vec<usize>> {
    let n = cost.len();
    if n == 0 || n > 8 || cost.iter().any(|r| r.len() != n) {
        return Err(HohsmmError::InvalidConfig(format!(
            "label matching needs a square cost matrix with 1..=8 rows, got {n}"
        )));
    }
    let mut perms = permutations(n);
    perms.sort();
    let total = |p: &[usize]| p.iter().enumerate().map(|(i, &j)| cost[i][j]).sum::<f64>();
    let mut best = perms[0].clone();
    let mut best_cost = total(&best);
    for p in perms.into_iter().skip(1) {
        let c = total(&p);
        if c < best_cost {
            best_cost = c;
            best = p;
        }
    }
    Ok(best)
}

/// Match estimated states to true states by absolute emission-mean distance.
pub fn match_by_means(estimated: &[f64], truth: &[f64]) -> Result<Vec<usize>> {
    let cost: Vec<Vec<f64>> = estimated
        .iter()
        .map(|e| truth.iter().map(|t| (e - t).abs()).collect())
        .collect();
    assign_min_cost(&cost)
}

/// Match labels so the number of agreeing positions is largest.
pub fn match_by_agreement(predicted: &[usize], truth: &[usize], num_states: usize) -> Result<Vec<usize>> {
    let mut cost = vec![vec![0.0; num_states]; num_states];
    for (&p, &t) in predicted.iter().zip(truth) {
        if p >= num_states || t >= num_states {
            return Err(HohsmmError::StateIndex {
                index: p.max(t),
                num_states,
            });
        }
        cost[p][t] -= 1.0;
    }
    assign_min_cost(&cost)
}

/// Fraction of positions where `map[predicted] == truth`.
pub fn accuracy(predicted: &[usize], truth: &[usize], map: &[usize]) -> f64 {
    if predicted.is_empty() {
        return 0.0;
    }
    let hits = predicted.iter().zip(truth).filter(|(&p, &t)| map[p] == t).count();
    hits as f64 / predicted.len() as f64
}

pub fn mean_absolute_error(predicted: &[f64], truth: &[f64]) -> Result<f64> {
    if predicted.len() != truth.len() || predicted.is_empty() {
        return Err(HohsmmError::Schema(format!(
            "error needs equal non-empty lengths, got {} and {}",
            predicted.len(),
            truth.len()
        )));
    }
    Ok(predicted.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / predicted.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permutation_count() {
        assert_eq!(permutations(4).len(), 24);
        let mut p = permutations(3);
        p.sort();
        p.dedup();
        assert_eq!(p.len(), 6);
    }

    #[test]
    fn means_matching() {
        assert_eq!(match_by_means(&[2.9, -3.1, 0.2], &[-3.0, 0.0, 3.0]).unwrap(), vec![2, 0, 1]);
    }

    #[test]
    fn agreement_matching_recovers_relabeling() {
        let truth = [0, 1, 2, 1, 0, 2];
        let pred: Vec<usize> = truth.iter().map(|&t| (t + 1) % 3).collect();
        let map = match_by_agreement(&pred, &truth, 3).unwrap();
        assert_eq!(accuracy(&pred, &truth, &map), 1.0);
    }

    #[test]
    fn perfect_predictor_has_zero_error() {
        assert_eq!(mean_absolute_error(&[1.0, 5.0], &[1.0, 5.0]).unwrap(), 0.0);
        assert!(mean_absolute_error(&[], &[]).is_err());
    }
}
