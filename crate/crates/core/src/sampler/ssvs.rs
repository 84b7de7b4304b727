//! Lag selection under hard allocations.
//!
//! Each lag `j >= 2` carries a partition of the states into `k_j` blocks.
//! Partitions move by single-state reassignments, splits and merges, scored
//! by the transition likelihood with the rows integrated out. The prior is
//! `p(k_j) ∝ exp(-phi j k_j)`, spread uniformly over the `S(C, k_j)`
//! partitions with `k_j` blocks.

use rand::Rng;
use statrs::function::gamma::ln_gamma;

use super::counts::TransitionCounts;
use super::states::SequenceState;
use crate::model::LagSpec;

/// Relabel blocks in order of first appearance.
pub fn canonicalize(partition: &[usize]) -> Vec<usize> {
    let mut map: Vec<Option<usize>> = vec![None; partition.len()];
    let mut next = 0;
    partition
        .iter()
        .map(|&b| {
            *map[b].get_or_insert_with(|| {
                next += 1;
                next - 1
            })
        })
        .collect()
}

pub fn num_blocks(partition: &[usize]) -> usize {
    partition.iter().max().map_or(0, |m| m + 1)
}

/// Contiguous split of the canonically ordered states into `k` groups.
pub fn quantile_partition(num_states: usize, k: usize) -> Vec<usize> {
    (0..num_states).map(|s| s * k / num_states).collect()
}

/// `ln S(n, k)`, Stirling numbers of the second kind, for all `k <= n`.
pub fn ln_stirling2(n: usize) -> Vec<f64> {
    let mut row = vec![0.0f64; n + 1];
    row[0] = 1.0;
    for i in 1..=n {
        let mut next = vec![0.0f64; n + 1];
        for k in 1..=i {
            next[k] = k as f64 * row[k] + row[k - 1];
        }
        row = next;
    }
    row.iter().map(|x| x.ln()).collect()
}

/// Log prior of a partition with `k` blocks at 1-based lag `lag`.
pub fn log_partition_prior(phi: f64, lag: usize, k: usize, ln_s: &[f64]) -> f64 {
    -phi * lag as f64 * k as f64 - ln_s[k]
}

/// Class counts of a full set of partitions.
pub fn lags_of(partitions: &[Vec<usize>]) -> LagSpec {
    let c = partitions[0].len();
    let k: Vec<usize> = partitions.iter().map(|p| num_blocks(p)).collect();
    LagSpec::new(k, c).expect("partitions produce a valid lag spec")
}

/// Transition counts under hard allocations.
pub fn hard_counts(seqs: &[SequenceState], partitions: &[Vec<usize>]) -> TransitionCounts {
    let lags = lags_of(partitions);
    let q = lags.order();
    let mut counts = TransitionCounts::zeros(&lags);
    let mut buf = vec![0usize; q];
    for seq in seqs {
        for t in q..seq.c.len() {
            for j in 0..q {
                buf[j] = partitions[j][seq.c[t - j - 1]];
            }
            counts.add(&buf, seq.c[t]);
        }
    }
    counts
}

/// Log marginal likelihood of the transitions with every self-excluded row
/// integrated against its `Dir(alpha lambda0(c), c != i)` prior.
pub fn collapsed_log_likelihood(counts: &TransitionCounts, lambda0: &[f64], alpha_conc: f64) -> f64 {
    (0..counts.num_rows())
        .map(|r| {
            let n_total = counts.row_total(r);
            if n_total == 0 {
                return 0.0;
            }
            let i = counts.leading_class(r);
            let mut a_total = 0.0;
            let mut acc = 0.0;
            for (c, &n) in counts.row(r).iter().enumerate() {
                if c == i {
                    continue;
                }
                let a = alpha_conc * lambda0[c];
                a_total += a;
                if n > 0 {
                    acc += ln_gamma(a + n as f64) - ln_gamma(a);
                }
            }
            acc + ln_gamma(a_total) - ln_gamma(a_total + n_total as f64)
        })
        .sum()
}

struct Proposal {
    partition: Vec<usize>,
    log_hastings: f64,
}

fn block_sizes(partition: &[usize]) -> Vec<usize> {
    let mut sizes = vec![0; num_blocks(partition)];
    for &b in partition {
        sizes[b] += 1;
    }
    sizes
}

fn eligible_count(partition: &[usize]) -> usize {
    let sizes = block_sizes(partition);
    partition.iter().filter(|&&b| sizes[b] >= 2).count()
}

fn singleton_count(partition: &[usize]) -> usize {
    block_sizes(partition).iter().filter(|&&n| n == 1).count()
}

fn pick<R: Rng + ?Sized>(rng: &mut R, items: &[usize]) -> usize {
    items[rng.random_range(0..items.len())]
}

fn other_block<R: Rng + ?Sized>(rng: &mut R, k: usize, exclude: usize) -> usize {
    let b = rng.random_range(0..k - 1);
    if b >= exclude {
        b + 1
    } else {
        b
    }
}

/// Propose a reassignment, split or merge with equal probability; `None`
/// when the chosen move is unavailable (treated as a rejection).
fn propose<R: Rng + ?Sized>(rng: &mut R, partition: &[usize]) -> Option<Proposal> {
    let c = partition.len();
    let k = num_blocks(partition);
    let sizes = block_sizes(partition);
    let eligible: Vec<usize> = (0..c).filter(|&s| sizes[partition[s]] >= 2).collect();
    let singletons: Vec<usize> = (0..c).filter(|&s| sizes[partition[s]] == 1).collect();
    match rng.random_range(0..3) {
        0 => {
            if eligible.is_empty() || k < 2 {
                return None;
            }
            let s = pick(rng, &eligible);
            let mut next = partition.to_vec();
            next[s] = other_block(rng, k, partition[s]);
            let next = canonicalize(&next);
            let log_hastings = (eligible.len() as f64).ln() - (eligible_count(&next) as f64).ln();
            Some(Proposal {
                partition: next,
                log_hastings,
            })
        }
        1 => {
            if eligible.is_empty() || k >= c {
                return None;
            }
            let s = pick(rng, &eligible);
            let mut next = partition.to_vec();
            next[s] = k;
            let next = canonicalize(&next);
            let log_hastings = (eligible.len() as f64).ln()
                - (singleton_count(&next) as f64).ln()
                - (k as f64).ln();
            Some(Proposal {
                partition: next,
                log_hastings,
            })
        }
        _ => {
            if singletons.is_empty() || k < 2 {
                return None;
            }
            let s = pick(rng, &singletons);
            let target = other_block(rng, k, partition[s]);
            let mut next = partition.to_vec();
            next[s] = target;
            let next = canonicalize(&next);
            let log_hastings = (singletons.len() as f64).ln() + ((k - 1) as f64).ln()
                - (eligible_count(&next) as f64).ln();
            Some(Proposal {
                partition: next,
                log_hastings,
            })
        }
    }
}

/// Run `moves` Metropolis-Hastings partition updates at every lag `j >= 2`.
/// Returns the number of accepted moves.
#[allow(clippy::too_many_arguments)]
pub fn update_partitions<R: Rng + ?Sized>(
    rng: &mut R,
    seqs: &[SequenceState],
    partitions: &mut [Vec<usize>],
    lambda0: &[f64],
    alpha_conc: f64,
    phi: f64,
    moves: usize,
    ln_s: &[f64],
) -> usize {
    let q = partitions.len();
    let mut accepted = 0;
    let mut current_ll = collapsed_log_likelihood(&hard_counts(seqs, partitions), lambda0, alpha_conc);
    for j in 1..q {
        for _ in 0..moves {
            let Some(prop) = propose(rng, &partitions[j]) else {
                continue;
            };
            let old = std::mem::replace(&mut partitions[j], prop.partition);
            let new_ll = collapsed_log_likelihood(&hard_counts(seqs, partitions), lambda0, alpha_conc);
            let log_ratio = new_ll - current_ll
                + log_partition_prior(phi, j + 1, num_blocks(&partitions[j]), ln_s)
                - log_partition_prior(phi, j + 1, num_blocks(&old), ln_s)
                + prop.log_hastings;
            if log_ratio >= 0.0 || rng.random::<f64>() < log_ratio.exp() {
                current_ll = new_ll;
                accepted += 1;
            } else {
                partitions[j] = old;
            }
        }
    }
    accepted
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn stirling_small_values() {
        let s: Vec<f64> = ln_stirling2(4).iter().map(|x| x.exp()).collect();
        assert!((s[1] - 1.0).abs() < 1e-9);
        assert!((s[2] - 7.0).abs() < 1e-9);
        assert!((s[3] - 6.0).abs() < 1e-9);
        assert!((s[4] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn canonical_labels_follow_first_appearance() {
        assert_eq!(canonicalize(&[2, 2, 0, 1]), vec![0, 0, 1, 2]);
        assert_eq!(quantile_partition(5, 2), vec![0, 0, 0, 1, 1]);
    }

    /// With a flat likelihood the chain must sample the partition prior.
    #[test]
    fn moves_leave_the_prior_invariant() {
        let c = 4;
        let ln_s = ln_stirling2(c);
        let phi = 0.3;
        let lag = 2;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut part = vec![0, 0, 1, 1];
        let mut freq = vec![0usize; c + 1];
        let draws = 200_000;
        for _ in 0..draws {
            if let Some(prop) = propose(&mut rng, &part) {
                let log_ratio = log_partition_prior(phi, lag, num_blocks(&prop.partition), &ln_s)
                    - log_partition_prior(phi, lag, num_blocks(&part), &ln_s)
                    + prop.log_hastings;
                if log_ratio >= 0.0 || rng.random::<f64>() < log_ratio.exp() {
                    part = prop.partition;
                }
            }
            freq[num_blocks(&part)] += 1;
        }
        let weights: Vec<f64> = (1..=c).map(|k| (-phi * lag as f64 * k as f64).exp()).collect();
        let total: f64 = weights.iter().sum();
        for k in 1..=c {
            let expected = weights[k - 1] / total;
            let got = freq[k] as f64 / draws as f64;
            assert!((got - expected).abs() < 0.01, "k = {k}: {got} vs {expected}");
        }
    }

    #[test]
    fn collapsed_likelihood_matches_closed_form() {
        // one row, i = 0, counts (0, 2, 1), alpha lambda0 = (1, 1, 1)
        let lags = LagSpec::full(3, 1);
        let mut counts = TransitionCounts::zeros(&lags);
        counts.add(&[0], 1);
        counts.add(&[0], 1);
        counts.add(&[0], 2);
        let ll = collapsed_log_likelihood(&counts, &[1.0 / 3.0; 3], 3.0);
        // Dirichlet-multinomial sequence probability: Γ(2)/Γ(5) · Γ(3)Γ(2)/(Γ(1)Γ(1))
        let expected = (1.0f64 / 24.0 * 2.0).ln();
        assert!((ll - expected).abs() < 1e-12);
    }
}
