//! Jump-threshold segmentation and super-state initialization.
//!
//! A point starts a new segment when its Euclidean distance to the previous
//! point exceeds the threshold `alpha`. Segment centers are clustered into `C`
//! groups, each segment takes the label of its nearest center, and runs of
//! equal labels are merged so that no two adjacent segments share a state.
//!
//! Indices are 0-based: segment boundaries are start offsets (the first is
//! always 0) and change-points are the indices `t >= 1` that open a segment.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist::percentile_sorted;
use crate::error::{HohsmmError, Result};

/// One observation sequence, stored row-major with `dim` values per time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub unit_id: String,
    dim: usize,
    data: Vec<f64>,
}

impl Trajectory {
    pub fn new(unit_id: impl Into<String>, dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(HohsmmError::Schema(format!(
                "trajectory data of length {} is not a multiple of dim {dim}",
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(HohsmmError::Schema("trajectory contains non-finite values".into()));
        }
        Ok(Trajectory {
            unit_id: unit_id.into(),
            dim,
            data,
        })
    }

    pub fn univariate(unit_id: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        Self::new(unit_id, 1, values)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn point(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    /// Flat values; for univariate trajectories this is the series itself.
    pub fn values(&self) -> &[f64] {
        &self.data
    }

    /// The first `len` observations.
    pub fn prefix(&self, len: usize) -> Trajectory {
        Trajectory {
            unit_id: self.unit_id.clone(),
            dim: self.dim,
            data: self.data[..len * self.dim].to_vec(),
        }
    }

    fn jump(&self, t: usize) -> f64 {
        euclidean(self.point(t), self.point(t - 1))
    }
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Support `(alpha_min, alpha_max)` of the uniform prior on the jump threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpSupport {
    pub alpha_min: f64,
    pub alpha_max: f64,
}

impl JumpSupport {
    pub fn contains(&self, alpha: f64) -> bool {
        alpha >= self.alpha_min && alpha <= self.alpha_max
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        rng.random_range(self.alpha_min..self.alpha_max)
    }
}

/// Pool adjacent-point distances over all sequences and take their 5th and
/// 95th percentiles (linear interpolation at position `p * (n - 1)`).
pub fn jump_support(trajectories: &[Trajectory]) -> Result<JumpSupport> {
    let mut distances: Vec<f64> = trajectories
        .iter()
        .flat_map(|tr| (1..tr.len()).map(move |t| tr.jump(t)))
        .collect();
    if distances.is_empty() {
        return Err(HohsmmError::Empty(
            "jump support needs a trajectory with at least two points".into(),
        ));
    }
    distances.sort_by(f64::total_cmp);
    let alpha_min = percentile_sorted(&distances, 0.05);
    let alpha_max = percentile_sorted(&distances, 0.95);
    if !(alpha_min < alpha_max) {
        return Err(HohsmmError::DegenerateSupport(alpha_min));
    }
    Ok(JumpSupport {
        alpha_min,
        alpha_max,
    })
}

/// Every index `t >= 1` whose jump from `t - 1` exceeds `alpha`.
pub fn detect_changepoints(traj: &Trajectory, alpha: f64) -> Vec<usize> {
    (1..traj.len()).filter(|&t| traj.jump(t) > alpha).collect()
}

/// Segment start offsets implied by a change-point list.
pub fn boundaries_from_changepoints(changepoints: &[usize]) -> Vec<usize> {
    std::iter::once(0).chain(changepoints.iter().copied()).collect()
}

fn segment_ranges(len: usize, boundaries: &[usize]) -> impl Iterator<Item = (usize, usize)> + '_ {
    boundaries
        .iter()
        .enumerate()
        .map(move |(s, &start)| (start, boundaries.get(s + 1).copied().unwrap_or(len)))
}

/// Arithmetic mean of the observation vectors in each segment.
pub fn segment_centers(traj: &Trajectory, boundaries: &[usize]) -> Vec<Vec<f64>> {
    segment_ranges(traj.len(), boundaries)
        .map(|(start, end)| {
            let n = (end - start) as f64;
            let mut center = vec![0.0; traj.dim()];
            for t in start..end {
                for (c, x) in center.iter_mut().zip(traj.point(t)) {
                    *c += x;
                }
            }
            center.iter_mut().for_each(|c| *c /= n);
            center
        })
        .collect()
}

/// Ordered cluster centers used to label segments. Centers are sorted
/// ascending by their first coordinate, so label `0` is the lowest center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRule {
    pub centers: Vec<Vec<f64>>,
}

impl ClusterRule {
    pub fn new(mut centers: Vec<Vec<f64>>) -> Result<Self> {
        centers.sort_by(|a, b| canonical_cmp(a, b));
        let rule = ClusterRule { centers };
        rule.validate()?;
        Ok(rule)
    }

    pub fn num_clusters(&self) -> usize {
        self.centers.len()
    }

    pub fn dim(&self) -> usize {
        self.centers.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.centers.is_empty() {
            return Err(HohsmmError::Schema("cluster rule has no centers".into()));
        }
        let strictly_ordered = self
            .centers
            .windows(2)
            .all(|w| canonical_cmp(&w[0], &w[1]) == std::cmp::Ordering::Less);
        if !strictly_ordered {
            return Err(HohsmmError::Schema(
                "cluster centers are not strictly ordered".into(),
            ));
        }
        Ok(())
    }

    /// Label of the nearest center; ties go to the lower label.
    pub fn assign(&self, point: &[f64]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (k, center) in self.centers.iter().enumerate() {
            let d = euclidean(center, point);
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        best
    }
}

fn canonical_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Equal => continue,
            other => return other,
        }
    }
    std::cmp::Ordering::Equal
}

const KMEANS_RESTARTS: usize = 10;
const KMEANS_MAX_ITERS: usize = 100;

/// k-means with `C` clusters and 10 k-means++ restarts; the lowest-inertia
/// solution wins and its centers are returned in canonical order.
pub fn fit_cluster_rule<R: Rng + ?Sized>(
    all_centers: &[Vec<f64>],
    num_clusters: usize,
    rng: &mut R,
) -> Result<ClusterRule> {
    if num_clusters == 0 {
        return Err(HohsmmError::InvalidConfig("need at least one cluster".into()));
    }
    let mut distinct: Vec<&Vec<f64>> = all_centers.iter().collect();
    distinct.sort_by(|a, b| canonical_cmp(a, b));
    distinct.dedup_by(|a, b| canonical_cmp(a, b) == std::cmp::Ordering::Equal);
    if distinct.len() < num_clusters {
        return Err(HohsmmError::UnderPopulated {
            needed: num_clusters,
            found: distinct.len(),
        });
    }
    let mut best: Option<(f64, Vec<Vec<f64>>)> = None;
    for _ in 0..KMEANS_RESTARTS {
        let (inertia, centers) = lloyd(all_centers, num_clusters, rng);
        if best.as_ref().is_none_or(|(b, _)| inertia < *b) {
            best = Some((inertia, centers));
        }
    }
    ClusterRule::new(best.expect("at least one restart").1)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centers: &[Vec<f64>], p: &[f64]) -> (usize, f64) {
    centers
        .iter()
        .enumerate()
        .map(|(k, c)| (k, sq_dist(c, p)))
        .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc })
}

fn lloyd<R: Rng + ?Sized>(points: &[Vec<f64>], k: usize, rng: &mut R) -> (f64, Vec<Vec<f64>>) {
    let dim = points[0].len();
    // k-means++ seeding
    let mut centers = vec![points[rng.random_range(0..points.len())].clone()];
    while centers.len() < k {
        let weights: Vec<f64> = points.iter().map(|p| nearest(&centers, p).1).collect();
        let total: f64 = weights.iter().sum();
        let idx = if total > 0.0 {
            crate::dist::sample_categorical(rng, &weights)
        } else {
            rng.random_range(0..points.len())
        };
        centers.push(points[idx].clone());
    }
    let mut labels = vec![usize::MAX; points.len()];
    for _ in 0..KMEANS_MAX_ITERS {
        let mut changed = false;
        for (label, p) in labels.iter_mut().zip(points) {
            let (n, _) = nearest(&centers, p);
            if *label != n {
                *label = n;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (&label, p) in labels.iter().zip(points) {
            counts[label] += 1;
            for (s, x) in sums[label].iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // reseed an empty cluster at the point farthest from its center
                let far = points
                    .iter()
                    .enumerate()
                    .map(|(i, p)| (i, sq_dist(p, &centers[labels[i]])))
                    .fold((0, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc })
                    .0;
                centers[c] = points[far].clone();
                labels[far] = c;
                changed = true;
            } else {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        if !changed {
            break;
        }
    }
    let inertia = points.iter().map(|p| nearest(&centers, p).1).sum();
    (inertia, centers)
}

/// Final segmentation of one trajectory with its super-state labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSegmentation {
    pub boundaries: Vec<usize>,
    pub durations: Vec<usize>,
    pub states: Vec<usize>,
}

impl LabeledSegmentation {
    pub fn num_segments(&self) -> usize {
        self.states.len()
    }

    pub fn total_length(&self) -> usize {
        self.durations.iter().sum()
    }

    /// Check the structural invariants against a trajectory length.
    pub fn validate(&self, len: usize) -> Result<()> {
        let n = self.states.len();
        if self.durations.len() != n || self.boundaries.len() != n || n == 0 {
            return Err(HohsmmError::Schema("segmentation vectors disagree in length".into()));
        }
        if self.total_length() != len {
            return Err(HohsmmError::Schema(format!(
                "durations sum to {} but trajectory has {len} points",
                self.total_length()
            )));
        }
        if self.durations.contains(&0) {
            return Err(HohsmmError::Schema("zero-length segment".into()));
        }
        if self.states.windows(2).any(|w| w[0] == w[1]) {
            return Err(HohsmmError::Schema("adjacent segments share a state".into()));
        }
        Ok(())
    }

    /// Per-segment sufficient statistics of a univariate trajectory.
    pub fn stats(&self, traj: &Trajectory) -> Vec<SegmentStats> {
        segment_ranges(traj.len(), &self.boundaries)
            .map(|(start, end)| SegmentStats::from_values(&traj.values()[start..end]))
            .collect()
    }

    /// State of every time point.
    pub fn pointwise_states(&self) -> Vec<usize> {
        self.states
            .iter()
            .zip(&self.durations)
            .flat_map(|(&s, &d)| std::iter::repeat_n(s, d))
            .collect()
    }
}

/// Count, mean and centered sum of squares of one segment's observations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentStats {
    pub count: usize,
    pub mean: f64,
    pub m2: f64,
}

impl SegmentStats {
    pub fn from_values(values: &[f64]) -> Self {
        let mut stats = SegmentStats {
            count: 0,
            mean: 0.0,
            m2: 0.0,
        };
        for &y in values {
            stats.count += 1;
            let delta = y - stats.mean;
            stats.mean += delta / stats.count as f64;
            stats.m2 += delta * (y - stats.mean);
        }
        stats
    }

    /// Pooled statistics of two disjoint groups.
    pub fn merge(&self, other: &SegmentStats) -> SegmentStats {
        if self.count == 0 {
            return *other;
        }
        if other.count == 0 {
            return *self;
        }
        let n = (self.count + other.count) as f64;
        let delta = other.mean - self.mean;
        SegmentStats {
            count: self.count + other.count,
            mean: self.mean + delta * other.count as f64 / n,
            m2: self.m2 + other.m2 + delta * delta * self.count as f64 * other.count as f64 / n,
        }
    }
}

/// Merge runs of equal labels, summing their durations.
pub fn merge_runs(labels: &[usize], durations: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut out_labels: Vec<usize> = Vec::with_capacity(labels.len());
    let mut out_durations: Vec<usize> = Vec::with_capacity(labels.len());
    for (&l, &d) in labels.iter().zip(durations) {
        match out_labels.last() {
            Some(&prev) if prev == l => *out_durations.last_mut().unwrap() += d,
            _ => {
                out_labels.push(l);
                out_durations.push(d);
            }
        }
    }
    (out_labels, out_durations)
}

/// Label each segment by its nearest rule center and merge equal neighbours.
pub fn label_and_merge(
    traj: &Trajectory,
    boundaries: &[usize],
    rule: &ClusterRule,
) -> LabeledSegmentation {
    let labels: Vec<usize> = segment_centers(traj, boundaries)
        .iter()
        .map(|c| rule.assign(c))
        .collect();
    let durations: Vec<usize> = segment_ranges(traj.len(), boundaries)
        .map(|(s, e)| e - s)
        .collect();
    let (states, durations) = merge_runs(&labels, &durations);
    let mut boundaries = Vec::with_capacity(durations.len());
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

/// Change-point detection followed by labeling with an existing rule.
pub fn segment_with_rule(traj: &Trajectory, alpha: f64, rule: &ClusterRule) -> LabeledSegmentation {
    let boundaries = boundaries_from_changepoints(&detect_changepoints(traj, alpha));
    label_and_merge(traj, &boundaries, rule)
}

/// Segment every trajectory at `alpha`, fit a fresh cluster rule on the pooled
/// raw-segment centers and label/merge each trajectory with it.
pub fn segment_all<R: Rng + ?Sized>(
    trajectories: &[Trajectory],
    alpha: f64,
    num_states: usize,
    rng: &mut R,
) -> Result<(ClusterRule, Vec<LabeledSegmentation>)> {
    let boundaries: Vec<Vec<usize>> = trajectories
        .iter()
        .map(|tr| boundaries_from_changepoints(&detect_changepoints(tr, alpha)))
        .collect();
    let pooled: Vec<Vec<f64>> = trajectories
        .iter()
        .zip(&boundaries)
        .flat_map(|(tr, b)| segment_centers(tr, b))
        .collect();
    let rule = fit_cluster_rule(&pooled, num_states, rng)?;
    let segs = trajectories
        .iter()
        .zip(&boundaries)
        .map(|(tr, b)| label_and_merge(tr, b, &rule))
        .collect();
    Ok((rule, segs))
}
