#![allow(dead_code)]

use hohsmm::dist::dirichlet;
use hohsmm::features::synthetic::simulate_sequence;
use hohsmm::model::{
    AllocationDistributions, DurationParams, EmissionParams, HohsmmModel, LagSpec, ModelSpec,
    RowTensor, TransitionTensor, TransitionView,
};
use hohsmm::sampler::{count_transitions, run_stages, sequence_states, GibbsConfig};
use hohsmm::segmentation::{
    merge_runs, segment_all, ClusterRule, JumpSupport, LabeledSegmentation, Trajectory,
};
use hohsmm::HohsmmError;
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixture(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Random `k` with `k[0] = C` and later lags in `1..=C`.
pub fn random_k<R: Rng>(rng: &mut R, c: usize, q: usize) -> Vec<usize> {
    (0..q).map(|j| if j == 0 { c } else { rng.random_range(1..=c) }).collect()
}

/// A model with Dirichlet rows and soft allocations.
pub fn random_model<R: Rng>(rng: &mut R, c: usize, k: Vec<usize>) -> HohsmmModel {
    let q = k.len();
    let lags = LagSpec::new(k, c).unwrap();
    let mut lambda = RowTensor::zeros(lags.k(), c);
    for r in 0..lambda.num_rows() {
        let i = lambda.leading_class(r);
        let row = loop {
            let row = dirichlet(rng, &vec![1.0; c]);
            if row[i] < 0.99 {
                break row;
            }
        };
        lambda.row_mut(r).copy_from_slice(&row);
    }
    let transitions = TransitionTensor::from_lambda(lambda, dirichlet(rng, &vec![1.0; c])).unwrap();
    let mut allocations = AllocationDistributions::identity(&LagSpec::full(c, q));
    for j in 1..q {
        for s in 0..c {
            allocations.pi[j][s] = dirichlet(rng, &vec![0.8; lags.k()[j]]);
        }
    }
    let mu: Vec<f64> = (0..c).map(|s| 3.0 * s as f64).collect();
    HohsmmModel {
        spec: ModelSpec::new(c, q, 0).unwrap(),
        lags,
        transitions,
        allocations,
        emissions: EmissionParams::new(mu.clone(), vec![0.5; c]).unwrap(),
        durations: DurationParams::new((0..c).map(|s| 2.0 + s as f64).collect()).unwrap(),
        alpha_star: 1.0,
        jump_support: JumpSupport {
            alpha_min: 0.1,
            alpha_max: 2.0,
        },
        cluster_rule: ClusterRule::new(mu.iter().map(|&m| vec![m]).collect()).unwrap(),
        failure_state: Some(c - 1),
    }
}

/// Transition probability by summing over every latent tuple `(h_1..h_q)`,
/// lag 1 included, straight from the model definition.
pub fn enumerated_transition(model: &HohsmmModel, history: &[usize], next: usize) -> f64 {
    let q = model.order();
    let k = model.lags.k();
    let lambda_bar = &model.transitions.lambda_bar;
    let total: usize = k.iter().product();
    let mut acc = 0.0;
    for code in 0..total {
        let mut rest = code;
        let mut h = vec![0usize; q];
        for j in (0..q).rev() {
            h[j] = rest % k[j];
            rest /= k[j];
        }
        let mut w = 1.0;
        for j in 0..q {
            w *= model.allocations.pi[j][history[q - 1 - j]][h[j]];
        }
        acc += w * lambda_bar.row(lambda_bar.row_index(&h))[next];
    }
    acc
}

/// `P(c_{T+r} = next | history)` by summing over every intermediate path.
pub fn enumerated_r_step(model: &HohsmmModel, history: &[usize], next: usize, r: usize) -> f64 {
    if r == 1 {
        return enumerated_transition(model, history, next);
    }
    let c = model.num_states();
    (0..c)
        .map(|s| {
            let p = enumerated_transition(model, history, s);
            if p == 0.0 {
                return 0.0;
            }
            let mut h = history[1..].to_vec();
            h.push(s);
            p * enumerated_r_step(model, &h, next, r - 1)
        })
        .sum()
}

pub fn all_histories(c: usize, q: usize) -> Vec<Vec<usize>> {
    (0..c.pow(q as u32))
        .map(|mut code| {
            let mut h = vec![0; q];
            for slot in h.iter_mut().rev() {
                *slot = code % c;
                code /= c;
            }
            h
        })
        .collect()
}

fn check(cond: bool, msg: impl Into<String>) -> Result<(), TestCaseError> {
    if cond {
        Ok(())
    } else {
        Err(TestCaseError::fail(msg.into()))
    }
}

pub fn model_params() -> impl Strategy<Value = (usize, usize, u64)> {
    (2usize..=4, 1usize..=3, any::<u64>())
}

/// No state can follow itself: zero diagonal in every stored row, in every
/// predictive distribution and in the counts of simulated chains.
pub fn prop_zero_self_transitions((c, q, seed): (usize, usize, u64)) -> Result<(), TestCaseError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = random_k(&mut rng, c, q);
    let model = random_model(&mut rng, c, k);
    let lb = &model.transitions.lambda_bar;
    for r in 0..lb.num_rows() {
        check(lb.row(r)[lb.leading_class(r)] == 0.0, format!("row {r} keeps self mass"))?;
    }
    let view = model.chain();
    for h in all_histories(c, q) {
        let d = view.transition_distribution(&h).unwrap();
        check(d[h[q - 1]] == 0.0, format!("history {h:?} can repeat"))?;
    }
    let (_, seg) = simulate_sequence(&model, 200, "p", &mut rng).unwrap();
    check(seg.states.windows(2).all(|w| w[0] != w[1]), "simulated chain repeats a state")?;
    let z: Vec<Vec<usize>> = (0..seg.states.len())
        .map(|t| (0..q).map(|j| if t > j { seg.states[t - j - 1] } else { 0 }).collect())
        .collect();
    let full = LagSpec::full(c, q);
    let counts = count_transitions(&[seg.states.clone()], &[z], &full).unwrap();
    for r in 0..counts.num_rows() {
        check(counts.row(r)[counts.leading_class(r)] == 0, "self-transition counted")?;
    }
    Ok(())
}

fn normalized(v: &[f64]) -> bool {
    v.iter().all(|&x| x >= 0.0) && (v.iter().sum::<f64>() - 1.0).abs() <= 1e-10
}

/// Every probability vector in a model and its predictive distributions sums to one.
pub fn prop_normalized((c, q, seed): (usize, usize, u64)) -> Result<(), TestCaseError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = random_k(&mut rng, c, q);
    let model = random_model(&mut rng, c, k);
    let t = &model.transitions;
    check(t.lambda.rows().all(normalized), "lambda row")?;
    check(t.lambda_bar.rows().all(normalized), "lambda_bar row")?;
    check(normalized(&t.lambda0), "lambda0")?;
    check(model.allocations.pi.iter().flatten().all(|r| normalized(r)), "allocation row")?;
    let view: TransitionView<'_> = model.chain();
    for h in all_histories(c, q) {
        check(normalized(&view.transition_distribution(&h).unwrap()), format!("history {h:?}"))?;
        let r = 1 + (seed % 3) as usize;
        check(normalized(&view.r_step_transition(&h, r).unwrap()), format!("{r}-step from {h:?}"))?;
    }
    Ok(())
}

pub fn series() -> impl Strategy<Value = (Vec<f64>, f64, usize, u64)> {
    (
        prop::collection::vec(-10.0f64..10.0, 2..150),
        0.0f64..8.0,
        2usize..=4,
        any::<u64>(),
    )
}

fn check_segmentation(seg: &LabeledSegmentation, len: usize) -> Result<(), TestCaseError> {
    check(seg.durations.iter().sum::<usize>() == len, "durations do not cover the sequence")?;
    check(seg.durations.iter().all(|&d| d >= 1), "empty segment")?;
    check(seg.validate(len).is_ok(), "segmentation fails validation")
}

/// Segmentations and simulated sequences partition the time axis exactly.
pub fn prop_durations_cover((values, alpha, c, seed): (Vec<f64>, f64, usize, u64)) -> Result<(), TestCaseError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = values.len();
    let tr = Trajectory::univariate("p", values).unwrap();
    match segment_all(std::slice::from_ref(&tr), alpha, c, &mut rng) {
        Ok((_, segs)) => check_segmentation(&segs[0], len)?,
        Err(HohsmmError::UnderPopulated { .. }) => {}
        Err(e) => return Err(TestCaseError::fail(e.to_string())),
    }
    let k = random_k(&mut rng, c, 2);
    let model = random_model(&mut rng, c, k);
    let t_p = 3 + (seed % 200) as usize;
    let (sim, seg) = simulate_sequence(&model, t_p, "s", &mut rng).unwrap();
    check(sim.len() == t_p, "simulated length")?;
    check_segmentation(&seg, t_p)
}

pub fn labels() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (1usize..80).prop_flat_map(|n| (prop::collection::vec(0usize..4, n), prop::collection::vec(1usize..20, n)))
}

/// Merging leaves no equal neighbours and preserves total duration.
pub fn prop_merged_labels_differ((labels, durations): (Vec<usize>, Vec<usize>)) -> Result<(), TestCaseError> {
    let (l, d) = merge_runs(&labels, &durations);
    check(l.windows(2).all(|w| w[0] != w[1]), "equal neighbours after merge")?;
    check(d.iter().sum::<usize>() == durations.iter().sum::<usize>(), "total duration changed")?;
    let values: Vec<f64> = labels
        .iter()
        .zip(&durations)
        .flat_map(|(&s, &n)| std::iter::repeat_n(3.0 * s as f64, n))
        .collect();
    let tr = Trajectory::univariate("m", values).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(labels.len() as u64);
    if let Ok((_, segs)) = segment_all(std::slice::from_ref(&tr), 1.0, 2, &mut rng) {
        check(segs[0].states.windows(2).all(|w| w[0] != w[1]), "segment_all left equal neighbours")?;
    }
    Ok(())
}

/// Simulation, segmentation and a short sampler run are functions of the seed.
pub fn prop_deterministic(seed: u64) -> Result<(), TestCaseError> {
    let run = |seed: u64| -> hohsmm::Result<_> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_model(&mut rng, 3, vec![3, 2]);
        let (tr, _) = simulate_sequence(&model, 60, "d", &mut rng)?;
        let (_, segs) = segment_all(std::slice::from_ref(&tr), 1.0, 3, &mut rng)?;
        let seqs = sequence_states(std::slice::from_ref(&tr), &segs, 2);
        let config = GibbsConfig {
            stage1_iters: 4,
            stage2_iters: 4,
            ..GibbsConfig::default()
        };
        let spec = ModelSpec::new(3, 2, 0)?;
        let draws: Vec<String> = run_stages(seqs, &spec, &config, 1.0, &mut rng)?
            .draws
            .iter()
            .map(|d| serde_json::to_string(d).unwrap())
            .collect();
        Ok((tr, segs, draws, rng.random::<u64>()))
    };
    match (run(seed), run(seed)) {
        (Ok(a), Ok(b)) => check(a == b, "same seed gave different output"),
        (Err(a), Err(b)) => check(a.to_string() == b.to_string(), "same seed gave different errors"),
        _ => Err(TestCaseError::fail("same seed succeeded once and failed once")),
    }
}
