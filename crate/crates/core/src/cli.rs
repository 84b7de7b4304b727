//! The `hohsmm` command line.
//!
//! Every subcommand reads an optional JSON [`RunConfig`]; flags given on the
//! command line override it. Outputs go to `--out-dir` and are written
//! atomically.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decoder::{decode, DecodeConfig, DecodeResult};
use crate::error::{HohsmmError, Result};
use crate::features::{
    default_columns, fit_pca, fpc_transform, generate_fleet, generate_synthetic, load_rul_file,
    FleetConfig, PcaRule, SensorTable, SyntheticConfig,
};
use crate::io::{read_json, read_trace_draws, read_trajectories, trace_to_ndjson, write_atomic, write_json, write_trajectories};
use crate::metrics::mean_absolute_error;
use crate::model::{HohsmmModel, ModelSpec};
use crate::rul::{estimate_rul, piecewise_true_rul, RulConfig, RulEstimate};
use crate::sampler::{fit, GibbsConfig, ParameterDraw, PosteriorDraws};
use crate::segmentation::Trajectory;

pub const MODEL_FILE: &str = "model.json";
pub const TRACE_FILE: &str = "trace.ndjson";
pub const PCA_FILE: &str = "pca.json";

#[derive(Debug, Parser)]
#[command(name = "hohsmm", version, about = "Higher-order hidden semi-Markov models for prognostics")]
pub struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Directory for output files.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic data with known ground truth.
    Simulate(SimulateArgs),
    /// Fit a model to training trajectories or a sensor table.
    Train(TrainArgs),
    /// Decode the hidden states of new sequences.
    Decode(DecodeArgs),
    /// Predict the remaining useful life of each unit.
    PredictRul(PredictArgs),
    /// Score RUL predictions over each unit's life against the truth.
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimulateKind {
    /// Univariate sequences from a random full-order chain.
    Synthetic,
    /// Sensor tables of a run-to-failure fleet.
    Fleet,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value = "synthetic")]
    pub kind: SimulateKind,
    #[arg(long)]
    pub num_sequences: Option<usize>,
    #[arg(long)]
    pub min_len: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub states: Option<usize>,
    #[arg(long)]
    pub order: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DataFormat {
    /// Guess from the first line: a `unit,cycle,...` header means trajectories.
    Auto,
    /// `unit,cycle,value` trajectory CSV.
    Trajectories,
    /// Whitespace/comma sensor table with 3 settings and 21 sensors.
    Sensor,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Input data file.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "auto")]
    pub format: DataFormat,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub input: DataArgs,
    /// Number of hidden states C.
    #[arg(long)]
    pub states: Option<usize>,
    /// Highest lag q considered.
    #[arg(long)]
    pub order: Option<usize>,
    #[arg(long)]
    pub outer_iters: Option<usize>,
    #[arg(long)]
    pub stage1_iters: Option<usize>,
    #[arg(long)]
    pub stage2_iters: Option<usize>,
    /// Trailing segments per sequence used to identify the failure state.
    #[arg(long)]
    pub failure_window: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub input: DataArgs,
    #[arg(long)]
    pub sweeps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub input: DataArgs,
    /// Simulated paths per unit.
    #[arg(long)]
    pub paths: Option<usize>,
    /// Override the failure state stored in the model.
    #[arg(long)]
    pub failure_state: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub input: DataArgs,
    /// Remaining life after the last row of each unit, one per line. Without
    /// it every unit is taken to fail at its last row.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub paths: Option<usize>,
    /// Evaluate every `stride`-th cycle.
    #[arg(long)]
    pub stride: Option<usize>,
    /// Plateau of the piecewise-linear true RUL.
    #[arg(long)]
    pub cap: Option<f64>,
    #[arg(long)]
    pub failure_state: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub stride: usize,
    pub cap: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { stride: 5, cap: 130.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpecConfig {
    pub num_states: usize,
    pub max_order: usize,
}

impl Default for SpecConfig {
    fn default() -> Self {
        SpecConfig {
            num_states: 7,
            max_order: 3,
        }
    }
}

/// Parameters of every subcommand in one file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: Option<usize>,
    pub model: SpecConfig,
    pub gibbs: GibbsConfig,
    pub synthetic: SyntheticConfig,
    pub fleet: FleetConfig,
    pub decode: DecodeConfig,
    pub rul: RulConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

fn create_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| HohsmmError::io(dir, e))
}

struct Input {
    trajectories: Vec<Trajectory>,
}

fn detect_format(path: &Path, format: DataFormat) -> Result<DataFormat> {
    if format != DataFormat::Auto {
        return Ok(format);
    }
    let text = std::fs::read_to_string(path).map_err(|e| HohsmmError::io(path, e))?;
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    Ok(if first.trim_start().starts_with("unit") {
        DataFormat::Trajectories
    } else {
        DataFormat::Sensor
    })
}

fn load_input(args: &DataArgs, pca: Option<&PcaRule>) -> Result<(Input, Option<PcaRule>)> {
    match detect_format(&args.data, args.format)? {
        DataFormat::Sensor => {
            let table = SensorTable::load(&args.data)?;
            let rule = match pca {
                Some(r) => r.clone(),
                None => fit_pca(&table, &default_columns())?,
            };
            let trajectories = fpc_transform(&rule, &table)?;
            Ok((
                Input { trajectories },
                Some(rule),
            ))
        }
        _ => Ok((
            Input {
                trajectories: read_trajectories(&args.data)?,
            },
            None,
        )),
    }
}

/// Model, posterior draws and PCA rule found next to a model file.
struct Trained {
    model: HohsmmModel,
    draws: Vec<ParameterDraw>,
    pca: Option<PcaRule>,
}

fn load_trained(model_path: &Path) -> Result<Trained> {
    let text = std::fs::read_to_string(model_path).map_err(|e| HohsmmError::io(model_path, e))?;
    let model = HohsmmModel::from_json(&text)?;
    let dir = model_path.parent().unwrap_or(Path::new("."));
    let trace = dir.join(TRACE_FILE);
    let draws = if trace.exists() {
        read_trace_draws(&trace)?
    } else {
        Vec::new()
    };
    let pca_path = dir.join(PCA_FILE);
    let pca = if pca_path.exists() {
        Some(read_json(&pca_path)?)
    } else {
        None
    };
    Ok(Trained { model, draws, pca })
}

fn load_eval_input(args: &DataArgs, trained: &Trained) -> Result<Input> {
    let format = detect_format(&args.data, args.format)?;
    if format == DataFormat::Sensor && trained.pca.is_none() {
        return Err(HohsmmError::Schema(format!(
            "sensor input needs the {PCA_FILE} written by training next to the model"
        )));
    }
    Ok(load_input(
        &DataArgs {
            data: args.data.clone(),
            format,
        },
        trained.pca.as_ref(),
    )?
    .0)
}

#[derive(Debug, Serialize)]
struct LagInclusion {
    lag: usize,
    probability: f64,
}

#[derive(Debug, Serialize)]
struct TrainReport {
    alpha_star: f64,
    alpha_acceptance_rate: f64,
    k: Vec<usize>,
    inclusion: Vec<LagInclusion>,
    emission_mu: Vec<f64>,
    emission_sigma: Vec<f64>,
    duration_xi: Vec<f64>,
    failure_state: Option<usize>,
    segment_counts: Vec<usize>,
    raw_segment_counts: Vec<usize>,
    num_draws: usize,
    units: Vec<String>,
    pca_explained_variance: Option<f64>,
}

fn train_report(model: &HohsmmModel, post: &PosteriorDraws, trs: &[Trajectory], pca: Option<&PcaRule>) -> TrainReport {
    let accepted = post.outer.iter().filter(|o| o.accepted).count();
    TrainReport {
        alpha_star: model.alpha_star,
        alpha_acceptance_rate: accepted as f64 / post.outer.len().max(1) as f64,
        k: model.lags.k().to_vec(),
        inclusion: post
            .inclusion
            .iter()
            .enumerate()
            .map(|(j, &p)| LagInclusion {
                lag: j + 1,
                probability: p,
            })
            .collect(),
        emission_mu: model.emissions.mu.clone(),
        emission_sigma: model.emissions.sigma.clone(),
        duration_xi: model.durations.xi.clone(),
        failure_state: model.failure_state,
        segment_counts: post.segmentations.iter().map(|s| s.num_segments()).collect(),
        raw_segment_counts: post.raw_segment_counts.clone(),
        num_draws: post.draws.len(),
        units: trs.iter().map(|t| t.unit_id.clone()).collect(),
        pca_explained_variance: pca.map(|p| p.explained_variance),
    }
}

fn cmd_simulate(args: &SimulateArgs, cfg: &mut RunConfig, out: &Path, rng: &mut ChaCha8Rng) -> Result<()> {
    match args.kind {
        SimulateKind::Synthetic => {
            let sc = &mut cfg.synthetic;
            if let Some(p) = args.num_sequences {
                sc.num_sequences = p;
            }
            if let Some(v) = args.min_len {
                sc.min_len = v;
            }
            if let Some(v) = args.max_len {
                sc.max_len = v;
            }
            if let Some(c) = args.states {
                if c != sc.num_states {
                    return Err(HohsmmError::InvalidConfig(
                        "changing the number of states needs mu, sigma and xi in the config file".into(),
                    ));
                }
            }
            if let Some(q) = args.order {
                sc.order = q;
            }
            sc.validate()?;
            let (trs, truth) = generate_synthetic(sc, rng)?;
            create_out_dir(out)?;
            write_trajectories(&out.join("trajectories.csv"), &trs)?;
            write_json(&out.join("ground_truth.json"), &truth)?;
            println!(
                "simulated {} sequences of lengths {:?} (C = {}, q = {})",
                trs.len(),
                trs.iter().map(Trajectory::len).collect::<Vec<_>>(),
                sc.num_states,
                sc.order
            );
            println!("mu = {:?}, sigma = {:?}, xi = {:?}", sc.mu, sc.sigma, sc.xi);
            println!("true segment counts {:?}", truth.segment_counts());
        }
        SimulateKind::Fleet => {
            let fc = &mut cfg.fleet;
            if let Some(p) = args.num_sequences {
                fc.num_train = p;
            }
            if args.min_len.is_some() || args.max_len.is_some() || args.states.is_some() || args.order.is_some() {
                return Err(HohsmmError::InvalidConfig(
                    "fleet simulation takes its settings from the config file".into(),
                ));
            }
            let fleet = generate_fleet(fc, rng)?;
            create_out_dir(out)?;
            write_atomic(&out.join("train_fleet.txt"), fleet.train.to_text().as_bytes())?;
            write_atomic(&out.join("test_fleet.txt"), fleet.test.to_text().as_bytes())?;
            write_atomic(&out.join("rul_fleet.txt"), fleet.rul_text().as_bytes())?;
            write_json(&out.join("fleet_truth.json"), &fleet)?;
            println!(
                "simulated {} training and {} test units with {} health levels",
                fleet.train.units.len(),
                fleet.test.units.len(),
                fc.num_levels()
            );
        }
    }
    Ok(())
}

fn cmd_train(args: &TrainArgs, cfg: &mut RunConfig, out: &Path, rng: &mut ChaCha8Rng) -> Result<()> {
    if let Some(c) = args.states {
        cfg.model.num_states = c;
    }
    if let Some(q) = args.order {
        cfg.model.max_order = q;
    }
    if let Some(v) = args.outer_iters {
        cfg.gibbs.outer_iters = v;
    }
    if let Some(v) = args.stage1_iters {
        cfg.gibbs.stage1_iters = v;
    }
    if let Some(v) = args.stage2_iters {
        cfg.gibbs.stage2_iters = v;
    }
    if let Some(v) = args.failure_window {
        cfg.gibbs.failure_window = v;
    }
    let spec = ModelSpec::new(cfg.model.num_states, cfg.model.max_order, cfg.seed)?;
    cfg.gibbs.validate()?;
    cfg.gibbs.hyper_for(&spec)?;
    let (input, pca) = load_input(&args.input, None)?;
    let (model, post) = fit(&input.trajectories, &spec, &cfg.gibbs, rng)?;
    create_out_dir(out)?;
    write_atomic(&out.join(MODEL_FILE), model.to_json()?.as_bytes())?;
    write_atomic(&out.join(TRACE_FILE), trace_to_ndjson(post.trace_records())?.as_bytes())?;
    let report = train_report(&model, &post, &input.trajectories, pca.as_ref());
    write_json(&out.join("report.json"), &report)?;
    if let Some(rule) = &pca {
        write_json(&out.join(PCA_FILE), rule)?;
    }
    println!(
        "trained C = {}, q = {}: alpha* = {:.4}, k = {:?}, failure state {:?}",
        spec.num_states,
        spec.max_order,
        model.alpha_star,
        model.lags.k(),
        model.failure_state
    );
    Ok(())
}

fn decode_all(trained: &Trained, trs: &[Trajectory], config: &DecodeConfig, rng: &mut ChaCha8Rng) -> Result<Vec<DecodeResult>> {
    trs.iter()
        .map(|t| decode(&trained.model, &trained.draws, t, config, rng))
        .collect()
}

fn cmd_decode(args: &DecodeArgs, cfg: &mut RunConfig, out: &Path, rng: &mut ChaCha8Rng) -> Result<()> {
    if let Some(s) = args.sweeps {
        cfg.decode.sweeps = s;
    }
    cfg.decode.validate()?;
    let trained = load_trained(&args.model)?;
    let input = load_eval_input(&args.input, &trained)?;
    let results = decode_all(&trained, &input.trajectories, &cfg.decode, rng)?;
    create_out_dir(out)?;
    write_json(&out.join("decode.json"), &results)?;
    for r in &results {
        println!(
            "unit {}: {} segments, last state {:?}",
            r.unit_id,
            r.decoded.len(),
            r.decoded.last()
        );
    }
    Ok(())
}

fn failure_state_of(model: &HohsmmModel, flag: Option<usize>) -> Result<usize> {
    flag.or(model.failure_state)
        .ok_or(HohsmmError::MissingModelField("failure state; pass --failure-state"))
}

#[derive(Debug, Serialize)]
struct UnitRul {
    unit_id: String,
    history: Vec<usize>,
    estimate: RulEstimate,
}

fn predict_unit(
    trained: &Trained,
    traj: &Trajectory,
    failure_state: usize,
    cfg: &RunConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Option<UnitRul>> {
    let q = trained.model.order();
    let decoded = decode(&trained.model, &trained.draws, traj, &cfg.decode, rng)?;
    if decoded.decoded.len() < q {
        return Ok(None);
    }
    let history = decoded.tail(q)?;
    let seed = rng.random::<u64>();
    let estimate = estimate_rul(&trained.model, &history, failure_state, &cfg.rul, seed)?;
    Ok(Some(UnitRul {
        unit_id: traj.unit_id.clone(),
        history,
        estimate,
    }))
}

fn cmd_predict(args: &PredictArgs, cfg: &mut RunConfig, out: &Path, rng: &mut ChaCha8Rng) -> Result<()> {
    if let Some(m) = args.paths {
        cfg.rul.num_paths = m;
    }
    cfg.decode.validate()?;
    let trained = load_trained(&args.model)?;
    let failure = failure_state_of(&trained.model, args.failure_state)?;
    let input = load_eval_input(&args.input, &trained)?;
    let mut results = Vec::new();
    for t in &input.trajectories {
        let r = predict_unit(&trained, t, failure, cfg, rng)?.ok_or_else(|| HohsmmError::TrajectoryTooShort {
            unit: t.unit_id.clone(),
            length: t.len(),
            needed: trained.model.order(),
        })?;
        println!("unit {}: mean RUL {:.2}", r.unit_id, r.estimate.mean_rul);
        results.push(r);
    }
    create_out_dir(out)?;
    write_json(&out.join("rul.json"), &results)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct EvalSummary {
    num_points: usize,
    mean_absolute_error: f64,
    per_unit_mae: Vec<(String, f64)>,
    skipped_prefixes: usize,
    stride: usize,
    cap: f64,
}

fn cmd_eval(args: &EvalArgs, cfg: &mut RunConfig, out: &Path, rng: &mut ChaCha8Rng) -> Result<()> {
    if let Some(m) = args.paths {
        cfg.rul.num_paths = m;
    }
    if let Some(s) = args.stride {
        cfg.eval.stride = s;
    }
    if let Some(c) = args.cap {
        cfg.eval.cap = c;
    }
    if cfg.eval.stride == 0 || !(cfg.eval.cap >= 0.0) {
        return Err(HohsmmError::InvalidConfig("stride must be positive and cap non-negative".into()));
    }
    cfg.decode.validate()?;
    let trained = load_trained(&args.model)?;
    let failure = failure_state_of(&trained.model, args.failure_state)?;
    let input = load_eval_input(&args.input, &trained)?;
    let n = input.trajectories.len();
    let residual = match &args.truth {
        Some(p) => load_rul_file(p)?,
        None => vec![0.0; n],
    };
    if residual.len() != n {
        return Err(HohsmmError::Schema(format!(
            "truth file has {} entries for {n} units",
            residual.len()
        )));
    }
    let q = trained.model.order();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["unit", "t", "true_rul", "predicted_rul"])?;
    let mut all_pred = Vec::new();
    let mut all_true = Vec::new();
    let mut per_unit = Vec::new();
    let mut skipped = 0;
    for (traj, &extra) in input.trajectories.iter().zip(&residual) {
        let life = traj.len() + extra.round() as usize;
        let truth = piecewise_true_rul(life, cfg.eval.cap);
        let mut unit_pred = Vec::new();
        let mut unit_true = Vec::new();
        let mut t = traj.len() % cfg.eval.stride;
        if t == 0 {
            t = cfg.eval.stride;
        }
        while t <= traj.len() {
            let prefix = traj.prefix(t);
            let pred = if t < q + 2 {
                None
            } else {
                predict_unit(&trained, &prefix, failure, cfg, rng)?
            };
            match pred {
                Some(p) => {
                    let rul = p.estimate.mean_rul;
                    w.write_record([
                        traj.unit_id.clone(),
                        t.to_string(),
                        truth[t - 1].to_string(),
                        rul.to_string(),
                    ])?;
                    unit_pred.push(rul);
                    unit_true.push(truth[t - 1]);
                }
                None => skipped += 1,
            }
            t += cfg.eval.stride;
        }
        if !unit_pred.is_empty() {
            per_unit.push((traj.unit_id.clone(), mean_absolute_error(&unit_pred, &unit_true)?));
        }
        all_pred.extend(unit_pred);
        all_true.extend(unit_true);
    }
    let mae = mean_absolute_error(&all_pred, &all_true)?;
    let bytes = w.into_inner().map_err(|e| HohsmmError::Schema(e.to_string()))?;
    create_out_dir(out)?;
    write_atomic(&out.join("metrics.csv"), &bytes)?;
    let summary = EvalSummary {
        num_points: all_pred.len(),
        mean_absolute_error: mae,
        per_unit_mae: per_unit,
        skipped_prefixes: skipped,
        stride: cfg.eval.stride,
        cap: cfg.eval.cap,
    };
    write_json(&out.join("eval.json"), &summary)?;
    println!("MAE {:.3} over {} points ({} prefixes skipped)", mae, summary.num_points, skipped);
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.threads = Some(t);
    }
    if let Some(t) = cfg.threads {
        if t == 0 {
            return Err(HohsmmError::InvalidConfig("--threads must be at least 1".into()));
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let out = cli.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a, &mut cfg, &out, &mut rng),
        Command::Train(a) => cmd_train(a, &mut cfg, &out, &mut rng),
        Command::Decode(a) => cmd_decode(a, &mut cfg, &out, &mut rng),
        Command::PredictRul(a) => cmd_predict(a, &mut cfg, &out, &mut rng),
        Command::Eval(a) => cmd_eval(a, &mut cfg, &out, &mut rng),
    }
}

/// Exit code for an error: 3 for numerical failures, 2 for everything else.
pub fn exit_code(err: &HohsmmError) -> u8 {
    if err.is_numerical() {
        3
    } else {
        2
    }
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
