//! Experiment harness: configuration resolution, evaluator specifications,
//! and the implementations behind the command-line entry points (train,
//! evaluate, ensemble, sweep, solve, show, replay).
//!
//! Configuration comes from flat `key = value` files plus flag overrides
//! (flags win); every training run writes a JSON manifest of the exact
//! resolved configuration so it can be replayed. `OTDL_THREADS` overrides
//! the configured worker count. Errors carry the process exit code:
//! 2 usage, 3 I/O, 4 configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{Board, Engine, EngineError};
use crate::learning::{
    harvest_stage_starts, multistage_train, train, Exploration, LearnError, LearnerConfig,
    LearningCurvePoint, LrBreakpoint, TrainReport, UpdateOrder, UpdateRule,
};
use crate::mcts::{MctsConfig, MctsError};
use crate::network::{
    default_thresholds, load_network, preset, save_network, Evaluator, MultistageNetwork,
    NTupleNetwork, NetworkError, ZeroEvaluator,
};
use crate::record::{replay, EpisodeRecord, RecordError, ReplayOutcome};
use crate::rng::SplitMix64;
use crate::search::{SearchConfig, SearchError, SolvedGame};
use crate::stats::{
    aggregate_runs, evaluate, record_policy_episode, EvalReport, ExpectimaxPolicy, GreedyPolicy,
    MctsPolicy, Policy, StrengthPolicy,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_CONFIG: i32 = 4;

#[derive(Error, Debug)]
pub enum HarnessError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Config(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Usage(_) => EXIT_USAGE,
            HarnessError::Io(_) => EXIT_IO,
            HarnessError::Config(_) => EXIT_CONFIG,
        }
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}

impl From<NetworkError> for HarnessError {
    fn from(e: NetworkError) -> Self {
        HarnessError::Config(e.to_string())
    }
}

impl From<LearnError> for HarnessError {
    fn from(e: LearnError) -> Self {
        HarnessError::Config(e.to_string())
    }
}

impl From<EngineError> for HarnessError {
    fn from(e: EngineError) -> Self {
        HarnessError::Config(e.to_string())
    }
}

impl From<SearchError> for HarnessError {
    fn from(e: SearchError) -> Self {
        HarnessError::Config(e.to_string())
    }
}

impl From<MctsError> for HarnessError {
    fn from(e: MctsError) -> Self {
        HarnessError::Config(e.to_string())
    }
}

impl From<RecordError> for HarnessError {
    fn from(e: RecordError) -> Self {
        HarnessError::Config(e.to_string())
    }
}

impl From<serde_json::Error> for HarnessError {
    fn from(e: serde_json::Error) -> Self {
        HarnessError::Config(e.to_string())
    }
}

fn config_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

/// Effective worker count: the `OTDL_THREADS` environment variable
/// overrides whatever was configured.
pub fn worker_count(configured: u32) -> Result<u32, HarnessError> {
    match std::env::var("OTDL_THREADS") {
        Ok(s) => match s.trim().parse::<u32>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(config_err(format!("OTDL_THREADS must be a positive integer, got '{s}'"))),
        },
        Err(_) => Ok(configured),
    }
}

// ---------------------------------------------------------------------------
// Flat key = value configuration files.
// ---------------------------------------------------------------------------

/// Parses a flat `key = value` file: one pair per line, `#` comments, blank
/// lines ignored. Keys normalize `_` to `-`.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>, HarnessError> {
    let mut map = BTreeMap::new();
    for (number, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| config_err(format!("line {}: expected 'key = value'", number + 1)))?;
        map.insert(key.trim().replace('_', "-"), value.trim().to_string());
    }
    Ok(map)
}

/// Key/value settings with consume-and-check semantics: every key must be
/// recognized, read values parse into their target types.
pub struct Settings {
    map: BTreeMap<String, String>,
}

impl Settings {
    /// Merges file entries (when given) with flag overrides; flags win.
    pub fn merged(
        file_text: Option<&str>,
        overrides: &[(&str, String)],
    ) -> Result<Settings, HarnessError> {
        let mut map = match file_text {
            Some(text) => parse_config(text)?,
            None => BTreeMap::new(),
        };
        for (key, value) in overrides {
            map.insert(key.replace('_', "-"), value.clone());
        }
        Ok(Settings { map })
    }

    pub fn take(&mut self, key: &str) -> Option<String> {
        self.map.remove(key)
    }

    pub fn take_parse<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>, HarnessError> {
        match self.map.remove(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|_| config_err(format!("invalid value '{raw}' for '{key}'"))),
        }
    }

    /// Errors on any unconsumed (unknown) key.
    pub fn finish(self) -> Result<(), HarnessError> {
        match self.map.into_keys().next() {
            None => Ok(()),
            Some(key) => Err(config_err(format!("unknown configuration key '{key}'"))),
        }
    }
}

// ---------------------------------------------------------------------------
// Training specification.
// ---------------------------------------------------------------------------

/// Fully resolved training run: written verbatim to the JSON manifest, so a
/// run is reproducible from the manifest alone.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainSpec {
    /// Tuple-pattern preset name.
    pub preset: String,
    pub symmetric: bool,
    /// Number of value-function stages.
    pub stages: usize,
    /// Greedy episodes played to collect each later stage's start pool.
    pub harvest_episodes: u64,
    pub config: LearnerConfig,
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec {
            preset: "yeh-4x6".into(),
            symmetric: true,
            stages: 1,
            harvest_episodes: 200,
            config: LearnerConfig::default(),
        }
    }
}

/// Builds a base configuration for an algorithm name: the optimistic
/// recipes (`otd`, `otc`, `otd-tc`) or a bare update rule (`td0`, `tc`,
/// `rectified`, `relu`, `nstep:N`, `lambda:L:H`).
pub fn base_train_config(algorithm: &str, total: u64) -> Result<LearnerConfig, HarnessError> {
    let rule = |algorithm: UpdateRule| LearnerConfig {
        algorithm,
        total_episodes: total,
        ..LearnerConfig::default()
    };
    match algorithm {
        "otd" => Ok(LearnerConfig::optimistic_td(total)),
        "otc" => Ok(LearnerConfig::optimistic_tc(total)),
        "otd-tc" | "otd+tc" => Ok(LearnerConfig::optimistic_td_tc(total)),
        "td0" => Ok(rule(UpdateRule::Td0)),
        "tc" => Ok(rule(UpdateRule::TemporalCoherence)),
        "rectified" => Ok(rule(UpdateRule::RectifiedTd)),
        "relu" => Ok(rule(UpdateRule::ReluTd)),
        _ => {
            if let Some(n) = algorithm.strip_prefix("nstep:") {
                let n = n.parse().map_err(|_| config_err("nstep:N needs an integer N"))?;
                return Ok(rule(UpdateRule::NStep(n)));
            }
            if let Some(rest) = algorithm.strip_prefix("lambda:") {
                let (l, h) = rest
                    .split_once(':')
                    .ok_or_else(|| config_err("lambda:L:H needs both L and H"))?;
                let lambda = l.parse().map_err(|_| config_err("lambda L must be a number"))?;
                let horizon = h.parse().map_err(|_| config_err("lambda horizon must be an integer"))?;
                return Ok(rule(UpdateRule::TdLambda { lambda, horizon }));
            }
            Err(config_err(format!(
                "unknown algorithm '{algorithm}' (try otd, otc, otd-tc, td0, tc, rectified, relu, nstep:N, lambda:L:H)"
            )))
        }
    }
}

fn parse_exploration(s: &str) -> Result<Exploration, HarnessError> {
    if s == "none" {
        return Ok(Exploration::None);
    }
    if let Some(v) = s.strip_prefix("epsilon:") {
        let initial = v.parse().map_err(|_| config_err("epsilon:X needs a number"))?;
        return Ok(Exploration::EpsilonGreedy { initial });
    }
    if let Some(v) = s.strip_prefix("softmax:") {
        let initial = v.parse().map_err(|_| config_err("softmax:X needs a number"))?;
        return Ok(Exploration::Softmax { initial });
    }
    Err(config_err(format!("unknown exploration '{s}' (none, epsilon:X, softmax:X)")))
}

fn parse_decay(s: &str) -> Result<Vec<LrBreakpoint>, HarnessError> {
    s.split(',')
        .filter(|part| !part.trim().is_empty())
        .map(|part| {
            let (f, a) = part
                .trim()
                .split_once(':')
                .ok_or_else(|| config_err("alpha-decay entries look like fraction:alpha"))?;
            Ok(LrBreakpoint {
                at_fraction: f.parse().map_err(|_| config_err("decay fraction must be a number"))?,
                alpha: a.parse().map_err(|_| config_err("decay alpha must be a number"))?,
            })
        })
        .collect()
}

/// Resolves a training spec from an optional config file plus flag
/// overrides, validating everything.
pub fn resolve_train_spec(
    file_text: Option<&str>,
    overrides: &[(&str, String)],
) -> Result<TrainSpec, HarnessError> {
    let mut s = Settings::merged(file_text, overrides)?;
    let total = s.take_parse("episodes")?.unwrap_or(1000);
    let mut config = match s.take("algorithm") {
        Some(name) => base_train_config(&name, total)?,
        None => LearnerConfig { total_episodes: total, ..LearnerConfig::default() },
    };
    if let Some(order) = s.take("order") {
        config.update_order = match order.as_str() {
            "forward" => UpdateOrder::Forward,
            "backward" => UpdateOrder::Backward,
            _ => return Err(config_err(format!("unknown update order '{order}'"))),
        };
    }
    if let Some(alpha) = s.take_parse("alpha")? {
        config.alpha = alpha;
    }
    if let Some(decay) = s.take("alpha-decay") {
        config.lr_decay = parse_decay(&decay)?;
    }
    if let Some(v) = s.take_parse("v-init")? {
        config.v_init = v;
    }
    if let Some(f) = s.take_parse("tc-fraction")? {
        config.tc_fraction = f;
    }
    if let Some(every) = s.take_parse::<u64>("reset-every")? {
        config.coherence_reset_every = (every > 0).then_some(every);
    }
    if let Some(every) = s.take_parse::<u64>("eval-every")? {
        config.eval_every = (every > 0).then_some(every);
    }
    if let Some(n) = s.take_parse("eval-episodes")? {
        config.eval_episodes = n;
    }
    if let Some(e) = s.take("exploration") {
        config.exploration = parse_exploration(&e)?;
    }
    if let Some(w) = s.take_parse("workers")? {
        config.workers = w;
    }
    config.workers = worker_count(config.workers)?;
    if let Some(seed) = s.take_parse("seed")? {
        config.seed = seed;
    }

    let spec = TrainSpec {
        preset: s.take("preset").unwrap_or_else(|| TrainSpec::default().preset),
        symmetric: s.take_parse("symmetric")?.unwrap_or(true),
        stages: s.take_parse("stages")?.unwrap_or(1),
        harvest_episodes: s.take_parse("harvest-episodes")?.unwrap_or(200),
        config,
    };
    s.finish()?;
    preset(&spec.preset)?;
    if spec.stages == 0 || spec.stages > 14 {
        return Err(config_err("stages must be in 1..=14"));
    }
    spec.config.validate()?;
    Ok(spec)
}

// ---------------------------------------------------------------------------
// Evaluator specifications.
// ---------------------------------------------------------------------------

/// Which policy evaluation plays with.
#[derive(Clone, Debug)]
pub enum EvaluatorSpec {
    Greedy,
    Expectimax(SearchConfig),
    Mcts(MctsConfig),
    Strength { mcts: MctsConfig, z: f64, r_th: f64 },
}

impl EvaluatorSpec {
    /// Parses packed forms: `greedy`, `expectimax[:depth]`,
    /// `mcts[:sims[:c]]`, `strength[:z:r_th]` (separators `:` or `,`).
    pub fn parse(s: &str) -> Result<EvaluatorSpec, HarnessError> {
        let mut parts = s.split([':', ',']);
        let head = parts.next().unwrap_or("");
        let rest: Vec<&str> = parts.collect();
        let num = |i: usize, what: &str| -> Result<f64, HarnessError> {
            rest[i].parse().map_err(|_| config_err(format!("{what} must be a number in '{s}'")))
        };
        match head {
            "greedy" if rest.is_empty() => Ok(EvaluatorSpec::Greedy),
            "expectimax" if rest.len() <= 1 => {
                let mut config = SearchConfig::default();
                if !rest.is_empty() {
                    config.depth = num(0, "depth")? as u32;
                }
                Ok(EvaluatorSpec::Expectimax(config))
            }
            "mcts" if rest.len() <= 2 => {
                let mut config = MctsConfig::default();
                if !rest.is_empty() {
                    config.simulations = num(0, "simulation count")? as u32;
                }
                if rest.len() > 1 {
                    config.exploration = num(1, "exploration constant")?;
                }
                Ok(EvaluatorSpec::Mcts(config))
            }
            "strength" if rest.is_empty() || rest.len() == 2 => {
                let (z, r_th) = if rest.is_empty() {
                    (1.0, 0.0)
                } else {
                    (num(0, "strength index z")?, num(1, "visit ratio r_th")?)
                };
                Ok(EvaluatorSpec::Strength { mcts: MctsConfig::default(), z, r_th })
            }
            _ => Err(config_err(format!(
                "unknown evaluator '{s}' (greedy, expectimax[:depth], mcts[:sims[:c]], strength[:z:r_th])"
            ))),
        }
    }

    /// Builds a fresh policy over the given value function.
    pub fn make_policy<'a>(
        &self,
        engine: &'a Engine,
        value: &'a (dyn Evaluator + Sync),
    ) -> Box<dyn Policy + 'a> {
        match self {
            EvaluatorSpec::Greedy => Box::new(GreedyPolicy::new(engine, value)),
            EvaluatorSpec::Expectimax(config) => {
                Box::new(ExpectimaxPolicy::new(engine, value, config.clone()))
            }
            EvaluatorSpec::Mcts(config) => Box::new(MctsPolicy::new(engine, value, *config)),
            EvaluatorSpec::Strength { mcts, z, r_th } => {
                Box::new(StrengthPolicy::new(engine, value, *mcts, *z, *r_th))
            }
        }
    }
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

/// Files written by a training run.
#[derive(Clone, Debug)]
pub struct TrainOutputs {
    pub network: PathBuf,
    pub manifest: PathBuf,
    /// One learning-curve CSV per stage.
    pub curves: Vec<PathBuf>,
    /// Pre-coherence-reset snapshots of stage 0.
    pub snapshots: Vec<PathBuf>,
    pub reports: Vec<TrainReport>,
}

fn write_curve(path: &Path, curve: &[LearningCurvePoint]) -> Result<(), HarnessError> {
    let mut out = String::from(
        "episodes,avg_score,max_score,rate_2048,rate_8192,rate_16384,rate_32768\n",
    );
    for p in curve {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            p.episodes, p.avg_score, p.max_score, p.rate_2048, p.rate_8192, p.rate_16384,
            p.rate_32768
        )
        .expect("writing to a String cannot fail");
    }
    fs::write(path, out)?;
    Ok(())
}

fn save_network_file(path: &Path, network: &MultistageNetwork) -> Result<(), HarnessError> {
    let mut bytes = Vec::new();
    save_network(&mut bytes, network, None)?;
    fs::write(path, bytes)?;
    Ok(())
}

/// Loads a network file and restores the standard routing-threshold ladder
/// for its stage count.
pub fn load_network_file(path: &Path, engine: &Engine) -> Result<MultistageNetwork, HarnessError> {
    let bytes = fs::read(path)?;
    let (mut network, _) = load_network(&mut bytes.as_slice(), engine)?;
    let stages = network.stage_count();
    network.set_thresholds(default_thresholds(stages))?;
    Ok(network)
}

/// Runs a full training job: stage 0 from the standard opening, each later
/// stage from a harvested start pool, writing the network, per-stage curve
/// CSVs, snapshot files, and the resolved-config manifest into `out_dir`.
pub fn cli_train(
    engine: &Engine,
    spec: &TrainSpec,
    out_dir: &Path,
) -> Result<TrainOutputs, HarnessError> {
    spec.config.validate()?;
    let tuples = preset(&spec.preset)?;
    fs::create_dir_all(out_dir)?;

    let stages: Vec<NTupleNetwork> = (0..spec.stages)
        .map(|_| NTupleNetwork::new(engine, tuples.clone(), spec.symmetric))
        .collect::<Result<_, _>>()?;
    let thresholds = default_thresholds(spec.stages);
    let network = MultistageNetwork::new(stages, thresholds.clone())?;

    let mut outputs = TrainOutputs {
        network: out_dir.join("network.ntnw"),
        manifest: out_dir.join("manifest.json"),
        curves: Vec::new(),
        snapshots: Vec::new(),
        reports: Vec::new(),
    };
    fs::write(&outputs.manifest, serde_json::to_string_pretty(spec)?)?;

    // Stage 0 trains from the normal opening; snapshots feed ensembling.
    let mut snapshot_paths: Vec<PathBuf> = Vec::new();
    let mut snapshot_error: Option<HarnessError> = None;
    {
        let mut sink = |index: u64, net: &NTupleNetwork| {
            let path = out_dir.join(format!("snapshot-{index:03}.ntnw"));
            let single = MultistageNetwork::single(net.snapshot());
            match save_network_file(&path, &single) {
                Ok(()) => snapshot_paths.push(path),
                Err(e) => snapshot_error = Some(e),
            }
        };
        let report = train(engine, network.stage(0), &spec.config, None, Some(&mut sink))?;
        let curve = out_dir.join("curve.csv");
        write_curve(&curve, &report.curve)?;
        outputs.curves.push(curve);
        outputs.reports.push(report);
    }
    if let Some(e) = snapshot_error {
        return Err(e);
    }
    outputs.snapshots = snapshot_paths;

    // Later stages start from states harvested at their own threshold.
    let mut harvest_rng = SplitMix64::new(spec.config.seed ^ 0x5AF3_8E1D);
    for stage in 1..spec.stages {
        let pool = harvest_stage_starts(
            engine,
            &network,
            &thresholds[stage],
            spec.harvest_episodes,
            &mut harvest_rng,
        );
        if pool.is_empty() {
            return Err(config_err(format!(
                "stage {stage} start harvest found no states reaching its threshold; \
                 train stage 0 longer or lower the stage count"
            )));
        }
        let report = multistage_train(engine, &network, stage, &pool, &spec.config, None)?;
        let curve = out_dir.join(format!("curve-stage{stage}.csv"));
        write_curve(&curve, &report.curve)?;
        outputs.curves.push(curve);
        outputs.reports.push(report);
    }

    save_network_file(&outputs.network, &network)?;
    Ok(outputs)
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

/// Inputs of an evaluation job.
#[derive(Clone, Debug)]
pub struct EvaluateArgs {
    /// Network file; `None` evaluates the zero value function.
    pub network: Option<PathBuf>,
    pub evaluator: EvaluatorSpec,
    pub episodes: u64,
    /// Independent repetitions; intervals aggregate over per-run means when
    /// greater than 1.
    pub runs: u32,
    pub workers: u32,
    pub seed: u64,
    /// Write this many episode records (the first episodes of run 0).
    pub records: u64,
}

impl Default for EvaluateArgs {
    fn default() -> Self {
        EvaluateArgs {
            network: None,
            evaluator: EvaluatorSpec::Greedy,
            episodes: 1000,
            runs: 1,
            workers: 1,
            seed: 0,
            records: 0,
        }
    }
}

fn with_value<T>(
    engine: &Engine,
    network: Option<&Path>,
    f: impl FnOnce(&(dyn Evaluator + Sync)) -> Result<T, HarnessError>,
) -> Result<T, HarnessError> {
    match network {
        Some(path) => {
            let network = load_network_file(path, engine)?;
            f(&network)
        }
        None => f(&ZeroEvaluator),
    }
}

/// Plays test episodes under the configured evaluator and aggregates them;
/// optionally writes episode records to `record_path`.
pub fn cli_evaluate(
    engine: &Engine,
    args: &EvaluateArgs,
    record_path: Option<&Path>,
) -> Result<EvalReport, HarnessError> {
    if args.episodes == 0 || args.runs == 0 {
        return Err(config_err("episodes and runs must be >= 1"));
    }
    let workers = worker_count(args.workers)?;
    with_value(engine, args.network.as_deref(), |value| {
        let mut reports = Vec::new();
        for run in 0..args.runs {
            let run_seed = SplitMix64::for_stream(args.seed, run as u64).next_u64();
            let make = || args.evaluator.make_policy(engine, value);
            reports.push(evaluate(engine, make, args.episodes, workers, run_seed));
        }
        if args.records > 0 {
            let mut text = String::new();
            let run_seed = SplitMix64::for_stream(args.seed, 0).next_u64();
            for episode in 0..args.records.min(args.episodes) {
                let mut policy = args.evaluator.make_policy(engine, value);
                let mut rng = SplitMix64::for_stream(run_seed, episode);
                let (record, _) = record_policy_episode(engine, &mut policy, &mut rng);
                text.push_str(&record.write());
                text.push('\n');
            }
            let path = record_path
                .ok_or_else(|| config_err("records requested but no record path given"))?;
            fs::write(path, text)?;
        }
        Ok(if reports.len() == 1 { reports.pop().expect("one report") } else { aggregate_runs(&reports) })
    })
}

// ---------------------------------------------------------------------------
// ensemble
// ---------------------------------------------------------------------------

/// One row of the snapshot-ensembling table: the snapshot on its own versus
/// the average of it and every later snapshot.
#[derive(Clone, Debug)]
pub struct EnsembleRow {
    pub index: usize,
    pub original: EvalReport,
    pub ensemble: EvalReport,
}

/// For each snapshot index i, evaluates snapshot i alone and the weight
/// average of snapshots i..end ("suffix averaging").
pub fn cli_ensemble(
    engine: &Engine,
    snapshot_paths: &[PathBuf],
    evaluator: &EvaluatorSpec,
    episodes: u64,
    workers: u32,
    seed: u64,
) -> Result<Vec<EnsembleRow>, HarnessError> {
    if snapshot_paths.is_empty() {
        return Err(config_err("ensemble needs at least one snapshot"));
    }
    let workers = worker_count(workers)?;
    let snapshots: Vec<NTupleNetwork> = snapshot_paths
        .iter()
        .map(|p| {
            let network = load_network_file(p, engine)?;
            if network.stage_count() != 1 {
                return Err(config_err(format!(
                    "snapshot {} has {} stages; ensembling expects single-stage snapshots",
                    p.display(),
                    network.stage_count()
                )));
            }
            Ok(network.stage(0).snapshot())
        })
        .collect::<Result<_, _>>()?;

    let run = |net: &NTupleNetwork| {
        let make = || evaluator.make_policy(engine, net);
        evaluate(engine, make, episodes, workers, seed)
    };
    let mut rows = Vec::with_capacity(snapshots.len());
    for index in 0..snapshots.len() {
        let suffix: Vec<&NTupleNetwork> = snapshots[index..].iter().collect();
        let averaged = crate::network::swa_average(&suffix)?;
        rows.push(EnsembleRow { index, original: run(&snapshots[index]), ensemble: run(&averaged) });
    }
    Ok(rows)
}

/// Ensemble table as CSV: index, original average, ensemble average.
pub fn write_ensemble_csv(rows: &[EnsembleRow]) -> String {
    let mut out = String::from("index,original_avg_score,ensemble_avg_score\n");
    for row in rows {
        writeln!(out, "{},{},{}", row.index, row.original.avg_score, row.ensemble.avg_score)
            .expect("writing to a String cannot fail");
    }
    out
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

/// Grid axes for parameter sweeps.
#[derive(Clone, Debug)]
pub enum SweepGrid {
    /// Simulation counts × exploration constants.
    Mcts { simulations: Vec<u32>, exploration: Vec<f64> },
    /// Strength indices × visit-ratio thresholds on a fixed search budget.
    Strength { base: MctsConfig, z: Vec<f64>, r_th: Vec<f64> },
}

/// Evaluates every grid cell (each with its own deterministic seed, so
/// results do not depend on traversal order) and renders an average-score
/// matrix: rows = first axis, columns = second axis.
pub fn cli_sweep(
    engine: &Engine,
    network: Option<&Path>,
    grid: &SweepGrid,
    episodes: u64,
    workers: u32,
    seed: u64,
) -> Result<String, HarnessError> {
    let workers = worker_count(workers)?;
    with_value(engine, network, |value| {
        let cell = |spec: &EvaluatorSpec, index: u64| {
            let make = || spec.make_policy(engine, value);
            let cell_seed = SplitMix64::for_stream(seed, index).next_u64();
            evaluate(engine, make, episodes, workers, cell_seed).avg_score
        };
        let mut out = String::new();
        match grid {
            SweepGrid::Mcts { simulations, exploration } => {
                out.push_str("n_sim\\c");
                for c in exploration {
                    write!(out, ",{c}").expect("writing to a String cannot fail");
                }
                out.push('\n');
                for (i, &sims) in simulations.iter().enumerate() {
                    write!(out, "{sims}").expect("writing to a String cannot fail");
                    for (j, &c) in exploration.iter().enumerate() {
                        let config =
                            MctsConfig { simulations: sims, exploration: c, ..MctsConfig::default() };
                        let avg = cell(
                            &EvaluatorSpec::Mcts(config),
                            (i * exploration.len() + j) as u64,
                        );
                        write!(out, ",{avg}").expect("writing to a String cannot fail");
                    }
                    out.push('\n');
                }
            }
            SweepGrid::Strength { base, z, r_th } => {
                out.push_str("z\\r_th");
                for r in r_th {
                    write!(out, ",{r}").expect("writing to a String cannot fail");
                }
                out.push('\n');
                for (i, &zi) in z.iter().enumerate() {
                    write!(out, "{zi}").expect("writing to a String cannot fail");
                    for (j, &r) in r_th.iter().enumerate() {
                        let spec = EvaluatorSpec::Strength { mcts: *base, z: zi, r_th: r };
                        let avg = cell(&spec, (i * r_th.len() + j) as u64);
                        write!(out, ",{avg}").expect("writing to a String cannot fail");
                    }
                    out.push('\n');
                }
            }
        }
        Ok(out)
    })
}

// ---------------------------------------------------------------------------
// solve
// ---------------------------------------------------------------------------

/// Solve-run summary.
#[derive(Clone, Copy, Debug)]
pub struct SolveSummary {
    pub states: usize,
    pub afterstates: usize,
    pub seconds: f64,
}

/// Exhaustively solves a small geometry and writes the value table CSV.
pub fn cli_solve(rows: u8, cols: u8, out_csv: &Path) -> Result<SolveSummary, HarnessError> {
    let engine = Engine::new(rows, cols)?;
    let started = Instant::now();
    let solved = SolvedGame::solve(&engine)?;
    let seconds = started.elapsed().as_secs_f64();
    let mut bytes = Vec::new();
    solved.write_csv(&mut bytes)?;
    fs::write(out_csv, bytes)?;
    Ok(SolveSummary {
        states: solved.state_count(),
        afterstates: solved.afterstate_count(),
        seconds,
    })
}

// ---------------------------------------------------------------------------
// show
// ---------------------------------------------------------------------------

/// Describes a network file; with a board, also shows its evaluation and
/// per-action 1-step returns.
pub fn cli_show(engine: &Engine, path: &Path, board: Option<Board>) -> Result<String, HarnessError> {
    let network = load_network_file(path, engine)?;
    let first = network.stage(0);
    let mut out = format!(
        "{}: {} stage(s), {} tuples, symmetric sampling {}\n",
        path.display(),
        network.stage_count(),
        first.tuples().len(),
        if first.symmetric() { "on" } else { "off" }
    );
    for (i, t) in first.tuples().iter().enumerate() {
        writeln!(out, "  tuple {i}: cells {:?}", t.cells())
            .expect("writing to a String cannot fail");
    }
    for (i, threshold) in network.thresholds().iter().enumerate() {
        writeln!(out, "  stage {i} threshold: {threshold:?}")
            .expect("writing to a String cannot fail");
    }
    if let Some(b) = board {
        writeln!(out, "\n{}", engine.render(b)).expect("writing to a String cannot fail");
        writeln!(out, "stage {}  V = {:.3}", network.stage_select(b), network.value(b))
            .expect("writing to a String cannot fail");
        for action in crate::engine::Action::ALL {
            let slide = engine.slide(b, action);
            if slide.moved {
                writeln!(
                    out,
                    "  {}: r = {}, r + V(s') = {:.3}",
                    action.letter(),
                    slide.reward,
                    slide.reward as f64 + network.value(slide.after)
                )
                .expect("writing to a String cannot fail");
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// replay
// ---------------------------------------------------------------------------

/// Parses and replays a record file (one record per line), validating every
/// move; returns per-record outcomes and a rendering of the final boards.
pub fn cli_replay(
    engine: &Engine,
    text: &str,
    verbose: bool,
) -> Result<(Vec<ReplayOutcome>, String), HarnessError> {
    let mut outcomes = Vec::new();
    let mut out = String::new();
    for (number, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record = EpisodeRecord::parse(line)
            .map_err(|e| config_err(format!("record {}: {e}", number + 1)))?;
        let outcome = replay(engine, &record)
            .map_err(|e| config_err(format!("record {}: {e}", number + 1)))?;
        writeln!(
            out,
            "record {}: {} moves, score {}",
            number + 1,
            record.moves.len(),
            outcome.score
        )
        .expect("writing to a String cannot fail");
        if verbose {
            writeln!(out, "{}", engine.render(outcome.final_board))
                .expect("writing to a String cannot fail");
        }
        outcomes.push(outcome);
    }
    if outcomes.is_empty() {
        return Err(config_err("no records found in input"));
    }
    Ok((outcomes, out))
}
