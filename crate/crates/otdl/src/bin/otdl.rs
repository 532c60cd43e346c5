//! Command-line front end: train, evaluate, ensemble, sweep, solve, show,
//! and replay, all thin wrappers over the library's harness module.
//!
//! Exit codes: 0 success, 2 usage, 3 I/O, 4 configuration.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use otdl::engine::{Board, Engine};
use otdl::harness::{
    cli_ensemble, cli_evaluate, cli_replay, cli_show, cli_solve, cli_sweep, cli_train,
    resolve_train_spec, write_ensemble_csv, EvaluateArgs, EvaluatorSpec, HarnessError, SweepGrid,
};
use otdl::mcts::{MctsConfig, VNorm};
use otdl::network::TileThreshold;

#[derive(Parser)]
#[command(
    name = "otdl",
    version,
    about = "2048 engine: temporal-difference n-tuple learning, expectimax, and MCTS"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an n-tuple value network by TD self-play.
    Train(TrainCli),
    /// Play test episodes with a policy and report score statistics.
    Evaluate(EvaluateCli),
    /// Compare snapshots against their suffix weight averages.
    Ensemble(EnsembleCli),
    /// Grid-sweep MCTS or strength parameters into a CSV matrix.
    Sweep(SweepCli),
    /// Exhaustively solve a small geometry and dump its value table.
    Solve(SolveCli),
    /// Describe a network file, optionally evaluating one board.
    Show(ShowCli),
    /// Replay and validate episode record files.
    Replay(ReplayCli),
}

#[derive(Args)]
struct TrainCli {
    /// Flat `key = value` configuration file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// otd | otc | otd-tc | td0 | tc | rectified | relu | nstep:N | lambda:L:H
    #[arg(long)]
    algorithm: Option<String>,
    /// Tuple preset (yeh-4x6, yeh-5x6, matsuzaki-1x6 … matsuzaki-8x6).
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    episodes: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Breakpoints like "0.5:0.01,0.75:0.001".
    #[arg(long)]
    alpha_decay: Option<String>,
    #[arg(long)]
    v_init: Option<f64>,
    /// Final fraction of the run switched to temporal coherence.
    #[arg(long)]
    tc_fraction: Option<f64>,
    /// Coherence reset (and snapshot) period in episodes.
    #[arg(long)]
    reset_every: Option<u64>,
    #[arg(long)]
    eval_every: Option<u64>,
    #[arg(long)]
    eval_episodes: Option<u64>,
    /// none | epsilon:X | softmax:X
    #[arg(long)]
    exploration: Option<String>,
    /// forward | backward
    #[arg(long)]
    order: Option<String>,
    #[arg(long)]
    stages: Option<usize>,
    #[arg(long)]
    harvest_episodes: Option<u64>,
    #[arg(long)]
    symmetric: Option<bool>,
    #[arg(long)]
    workers: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for network, curves, snapshots, and manifest.
    #[arg(long, default_value = "run")]
    out: PathBuf,
}

#[derive(Args)]
struct SearchFlags {
    /// Expectimax depth (chance layers).
    #[arg(long)]
    depth: Option<u32>,
    /// Transposition-table entries; 0 disables the table.
    #[arg(long)]
    tt_size: Option<usize>,
    /// Back up max(value, 0) + 1 per surviving ply (survival mode).
    #[arg(long)]
    rectified: bool,
    /// Tile-downgrading activation threshold, e.g. "16384,8192".
    #[arg(long)]
    downgrade: Option<String>,
    /// MCTS simulations per move.
    #[arg(long)]
    mcts_sims: Option<u32>,
    /// MCTS exploration constant.
    #[arg(long)]
    mcts_c: Option<f64>,
    /// MCTS value normalization: a number or "dynamic".
    #[arg(long)]
    vnorm: Option<String>,
    /// Strength index z.
    #[arg(long)]
    strength_z: Option<f64>,
    /// Visit-ratio filter R_th.
    #[arg(long)]
    strength_rth: Option<f64>,
}

impl SearchFlags {
    /// Applies the tuning flags onto a parsed evaluator specification.
    fn apply(&self, spec: &mut EvaluatorSpec) -> Result<(), HarnessError> {
        if let EvaluatorSpec::Expectimax(config) = spec {
            if let Some(depth) = self.depth {
                config.depth = depth;
            }
            if let Some(size) = self.tt_size {
                config.use_tt = size > 0;
                if size > 0 {
                    config.tt_capacity = size;
                }
            }
            if self.rectified {
                config.rectified = true;
            }
            if let Some(tiles) = &self.downgrade {
                config.downgrade_threshold = Some(parse_tiles(tiles)?);
            }
        }
        let mcts = match spec {
            EvaluatorSpec::Mcts(config) => Some(config),
            EvaluatorSpec::Strength { mcts, .. } => Some(mcts),
            _ => None,
        };
        if let Some(config) = mcts {
            if let Some(sims) = self.mcts_sims {
                config.simulations = sims;
            }
            if let Some(c) = self.mcts_c {
                config.exploration = c;
            }
            if let Some(v) = &self.vnorm {
                config.v_norm = parse_vnorm(v)?;
            }
            config.validate()?;
        }
        if let EvaluatorSpec::Strength { z, r_th, .. } = spec {
            if let Some(value) = self.strength_z {
                *z = value;
            }
            if let Some(value) = self.strength_rth {
                *r_th = value;
            }
        }
        Ok(())
    }
}

#[derive(Args)]
struct EvaluateCli {
    /// Network file; omitted evaluates the zero value function.
    #[arg(long)]
    network: Option<PathBuf>,
    /// greedy | expectimax[:p] | mcts[:N[:c]] | strength[:z:r_th]
    #[arg(long, default_value = "greedy")]
    evaluator: String,
    #[arg(long, default_value_t = 1000)]
    episodes: u64,
    /// Independent repetitions aggregated over per-run means.
    #[arg(long, default_value_t = 1)]
    runs: u32,
    #[arg(long, default_value_t = 1)]
    workers: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    search: SearchFlags,
    /// Write the report CSV here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write this many episode records.
    #[arg(long, default_value_t = 0)]
    records: u64,
    /// Episode-record output file.
    #[arg(long)]
    records_out: Option<PathBuf>,
}

#[derive(Args)]
struct EnsembleCli {
    /// Snapshot files in training order.
    #[arg(required = true)]
    snapshots: Vec<PathBuf>,
    #[arg(long, default_value = "greedy")]
    evaluator: String,
    #[arg(long, default_value_t = 100)]
    episodes: u64,
    #[arg(long, default_value_t = 1)]
    workers: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    search: SearchFlags,
    /// Write the comparison table CSV here (stdout otherwise).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepCli {
    #[arg(long)]
    network: Option<PathBuf>,
    /// mcts (simulations × c) | strength (z × r_th)
    #[arg(long, default_value = "mcts")]
    grid: String,
    /// Comma-separated simulation counts (mcts grid).
    #[arg(long, default_value = "1,10,100")]
    sims: String,
    /// Comma-separated exploration constants (mcts grid).
    #[arg(long, default_value = "0.001,0.005,0.05")]
    cs: String,
    /// Comma-separated strength indices (strength grid).
    #[arg(long, default_value = "0,1,5,50")]
    zs: String,
    /// Comma-separated visit-ratio thresholds (strength grid).
    #[arg(long, default_value = "0,0.1,0.5")]
    rths: String,
    /// Fixed search budget for the strength grid.
    #[arg(long, default_value_t = 100)]
    mcts_sims: u32,
    #[arg(long, default_value_t = 0.005)]
    mcts_c: f64,
    #[arg(long, default_value_t = 100)]
    episodes: u64,
    #[arg(long, default_value_t = 1)]
    workers: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the matrix CSV here (stdout otherwise).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SolveCli {
    #[arg(long, default_value_t = 2)]
    rows: u8,
    #[arg(long, default_value_t = 3)]
    cols: u8,
    #[arg(long, default_value = "solved.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct ShowCli {
    network: PathBuf,
    /// Board as 16 hex exponent digits (cell 15 down to cell 0).
    #[arg(long)]
    board: Option<String>,
}

#[derive(Args)]
struct ReplayCli {
    /// Episode record file, one record per line.
    records: PathBuf,
    /// Render each record's final board.
    #[arg(long)]
    verbose: bool,
}

fn parse_tiles(s: &str) -> Result<TileThreshold, HarnessError> {
    let tiles: Vec<u64> = s
        .split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| HarnessError::Config(format!("bad tile value '{t}' in '{s}'")))
        })
        .collect::<Result<_, _>>()?;
    Ok(TileThreshold::from_tiles(&tiles)?)
}

fn parse_vnorm(s: &str) -> Result<VNorm, HarnessError> {
    if s == "dynamic" {
        return Ok(VNorm::Dynamic);
    }
    s.parse()
        .map(VNorm::Static)
        .map_err(|_| HarnessError::Config(format!("vnorm must be a number or 'dynamic', got '{s}'")))
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, HarnessError> {
    let values: Vec<T> = s
        .split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| HarnessError::Config(format!("bad {what} value '{p}' in '{s}'")))
        })
        .collect::<Result<_, _>>()?;
    if values.is_empty() {
        return Err(HarnessError::Config(format!("empty {what} list")));
    }
    Ok(values)
}

fn evaluator_with_flags(spec: &str, flags: &SearchFlags) -> Result<EvaluatorSpec, HarnessError> {
    let mut spec = EvaluatorSpec::parse(spec)?;
    flags.apply(&mut spec)?;
    Ok(spec)
}

fn run_train(args: TrainCli) -> Result<(), HarnessError> {
    let file_text = match &args.config {
        Some(path) => Some(fs::read_to_string(path)?),
        None => None,
    };
    let mut overrides: Vec<(&str, String)> = Vec::new();
    let mut flag = |key: &'static str, value: Option<String>| {
        if let Some(v) = value {
            overrides.push((key, v));
        }
    };
    flag("algorithm", args.algorithm);
    flag("preset", args.preset);
    flag("episodes", args.episodes.map(|v| v.to_string()));
    flag("alpha", args.alpha.map(|v| v.to_string()));
    flag("alpha-decay", args.alpha_decay);
    flag("v-init", args.v_init.map(|v| v.to_string()));
    flag("tc-fraction", args.tc_fraction.map(|v| v.to_string()));
    flag("reset-every", args.reset_every.map(|v| v.to_string()));
    flag("eval-every", args.eval_every.map(|v| v.to_string()));
    flag("eval-episodes", args.eval_episodes.map(|v| v.to_string()));
    flag("exploration", args.exploration);
    flag("order", args.order);
    flag("stages", args.stages.map(|v| v.to_string()));
    flag("harvest-episodes", args.harvest_episodes.map(|v| v.to_string()));
    flag("symmetric", args.symmetric.map(|v| v.to_string()));
    flag("workers", args.workers.map(|v| v.to_string()));
    flag("seed", args.seed.map(|v| v.to_string()));

    let spec = resolve_train_spec(file_text.as_deref(), &overrides)?;
    let outputs = cli_train(Engine::shared_4x4(), &spec, &args.out)?;
    for (stage, report) in outputs.reports.iter().enumerate() {
        println!(
            "stage {stage}: {} episodes, {} moves in {:.1}s",
            report.episodes, report.moves, report.seconds
        );
    }
    println!("network:  {}", outputs.network.display());
    println!("manifest: {}", outputs.manifest.display());
    for curve in &outputs.curves {
        println!("curve:    {}", curve.display());
    }
    for snapshot in &outputs.snapshots {
        println!("snapshot: {}", snapshot.display());
    }
    Ok(())
}

fn run_evaluate(args: EvaluateCli) -> Result<(), HarnessError> {
    let evaluate_args = EvaluateArgs {
        network: args.network,
        evaluator: evaluator_with_flags(&args.evaluator, &args.search)?,
        episodes: args.episodes,
        runs: args.runs,
        workers: args.workers,
        seed: args.seed,
        records: args.records,
    };
    let report = cli_evaluate(
        Engine::shared_4x4(),
        &evaluate_args,
        args.records_out.as_deref(),
    )?;
    print!("{}", report.render());
    if let Some(path) = args.out {
        let mut bytes = Vec::new();
        report.write_csv(&mut bytes).map_err(HarnessError::from)?;
        fs::write(&path, bytes)?;
        println!("report: {}", path.display());
    }
    Ok(())
}

fn run_ensemble(args: EnsembleCli) -> Result<(), HarnessError> {
    let evaluator = evaluator_with_flags(&args.evaluator, &args.search)?;
    let rows = cli_ensemble(
        Engine::shared_4x4(),
        &args.snapshots,
        &evaluator,
        args.episodes,
        args.workers,
        args.seed,
    )?;
    let csv = write_ensemble_csv(&rows);
    match args.out {
        Some(path) => {
            fs::write(&path, csv)?;
            println!("table: {}", path.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn run_sweep(args: SweepCli) -> Result<(), HarnessError> {
    let grid = match args.grid.as_str() {
        "mcts" => SweepGrid::Mcts {
            simulations: parse_list(&args.sims, "simulation")?,
            exploration: parse_list(&args.cs, "exploration")?,
        },
        "strength" => SweepGrid::Strength {
            base: MctsConfig {
                simulations: args.mcts_sims,
                exploration: args.mcts_c,
                ..MctsConfig::default()
            },
            z: parse_list(&args.zs, "strength index")?,
            r_th: parse_list(&args.rths, "visit ratio")?,
        },
        other => {
            return Err(HarnessError::Usage(format!(
                "unknown grid '{other}' (mcts or strength)"
            )))
        }
    };
    let csv = cli_sweep(
        Engine::shared_4x4(),
        args.network.as_deref(),
        &grid,
        args.episodes,
        args.workers,
        args.seed,
    )?;
    match args.out {
        Some(path) => {
            fs::write(&path, csv)?;
            println!("matrix: {}", path.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn run_solve(args: SolveCli) -> Result<(), HarnessError> {
    let summary = cli_solve(args.rows, args.cols, &args.out)?;
    println!(
        "solved {}x{}: {} states, {} afterstates in {:.2}s -> {}",
        args.rows,
        args.cols,
        summary.states,
        summary.afterstates,
        summary.seconds,
        args.out.display()
    );
    Ok(())
}

fn run_show(args: ShowCli) -> Result<(), HarnessError> {
    let board = match &args.board {
        Some(hex) => Some(Board::from_raw(
            u64::from_str_radix(hex.trim_start_matches("0x"), 16)
                .map_err(|_| HarnessError::Config(format!("bad board '{hex}'")))?,
        )),
        None => None,
    };
    print!("{}", cli_show(Engine::shared_4x4(), &args.network, board)?);
    Ok(())
}

fn run_replay(args: ReplayCli) -> Result<(), HarnessError> {
    let text = fs::read_to_string(&args.records)?;
    let (_, rendered) = cli_replay(Engine::shared_4x4(), &text, args.verbose)?;
    print!("{rendered}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => run_train(args),
        Command::Evaluate(args) => run_evaluate(args),
        Command::Ensemble(args) => run_ensemble(args),
        Command::Sweep(args) => run_sweep(args),
        Command::Solve(args) => run_solve(args),
        Command::Show(args) => run_show(args),
        Command::Replay(args) => run_replay(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
