//! Test-play evaluation: policies, episode runners, and score statistics
//! with 95% confidence intervals.
//!
//! A [`Policy`] picks one legal action per position (greedy, expectimax,
//! MCTS, or the strength-adjusted MCTS variant). [`evaluate`] plays a batch
//! of episodes under a policy — optionally across worker threads, with
//! per-episode random streams so results do not depend on the worker
//! count — and aggregates them into an [`EvalReport`]. Intervals use the
//! normal approximation `mean ± 1.96·σ/√n`; multi-run experiments combine
//! per-run means the same way via [`aggregate_runs`].

use std::io::{self, Write};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::engine::{Action, Board, Engine};
use crate::learning::{greedy_action, EpisodeOutcome};
use crate::mcts::{mcts_search, strength_policy, MctsConfig};
use crate::network::Evaluator;
use crate::record::EpisodeRecord;
use crate::rng::SplitMix64;
use crate::search::{SearchConfig, Searcher};

/// A move chooser: returns a legal action or `None` on terminal boards.
pub trait Policy {
    fn choose(&mut self, board: Board, rng: &mut SplitMix64) -> Option<Action>;
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn choose(&mut self, board: Board, rng: &mut SplitMix64) -> Option<Action> {
        (**self).choose(board, rng)
    }
}

/// Picks the action maximizing the 1-step return `r + V(s')`.
pub struct GreedyPolicy<'a, V: Evaluator + ?Sized> {
    engine: &'a Engine,
    value: &'a V,
}

impl<'a, V: Evaluator + ?Sized> GreedyPolicy<'a, V> {
    pub fn new(engine: &'a Engine, value: &'a V) -> Self {
        GreedyPolicy { engine, value }
    }
}

impl<V: Evaluator + ?Sized> Policy for GreedyPolicy<'_, V> {
    fn choose(&mut self, board: Board, _rng: &mut SplitMix64) -> Option<Action> {
        greedy_action(self.engine, board, self.value).map(|(a, _)| a)
    }
}

/// Expectimax search (with whatever table, rectification, and downgrade
/// settings the configuration carries).
pub struct ExpectimaxPolicy<'a, V: Evaluator + ?Sized> {
    searcher: Searcher<'a, V>,
}

impl<'a, V: Evaluator + ?Sized> ExpectimaxPolicy<'a, V> {
    pub fn new(engine: &'a Engine, value: &'a V, config: SearchConfig) -> Self {
        ExpectimaxPolicy { searcher: Searcher::new(engine, value, config) }
    }
}

impl<V: Evaluator + ?Sized> Policy for ExpectimaxPolicy<'_, V> {
    fn choose(&mut self, board: Board, _rng: &mut SplitMix64) -> Option<Action> {
        self.searcher.downgraded_search(board).0
    }
}

/// MCTS choosing the highest-visit action.
pub struct MctsPolicy<'a, V: Evaluator + ?Sized> {
    engine: &'a Engine,
    value: &'a V,
    config: MctsConfig,
}

impl<'a, V: Evaluator + ?Sized> MctsPolicy<'a, V> {
    pub fn new(engine: &'a Engine, value: &'a V, config: MctsConfig) -> Self {
        MctsPolicy { engine, value, config }
    }
}

impl<V: Evaluator + ?Sized> Policy for MctsPolicy<'_, V> {
    fn choose(&mut self, board: Board, rng: &mut SplitMix64) -> Option<Action> {
        mcts_search(self.engine, board, self.value, &self.config, rng).map(|r| r.best)
    }
}

/// MCTS sampling from the strength-adjusted visit distribution.
pub struct StrengthPolicy<'a, V: Evaluator + ?Sized> {
    engine: &'a Engine,
    value: &'a V,
    config: MctsConfig,
    z: f64,
    r_th: f64,
}

impl<'a, V: Evaluator + ?Sized> StrengthPolicy<'a, V> {
    pub fn new(engine: &'a Engine, value: &'a V, config: MctsConfig, z: f64, r_th: f64) -> Self {
        StrengthPolicy { engine, value, config, z, r_th }
    }
}

impl<V: Evaluator + ?Sized> Policy for StrengthPolicy<'_, V> {
    fn choose(&mut self, board: Board, rng: &mut SplitMix64) -> Option<Action> {
        mcts_search(self.engine, board, self.value, &self.config, rng)
            .map(|r| strength_policy(&r.actions, self.z, self.r_th, rng))
    }
}

/// Plays one episode under a policy, from the initial two spawns to
/// termination.
pub fn play_policy_episode<P: Policy + ?Sized>(
    engine: &Engine,
    policy: &mut P,
    rng: &mut SplitMix64,
) -> EpisodeOutcome {
    let mut board = engine.initial_state(rng);
    let mut outcome = EpisodeOutcome::default();
    loop {
        let Some(action) = policy.choose(board, rng) else { break };
        let out = engine.slide(board, action);
        debug_assert!(out.moved, "policies must return legal actions");
        outcome.score += out.reward;
        outcome.moves += 1;
        match engine.spawn_random(out.after, rng) {
            Ok(spawn) => board = spawn.board,
            Err(_) => {
                board = out.after;
                break;
            }
        }
    }
    outcome.max_exponent = board.max_exponent();
    outcome
}

/// Like [`play_policy_episode`], but also records every spawn and slide
/// (slides carry their rewards) in the compact record format.
pub fn record_policy_episode<P: Policy + ?Sized>(
    engine: &Engine,
    policy: &mut P,
    rng: &mut SplitMix64,
) -> (EpisodeRecord, EpisodeOutcome) {
    let mut record = EpisodeRecord::new();
    let mut board = Board::EMPTY;
    for _ in 0..2 {
        let spawn = engine.spawn_random(board, rng).expect("empty board has room");
        record.push_place(spawn.cell, spawn.exponent);
        board = spawn.board;
    }
    let mut outcome = EpisodeOutcome::default();
    while let Some(action) = policy.choose(board, rng) {
        let out = engine.slide(board, action);
        debug_assert!(out.moved, "policies must return legal actions");
        record.push_slide(action, out.reward);
        outcome.score += out.reward;
        outcome.moves += 1;
        match engine.spawn_random(out.after, rng) {
            Ok(spawn) => {
                record.push_place(spawn.cell, spawn.exponent);
                board = spawn.board;
            }
            Err(_) => {
                board = out.after;
                break;
            }
        }
    }
    outcome.max_exponent = board.max_exponent();
    (record, outcome)
}

/// Reach rate for one tile exponent with its 95% half-width.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReachRate {
    pub exponent: u8,
    pub rate: f64,
    pub ci: f64,
}

/// Exponents reported by evaluation: 2048 through 32768.
pub const REPORTED_EXPONENTS: [u8; 5] = [11, 12, 13, 14, 15];

/// Aggregate result of an evaluation batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: u64,
    pub avg_score: f64,
    /// 95% half-width of the average score.
    pub score_ci: f64,
    pub max_score: u64,
    /// Reach rates for [`REPORTED_EXPONENTS`], nonincreasing in tile value.
    pub reach: Vec<ReachRate>,
    /// Player moves per wall-clock second, spawn handling included.
    pub moves_per_sec: f64,
}

impl EvalReport {
    /// Aggregates per-episode outcomes; `seconds` is the wall-clock time the
    /// batch took.
    pub fn from_outcomes(outcomes: &[EpisodeOutcome], seconds: f64) -> EvalReport {
        let n = outcomes.len() as f64;
        let mean = outcomes.iter().map(|o| o.score as f64).sum::<f64>() / n.max(1.0);
        let var = if outcomes.len() > 1 {
            outcomes.iter().map(|o| (o.score as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let reach = REPORTED_EXPONENTS
            .iter()
            .map(|&e| {
                let hits = outcomes.iter().filter(|o| o.max_exponent >= e).count() as f64;
                let p = hits / n.max(1.0);
                ReachRate { exponent: e, rate: p, ci: 1.96 * (p * (1.0 - p) / n.max(1.0)).sqrt() }
            })
            .collect();
        let moves: u64 = outcomes.iter().map(|o| o.moves).sum();
        EvalReport {
            episodes: outcomes.len() as u64,
            avg_score: mean,
            score_ci: 1.96 * (var / n.max(1.0)).sqrt(),
            max_score: outcomes.iter().map(|o| o.score).max().unwrap_or(0),
            reach,
            moves_per_sec: if seconds > 0.0 { moves as f64 / seconds } else { 0.0 },
        }
    }

    /// Reach rate for a tile exponent (0 when not reported).
    pub fn rate(&self, exponent: u8) -> f64 {
        self.reach.iter().find(|r| r.exponent == exponent).map(|r| r.rate).unwrap_or(0.0)
    }

    /// One CSV header + row.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        write!(w, "episodes,avg_score,score_ci,max_score")?;
        for r in &self.reach {
            write!(w, ",rate_{0},ci_{0}", 1u32 << r.exponent)?;
        }
        writeln!(w, ",moves_per_sec")?;
        write!(w, "{},{},{},{}", self.episodes, self.avg_score, self.score_ci, self.max_score)?;
        for r in &self.reach {
            write!(w, ",{},{}", r.rate, r.ci)?;
        }
        writeln!(w, ",{}", self.moves_per_sec)
    }

    /// Human-readable multi-line summary.
    pub fn render(&self) -> String {
        let mut out = format!(
            "episodes {}  avg score {:.1} ± {:.1}  max score {}  {:.0} moves/s\n",
            self.episodes, self.avg_score, self.score_ci, self.max_score, self.moves_per_sec
        );
        for r in &self.reach {
            out.push_str(&format!(
                "  {:>6}: {:6.2}% ± {:.2}%\n",
                1u32 << r.exponent,
                100.0 * r.rate,
                100.0 * r.ci
            ));
        }
        out
    }
}

/// Combines independent runs: means of means, intervals over the per-run
/// means (the level at which multi-network experiments are compared).
pub fn aggregate_runs(runs: &[EvalReport]) -> EvalReport {
    assert!(!runs.is_empty(), "aggregate_runs needs at least one run");
    let r = runs.len() as f64;
    let half_width = |values: &mut dyn Iterator<Item = f64>| -> (f64, f64) {
        let values: Vec<f64> = values.collect();
        let mean = values.iter().sum::<f64>() / r;
        if values.len() < 2 {
            return (mean, 0.0);
        }
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1.0);
        (mean, 1.96 * (var / r).sqrt())
    };
    let (avg_score, score_ci) = half_width(&mut runs.iter().map(|x| x.avg_score));
    let reach = REPORTED_EXPONENTS
        .iter()
        .map(|&e| {
            let (rate, ci) = half_width(&mut runs.iter().map(|x| x.rate(e)));
            ReachRate { exponent: e, rate, ci }
        })
        .collect();
    EvalReport {
        episodes: runs.iter().map(|x| x.episodes).sum(),
        avg_score,
        score_ci,
        max_score: runs.iter().map(|x| x.max_score).max().unwrap_or(0),
        reach,
        moves_per_sec: runs.iter().map(|x| x.moves_per_sec).sum::<f64>() / r,
    }
}

/// Plays `episodes` test games under the policy and aggregates them.
///
/// `make_policy` builds one policy per worker; episode `i` always draws
/// from stream `(seed, i)`, so the outcomes — though not the wall-clock
/// throughput — are identical for every worker count.
pub fn evaluate<P, F>(
    engine: &Engine,
    make_policy: F,
    episodes: u64,
    workers: u32,
    seed: u64,
) -> EvalReport
where
    P: Policy,
    F: Fn() -> P + Sync,
{
    let start = Instant::now();
    let mut outcomes: Vec<(u64, EpisodeOutcome)> = Vec::with_capacity(episodes as usize);
    if workers <= 1 {
        let mut policy = make_policy();
        for e in 0..episodes {
            let mut rng = SplitMix64::for_stream(seed, e);
            outcomes.push((e, play_policy_episode(engine, &mut policy, &mut rng)));
        }
    } else {
        let next = AtomicU64::new(0);
        let collected = Mutex::new(&mut outcomes);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| {
                    let mut policy = make_policy();
                    let mut local = Vec::new();
                    loop {
                        let e = next.fetch_add(1, Ordering::Relaxed);
                        if e >= episodes {
                            break;
                        }
                        let mut rng = SplitMix64::for_stream(seed, e);
                        local.push((e, play_policy_episode(engine, &mut policy, &mut rng)));
                    }
                    collected.lock().unwrap().extend(local);
                });
            }
        });
        // Fixed aggregation order keeps float sums worker-count-independent.
        outcomes.sort_by_key(|(e, _)| *e);
    }
    let outcomes: Vec<EpisodeOutcome> = outcomes.into_iter().map(|(_, o)| o).collect();
    EvalReport::from_outcomes(&outcomes, start.elapsed().as_secs_f64())
}
