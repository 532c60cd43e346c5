//! Monte Carlo tree search guided by an n-tuple value function.
//!
//! The tree alternates max nodes (states) and chance nodes (afterstates).
//! Selection uses UCB at max nodes and spawn-probability sampling at chance
//! nodes; expansion creates all afterstate children of a state at once,
//! while chance children materialize lazily as they are sampled. Leaves are
//! evaluated directly by the value network — state leaves by their best
//! 1-ply continuation, afterstate leaves by their own value — normalized by
//! `V_norm`, and the result is backed up along the whole selection path.
//! The search value also serves as a TD training target, and a softmax over
//! visit counts with a strength index `z` turns the finished search into an
//! adjustable-strength move policy.

use std::io::{self, Write};

use thiserror::Error;

use crate::engine::{Action, Board, Engine};
use crate::learning::EpisodeOutcome;
use crate::network::{Evaluator, NTupleNetwork};
use crate::rng::SplitMix64;
use crate::search::NodeKind;

#[derive(Error, Debug)]
pub enum MctsError {
    #[error("invalid MCTS configuration: {0}")]
    InvalidConfig(String),
}

/// Value normalization: a fixed point scale, or the root's best 1-step
/// return (at least 1), refreshed per search.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum VNorm {
    Static(f64),
    Dynamic,
}

/// Standard normalization for well-trained full-size networks.
pub const DEFAULT_V_NORM: f64 = 400_000.0;
/// Standard exploration constant.
pub const DEFAULT_EXPLORATION: f64 = 0.005;

#[derive(Clone, Copy, Debug)]
pub struct MctsConfig {
    pub simulations: u32,
    /// UCB exploration constant c.
    pub exploration: f64,
    pub v_norm: VNorm,
    /// Base seed; callers derive per-move generators from it.
    pub seed: u64,
}

impl Default for MctsConfig {
    fn default() -> Self {
        MctsConfig {
            simulations: 100,
            exploration: DEFAULT_EXPLORATION,
            v_norm: VNorm::Static(DEFAULT_V_NORM),
            seed: 0,
        }
    }
}

impl MctsConfig {
    pub fn validate(&self) -> Result<(), MctsError> {
        if self.simulations == 0 {
            return Err(MctsError::InvalidConfig("simulations must be >= 1".into()));
        }
        if !(self.exploration >= 0.0) {
            return Err(MctsError::InvalidConfig("exploration constant must be >= 0".into()));
        }
        if let VNorm::Static(v) = self.v_norm {
            if !(v > 0.0) {
                return Err(MctsError::InvalidConfig("static v_norm must be positive".into()));
            }
        }
        Ok(())
    }
}

/// UCB score of a visited child: mean value plus the exploration bonus
/// `c·sqrt(ln N(parent) / N(child))`.
#[inline]
pub fn ucb_score(q: f64, parent_visits: u64, child_visits: u64, c: f64) -> f64 {
    q + c * ((parent_visits as f64).ln() / child_visits as f64).sqrt()
}

struct MaxEdge {
    action: Action,
    reward: u64,
    /// 1-step return `r + V(s')` frozen at expansion.
    prior: f64,
    child: usize,
}

struct Node {
    board: Board,
    kind: NodeKind,
    visits: u64,
    value_sum: f64,
    expanded: bool,
    /// Max-node children, canonical action order (empty until expansion).
    edges: Vec<MaxEdge>,
    /// Chance-node children keyed by board, in first-sampled order.
    spawn_children: Vec<(u64, usize)>,
}

impl Node {
    fn new(board: Board, kind: NodeKind) -> Node {
        Node {
            board,
            kind,
            visits: 0,
            value_sum: 0.0,
            expanded: false,
            edges: Vec::new(),
            spawn_children: Vec::new(),
        }
    }

    fn mean(&self) -> f64 {
        self.value_sum / self.visits as f64
    }
}

/// Root statistics for one legal action.
#[derive(Clone, Copy, Debug)]
pub struct RootAction {
    pub action: Action,
    pub reward: u64,
    /// 1-step return `r + V(s')` at expansion time.
    pub prior: f64,
    pub visits: u64,
    /// Mean normalized value; unvisited children report `prior / V_norm` so
    /// single-simulation searches still rank like the greedy policy.
    pub q: f64,
}

/// Outcome of [`mcts_search`].
#[derive(Clone, Debug)]
pub struct MctsResult {
    /// Highest-visit action (ties by prior, then canonical order).
    pub best: Action,
    /// Q of the best action.
    pub best_q: f64,
    /// Normalization actually used (resolved when dynamic).
    pub v_norm: f64,
    pub root_visits: u64,
    /// Per-action root statistics in canonical order.
    pub actions: Vec<RootAction>,
    pub simulations: u32,
}

/// One search tree; see the module docs for the iteration scheme.
pub struct MctsTree<'a, V: Evaluator + ?Sized> {
    engine: &'a Engine,
    value: &'a V,
    c: f64,
    v_norm: f64,
    nodes: Vec<Node>,
}

impl<'a, V: Evaluator + ?Sized> MctsTree<'a, V> {
    /// Creates a tree rooted at `state`. Returns `None` on terminal states.
    /// Resolves a dynamic `V_norm` to the root's best 1-step return
    /// (at least 1).
    pub fn new(
        engine: &'a Engine,
        value: &'a V,
        state: Board,
        config: &MctsConfig,
    ) -> Option<MctsTree<'a, V>> {
        let mut best_return = f64::NEG_INFINITY;
        for a in Action::ALL {
            let out = engine.slide(state, a);
            if out.moved {
                best_return = best_return.max(out.reward as f64 + value.value(out.after));
            }
        }
        if best_return == f64::NEG_INFINITY {
            return None;
        }
        let v_norm = match config.v_norm {
            VNorm::Static(v) => v,
            VNorm::Dynamic => best_return.max(1.0),
        };
        Some(MctsTree {
            engine,
            value,
            c: config.exploration,
            v_norm,
            nodes: vec![Node::new(state, NodeKind::Max)],
        })
    }

    pub fn v_norm(&self) -> f64 {
        self.v_norm
    }

    pub fn root_visits(&self) -> u64 {
        self.nodes[0].visits
    }

    /// One select → expand/evaluate → backprop pass.
    pub fn run_iteration(&mut self, rng: &mut SplitMix64) {
        let mut path = vec![0usize];
        let mut reward_sum = 0.0;
        let mut node = 0usize;
        while self.nodes[node].expanded {
            node = match self.nodes[node].kind {
                NodeKind::Max => {
                    let edge = self.ucb_select(node);
                    let edge = &self.nodes[node].edges[edge];
                    reward_sum += edge.reward as f64;
                    edge.child
                }
                NodeKind::Chance => self.chance_select(node, rng),
            };
            path.push(node);
        }
        let value = self.evaluate_leaf(node, reward_sum);
        self.backprop(&path, value);
    }

    /// UCB child choice at an expanded max node: unvisited children first in
    /// canonical order, otherwise the best `Q + c·sqrt(ln N / N_a)`; ties by
    /// canonical order. Returns an edge index.
    pub fn ucb_select(&self, node: usize) -> usize {
        let n = &self.nodes[node];
        debug_assert!(n.kind == NodeKind::Max && n.expanded);
        if let Some(i) = n.edges.iter().position(|e| self.nodes[e.child].visits == 0) {
            return i;
        }
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (i, e) in n.edges.iter().enumerate() {
            let child = &self.nodes[e.child];
            let score = ucb_score(child.mean(), n.visits, child.visits, self.c);
            if score > best_score {
                best = i;
                best_score = score;
            }
        }
        best
    }

    /// Samples a spawn child of an expanded chance node per the spawn
    /// probabilities, materializing it on first visit. Returns a node index.
    pub fn chance_select(&mut self, node: usize, rng: &mut SplitMix64) -> usize {
        debug_assert!(self.nodes[node].kind == NodeKind::Chance);
        let board = self.nodes[node].board;
        let spawn =
            self.engine.spawn_random(board, rng).expect("afterstates always have an empty cell");
        let raw = spawn.board.raw();
        if let Some(&(_, idx)) = self.nodes[node].spawn_children.iter().find(|(b, _)| *b == raw) {
            return idx;
        }
        let idx = self.nodes.len();
        self.nodes.push(Node::new(spawn.board, NodeKind::Max));
        self.nodes[node].spawn_children.push((raw, idx));
        idx
    }

    /// Evaluates (and, when nonterminal, expands) a leaf reached with
    /// accumulated path reward `reward_sum`, returning the normalized value:
    /// state leaves use their best 1-ply continuation, terminal states the
    /// bare path reward, afterstate leaves their own evaluation.
    pub fn evaluate_leaf(&mut self, node: usize, reward_sum: f64) -> f64 {
        match self.nodes[node].kind {
            NodeKind::Max => {
                let board = self.nodes[node].board;
                let mut edges = Vec::new();
                let mut best = f64::NEG_INFINITY;
                for a in Action::ALL {
                    let out = self.engine.slide(board, a);
                    if !out.moved {
                        continue;
                    }
                    let prior = out.reward as f64 + self.value.value(out.after);
                    best = best.max(prior);
                    let child = self.nodes.len();
                    self.nodes.push(Node::new(out.after, NodeKind::Chance));
                    edges.push(MaxEdge { action: a, reward: out.reward, prior, child });
                }
                if edges.is_empty() {
                    // Terminal leaves stay unexpanded and re-evaluate freely.
                    return reward_sum / self.v_norm;
                }
                let n = &mut self.nodes[node];
                n.edges = edges;
                n.expanded = true;
                (reward_sum + best) / self.v_norm
            }
            NodeKind::Chance => {
                let n = &mut self.nodes[node];
                n.expanded = true;
                (reward_sum + self.value.value(n.board)) / self.v_norm
            }
        }
    }

    /// Adds one visit and the value to every node on the path.
    pub fn backprop(&mut self, path: &[usize], value: f64) {
        for &i in path {
            let n = &mut self.nodes[i];
            n.visits += 1;
            n.value_sum += value;
        }
    }

    /// Root statistics in canonical order (empty before the root expands).
    pub fn root_actions(&self) -> Vec<RootAction> {
        self.nodes[0]
            .edges
            .iter()
            .map(|e| {
                let child = &self.nodes[e.child];
                let q = if child.visits > 0 { child.mean() } else { e.prior / self.v_norm };
                RootAction {
                    action: e.action,
                    reward: e.reward,
                    prior: e.prior,
                    visits: child.visits,
                    q,
                }
            })
            .collect()
    }

    /// Best action: argmax visits, ties by prior, then canonical order, so a
    /// single-simulation search reduces to the greedy policy.
    pub fn best_action(&self) -> Option<Action> {
        let mut best: Option<(Action, u64, f64)> = None;
        for e in &self.nodes[0].edges {
            let visits = self.nodes[e.child].visits;
            let better = match best {
                None => true,
                Some((_, bn, bp)) => visits > bn || (visits == bn && e.prior > bp),
            };
            if better {
                best = Some((e.action, visits, e.prior));
            }
        }
        best.map(|(a, _, _)| a)
    }
}

/// Runs a full search from `state`: `simulations` iterations, then the
/// highest-visit action. `None` on terminal states.
pub fn mcts_search<V: Evaluator + ?Sized>(
    engine: &Engine,
    state: Board,
    value: &V,
    config: &MctsConfig,
    rng: &mut SplitMix64,
) -> Option<MctsResult> {
    let mut tree = MctsTree::new(engine, value, state, config)?;
    let simulations = config.simulations.max(1);
    for _ in 0..simulations {
        tree.run_iteration(rng);
    }
    let actions = tree.root_actions();
    let best = tree.best_action().expect("nonterminal root has actions");
    let best_q = actions.iter().find(|a| a.action == best).expect("best is a root action").q;
    Some(MctsResult {
        best,
        best_q,
        v_norm: tree.v_norm,
        root_visits: tree.root_visits(),
        actions,
        simulations,
    })
}

/// TD error driving value updates from a completed search at the next
/// state: the denormalized best-action value against the current estimate
/// of the previous afterstate.
pub fn mcts_training_target(result: &MctsResult, prev_afterstate_value: f64) -> f64 {
    result.best_q * result.v_norm - prev_afterstate_value
}

/// Per-action strength-policy entry: selection probability and whether the
/// visit-count filter removed the action.
#[derive(Clone, Copy, Debug)]
pub struct StrengthEntry {
    pub action: Action,
    pub visits: u64,
    pub probability: f64,
    pub filtered: bool,
}

/// Softmax-over-visits distribution with strength index `z`: actions with
/// `N < r_th·N_best` are excluded, the rest weighted by `(N/N_best)^z`
/// (the stable form of `N^z`). `z = 0` is uniform over survivors; large `z`
/// approaches the argmax.
pub fn strength_distribution(actions: &[RootAction], z: f64, r_th: f64) -> Vec<StrengthEntry> {
    let n_best = actions.iter().map(|a| a.visits).max().unwrap_or(0);
    if n_best == 0 {
        // Unvisited roots (single-simulation searches): the prior-best
        // action takes the whole distribution.
        let mut best: Option<(usize, f64)> = None;
        for (i, a) in actions.iter().enumerate() {
            if best.map(|(_, bp)| a.prior > bp).unwrap_or(true) {
                best = Some((i, a.prior));
            }
        }
        return actions
            .iter()
            .enumerate()
            .map(|(i, a)| StrengthEntry {
                action: a.action,
                visits: a.visits,
                probability: if Some(i) == best.map(|(b, _)| b) { 1.0 } else { 0.0 },
                filtered: false,
            })
            .collect();
    }
    let threshold = r_th * n_best as f64;
    let weights: Vec<f64> = actions
        .iter()
        .map(|a| {
            if (a.visits as f64) < threshold {
                0.0
            } else {
                (a.visits as f64 / n_best as f64).powf(z)
            }
        })
        .collect();
    let total: f64 = weights.iter().sum();
    actions
        .iter()
        .zip(&weights)
        .map(|(a, &w)| StrengthEntry {
            action: a.action,
            visits: a.visits,
            probability: w / total,
            filtered: (a.visits as f64) < threshold,
        })
        .collect()
}

/// Samples an action from [`strength_distribution`]; the highest-visit
/// action always survives the filter, so this cannot fail on a completed
/// search.
pub fn strength_policy(actions: &[RootAction], z: f64, r_th: f64, rng: &mut SplitMix64) -> Action {
    let dist = strength_distribution(actions, z, r_th);
    let mut u = rng.next_f64();
    let mut chosen = dist.last().expect("completed searches have root actions").action;
    for e in &dist {
        u -= e.probability;
        if u < 0.0 {
            chosen = e.action;
            break;
        }
    }
    chosen
}

/// Dumps per-action root statistics as CSV:
/// `action,visits,q,prior,filtered,probability` under the given strength
/// parameters.
pub fn write_root_csv<W: Write>(
    result: &MctsResult,
    z: f64,
    r_th: f64,
    w: &mut W,
) -> io::Result<()> {
    writeln!(w, "action,visits,q,prior,filtered,probability")?;
    for e in strength_distribution(&result.actions, z, r_th) {
        let a = result.actions.iter().find(|a| a.action == e.action).expect("same actions");
        writeln!(
            w,
            "{},{},{},{},{},{}",
            e.action.letter(),
            e.visits,
            a.q,
            a.prior,
            e.filtered,
            e.probability
        )?;
    }
    Ok(())
}

/// One self-play episode that picks moves by MCTS and updates the network
/// toward each search's denormalized best value (the terminal afterstate
/// trains toward 0).
pub fn mcts_td_episode(
    engine: &Engine,
    net: &NTupleNetwork,
    config: &MctsConfig,
    alpha: f64,
    rng: &mut SplitMix64,
) -> EpisodeOutcome {
    let mut outcome = EpisodeOutcome::default();
    let mut board = engine.initial_state(rng);
    let mut prev_after: Option<Board> = None;
    loop {
        let Some(result) = mcts_search(engine, board, net, config, rng) else {
            if let Some(after) = prev_after {
                net.update(after, alpha * -net.value(after));
            }
            break;
        };
        if let Some(after) = prev_after {
            let delta = mcts_training_target(&result, net.value(after));
            net.update(after, alpha * delta);
        }
        let out = engine.slide(board, result.best);
        outcome.score += out.reward;
        outcome.moves += 1;
        prev_after = Some(out.after);
        match engine.spawn_random(out.after, rng) {
            Ok(spawn) => board = spawn.board,
            Err(_) => break,
        }
    }
    outcome.max_exponent = board.max_exponent();
    outcome
}
