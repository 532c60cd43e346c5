//! Expectimax search and the exhaustive small-board solver.
//!
//! Search alternates max nodes (states: best of `r + value`) and chance
//! nodes (afterstates: spawn-probability-weighted expectation), truncating
//! after `depth` chance layers where the value network is consulted.
//! A transposition table keyed by `(board, node kind, remaining depth)`
//! caches subtree values; because lookups require an exact key match, the
//! table never changes a search result, only its cost. Tile-downgrading
//! maps rare late-game positions onto better-trained ones at the root, and
//! the rectified variant recovers sane play when the network's values have
//! gone negative. The solver computes exact expected/best/worst values for
//! every reachable 2×3 position and serves as an independent oracle.

use std::collections::HashMap;
use std::io::{self, Write};

use thiserror::Error;

use crate::engine::{Action, Board, Engine};
use crate::network::{Evaluator, TileThreshold};

#[derive(Error, Debug)]
pub enum SearchError {
    #[error("board too large to solve exhaustively: {rows}x{cols} (at most 6 cells)")]
    BoardTooLarge { rows: u8, cols: u8 },
}

/// Node kind in the alternating search graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeKind {
    /// A state: the player moves (max node).
    Max,
    /// An afterstate: the environment spawns (chance node).
    Chance,
}

/// Expectimax configuration.
#[derive(Clone, Debug)]
pub struct SearchConfig {
    /// Search depth p: the number of chance layers expanded.
    pub depth: u32,
    pub use_tt: bool,
    /// Transposition-table entries; rounded up to a power of two.
    pub tt_capacity: usize,
    /// Rectified search: leaves clamp to `max(V, 0)` and every nonterminal
    /// max node adds +1, rewarding survival depth.
    pub rectified: bool,
    /// Tile multiset activating root tile-downgrading in
    /// [`Searcher::downgraded_search`].
    pub downgrade_threshold: Option<TileThreshold>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            depth: 3,
            use_tt: true,
            tt_capacity: 1 << 20,
            rectified: false,
            downgrade_threshold: None,
        }
    }
}

impl SearchConfig {
    pub fn with_depth(depth: u32) -> SearchConfig {
        SearchConfig { depth, ..SearchConfig::default() }
    }
}

/// 64-bit avalanche mix (MurmurHash3 finalizer).
#[inline]
fn mix64(mut z: u64) -> u64 {
    z ^= z >> 33;
    z = z.wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    z ^= z >> 33;
    z = z.wrapping_mul(0xC4CE_B9FE_1A85_EC53);
    z ^= z >> 33;
    z
}

#[derive(Clone, Copy)]
struct TtEntry {
    board: u64,
    /// bit 0: occupied; bit 1: kind (1 = chance); bits 2..: remaining depth.
    meta: u64,
    value: f64,
}

const TT_EMPTY: TtEntry = TtEntry { board: 0, meta: 0, value: 0.0 };

fn tt_meta(kind: NodeKind, depth: u32) -> u64 {
    1 | (((kind == NodeKind::Chance) as u64) << 1) | ((depth as u64) << 2)
}

/// Open-addressed, always-replace value cache keyed by
/// `(board, node kind, remaining depth)`. A value is returned only on an
/// exact key match, so states and afterstates never alias and distinct
/// depths never alias.
pub struct TranspositionTable {
    entries: Vec<TtEntry>,
    mask: u64,
}

impl TranspositionTable {
    /// Creates a table with at least `capacity` entries (rounded up to a
    /// power of two, minimum 16).
    pub fn new(capacity: usize) -> TranspositionTable {
        let cap = capacity.max(16).next_power_of_two();
        TranspositionTable { entries: vec![TT_EMPTY; cap], mask: cap as u64 - 1 }
    }

    pub fn capacity(&self) -> usize {
        self.entries.len()
    }

    #[inline]
    fn index(&self, board: Board, kind: NodeKind, depth: u32) -> usize {
        (mix64(board.raw() ^ tt_meta(kind, depth).wrapping_mul(0x9E37_79B9_7F4A_7C15)) & self.mask)
            as usize
    }

    #[inline]
    pub fn lookup(&self, board: Board, kind: NodeKind, depth: u32) -> Option<f64> {
        let e = &self.entries[self.index(board, kind, depth)];
        (e.board == board.raw() && e.meta == tt_meta(kind, depth)).then_some(e.value)
    }

    #[inline]
    pub fn store(&mut self, board: Board, kind: NodeKind, depth: u32, value: f64) {
        let i = self.index(board, kind, depth);
        self.entries[i] = TtEntry { board: board.raw(), meta: tt_meta(kind, depth), value };
    }

    pub fn clear(&mut self) {
        self.entries.fill(TT_EMPTY);
    }
}

/// Search instrumentation: every max or chance node entered counts once,
/// including depth-0 chance leaves; a transposition hit counts the node but
/// not its pruned subtree.
#[derive(Clone, Copy, Debug, Default)]
pub struct SearchStats {
    pub nodes: u64,
    pub tt_hits: u64,
}

/// Reusable expectimax searcher over one engine, value function, and
/// configuration. The transposition table persists across roots (values
/// depend only on board, kind, and remaining depth, never on the root).
pub struct Searcher<'a, V: Evaluator + ?Sized> {
    engine: &'a Engine,
    value: &'a V,
    config: SearchConfig,
    tt: Option<TranspositionTable>,
    stats: SearchStats,
}

impl<'a, V: Evaluator + ?Sized> Searcher<'a, V> {
    pub fn new(engine: &'a Engine, value: &'a V, config: SearchConfig) -> Searcher<'a, V> {
        let tt = config.use_tt.then(|| TranspositionTable::new(config.tt_capacity));
        Searcher { engine, value, config, tt, stats: SearchStats::default() }
    }

    pub fn config(&self) -> &SearchConfig {
        &self.config
    }

    pub fn stats(&self) -> SearchStats {
        self.stats
    }

    pub fn reset_stats(&mut self) {
        self.stats = SearchStats::default();
    }

    pub fn clear_tt(&mut self) {
        if let Some(tt) = &mut self.tt {
            tt.clear();
        }
    }

    /// Best action and root value at the configured depth (at least 1 for
    /// action selection). Terminal states return `(None, 0)`; ties break in
    /// canonical action order.
    pub fn expectimax(&mut self, state: Board) -> (Option<Action>, f64) {
        let p = self.config.depth.max(1);
        self.stats.nodes += 1;
        let mut best: Option<(Action, f64)> = None;
        for a in Action::ALL {
            let out = self.engine.slide(state, a);
            if !out.moved {
                continue;
            }
            let v = out.reward as f64 + self.chance(out.after, p - 1);
            if best.map(|(_, bv)| v > bv).unwrap_or(true) {
                best = Some((a, v));
            }
        }
        match best {
            None => (None, 0.0),
            Some((a, v)) => (Some(a), if self.config.rectified { v + 1.0 } else { v }),
        }
    }

    /// Per-legal-action backed-up values `r + chance(s', p−1)` in canonical
    /// order (without the rectified root bonus, a constant shift).
    pub fn action_values(&mut self, state: Board) -> Vec<(Action, f64)> {
        let p = self.config.depth.max(1);
        let mut out = Vec::new();
        for a in Action::ALL {
            let slid = self.engine.slide(state, a);
            if slid.moved {
                let v = slid.reward as f64 + self.chance(slid.after, p - 1);
                out.push((a, v));
            }
        }
        out
    }

    /// Chance-node value of an afterstate with `p` chance layers remaining:
    /// the raw (or rectified) evaluation at `p = 0`, otherwise the
    /// spawn-probability-weighted expectation of successor max values.
    pub fn chance_value(&mut self, afterstate: Board, p: u32) -> f64 {
        self.chance(afterstate, p)
    }

    fn chance(&mut self, afterstate: Board, p: u32) -> f64 {
        self.stats.nodes += 1;
        if p == 0 {
            let v = self.value.value(afterstate);
            return if self.config.rectified { v.max(0.0) } else { v };
        }
        if let Some(tt) = &self.tt {
            if let Some(v) = tt.lookup(afterstate, NodeKind::Chance, p) {
                self.stats.tt_hits += 1;
                return v;
            }
        }
        let engine = self.engine;
        let mut sum = 0.0;
        engine.for_each_spawn(afterstate, |board, prob| {
            sum += prob * self.max_value(board, p);
        });
        if let Some(tt) = &mut self.tt {
            tt.store(afterstate, NodeKind::Chance, p, sum);
        }
        sum
    }

    /// Max-node value of a state with `p ≥ 1` chance layers remaining:
    /// 0 when terminal, otherwise the best `r + chance(s', p−1)` (plus 1
    /// when rectified).
    fn max_value(&mut self, state: Board, p: u32) -> f64 {
        self.stats.nodes += 1;
        if let Some(tt) = &self.tt {
            if let Some(v) = tt.lookup(state, NodeKind::Max, p) {
                self.stats.tt_hits += 1;
                return v;
            }
        }
        let mut best = f64::NEG_INFINITY;
        let mut any = false;
        for a in Action::ALL {
            let out = self.engine.slide(state, a);
            if !out.moved {
                continue;
            }
            any = true;
            let v = out.reward as f64 + self.chance(out.after, p - 1);
            if v > best {
                best = v;
            }
        }
        let value = if !any {
            0.0
        } else if self.config.rectified {
            best + 1.0
        } else {
            best
        };
        if let Some(tt) = &mut self.tt {
            tt.store(state, NodeKind::Max, p, value);
        }
        value
    }

    /// Expectimax with root tile-downgrading: when the board's tiles contain
    /// the configured threshold multiset and a downgrade exists, the search
    /// runs on the downgraded board and its best action is applied verbatim
    /// to the original (downgrading preserves empties and merge structure,
    /// so legal actions coincide). Downgrading applies at the root only.
    pub fn downgraded_search(&mut self, state: Board) -> (Option<Action>, f64) {
        if let Some(rho) = self.config.downgrade_threshold.clone() {
            if rho.contained_in(&state.exponent_counts()) {
                if let Some(tilde) = downgrade(state) {
                    return self.expectimax(tilde);
                }
            }
        }
        self.expectimax(state)
    }
}

/// Tile-downgrading: finds the largest missing tile value below the maximum
/// (`c#`) and halves every tile strictly greater than it; all other cells
/// are unchanged. `None` when no tile below the maximum is missing.
pub fn downgrade(board: Board) -> Option<Board> {
    let max = board.max_exponent();
    if max <= 1 {
        return None;
    }
    let counts = board.exponent_counts();
    let c = (1..max).rev().find(|&c| counts[c as usize] == 0)?;
    let mut result = board;
    for cell in 0..16 {
        let e = board.exponent(cell);
        if e > c {
            result = result.with_exponent(cell, e - 1);
        }
    }
    Some(result)
}

/// Exact values of a position under optimal play: the expectation over
/// spawns, and the totals when the environment spawns the luckiest (`best`)
/// or unluckiest (`worst`) tiles, each against the correspondingly optimal
/// player.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolvedValues {
    pub expected: f64,
    pub best: f64,
    pub worst: f64,
}

const TERMINAL_VALUES: SolvedValues = SolvedValues { expected: 0.0, best: 0.0, worst: 0.0 };

/// Full solution of a small board: every state and afterstate reachable
/// from any initial position, memoized over the game DAG (each spawn
/// strictly increases the tile sum, so the recursion terminates).
pub struct SolvedGame {
    rows: u8,
    cols: u8,
    states: HashMap<u64, SolvedValues>,
    afterstates: HashMap<u64, SolvedValues>,
    max_tile_sum: u64,
}

impl SolvedGame {
    /// Solves every position of a ≤6-cell game exhaustively, starting from
    /// all two-spawn initial boards.
    pub fn solve(engine: &Engine) -> Result<SolvedGame, SearchError> {
        if engine.cell_count() > 6 {
            return Err(SearchError::BoardTooLarge { rows: engine.rows(), cols: engine.cols() });
        }
        let mut solved = SolvedGame {
            rows: engine.rows(),
            cols: engine.cols(),
            states: HashMap::new(),
            afterstates: HashMap::new(),
            max_tile_sum: 0,
        };
        let n = engine.cell_count();
        for i in 0..n {
            for j in (i + 1)..n {
                for ei in 1..=2u8 {
                    for ej in 1..=2u8 {
                        let start = Board::EMPTY.with_exponent(i, ei).with_exponent(j, ej);
                        solved.state_value(engine, start);
                    }
                }
            }
        }
        Ok(solved)
    }

    fn state_value(&mut self, engine: &Engine, b: Board) -> SolvedValues {
        if let Some(&v) = self.states.get(&b.raw()) {
            return v;
        }
        self.max_tile_sum = self.max_tile_sum.max(b.tile_sum());
        let mut value: Option<SolvedValues> = None;
        for a in Action::ALL {
            let out = engine.slide(b, a);
            if !out.moved {
                continue;
            }
            let after = self.afterstate_value(engine, out.after);
            let r = out.reward as f64;
            let v = value.get_or_insert(SolvedValues {
                expected: f64::NEG_INFINITY,
                best: f64::NEG_INFINITY,
                worst: f64::NEG_INFINITY,
            });
            // Each column keeps its own optimal player: the action
            // maximising the expectation is not necessarily the one
            // maximising the lucky or unlucky total.
            v.expected = v.expected.max(r + after.expected);
            v.best = v.best.max(r + after.best);
            v.worst = v.worst.max(r + after.worst);
        }
        let value = value.unwrap_or(TERMINAL_VALUES);
        self.states.insert(b.raw(), value);
        value
    }

    fn afterstate_value(&mut self, engine: &Engine, b: Board) -> SolvedValues {
        if let Some(&v) = self.afterstates.get(&b.raw()) {
            return v;
        }
        let mut expected = 0.0;
        let mut best = f64::NEG_INFINITY;
        let mut worst = f64::INFINITY;
        let mut any = false;
        let spawns = engine.spawn_successors(b);
        for spawn in &spawns.spawns {
            any = true;
            let child = self.state_value(engine, spawn.board);
            expected += spawn.probability * child.expected;
            best = best.max(child.best);
            worst = worst.min(child.worst);
        }
        let value = if any { SolvedValues { expected, best, worst } } else { TERMINAL_VALUES };
        self.afterstates.insert(b.raw(), value);
        value
    }

    pub fn rows(&self) -> u8 {
        self.rows
    }

    pub fn cols(&self) -> u8 {
        self.cols
    }

    pub fn state(&self, b: Board) -> Option<SolvedValues> {
        self.states.get(&b.raw()).copied()
    }

    pub fn afterstate(&self, b: Board) -> Option<SolvedValues> {
        self.afterstates.get(&b.raw()).copied()
    }

    /// Total solved entries of both kinds.
    pub fn len(&self) -> usize {
        self.states.len() + self.afterstates.len()
    }

    pub fn state_count(&self) -> usize {
        self.states.len()
    }

    pub fn afterstate_count(&self) -> usize {
        self.afterstates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Largest tile sum over all solved states. From a position with sum s,
    /// at most `(max_tile_sum − s)/2 + 1` spawns remain, which bounds the
    /// expectimax depth needed for exact agreement with the solver.
    pub fn max_tile_sum(&self) -> u64 {
        self.max_tile_sum
    }

    /// Depth sufficient for expectimax from `b` to reach every terminal.
    pub fn horizon(&self, b: Board) -> u32 {
        (self.max_tile_sum.saturating_sub(b.tile_sum()) / 2 + 1) as u32
    }

    /// Action maximising `r + expected(afterstate)`, ties canonical.
    pub fn best_action(&self, engine: &Engine, b: Board) -> Option<Action> {
        let mut best: Option<(Action, f64)> = None;
        for a in Action::ALL {
            let out = engine.slide(b, a);
            if !out.moved {
                continue;
            }
            let v = out.reward as f64 + self.afterstate_value_solved(out.after)?;
            if best.map(|(_, bv)| v > bv).unwrap_or(true) {
                best = Some((a, v));
            }
        }
        best.map(|(a, _)| a)
    }

    fn afterstate_value_solved(&self, b: Board) -> Option<f64> {
        self.afterstates.get(&b.raw()).map(|v| v.expected)
    }

    /// Dumps the solved map as CSV: `board,kind,expected,best,worst` with
    /// the board in hex, rows sorted for determinism.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "board,kind,expected,best,worst")?;
        let mut rows: Vec<(u64, NodeKind, SolvedValues)> = self
            .states
            .iter()
            .map(|(&b, &v)| (b, NodeKind::Max, v))
            .chain(self.afterstates.iter().map(|(&b, &v)| (b, NodeKind::Chance, v)))
            .collect();
        rows.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        for (board, kind, v) in rows {
            let kind = match kind {
                NodeKind::Max => "state",
                NodeKind::Chance => "afterstate",
            };
            writeln!(w, "{board:016x},{kind},{},{},{}", v.expected, v.best, v.worst)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learning::greedy_action;
    use crate::network::ZeroEvaluator;
    use crate::rng::SplitMix64;

    fn engine() -> &'static Engine {
        Engine::shared_4x4()
    }

    /// Deterministic pseudo-value of a board, nontrivial but cheap.
    struct HashValue;
    impl Evaluator for HashValue {
        fn value(&self, b: Board) -> f64 {
            (mix64(b.raw()) % 100_000) as f64
        }
    }

    fn random_position(rng: &mut SplitMix64, moves: u32) -> Board {
        let e = engine();
        let mut b = e.initial_state(rng);
        for _ in 0..moves {
            let legal: Vec<Action> = e.legal_actions(b).iter().collect();
            if legal.is_empty() {
                break;
            }
            let out = e.slide(b, legal[rng.next_below(legal.len() as u64) as usize]);
            match e.spawn_random(out.after, rng) {
                Ok(s) => b = s.board,
                Err(_) => break,
            }
        }
        b
    }

    #[test]
    fn tt_exact_match_only() {
        let mut tt = TranspositionTable::new(1000);
        assert_eq!(tt.capacity(), 1024, "rounded up to a power of two");
        let b = Board::from_raw(0x1234);
        tt.store(b, NodeKind::Max, 2, 42.0);
        assert_eq!(tt.lookup(b, NodeKind::Max, 2), Some(42.0));
        assert_eq!(tt.lookup(b, NodeKind::Max, 3), None, "depths do not alias");
        assert_eq!(tt.lookup(b, NodeKind::Chance, 2), None, "kinds do not alias");
        assert_eq!(tt.lookup(Board::from_raw(0x4321), NodeKind::Max, 2), None);
        tt.store(b, NodeKind::Max, 2, 7.0);
        assert_eq!(tt.lookup(b, NodeKind::Max, 2), Some(7.0), "always-replace");
    }

    #[test]
    fn terminal_state_returns_none_and_zero() {
        // Full checkerboard: no merges, no moves.
        let b = Board::from_exponents(&[1, 2, 1, 2, 2, 1, 2, 1, 1, 2, 1, 2, 2, 1, 2, 1]);
        assert!(engine().is_terminal(b));
        let mut s = Searcher::new(engine(), &HashValue, SearchConfig::with_depth(3));
        assert_eq!(s.expectimax(b), (None, 0.0));
    }

    #[test]
    fn depth_one_matches_greedy() {
        let mut rng = SplitMix64::new(99);
        let mut s = Searcher::new(engine(), &HashValue, SearchConfig::with_depth(1));
        for i in 0..200 {
            let b = random_position(&mut rng, i % 40);
            let expectimax_action = s.expectimax(b).0;
            let greedy = greedy_action(engine(), b, &HashValue).map(|(a, _)| a);
            assert_eq!(expectimax_action, greedy, "board {:016x}", b.raw());
        }
    }

    #[test]
    fn chance_value_depth_zero_is_raw_value() {
        let mut s = Searcher::new(engine(), &HashValue, SearchConfig::default());
        let b = Board::from_exponents(&[1, 2, 3, 4, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(s.chance_value(b, 0), HashValue.value(b));
    }

    #[test]
    fn chance_value_single_empty_cell() {
        // All cells filled except one: two successors at 0.9/0.1.
        let mut exps = [0u8; 16];
        for (i, e) in exps.iter_mut().enumerate().skip(1) {
            *e = if (i / 4 + i) % 2 == 0 { 3 } else { 5 };
        }
        let b = Board::from_exponents(&exps);
        assert_eq!(engine().count_empty(b), 1);
        let mut s = Searcher::new(engine(), &HashValue, SearchConfig::default());
        let two = b.with_exponent(0, 1);
        let four = b.with_exponent(0, 2);
        let expect = 0.9 * s.max_value(two, 1) + 0.1 * s.max_value(four, 1);
        assert!((s.chance_value(b, 1) - expect).abs() < 1e-12);
    }

    #[test]
    fn spawn_probabilities_sum_to_one() {
        let mut rng = SplitMix64::new(3);
        for i in 0..50 {
            let b = random_position(&mut rng, i);
            if engine().count_empty(b) == 0 {
                continue;
            }
            let mut total = 0.0;
            engine().for_each_spawn(b, |_, p| total += p);
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn tt_on_and_off_agree() {
        let mut rng = SplitMix64::new(41);
        for i in 0..20 {
            let b = random_position(&mut rng, 10 + i);
            let mut with = Searcher::new(
                engine(),
                &HashValue,
                SearchConfig { depth: 2, use_tt: true, ..SearchConfig::default() },
            );
            let mut without = Searcher::new(
                engine(),
                &HashValue,
                SearchConfig { depth: 2, use_tt: false, ..SearchConfig::default() },
            );
            let (aw, vw) = with.expectimax(b);
            let (ao, vo) = without.expectimax(b);
            assert_eq!(aw, ao);
            assert!((vw - vo).abs() <= 1e-9 * vo.abs().max(1.0));
        }
    }

    #[test]
    fn node_counts_match_independent_formula() {
        let mut rng = SplitMix64::new(7);
        let e = engine();
        for i in 0..20 {
            let b = random_position(&mut rng, 5 + i);
            if e.is_terminal(b) {
                continue;
            }
            // Depth 1: root + one chance leaf per legal action.
            let legal = e.legal_actions(b).len() as u64;
            let mut s1 = Searcher::new(
                e,
                &HashValue,
                SearchConfig { depth: 1, use_tt: false, ..SearchConfig::default() },
            );
            s1.expectimax(b);
            assert_eq!(s1.stats().nodes, 1 + legal);

            // Depth 2 counted by direct enumeration of the same tree.
            let mut expect = 1u64;
            for a in Action::ALL {
                let out = e.slide(b, a);
                if !out.moved {
                    continue;
                }
                expect += 1; // chance node at p = 1
                e.for_each_spawn(out.after, |child, _| {
                    expect += 1; // max node at p = 1
                    expect += e.legal_actions(child).len() as u64; // chance leaves
                });
            }
            let mut s2 = Searcher::new(
                e,
                &HashValue,
                SearchConfig { depth: 2, use_tt: false, ..SearchConfig::default() },
            );
            s2.expectimax(b);
            assert_eq!(s2.stats().nodes, expect, "board {:016x}", b.raw());
        }
    }

    #[test]
    fn rectified_leaf_clamps_to_zero() {
        let minus_five = |_: Board| -5.0;
        let cfg = SearchConfig { rectified: true, ..SearchConfig::default() };
        let mut s = Searcher::new(engine(), &minus_five, cfg);
        let b = Board::from_exponents(&[1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 2]);
        assert_eq!(s.chance_value(b, 0), 0.0);
    }

    #[test]
    fn rectified_preserves_argmax_on_positive_full_depth_trees() {
        let mut rng = SplitMix64::new(17);
        let positive = |b: Board| 1000.0 + (mix64(b.raw()) % 1000) as f64;
        for _ in 0..30 {
            let b = random_position(&mut rng, 8);
            // Keep only roomy positions: no terminals within the horizon.
            if engine().count_empty(b) < 6 {
                continue;
            }
            let mut plain = Searcher::new(
                engine(),
                &positive,
                SearchConfig { depth: 2, use_tt: false, ..SearchConfig::default() },
            );
            let mut rect = Searcher::new(
                engine(),
                &positive,
                SearchConfig { depth: 2, use_tt: false, rectified: true, ..SearchConfig::default() },
            );
            assert_eq!(plain.expectimax(b).0, rect.expectimax(b).0);
        }
    }

    #[test]
    fn downgrade_worked_examples() {
        // Tiles {2, 8}: 4 is missing, so 8 halves to 4 -> exponents {1, 2}.
        let b = Board::from_exponents(&[1, 3, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0]);
        let d = downgrade(b).unwrap();
        assert_eq!(d.exponent(0), 1);
        assert_eq!(d.exponent(1), 2);

        // Consecutive tiles {2, 4, 8}: nothing missing below the max.
        let c = Board::from_exponents(&[1, 2, 3, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0]);
        assert!(downgrade(c).is_none());

        // 256 missing below 32768: halve everything above 256 only.
        let exps = [15, 14, 13, 12, 11, 10, 9, 7, 6, 5, 4, 3, 2, 1, 0, 0];
        let big = Board::from_exponents(&exps);
        let d = downgrade(big).unwrap();
        for (cell, &e) in exps.iter().enumerate() {
            let expect = if e > 8 { e - 1 } else { e };
            assert_eq!(d.exponent(cell as u8), expect, "cell {cell}");
        }
    }

    #[test]
    fn downgrade_preserves_structure_and_legal_actions() {
        let mut rng = SplitMix64::new(23);
        let mut checked = 0;
        for i in 0..300 {
            let b = random_position(&mut rng, i % 60);
            let Some(d) = downgrade(b) else { continue };
            checked += 1;
            for cell in 0..16 {
                let before = b.exponent(cell);
                let after = d.exponent(cell);
                assert_eq!(before == 0, after == 0, "empties unchanged");
                assert!(after == before || after + 1 == before, "at most one halving");
            }
            assert_eq!(
                engine().legal_actions(b).iter().collect::<Vec<_>>(),
                engine().legal_actions(d).iter().collect::<Vec<_>>(),
                "merge structure preserved: {:016x} vs {:016x}",
                b.raw(),
                d.raw()
            );
        }
        assert!(checked > 20, "downgradeable positions found: {checked}");
    }

    #[test]
    fn downgraded_search_requires_threshold() {
        // Threshold {32768} with no 32768-tile: plain expectimax path.
        let rho = TileThreshold::from_tiles(&[32768]).unwrap();
        let cfg = SearchConfig {
            depth: 2,
            downgrade_threshold: Some(rho),
            ..SearchConfig::default()
        };
        let mut rng = SplitMix64::new(51);
        let b = random_position(&mut rng, 12);
        assert!(b.max_exponent() < 15);
        let mut s = Searcher::new(engine(), &HashValue, cfg.clone());
        let mut plain = Searcher::new(engine(), &HashValue, SearchConfig { downgrade_threshold: None, ..cfg });
        assert_eq!(s.downgraded_search(b).0, plain.expectimax(b).0);
    }

    #[test]
    fn downgraded_search_runs_on_downgraded_board() {
        // A 32768-tile with 256 missing: the search sees the downgraded
        // board, so its value differs from the plain search's.
        let exps = [15u8, 14, 13, 12, 11, 10, 9, 7, 0, 0, 0, 0, 0, 0, 0, 0];
        let b = Board::from_exponents(&exps);
        let rho = TileThreshold::from_tiles(&[32768]).unwrap();
        let cfg = SearchConfig {
            depth: 1,
            use_tt: false,
            downgrade_threshold: Some(rho),
            ..SearchConfig::default()
        };
        let mut s = Searcher::new(engine(), &HashValue, cfg.clone());
        let tilde = downgrade(b).unwrap();
        let mut direct =
            Searcher::new(engine(), &HashValue, SearchConfig { downgrade_threshold: None, ..cfg });
        assert_eq!(s.downgraded_search(b), direct.expectimax(tilde));
    }

    /// True when every spawn completion of `after` is terminal or forced
    /// dead within `k` further moves, whatever the player does.
    fn dies_within(e: &Engine, after: Board, k: u32) -> bool {
        let mut all_dead = true;
        e.for_each_spawn(after, |child, _| {
            if !all_dead {
                return;
            }
            let mut child_dead = true;
            for a in Action::ALL {
                let out = e.slide(child, a);
                if !out.moved {
                    continue;
                }
                if k == 0 || !dies_within(e, out.after, k - 1) {
                    child_dead = false;
                    break;
                }
            }
            if !child_dead {
                all_dead = false;
            }
        });
        all_dead
    }

    #[test]
    fn rectified_search_prefers_survival_on_negative_values() {
        // With a uniformly negative value function, plain search prefers the
        // branch that dies (terminal max nodes are worth 0, beating any
        // negative leaf), while the rectified variant's +1 survival bonus
        // and clamped leaves prefer the branch that lives longer.
        let e = engine();
        let b = Board::from_raw(0x2121323527130134);
        let negative = |_: Board| -1.0e9f64;
        let cfg = SearchConfig { depth: 3, use_tt: false, ..SearchConfig::default() };
        let mut plain = Searcher::new(e, &negative, cfg.clone());
        let mut rect =
            Searcher::new(e, &negative, SearchConfig { rectified: true, ..cfg });
        let (plain_action, plain_value) = plain.expectimax(b);
        let (rect_action, rect_value) = rect.expectimax(b);
        assert_eq!(plain_action, Some(Action::Right));
        assert_eq!(rect_action, Some(Action::Up));
        assert_eq!(plain_value, 0.0, "forced death scores only terminal zeros");
        assert!(rect_value >= 2.0, "survivor accumulates depth bonuses: {rect_value}");
        // Structural confirmation of the asymmetric survival depths.
        assert!(dies_within(e, e.slide(b, Action::Right).after, 2));
        assert!(!dies_within(e, e.slide(b, Action::Up).after, 2));
    }

    fn engine_2x3() -> Engine {
        Engine::new(2, 3).unwrap()
    }

    #[test]
    fn solver_rejects_large_boards() {
        assert!(matches!(
            SolvedGame::solve(engine()),
            Err(SearchError::BoardTooLarge { rows: 4, cols: 4 })
        ));
    }

    #[test]
    fn solver_values_are_ordered_and_terminals_zero() {
        let e = engine_2x3();
        let solved = SolvedGame::solve(&e).unwrap();
        assert!(solved.len() > 1000, "nontrivial reachable set: {}", solved.len());
        let mut terminals = 0;
        for (&raw, v) in &solved.states {
            assert!(
                v.worst <= v.expected + 1e-9 && v.expected <= v.best + 1e-9,
                "ordering violated on {raw:016x}: {v:?}"
            );
            if e.is_terminal(Board::from_raw(raw)) {
                assert_eq!((v.expected, v.best, v.worst), (0.0, 0.0, 0.0));
                terminals += 1;
            }
        }
        assert!(terminals > 0, "some terminal states exist");
    }

    #[test]
    fn solver_matches_monte_carlo_rollouts() {
        let e = engine_2x3();
        let solved = SolvedGame::solve(&e).unwrap();
        let start = Board::EMPTY.with_exponent(0, 1).with_exponent(4, 1);
        let expect = solved.state(start).unwrap().expected;

        let mut rng = SplitMix64::new(2024);
        let n = 100_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let mut b = start;
            let mut score = 0u64;
            while let Some(a) = solved.best_action(&e, b) {
                let out = e.slide(b, a);
                score += out.reward;
                match e.spawn_random(out.after, &mut rng) {
                    Ok(s) => b = s.board,
                    Err(_) => break,
                }
            }
            sum += score as f64;
            sumsq += (score as f64) * (score as f64);
        }
        let mean = sum / n as f64;
        let var = (sumsq / n as f64 - mean * mean).max(0.0);
        let se = (var / n as f64).sqrt();
        assert!(
            (mean - expect).abs() <= 3.0 * se,
            "solver {expect} vs Monte Carlo {mean} ± {se}"
        );
    }

    #[test]
    fn deep_expectimax_agrees_with_solver() {
        let e = engine_2x3();
        let solved = SolvedGame::solve(&e).unwrap();
        let mut rng = SplitMix64::new(5);
        let mut s = Searcher::new(
            &e,
            &ZeroEvaluator,
            SearchConfig { depth: 0, use_tt: true, tt_capacity: 1 << 22, ..SearchConfig::default() },
        );
        for _ in 0..5 {
            let mut b = e.initial_state(&mut rng);
            for _ in 0..rng.next_below(10) {
                let legal: Vec<Action> = e.legal_actions(b).iter().collect();
                if legal.is_empty() {
                    break;
                }
                let out = e.slide(b, legal[rng.next_below(legal.len() as u64) as usize]);
                match e.spawn_random(out.after, &mut rng) {
                    Ok(sp) => b = sp.board,
                    Err(_) => break,
                }
            }
            if e.is_terminal(b) {
                continue;
            }
            s.config.depth = solved.horizon(b);
            let (_, v) = s.expectimax(b);
            let expect = solved.state(b).unwrap().expected;
            assert!(
                (v - expect).abs() <= 1e-9 * expect.abs().max(1.0),
                "expectimax {v} vs solver {expect} on {:016x}",
                b.raw()
            );
        }
    }

    #[test]
    fn solver_csv_round_trips_shape() {
        let e = engine_2x3();
        let solved = SolvedGame::solve(&e).unwrap();
        let mut buf = Vec::new();
        solved.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("board,kind,expected,best,worst"));
        let mut rows = 0;
        for line in lines {
            let fields: Vec<&str> = line.split(',').collect();
            assert_eq!(fields.len(), 5, "bad row: {line}");
            assert_eq!(fields[0].len(), 16);
            assert!(fields[0].chars().all(|c| c.is_ascii_hexdigit()));
            assert!(fields[1] == "state" || fields[1] == "afterstate");
            for v in &fields[2..] {
                v.parse::<f64>().unwrap();
            }
            rows += 1;
        }
        assert_eq!(rows, solved.len());
    }
}
