//! Generative invariants: slide semantics, spawn models, episode-record
//! round-trips, and downgrade structure over arbitrary boards.

use otdl::engine::{Action, Board, Engine, SPAWN_TWO_PROBABILITY};
use otdl::record::{EpisodeRecord, Move, RecordedMove};
use otdl::search::downgrade;
use proptest::prelude::*;

fn board_strategy() -> impl Strategy<Value = Board> {
    prop::collection::vec(0u8..=15, 16).prop_map(|cells| Board::from_exponents(&cells))
}

/// Boards without saturated cells, where merges cannot hit the exponent cap.
fn unsaturated_board() -> impl Strategy<Value = Board> {
    prop::collection::vec(0u8..=14, 16).prop_map(|cells| Board::from_exponents(&cells))
}

fn recorded_move() -> impl Strategy<Value = RecordedMove> {
    let mv = prop_oneof![
        (0u8..16, 1u8..=15).prop_map(|(cell, exponent)| Move::Place { cell, exponent }),
        (0usize..4).prop_map(|i| Move::Slide { action: Action::ALL[i] }),
    ];
    (mv, prop::option::of(0u64..100_000), prop::option::of(0u64..1_000_000))
        .prop_map(|(mv, millis, reward)| RecordedMove { mv, millis, reward })
}

/// Canonical representative of a board's isomorphism class.
fn canon(engine: &Engine, b: Board) -> u64 {
    engine.isomorphisms(b).into_iter().map(Board::raw).min().unwrap()
}

proptest! {
    /// A slide reports `moved` exactly when it changed the board.
    #[test]
    fn moved_iff_changed(b in board_strategy()) {
        let engine = Engine::shared_4x4();
        for action in Action::ALL {
            let out = engine.slide(b, action);
            prop_assert_eq!(out.moved, out.after != b);
            prop_assert_eq!(engine.legal_actions(b).contains(action), out.moved);
        }
    }

    /// Sliding never changes the tile sum while no cell is saturated
    /// (merging 2^e + 2^e yields exactly 2^(e+1)).
    #[test]
    fn slide_preserves_tile_sum(b in unsaturated_board()) {
        let engine = Engine::shared_4x4();
        for action in Action::ALL {
            prop_assert_eq!(engine.slide(b, action).after.tile_sum(), b.tile_sum());
        }
    }

    /// The slide rule commutes with board isomorphisms: rotating or
    /// reflecting a position permutes which action is which, but the
    /// multiset of (reward, afterstate-class) outcomes is identical.
    #[test]
    fn slides_commute_with_isomorphisms(b in board_strategy()) {
        let engine = Engine::shared_4x4();
        let outcomes = |x: Board| {
            let mut v: Vec<(u64, u64)> = engine
                .legal_actions(x)
                .iter()
                .map(|a| {
                    let out = engine.slide(x, a);
                    (out.reward, canon(engine, out.after))
                })
                .collect();
            v.sort_unstable();
            v
        };
        let reference = outcomes(b);
        for iso in engine.isomorphisms(b) {
            prop_assert_eq!(outcomes(iso), reference.clone());
        }
    }

    /// Spawn model: with k empty cells there are 2k successors — a 2-tile at
    /// 0.9/k and a 4-tile at 0.1/k per cell — and probabilities sum to 1.
    #[test]
    fn spawn_distribution_is_normalized(b in board_strategy()) {
        let engine = Engine::shared_4x4();
        let k = engine.count_empty(b);
        prop_assume!(k > 0);
        let dist = engine.spawn_successors(b);
        prop_assert_eq!(dist.spawns.len(), 2 * k as usize);
        let total: f64 = dist.spawns.iter().map(|s| s.probability).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        for spawn in &dist.spawns {
            prop_assert!(spawn.exponent == 1 || spawn.exponent == 2);
            prop_assert_eq!(b.exponent(spawn.cell), 0);
            prop_assert_eq!(spawn.board, b.with_exponent(spawn.cell, spawn.exponent));
            // 4-tile weight is the complement 1 − 0.9, so each cell's pair
            // sums to exactly 1/k.
            let weight = if spawn.exponent == 1 {
                SPAWN_TWO_PROBABILITY
            } else {
                1.0 - SPAWN_TWO_PROBABILITY
            };
            prop_assert_eq!(spawn.probability, weight / k as f64);
        }
        // The callback enumeration visits exactly the same weighted successors.
        let mut seen = Vec::new();
        engine.for_each_spawn(b, |board, p| seen.push((board.raw(), p)));
        let listed: Vec<(u64, f64)> =
            dist.spawns.iter().map(|s| (s.board.raw(), s.probability)).collect();
        prop_assert_eq!(seen, listed);
    }

    /// Episode records survive a write/parse round trip exactly.
    #[test]
    fn record_round_trip(moves in prop::collection::vec(recorded_move(), 0..48)) {
        let record = EpisodeRecord { moves };
        let text = record.write();
        let parsed = EpisodeRecord::parse(&text).unwrap();
        prop_assert_eq!(parsed, record);
    }

    /// Downgrading halves exactly the exponents above the largest missing
    /// one, leaves the rest alone, and never disturbs which moves are legal.
    #[test]
    fn downgrade_structure(b in board_strategy()) {
        let engine = Engine::shared_4x4();
        let Some(down) = downgrade(b) else { return Ok(()) };
        let counts = b.exponent_counts();
        let missing = (1..b.max_exponent()).rev().find(|&c| counts[c as usize] == 0).unwrap();
        for cell in 0..16u8 {
            let before = b.exponent(cell);
            let after = down.exponent(cell);
            if before > missing {
                prop_assert_eq!(after, before - 1);
            } else {
                prop_assert_eq!(after, before);
            }
        }
        // Equality and zero patterns survive the halving map, so legality is
        // untouched — except around saturated cells, where two capped
        // 15-exponents cannot merge but their downgraded 14s can.
        if b.max_exponent() < 15 {
            prop_assert_eq!(engine.legal_actions(down), engine.legal_actions(b));
        }
    }
}
