//! Exhaustively solves the 2×3 board and checks a deep expectimax search
//! against the exact values.
//!
//! The 2×3 game is small enough to enumerate: every reachable state and
//! afterstate gets its exact expected, best-case, and worst-case scores
//! under optimal play. Tile sums grow monotonically, so the recursion is
//! acyclic and a search horizon of `(max_tile_sum − tile_sum)/2 + 1` chance
//! layers reaches every leaf — expectimax at that depth with a zero
//! evaluator must reproduce the solver's expectation.
//!
//! ```text
//! cargo run --release --example solve_2x3
//! ```

use std::time::Instant;

use otdl::engine::Engine;
use otdl::network::ZeroEvaluator;
use otdl::rng::SplitMix64;
use otdl::search::{SearchConfig, Searcher, SolvedGame};

fn main() {
    let engine = Engine::new(2, 3).unwrap();
    let started = Instant::now();
    let solved = SolvedGame::solve(&engine).unwrap();
    println!(
        "solved 2×3 in {:.2}s: {} states, {} afterstates, max tile sum {}",
        started.elapsed().as_secs_f64(),
        solved.state_count(),
        solved.afterstate_count(),
        solved.max_tile_sum()
    );

    // Optimal play from one opening, every move annotated with the exact
    // expectation before it.
    let mut rng = SplitMix64::new(2);
    let mut board = engine.initial_state(&mut rng);
    println!("\noptimal line from:\n{}", engine.render(board));
    let mut score = 0u64;
    while let Some(action) = solved.best_action(&engine, board) {
        let values = solved.state(board).unwrap();
        let out = engine.slide(board, action);
        score += out.reward;
        println!(
            "E = {:7.2} best {:4} worst {:3} → {:?} (+{})",
            values.expected, values.best, values.worst, action, out.reward
        );
        match engine.spawn_random(out.after, &mut rng) {
            Ok(s) => board = s.board,
            Err(_) => break,
        }
    }
    println!("final score {score}\n{}", engine.render(board));

    // Exact agreement: expectimax to the solver's horizon equals the solved
    // expectation.
    let mut worst_gap = 0.0f64;
    for i in 0..10 {
        let mut b = engine.initial_state(&mut rng);
        for _ in 0..i {
            let Some(a) = solved.best_action(&engine, b) else { break };
            let out = engine.slide(b, a);
            match engine.spawn_random(out.after, &mut rng) {
                Ok(s) => b = s.board,
                Err(_) => break,
            }
        }
        let depth = solved.horizon(b);
        let mut searcher = Searcher::new(
            &engine,
            &ZeroEvaluator,
            SearchConfig { tt_capacity: 1 << 22, ..SearchConfig::with_depth(depth) },
        );
        let (_, search_value) = searcher.expectimax(b);
        let exact = solved.state(b).unwrap().expected;
        worst_gap = worst_gap.max((search_value - exact).abs());
        println!(
            "depth {depth:>2}: expectimax {search_value:10.4} vs solved {exact:10.4}"
        );
    }
    println!("largest gap: {worst_gap:.2e}");
}
