//! Monte Carlo tree search on top of the value network, plus the
//! strength-adjustment policy that turns visit counts into a calibrated
//! move distribution.
//!
//! Each decision builds a fresh tree: UCB selection at states, probability
//! sampling at afterstates, network evaluation at leaves (no rollouts).
//! A single simulation reduces to the greedy policy; more simulations
//! sharpen the visit counts. `strength_distribution` then samples moves
//! proportionally to `N^z` — z = 0 plays uniformly among surviving actions,
//! large z plays the argmax.
//!
//! ```text
//! cargo run --release --example mcts_play
//! ```

use otdl::engine::Engine;
use otdl::learning::{greedy_action, train, LearnerConfig};
use otdl::mcts::{mcts_search, strength_distribution, write_root_csv, MctsConfig, VNorm};
use otdl::network::{preset, NTupleNetwork};
use otdl::rng::SplitMix64;
use otdl::stats::{evaluate, StrengthPolicy};

fn main() {
    let engine = Engine::shared_4x4();
    let net = NTupleNetwork::new(engine, preset("yeh-4x6").unwrap(), true).unwrap();
    let config = LearnerConfig { total_episodes: 1500, seed: 4, ..LearnerConfig::default() };
    println!("pre-training {} episodes…", config.total_episodes);
    train(engine, &net, &config, None, None).unwrap();

    let mut rng = SplitMix64::new(11);
    let mut position = engine.initial_state(&mut rng);
    for _ in 0..30 {
        let Some((_, out)) = greedy_action(engine, position, &net) else { break };
        match engine.spawn_random(out.after, &mut rng) {
            Ok(s) => position = s.board,
            Err(_) => break,
        }
    }
    println!("\nsearch position:\n{}", engine.render(position));

    // One simulation must agree with greedy; more simulations refine it.
    let greedy = greedy_action(engine, position, &net).unwrap().0;
    for sims in [1, 16, 256] {
        let mcts = MctsConfig {
            simulations: sims,
            v_norm: VNorm::Dynamic,
            ..MctsConfig::default()
        };
        let result = mcts_search(engine, position, &net, &mcts, &mut rng).unwrap();
        println!(
            "N_sim = {sims:>3}: best {:?} (greedy {:?}), Q = {:.4}, V_norm = {:.0}",
            result.best, greedy, result.best_q, result.v_norm
        );
        if sims == 256 {
            let mut csv = Vec::new();
            write_root_csv(&result, 1.0, 0.1, &mut csv).unwrap();
            println!("\nroot statistics (z = 1, R_th = 0.1):\n{}", String::from_utf8(csv).unwrap());

            // The same counts under different strength indices.
            for z in [0.0, 1.0, 5.0, 50.0] {
                let dist = strength_distribution(&result.actions, z, 0.1);
                let rendered: Vec<String> = dist
                    .iter()
                    .map(|e| format!("{}:{:.3}", e.action.letter(), e.probability))
                    .collect();
                println!("z = {z:>4}: {}", rendered.join("  "));
            }
        }
    }

    // Weakened play on purpose: low z samples widely among decent moves.
    let mcts = MctsConfig { simulations: 20, ..MctsConfig::default() };
    for z in [0.0, 2.0, 50.0] {
        let report = evaluate(
            engine,
            || StrengthPolicy::new(engine, &net, mcts, z, 0.1),
            20,
            1,
            33,
        );
        println!("strength z = {z:>4}: avg score {:.0}", report.avg_score);
    }
}
