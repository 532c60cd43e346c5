//! Optimistic initialization: every position starts out worth V_init, so
//! the greedy policy explores by disappointment — whatever it tries gets
//! revised downward, making untried actions look better.
//!
//! Each weight starts at `V_init / F` where `F` is the number of table
//! lookups per evaluation, so the network value of *every* board is exactly
//! V_init before training. The run then switches to temporal-coherence
//! modulation for the final tail: each weight's step size is scaled by
//! |ΣE| / Σ|E|, which decays automatically where errors oscillate.
//!
//! ```text
//! cargo run --release --example optimistic_training
//! ```

use otdl::engine::{Board, Engine};
use otdl::learning::{train, LearnerConfig, DEFAULT_V_INIT};
use otdl::network::{preset, NTupleNetwork};
use otdl::rng::SplitMix64;

fn main() {
    let engine = Engine::shared_4x4();
    let net = NTupleNetwork::new(engine, preset("yeh-4x6").unwrap(), true).unwrap();

    // Before training: exact optimism on arbitrary boards.
    net.init_optimistic(DEFAULT_V_INIT);
    let mut rng = SplitMix64::new(1);
    let mut b = engine.initial_state(&mut rng);
    for _ in 0..3 {
        println!("fresh V(b) = {:>9.1}  (V_init = {DEFAULT_V_INIT})", net.value(b));
        b = engine.initial_state(&mut rng);
    }

    // An optimistic TD run with a temporal-coherence tail (the last 10% of
    // episodes) and the standard step-size ladder.
    let config = LearnerConfig {
        eval_every: Some(400),
        eval_episodes: 30,
        seed: 3,
        ..LearnerConfig::optimistic_td_tc(1600)
    };
    println!(
        "\ntraining optimistic TD → TC, switch at episode {}…",
        config.tc_start_episode()
    );
    let report = train(engine, &net, &config, None, None).unwrap();
    for point in &report.curve {
        println!(" {:>6} episodes: avg {:>7.0}, max {:>6}", point.episodes, point.avg_score, point.max_score);
    }

    // Optimism is consumed: visited regions now sit below their initial
    // value, and the floor-state value has dropped the most.
    let sample: Vec<Board> = (0..1000).map(|_| engine.initial_state(&mut rng)).collect();
    let below = sample.iter().filter(|&&s| net.value(s) < DEFAULT_V_INIT).count();
    println!(
        "\nafter training: {}/{} sampled openings strictly below V_init",
        below,
        sample.len()
    );
    println!("V(opening) ≈ {:.0}", net.value(sample[0]));
}
