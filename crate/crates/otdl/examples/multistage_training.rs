//! Multistage value functions: separate weight tables for successive
//! phases of the game, routed by board content.
//!
//! A position belongs to the last stage whose tile threshold its board
//! contains (stage 0 has an empty threshold and catches everything early).
//! Each stage trains on episodes that start where its phase begins — start
//! states are harvested from greedy self-play with the stages trained so
//! far. Here the stage-1 threshold is set low (one 256-tile) so the whole
//! pipeline runs in seconds; real runs ladder at 16384, 16384+8192, ….
//!
//! ```text
//! cargo run --release --example multistage_training
//! ```

use otdl::engine::Engine;
use otdl::learning::{harvest_stage_starts, multistage_train, LearnerConfig};
use otdl::network::{preset, MultistageNetwork, NTupleNetwork, TileThreshold};
use otdl::rng::SplitMix64;
use otdl::stats::{evaluate, GreedyPolicy};

fn main() {
    let engine = Engine::shared_4x4();
    let tuples = preset("yeh-4x6").unwrap();
    let stages = vec![
        NTupleNetwork::new(engine, tuples.clone(), true).unwrap(),
        NTupleNetwork::new(engine, tuples, true).unwrap(),
    ];
    let thresholds = vec![
        TileThreshold::EMPTY,
        TileThreshold::from_tiles(&[256]).unwrap(),
    ];
    let network = MultistageNetwork::new(stages, thresholds.clone()).unwrap();

    // Stage 0: ordinary training from the opening.
    let config = LearnerConfig { total_episodes: 1200, seed: 31, ..LearnerConfig::default() };
    println!("stage 0: {} episodes from the opening…", config.total_episodes);
    let mut rng = SplitMix64::new(31);
    let openings = vec![engine.initial_state(&mut rng)];
    multistage_train(engine, &network, 0, &openings, &config, None).unwrap();

    // Stage 1: starts harvested where its phase begins.
    let pool = harvest_stage_starts(engine, &network, &thresholds[1], 150, &mut rng);
    println!("stage 1: {} start states harvested at the 256-tile threshold", pool.len());
    multistage_train(engine, &network, 1, &pool, &config, None).unwrap();

    // Routing: early boards read stage 0, boards containing a 256-tile read
    // stage 1.
    let early = engine.initial_state(&mut rng);
    let late = pool[0];
    println!(
        "\nrouting: opening → stage {}, harvested start → stage {}",
        network.stage_select(early),
        network.stage_select(late)
    );
    println!(
        "V(opening) = {:.0} from stage 0; V(phase-2 board) = {:.0} from stage 1",
        network.value(early),
        network.value(late)
    );

    let report = evaluate(engine, || GreedyPolicy::new(engine, &network), 100, 1, 17);
    println!("\ngreedy with the staged network: avg {:.0}, max {}", report.avg_score, report.max_score);
}
