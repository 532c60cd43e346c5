//! Trains a small n-tuple value network by TD(0) self-play and prints the
//! learning curve.
//!
//! The network is the classic 4-pattern × 6-cell set with symmetric
//! sampling (one table shared by all eight board isomorphisms). Updates
//! land on afterstates: after each move the previous afterstate's value is
//! pulled toward `r + V(s'_next)`.
//!
//! ```text
//! cargo run --release --example train_basic
//! ```

use otdl::engine::Engine;
use otdl::learning::{play_greedy_episode, train, LearnerConfig};
use otdl::network::{preset, NTupleNetwork};
use otdl::rng::SplitMix64;

fn main() {
    let engine = Engine::shared_4x4();
    let net = NTupleNetwork::new(engine, preset("yeh-4x6").unwrap(), true).unwrap();

    let config = LearnerConfig {
        total_episodes: 2000,
        eval_every: Some(500),
        eval_episodes: 50,
        seed: 42,
        ..LearnerConfig::default()
    };

    println!("training TD(0), α = {}, {} episodes…", config.alpha, config.total_episodes);
    let report = train(engine, &net, &config, None, None).unwrap();

    println!("\n episodes | avg score | max score | 2048 rate");
    for point in &report.curve {
        println!(
            " {:>8} | {:>9.0} | {:>9} | {:>8.1}%",
            point.episodes,
            point.avg_score,
            point.max_score,
            100.0 * point.rate_2048
        );
    }
    println!(
        "\n{} moves in {:.1}s ({:.0} moves/s)",
        report.moves,
        report.seconds,
        report.moves as f64 / report.seconds
    );
    for (exponent, episode) in report.first_reach.iter().enumerate() {
        if let Some(e) = episode {
            if exponent >= 9 {
                println!("first {:>5}-tile in episode {e}", 1u32 << exponent);
            }
        }
    }

    // One greedy game with the trained network, rendered.
    let mut rng = SplitMix64::new(7);
    let outcome = play_greedy_episode(engine, &net, &mut rng);
    println!(
        "\ngreedy game: score {}, best tile {}, {} moves",
        outcome.score,
        1u32 << outcome.max_exponent,
        outcome.moves
    );
}
