//! Stochastic weight averaging over training snapshots.
//!
//! Temporal-coherence runs reset their error accumulators on a schedule;
//! the network is snapshotted just before each reset. Averaging a suffix of
//! those snapshots (from the i-th to the last) gives an ensemble whose
//! evaluation is the mean of the members' evaluations — weight averaging
//! and value averaging coincide because the value is linear in the weights.
//!
//! ```text
//! cargo run --release --example swa_ensemble
//! ```

use otdl::engine::Engine;
use otdl::learning::{train, LearnerConfig};
use otdl::network::{preset, swa_average, NTupleNetwork};
use otdl::rng::SplitMix64;
use otdl::stats::{evaluate, GreedyPolicy};

fn main() {
    let engine = Engine::shared_4x4();
    let net = NTupleNetwork::new(engine, preset("yeh-4x6").unwrap(), true).unwrap();

    // Temporal coherence with resets every 400 episodes: 3 snapshots plus
    // the final network.
    let config = LearnerConfig {
        coherence_reset_every: Some(400),
        seed: 6,
        ..LearnerConfig::optimistic_tc(1600)
    };
    let mut snapshots: Vec<NTupleNetwork> = Vec::new();
    let mut sink = |episode: u64, snap: &NTupleNetwork| {
        println!("snapshot at episode {episode}");
        snapshots.push(snap.snapshot());
    };
    train(engine, &net, &config, None, Some(&mut sink)).unwrap();
    snapshots.push(net.snapshot());
    println!("{} snapshots collected\n", snapshots.len());

    // Linearity check: the averaged network's value is the mean of member
    // values on any board.
    let mut rng = SplitMix64::new(8);
    let board = engine.initial_state(&mut rng);
    let refs: Vec<&NTupleNetwork> = snapshots.iter().collect();
    let averaged = swa_average(&refs).unwrap();
    let mean: f64 =
        snapshots.iter().map(|s| s.value(board)).sum::<f64>() / snapshots.len() as f64;
    println!(
        "V_avg(b) = {:.3}, mean of member values = {:.3} (gap {:.1e})",
        averaged.value(board),
        mean,
        (averaged.value(board) - mean).abs()
    );

    // The suffix-averaging table: each snapshot alone vs the average of it
    // and everything after it.
    let episodes = 50;
    println!("\n index | snapshot avg | suffix-ensemble avg");
    for i in 0..snapshots.len() {
        let suffix: Vec<&NTupleNetwork> = snapshots[i..].iter().collect();
        let ensemble = swa_average(&suffix).unwrap();
        let original = evaluate(engine, || GreedyPolicy::new(engine, &snapshots[i]), episodes, 1, 21);
        let combined = evaluate(engine, || GreedyPolicy::new(engine, &ensemble), episodes, 1, 21);
        println!(
            " {i:>5} | {:>12.0} | {:>19.0}",
            original.avg_score, combined.avg_score
        );
    }
}
