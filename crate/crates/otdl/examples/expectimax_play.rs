//! Expectimax over the learned value function: deeper lookahead, the
//! transposition table, rectified survival backups, and tile downgrading.
//!
//! Depth counts chance layers: depth 1 expands the root's afterstates and
//! every spawn reply, then evaluates afterstates with the network. The
//! transposition table caches (board, node kind, remaining depth) results
//! exactly — it never changes the chosen move, only the node count.
//!
//! ```text
//! cargo run --release --example expectimax_play
//! ```

use otdl::engine::{Board, Engine};
use otdl::learning::{train, LearnerConfig};
use otdl::network::{preset, NTupleNetwork, TileThreshold};
use otdl::rng::SplitMix64;
use otdl::search::{downgrade, SearchConfig, Searcher};
use otdl::stats::{evaluate, ExpectimaxPolicy, GreedyPolicy};

fn main() {
    let engine = Engine::shared_4x4();
    let net = NTupleNetwork::new(engine, preset("yeh-4x6").unwrap(), true).unwrap();

    // A quick network so the search has something worth reading.
    let config = LearnerConfig { total_episodes: 1500, seed: 9, ..LearnerConfig::default() };
    println!("pre-training {} episodes…", config.total_episodes);
    train(engine, &net, &config, None, None).unwrap();

    // Node economics: nodes visited per decision, with and without the
    // transposition table.
    let mut rng = SplitMix64::new(5);
    let position = {
        let mut b = engine.initial_state(&mut rng);
        for _ in 0..40 {
            let Some((_, out)) = otdl::learning::greedy_action(engine, b, &net) else { break };
            match engine.spawn_random(out.after, &mut rng) {
                Ok(s) => b = s.board,
                Err(_) => break,
            }
        }
        b
    };
    println!("\nsearch position:\n{}", engine.render(position));
    for depth in 1..=3 {
        let mut with_tt = Searcher::new(engine, &net, SearchConfig::with_depth(depth));
        let (action, value) = with_tt.expectimax(position);
        let mut no_tt = Searcher::new(
            engine,
            &net,
            SearchConfig { use_tt: false, ..SearchConfig::with_depth(depth) },
        );
        no_tt.expectimax(position);
        println!(
            "depth {depth}: best {:?} value {:>9.0} | nodes {:>6} with TT ({} hits) vs {:>6} without",
            action.unwrap(),
            value,
            with_tt.stats().nodes,
            with_tt.stats().tt_hits,
            no_tt.stats().nodes,
        );
    }

    // Tile downgrading: halve the large, rare tiles so the search runs on a
    // board texture the network saw often during training.
    let endgame = Board::from_exponents(&[13, 12, 11, 9, 8, 7, 5, 3, 2, 1, 0, 0, 0, 0, 0, 0]);
    let downgraded = downgrade(endgame).unwrap();
    println!("\nendgame board:\n{}", engine.render(endgame));
    println!("downgraded (largest missing exponent and up halved):\n{}", engine.render(downgraded));
    let threshold = TileThreshold::from_tiles(&[8192, 4096]).unwrap();
    let mut downgrading = Searcher::new(
        engine,
        &net,
        SearchConfig { downgrade_threshold: Some(threshold), ..SearchConfig::with_depth(2) },
    );
    let (action, value) = downgrading.downgraded_search(endgame);
    println!("downgraded search picks {:?} (value {:.0})", action.unwrap(), value);

    // Rectified survival backups: with a hopeless value function, plain
    // expectimax is indifferent to dying (a terminal's 0 beats any negative
    // leaf), while the rectified variant clamps leaves at 0 and adds +1 per
    // surviving ply, so it picks the branch that stays alive longest.
    let doomed = Board::from_raw(0x2121323527130134);
    let hopeless = |_: Board| -1.0e9_f64;
    let cfg = SearchConfig { depth: 3, use_tt: false, ..SearchConfig::default() };
    let mut plain = Searcher::new(engine, &hopeless, cfg.clone());
    let mut rectified = Searcher::new(engine, &hopeless, SearchConfig { rectified: true, ..cfg });
    println!("\nnear-death board:\n{}", engine.render(doomed));
    let (plain_action, plain_value) = plain.expectimax(doomed);
    let (rect_action, rect_value) = rectified.expectimax(doomed);
    println!("plain search: {:?} (value {plain_value:.0} — death looks free)", plain_action.unwrap());
    println!("rectified:    {:?} (value {rect_value:.2} — survival plies count)", rect_action.unwrap());

    // Score comparison, same seeds: greedy vs depth-2 expectimax.
    let episodes = 30;
    let greedy = evaluate(engine, || GreedyPolicy::new(engine, &net), episodes, 1, 77);
    let deeper = evaluate(
        engine,
        || ExpectimaxPolicy::new(engine, &net, SearchConfig::with_depth(2)),
        episodes,
        1,
        77,
    );
    println!(
        "\n{episodes} games each: greedy avg {:.0} vs depth-2 avg {:.0}",
        greedy.avg_score, deeper.avg_score
    );
}
