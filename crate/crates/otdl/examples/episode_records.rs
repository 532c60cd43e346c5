//! The compact episode-record format: two characters per move.
//!
//! Placements are a hex position character plus a hex exponent character
//! ("61" drops a 2-tile on cell 6); player moves are '#' plus a direction
//! letter. "(n)" annotates elapsed milliseconds, "[n]" annotates reward
//! points; both attach to the move before them. The parser is
//! character-wise, so juxtaposed moves like the opening "11D1" work too.
//!
//! ```text
//! cargo run --example episode_records
//! ```

use otdl::engine::Engine;
use otdl::network::ZeroEvaluator;
use otdl::record::{record_greedy_episode, replay, EpisodeRecord, Move};
use otdl::rng::SplitMix64;

fn main() {
    let engine = Engine::shared_4x4();

    // The canonical sample: two opening spawns, a slide left, a spawn, a
    // rewarded slide down, a spawn.
    let text = "11D1 (1) #L (2) 61 (3) #D [4] (3) 11";
    println!("record text: {text}\n");
    let record = EpisodeRecord::parse(text).unwrap();
    for m in &record.moves {
        let description = match m.mv {
            Move::Place { cell, exponent } => {
                format!("place {:>2}-tile at cell {cell}", 1u32 << exponent)
            }
            Move::Slide { action } => format!("slide {:?}", action),
        };
        let reward = m.reward.map(|r| format!(" [+{r}]")).unwrap_or_default();
        let millis = m.millis.map(|t| format!(" ({t} ms)")).unwrap_or_default();
        println!("  {description}{reward}{millis}");
    }

    // Replaying validates every step against the engine: placements must
    // land on empty cells, slides must move, recorded rewards must match.
    let outcome = replay(engine, &record).unwrap();
    println!("\nreplayed: score {} — final board:\n{}", outcome.score, engine.render(outcome.final_board));

    // Round trip: writing and reparsing reproduces the record exactly.
    let written = record.write();
    assert_eq!(EpisodeRecord::parse(&written).unwrap(), record);
    println!("round-trips as: {written}\n");

    // Records straight out of self-play.
    let mut rng = SplitMix64::new(14);
    let (game, score) = record_greedy_episode(engine, &ZeroEvaluator, &mut rng);
    let replayed = replay(engine, &game).unwrap();
    assert_eq!(replayed.score, score);
    let text = game.write();
    println!(
        "greedy game: {} moves, score {score}, {} characters:",
        game.moves.len(),
        text.len()
    );
    println!("{}…", &text[..text.len().min(72)]);
}
