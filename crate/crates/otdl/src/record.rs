//! Compact episode records: two characters per move.
//!
//! A tile placement is a hex position character followed by a hex exponent
//! character ("61" places a 2-tile, exponent 1, at cell 6; "B1" at cell 11 —
//! position characters are read as hex). A player move is '#' followed by
//! one of U/R/D/L. Each move may carry an elapsed-time annotation "(ms)"
//! and a reward annotation "[points]". Moves are conventionally separated
//! by whitespace but the parser works character-wise, so juxtaposed moves
//! like "11D1" (the two opening spawns) also parse. Records round-trip
//! through [`EpisodeRecord::write`]/[`EpisodeRecord::parse`] and replay
//! through the engine, reproducing every board and reward.

use thiserror::Error;

use crate::engine::{Action, Board, Engine};
use crate::network::Evaluator;
use crate::rng::SplitMix64;

#[derive(Error, Debug)]
pub enum RecordError {
    #[error("parse error at character {position}: {message}")]
    Parse { position: usize, message: String },
    #[error("replay error at move {index}: {message}")]
    Replay { index: usize, message: String },
}

fn parse_err(position: usize, message: impl Into<String>) -> RecordError {
    RecordError::Parse { position, message: message.into() }
}

/// One move: either the environment placing a tile or the player sliding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Move {
    Place { cell: u8, exponent: u8 },
    Slide { action: Action },
}

/// A move with its optional annotations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RecordedMove {
    pub mv: Move,
    /// Elapsed milliseconds, "(n)".
    pub millis: Option<u64>,
    /// Reward points, "[n]".
    pub reward: Option<u64>,
}

impl RecordedMove {
    pub fn place(cell: u8, exponent: u8) -> RecordedMove {
        RecordedMove { mv: Move::Place { cell, exponent }, millis: None, reward: None }
    }

    pub fn slide(action: Action) -> RecordedMove {
        RecordedMove { mv: Move::Slide { action }, millis: None, reward: None }
    }
}

/// An ordered list of recorded moves.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct EpisodeRecord {
    pub moves: Vec<RecordedMove>,
}

impl EpisodeRecord {
    pub fn new() -> EpisodeRecord {
        EpisodeRecord::default()
    }

    pub fn push_place(&mut self, cell: u8, exponent: u8) {
        self.moves.push(RecordedMove::place(cell, exponent));
    }

    /// Appends a slide carrying its reward annotation.
    pub fn push_slide(&mut self, action: Action, reward: u64) {
        let mut mv = RecordedMove::slide(action);
        mv.reward = Some(reward);
        self.moves.push(mv);
    }

    /// Renders the record as whitespace-separated tokens, reward
    /// annotations before time annotations ("#D [4] (3)").
    pub fn write(&self) -> String {
        let mut out = String::new();
        for m in &self.moves {
            if !out.is_empty() {
                out.push(' ');
            }
            match m.mv {
                Move::Place { cell, exponent } => {
                    out.push(char::from_digit(cell as u32, 16).expect("cell < 16").to_ascii_uppercase());
                    out.push(
                        char::from_digit(exponent as u32, 16)
                            .expect("exponent < 16")
                            .to_ascii_uppercase(),
                    );
                }
                Move::Slide { action } => {
                    out.push('#');
                    out.push(action.letter());
                }
            }
            if let Some(r) = m.reward {
                out.push_str(&format!(" [{r}]"));
            }
            if let Some(ms) = m.millis {
                out.push_str(&format!(" ({ms})"));
            }
        }
        out
    }

    /// Parses record text. Annotations attach to the most recent move;
    /// errors report the character position.
    pub fn parse(text: &str) -> Result<EpisodeRecord, RecordError> {
        let chars: Vec<char> = text.chars().collect();
        let mut moves: Vec<RecordedMove> = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            if c.is_whitespace() {
                i += 1;
            } else if c == '#' {
                let action = chars
                    .get(i + 1)
                    .copied()
                    .and_then(Action::from_letter)
                    .ok_or_else(|| parse_err(i + 1, "expected U, R, D, or L after '#'"))?;
                moves.push(RecordedMove::slide(action));
                i += 2;
            } else if c == '(' || c == '[' {
                let close = if c == '(' { ')' } else { ']' };
                let start = i + 1;
                let mut end = start;
                while end < chars.len() && chars[end] != close {
                    end += 1;
                }
                if end == chars.len() {
                    return Err(parse_err(i, "unterminated annotation"));
                }
                let digits: String = chars[start..end].iter().collect();
                let value: u64 = digits
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(start, "expected a number in the annotation"))?;
                let last = moves
                    .last_mut()
                    .ok_or_else(|| parse_err(i, "annotation before any move"))?;
                let slot = if c == '(' { &mut last.millis } else { &mut last.reward };
                if slot.is_some() {
                    return Err(parse_err(i, "duplicate annotation"));
                }
                *slot = Some(value);
                i = end + 1;
            } else if let Some(cell) = c.to_digit(16) {
                let exponent = chars
                    .get(i + 1)
                    .copied()
                    .and_then(|e| e.to_digit(16))
                    .ok_or_else(|| parse_err(i + 1, "expected a hex exponent after the position"))?;
                if exponent == 0 {
                    return Err(parse_err(i + 1, "placement exponent must be nonzero"));
                }
                moves.push(RecordedMove::place(cell as u8, exponent as u8));
                i += 2;
            } else {
                return Err(parse_err(i, format!("unexpected character '{c}'")));
            }
        }
        Ok(EpisodeRecord { moves })
    }
}

/// Boards and totals produced by replaying a record.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayOutcome {
    /// Board after each move, in order.
    pub boards: Vec<Board>,
    pub final_board: Board,
    /// Sum of slide rewards.
    pub score: u64,
}

/// Replays a record through the engine from an empty board, validating
/// every placement (cell in range and empty), every slide (must change the
/// board), and every reward annotation against the actual reward.
pub fn replay(engine: &Engine, record: &EpisodeRecord) -> Result<ReplayOutcome, RecordError> {
    let replay_err =
        |index: usize, message: String| RecordError::Replay { index, message };
    let mut board = Board::EMPTY;
    let mut boards = Vec::with_capacity(record.moves.len());
    let mut score = 0u64;
    for (index, m) in record.moves.iter().enumerate() {
        match m.mv {
            Move::Place { cell, exponent } => {
                if cell >= engine.cell_count() {
                    return Err(replay_err(index, format!("cell {cell} out of range")));
                }
                if board.exponent(cell) != 0 {
                    return Err(replay_err(index, format!("cell {cell} is occupied")));
                }
                board = board.with_exponent(cell, exponent);
            }
            Move::Slide { action } => {
                let out = engine.slide(board, action);
                if !out.moved {
                    return Err(replay_err(
                        index,
                        format!("slide {} does not change the board", action.letter()),
                    ));
                }
                if let Some(expected) = m.reward {
                    if expected != out.reward {
                        return Err(replay_err(
                            index,
                            format!("recorded reward {expected} but slide pays {}", out.reward),
                        ));
                    }
                }
                board = out.after;
                score += out.reward;
            }
        }
        boards.push(board);
    }
    Ok(ReplayOutcome { boards, final_board: board, score })
}

/// Plays one greedy episode and records every spawn and slide (slides carry
/// their rewards), returning the record and the final score.
pub fn record_greedy_episode<V: Evaluator + ?Sized>(
    engine: &Engine,
    value: &V,
    rng: &mut SplitMix64,
) -> (EpisodeRecord, u64) {
    let mut record = EpisodeRecord::new();
    let mut board = Board::EMPTY;
    for _ in 0..2 {
        let spawn = engine.spawn_random(board, rng).expect("empty board has room");
        record.push_place(spawn.cell, spawn.exponent);
        board = spawn.board;
    }
    let mut score = 0u64;
    while let Some((action, out)) = crate::learning::greedy_action(engine, board, value) {
        record.push_slide(action, out.reward);
        score += out.reward;
        match engine.spawn_random(out.after, rng) {
            Ok(spawn) => {
                record.push_place(spawn.cell, spawn.exponent);
                board = spawn.board;
            }
            Err(_) => break,
        }
    }
    (record, score)
}
