//! Reinforcement-learning engine for the game 2048.
//!
//! The crate is organised around a bitboard game core ([`engine`]), n-tuple
//! value networks with symmetric sampling ([`network`]), temporal-difference
//! training with optimistic initialization and temporal coherence
//! ([`learning`]), expectimax search with transposition tables and tile
//! downgrading ([`search`]), Monte-Carlo tree search with playing-strength
//! adjustment ([`mcts`]), episode records ([`record`]), and an experiment
//! harness behind the `otdl` command-line tool ([`harness`]).
//!
//! Start with the runnable programs under `examples/` — each demonstrates an
//! end-to-end capability on a desk-scale budget.

pub mod engine;
pub mod harness;
pub mod learning;
pub mod mcts;
pub mod network;
pub mod record;
pub mod search;
pub mod stats;
pub mod rng;
