//! Named tuple-pattern presets for the 4×4 board.
//!
//! Cell indices are row-major from the top-left. The coordinate lists are
//! pinned to the published pattern sets they are named after (the 4×6 set
//! from Yeh et al.'s multistage TD study, its 5×6 extension, and the k×6
//! family from Matsuzaki's systematic pattern-selection study); treat them
//! as frozen — retraining is required if they ever change.

use super::{NetworkError, TupleDef};

/// Version of the pinned coordinate lists below.
pub const PRESET_FORMAT_VERSION: u32 = 1;

/// Two straight 2×3-spanning patterns and two axe-shaped patterns.
const YEH_4X6: [[u8; 6]; 4] = [
    [0, 1, 2, 3, 4, 5],
    [4, 5, 6, 7, 8, 9],
    [0, 1, 2, 4, 5, 6],
    [4, 5, 6, 8, 9, 10],
];

/// The straight pattern added by the 5×6 variant.
const FIVE_X6_EXTRA: [u8; 6] = [8, 9, 10, 11, 12, 13];

/// Greedy-selected 6-tuples; the k×6 preset takes the first k.
const MATSUZAKI_8X6: [[u8; 6]; 8] = [
    [0, 1, 2, 4, 5, 6],
    [1, 2, 5, 6, 9, 13],
    [0, 1, 2, 3, 4, 5],
    [0, 1, 5, 6, 7, 10],
    [0, 1, 2, 5, 9, 10],
    [0, 1, 5, 9, 13, 14],
    [0, 1, 5, 8, 9, 13],
    [0, 1, 2, 4, 6, 10],
];

const PRESET_NAMES: [&str; 10] = [
    "yeh-4x6",
    "yeh-5x6",
    "matsuzaki-1x6",
    "matsuzaki-2x6",
    "matsuzaki-3x6",
    "matsuzaki-4x6",
    "matsuzaki-5x6",
    "matsuzaki-6x6",
    "matsuzaki-7x6",
    "matsuzaki-8x6",
];

/// All preset names accepted by [`preset`].
pub fn preset_names() -> &'static [&'static str] {
    &PRESET_NAMES
}

fn defs(patterns: &[[u8; 6]]) -> Vec<TupleDef> {
    patterns
        .iter()
        .map(|cells| TupleDef::new(cells.to_vec()).expect("preset patterns are valid"))
        .collect()
}

/// Looks up a preset by name (`yeh-4x6`, `yeh-5x6`, `matsuzaki-1x6` …
/// `matsuzaki-8x6`).
pub fn preset(name: &str) -> Result<Vec<TupleDef>, NetworkError> {
    match name {
        "yeh-4x6" => Ok(defs(&YEH_4X6)),
        "yeh-5x6" => {
            let mut patterns = YEH_4X6.to_vec();
            patterns.push(FIVE_X6_EXTRA);
            Ok(defs(&patterns))
        }
        _ => {
            if let Some(k) = name
                .strip_prefix("matsuzaki-")
                .and_then(|rest| rest.strip_suffix("x6"))
                .and_then(|k| k.parse::<usize>().ok())
            {
                if (1..=8).contains(&k) {
                    return Ok(defs(&MATSUZAKI_8X6[..k]));
                }
            }
            Err(NetworkError::ShapeMismatch(format!("unknown preset '{name}'")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::Engine;
    use crate::network::NTupleNetwork;

    #[test]
    fn every_preset_instantiates_with_coverage() {
        let engine = Engine::shared_4x4();
        for name in preset_names() {
            let tuples = preset(name).unwrap();
            for t in &tuples {
                assert_eq!(t.len(), 6, "{name}: tuples are 6 cells");
                assert!(t.cells().iter().all(|&c| c < 16), "{name}: cells on the board");
            }
            // Instantiate with symmetric sampling and check that every board
            // cell is read by at least one lookup.
            let net = NTupleNetwork::new(engine, tuples.clone(), true).unwrap();
            assert_eq!(net.lookup_count(), tuples.len() * 8);
            let mut covered = [false; 16];
            for tuple in &tuples {
                for transform in engine.transforms() {
                    for &c in tuple.cells() {
                        covered[transform.source(c) as usize] = true;
                    }
                }
            }
            assert!(covered.iter().all(|&c| c), "{name}: all cells covered across isomorphisms");
        }
    }

    #[test]
    fn kx6_presets_nest() {
        let five = preset("matsuzaki-5x6").unwrap();
        let eight = preset("matsuzaki-8x6").unwrap();
        assert_eq!(&eight[..5], &five[..]);
    }

    #[test]
    fn unknown_preset_is_an_error() {
        assert!(preset("nope").is_err());
        assert!(preset("matsuzaki-9x6").is_err());
        assert!(preset("matsuzaki-0x6").is_err());
    }
}
