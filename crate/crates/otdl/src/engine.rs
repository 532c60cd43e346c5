//! Bitboard game core for 2048-style sliding-tile games.
//!
//! A position is a packed [`Board`]: each cell stores a 4-bit exponent, so a
//! tile of value `2^e` is stored as `e` and an empty cell as 0. Cells are
//! indexed row-major from the top-left, cell `i` occupying bits `4i..4i+4`.
//! Exponents saturate at 15: two 32768-tiles can coexist but never merge.
//!
//! [`Engine`] interprets boards for a concrete geometry (4×4 by default,
//! small boards such as 2×3 for exhaustive analysis). Slides are resolved
//! through per-line lookup tables built once at construction and immutable
//! afterwards, so all engine operations are pure and freely shareable across
//! threads.

use std::fmt::Write as _;
use std::sync::OnceLock;

use thiserror::Error;

use crate::rng::SplitMix64;

/// Largest storable exponent; tiles at this value no longer merge.
pub const MAX_EXPONENT: u8 = 15;

/// Probability that a spawned tile is a 2 (exponent 1) rather than a 4.
pub const SPAWN_TWO_PROBABILITY: f64 = 0.9;

#[derive(Error, Debug, PartialEq, Eq)]
pub enum EngineError {
    #[error("no empty cell to spawn on")]
    BoardFull,
    #[error("unsupported geometry {rows}x{cols}; rows and cols must be in 2..=4")]
    UnsupportedGeometry { rows: u8, cols: u8 },
}

/// Packed position: 16 exponent nibbles in a `u64`, cell `i` at bits `4i..4i+4`.
///
/// The board itself is geometry-agnostic; an [`Engine`] decides how many of
/// the cells are in play. Cells outside the active geometry must stay zero.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct Board(u64);

impl Board {
    pub const EMPTY: Board = Board(0);

    #[inline]
    pub const fn from_raw(bits: u64) -> Self {
        Board(bits)
    }

    #[inline]
    pub const fn raw(self) -> u64 {
        self.0
    }

    /// Exponent at `cell` (0 = empty).
    #[inline]
    pub const fn exponent(self, cell: u8) -> u8 {
        ((self.0 >> (4 * cell as u64)) & 0xF) as u8
    }

    /// Copy of the board with `cell` set to `exponent`.
    #[inline]
    pub const fn with_exponent(self, cell: u8, exponent: u8) -> Self {
        let shift = 4 * cell as u64;
        Board((self.0 & !(0xF << shift)) | ((exponent as u64 & 0xF) << shift))
    }

    /// Builds a board from per-cell exponents, cell 0 first.
    pub fn from_exponents(exponents: &[u8]) -> Self {
        assert!(exponents.len() <= 16, "at most 16 cells");
        let mut bits = 0u64;
        for (i, &e) in exponents.iter().enumerate() {
            assert!(e <= MAX_EXPONENT, "exponent out of range");
            bits |= (e as u64) << (4 * i);
        }
        Board(bits)
    }

    /// Largest exponent present (0 for an empty board).
    pub fn max_exponent(self) -> u8 {
        let mut best = 0u8;
        let mut bits = self.0;
        while bits != 0 {
            let e = (bits & 0xF) as u8;
            if e > best {
                best = e;
            }
            bits >>= 4;
        }
        best
    }

    /// Number of cells holding each exponent, indexed by exponent.
    /// Index 0 counts empty cells (including cells outside the active
    /// geometry, which are stored as zero).
    /// Sum of tile values (2^e per nonempty cell). Each spawn raises it by
    /// 2 or 4 and slides preserve it, so it orders positions by progress.
    pub fn tile_sum(self) -> u64 {
        let mut sum = 0u64;
        let mut bits = self.0;
        while bits != 0 {
            let e = bits & 0xF;
            if e != 0 {
                sum += 1 << e;
            }
            bits >>= 4;
        }
        sum
    }

    pub fn exponent_counts(self) -> [u8; 16] {
        let mut counts = [0u8; 16];
        let mut bits = self.0;
        for _ in 0..16 {
            counts[(bits & 0xF) as usize] += 1;
            bits >>= 4;
        }
        counts
    }
}

impl std::fmt::Debug for Board {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Board({:#018x})", self.0)
    }
}

/// Player move. The declaration order `Up < Right < Down < Left` is the
/// canonical order used for deterministic tie-breaking everywhere.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, PartialOrd, Ord)]
pub enum Action {
    Up,
    Right,
    Down,
    Left,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Up, Action::Right, Action::Down, Action::Left];

    #[inline]
    pub const fn index(self) -> usize {
        self as usize
    }

    pub const fn letter(self) -> char {
        match self {
            Action::Up => 'U',
            Action::Right => 'R',
            Action::Down => 'D',
            Action::Left => 'L',
        }
    }

    pub fn from_letter(c: char) -> Option<Action> {
        match c {
            'U' => Some(Action::Up),
            'R' => Some(Action::Right),
            'D' => Some(Action::Down),
            'L' => Some(Action::Left),
            _ => None,
        }
    }
}

impl std::fmt::Display for Action {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.letter())
    }
}

/// Set of actions as a 4-bit mask, iterated in canonical order.
#[derive(Clone, Copy, PartialEq, Eq, Default, Debug)]
pub struct ActionSet(u8);

impl ActionSet {
    pub const EMPTY: ActionSet = ActionSet(0);

    #[inline]
    pub fn insert(&mut self, a: Action) {
        self.0 |= 1 << a.index();
    }

    #[inline]
    pub fn contains(self, a: Action) -> bool {
        self.0 & (1 << a.index()) != 0
    }

    #[inline]
    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn iter(self) -> impl Iterator<Item = Action> {
        Action::ALL.into_iter().filter(move |a| self.contains(*a))
    }
}

/// Result of a slide: the afterstate, the merge reward, and whether the
/// slide changed the board (an unchanged board means the move is illegal).
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct SlideOutcome {
    pub after: Board,
    pub reward: u64,
    pub moved: bool,
}

/// One possible tile spawn: the resulting state and its probability.
#[derive(Clone, Copy, PartialEq, Debug)]
pub struct Spawn {
    pub board: Board,
    pub cell: u8,
    pub exponent: u8,
    pub probability: f64,
}

/// All spawn successors of an afterstate. With `k` empty cells there are
/// `2k` entries: exponent 1 with probability `0.9/k` and exponent 2 with
/// `0.1/k` per cell. Probabilities sum to 1.
#[derive(Clone, PartialEq, Debug, Default)]
pub struct SpawnDistribution {
    pub spawns: Vec<Spawn>,
}

impl SpawnDistribution {
    /// Samples a spawn according to its probability.
    pub fn sample(&self, rng: &mut SplitMix64) -> &Spawn {
        debug_assert!(!self.spawns.is_empty());
        let mut u = rng.next_f64();
        for spawn in &self.spawns {
            u -= spawn.probability;
            if u < 0.0 {
                return spawn;
            }
        }
        self.spawns.last().expect("non-empty distribution")
    }
}

/// Board symmetry expressed as a cell permutation:
/// `apply(t, b).exponent(i) == b.exponent(t.perm[i])`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Transform {
    perm: [u8; 16],
    cells: u8,
}

impl Transform {
    /// Source cell feeding destination cell `i`.
    #[inline]
    pub fn source(&self, i: u8) -> u8 {
        self.perm[i as usize]
    }

    pub fn cell_count(&self) -> u8 {
        self.cells
    }
}

#[derive(Clone, Copy)]
struct LineEntry {
    result: u16,
    reward: u32,
}

/// Game engine for a fixed `rows × cols` geometry.
pub struct Engine {
    rows: u8,
    cols: u8,
    // Slide tables for packed lines, one per direction: toward low index
    // (Left/Up) and toward high index (Right/Down).
    h_low: Vec<LineEntry>,
    h_high: Vec<LineEntry>,
    v_low: Vec<LineEntry>,
    v_high: Vec<LineEntry>,
    transforms: Vec<Transform>,
}

/// Slides a line of exponents toward index 0, returning the merge reward.
/// Equal neighbours merge once per slide; exponent 15 never merges.
fn slide_line_low(line: &mut [u8]) -> u32 {
    let mut reward = 0u32;
    let mut write = 0usize;
    let mut pending: Option<u8> = None;
    for i in 0..line.len() {
        let v = line[i];
        if v == 0 {
            continue;
        }
        match pending {
            Some(p) if p == v && v < MAX_EXPONENT => {
                line[write] = v + 1;
                reward += 1u32 << (v + 1);
                write += 1;
                pending = None;
            }
            Some(p) => {
                line[write] = p;
                write += 1;
                pending = Some(v);
            }
            None => {
                pending = Some(v);
            }
        }
    }
    if let Some(p) = pending {
        line[write] = p;
        write += 1;
    }
    for slot in line.iter_mut().skip(write) {
        *slot = 0;
    }
    reward
}

fn pack_line(line: &[u8]) -> u16 {
    let mut packed = 0u16;
    for (i, &e) in line.iter().enumerate() {
        packed |= (e as u16) << (4 * i);
    }
    packed
}

fn unpack_line(packed: u16, len: usize, out: &mut [u8]) {
    for (i, slot) in out.iter_mut().enumerate().take(len) {
        *slot = ((packed >> (4 * i)) & 0xF) as u8;
    }
}

/// Builds the slide table for lines of `len` cells. `toward_low` selects the
/// slide direction within the packed line.
fn build_line_table(len: usize, toward_low: bool) -> Vec<LineEntry> {
    let size = 1usize << (4 * len);
    let mut table = Vec::with_capacity(size);
    let mut line = [0u8; 4];
    for packed in 0..size {
        unpack_line(packed as u16, len, &mut line);
        if !toward_low {
            line[..len].reverse();
        }
        let reward = slide_line_low(&mut line[..len]);
        if !toward_low {
            line[..len].reverse();
        }
        table.push(LineEntry {
            result: pack_line(&line[..len]),
            reward,
        });
    }
    table
}

fn rotation_perm(n: u8) -> [u8; 16] {
    // Destination (r, c) takes its value from source (n-1-c, r).
    let mut perm = [0u8; 16];
    for r in 0..n {
        for c in 0..n {
            perm[(r * n + c) as usize] = (n - 1 - c) * n + r;
        }
    }
    perm
}

fn mirror_h_perm(rows: u8, cols: u8) -> [u8; 16] {
    let mut perm = [0u8; 16];
    for r in 0..rows {
        for c in 0..cols {
            perm[(r * cols + c) as usize] = r * cols + (cols - 1 - c);
        }
    }
    perm
}

fn mirror_v_perm(rows: u8, cols: u8) -> [u8; 16] {
    let mut perm = [0u8; 16];
    for r in 0..rows {
        for c in 0..cols {
            perm[(r * cols + c) as usize] = (rows - 1 - r) * cols + c;
        }
    }
    perm
}

fn compose(first: &[u8; 16], second: &[u8; 16], cells: u8) -> [u8; 16] {
    // Applying `first` then `second`: dest i <- first.perm[second.perm[i]].
    let mut perm = [0u8; 16];
    for i in 0..cells as usize {
        perm[i] = first[second[i] as usize];
    }
    perm
}

impl Engine {
    /// Builds an engine for a `rows × cols` board. Rows and columns must
    /// each be in `2..=4`.
    pub fn new(rows: u8, cols: u8) -> Result<Engine, EngineError> {
        if !(2..=4).contains(&rows) || !(2..=4).contains(&cols) {
            return Err(EngineError::UnsupportedGeometry { rows, cols });
        }
        let cells = rows * cols;
        let transforms = if rows == cols {
            // Dihedral group of the square: four rotations and their mirrors.
            let rot = rotation_perm(rows);
            let mirror = mirror_h_perm(rows, cols);
            let mut id = [0u8; 16];
            for (i, slot) in id.iter_mut().enumerate() {
                *slot = i as u8;
            }
            let mut perms = vec![id];
            for _ in 0..3 {
                perms.push(compose(perms.last().unwrap(), &rot, cells));
            }
            for i in 0..4 {
                perms.push(compose(&perms[i], &mirror, cells));
            }
            perms
                .into_iter()
                .map(|perm| Transform { perm, cells })
                .collect()
        } else {
            // Non-square boards only admit the axis flips.
            let mut id = [0u8; 16];
            for (i, slot) in id.iter_mut().enumerate() {
                *slot = i as u8;
            }
            let h = mirror_h_perm(rows, cols);
            let v = mirror_v_perm(rows, cols);
            let hv = compose(&h, &v, cells);
            [id, h, v, hv]
                .into_iter()
                .map(|perm| Transform { perm, cells })
                .collect()
        };
        Ok(Engine {
            rows,
            cols,
            h_low: build_line_table(cols as usize, true),
            h_high: build_line_table(cols as usize, false),
            v_low: build_line_table(rows as usize, true),
            v_high: build_line_table(rows as usize, false),
            transforms,
        })
    }

    /// Shared 4×4 engine, built on first use.
    pub fn shared_4x4() -> &'static Engine {
        static SHARED: OnceLock<Engine> = OnceLock::new();
        SHARED.get_or_init(|| Engine::new(4, 4).expect("4x4 is supported"))
    }

    pub fn rows(&self) -> u8 {
        self.rows
    }

    pub fn cols(&self) -> u8 {
        self.cols
    }

    pub fn cell_count(&self) -> u8 {
        self.rows * self.cols
    }

    /// Symmetry group of the geometry: 8 transforms for square boards,
    /// 4 (identity and axis flips) otherwise. The identity comes first.
    pub fn transforms(&self) -> &[Transform] {
        &self.transforms
    }

    /// Applies a symmetry transform to a board.
    pub fn apply_transform(&self, t: &Transform, b: Board) -> Board {
        let mut out = 0u64;
        for i in 0..self.cell_count() {
            out |= (b.exponent(t.source(i)) as u64) << (4 * i);
        }
        Board(out)
    }

    /// All symmetric images of `b`, identity first. Square boards yield 8
    /// entries, non-square boards 4.
    pub fn isomorphisms(&self, b: Board) -> Vec<Board> {
        self.transforms
            .iter()
            .map(|t| self.apply_transform(t, b))
            .collect()
    }

    #[inline]
    fn row_mask(&self) -> u64 {
        (1u64 << (4 * self.cols as u64)) - 1
    }

    /// Slides the board in direction `action`. The outcome's `moved` flag is
    /// false exactly when the slide leaves the board unchanged, which marks
    /// the action illegal in that position.
    #[inline]
    pub fn slide(&self, b: Board, action: Action) -> SlideOutcome {
        match action {
            Action::Left => self.slide_rows(b, &self.h_low),
            Action::Right => self.slide_rows(b, &self.h_high),
            Action::Up => self.slide_cols(b, &self.v_low),
            Action::Down => self.slide_cols(b, &self.v_high),
        }
    }

    #[inline]
    fn slide_rows(&self, b: Board, table: &[LineEntry]) -> SlideOutcome {
        let mut out = 0u64;
        let mut reward = 0u64;
        let mask = self.row_mask();
        let row_bits = 4 * self.cols as u64;
        for r in 0..self.rows as u64 {
            let line = (b.0 >> (r * row_bits)) & mask;
            let entry = &table[line as usize];
            out |= (entry.result as u64) << (r * row_bits);
            reward += entry.reward as u64;
        }
        SlideOutcome {
            after: Board(out),
            reward,
            moved: out != b.0,
        }
    }

    #[inline]
    fn slide_cols(&self, b: Board, table: &[LineEntry]) -> SlideOutcome {
        let mut out = 0u64;
        let mut reward = 0u64;
        let cols = self.cols as u64;
        for c in 0..cols {
            let mut line = 0u64;
            for r in 0..self.rows as u64 {
                line |= ((b.0 >> (4 * (r * cols + c))) & 0xF) << (4 * r);
            }
            let entry = &table[line as usize];
            let result = entry.result as u64;
            for r in 0..self.rows as u64 {
                out |= ((result >> (4 * r)) & 0xF) << (4 * (r * cols + c));
            }
            reward += entry.reward as u64;
        }
        SlideOutcome {
            after: Board(out),
            reward,
            moved: out != b.0,
        }
    }

    /// Actions that would change the board.
    pub fn legal_actions(&self, b: Board) -> ActionSet {
        let mut set = ActionSet::EMPTY;
        for a in Action::ALL {
            if self.slide(b, a).moved {
                set.insert(a);
            }
        }
        set
    }

    /// A state is terminal when no slide changes the board.
    pub fn is_terminal(&self, b: Board) -> bool {
        self.legal_actions(b).is_empty()
    }

    /// Number of empty cells within the active geometry.
    pub fn count_empty(&self, b: Board) -> u32 {
        let mut empty = 0;
        for i in 0..self.cell_count() {
            if b.exponent(i) == 0 {
                empty += 1;
            }
        }
        empty
    }

    /// Enumerates every spawn successor of an afterstate with its
    /// probability. Empty distribution if the board is full.
    pub fn spawn_successors(&self, b: Board) -> SpawnDistribution {
        let mut spawns = Vec::new();
        let empty = self.count_empty(b) as f64;
        if empty == 0.0 {
            return SpawnDistribution { spawns };
        }
        for cell in 0..self.cell_count() {
            if b.exponent(cell) != 0 {
                continue;
            }
            for (exponent, weight) in [(1u8, SPAWN_TWO_PROBABILITY), (2u8, 1.0 - SPAWN_TWO_PROBABILITY)] {
                spawns.push(Spawn {
                    board: b.with_exponent(cell, exponent),
                    cell,
                    exponent,
                    probability: weight / empty,
                });
            }
        }
        SpawnDistribution { spawns }
    }

    /// Visits every spawn successor of an afterstate without allocating:
    /// `f(successor, probability)` per (empty cell, exponent) pair, in cell
    /// order with the 2-tile before the 4-tile. No calls on a full board.
    #[inline]
    pub fn for_each_spawn(&self, b: Board, mut f: impl FnMut(Board, f64)) {
        let empty = self.count_empty(b) as f64;
        if empty == 0.0 {
            return;
        }
        for cell in 0..self.cell_count() {
            if b.exponent(cell) != 0 {
                continue;
            }
            f(b.with_exponent(cell, 1), SPAWN_TWO_PROBABILITY / empty);
            f(b.with_exponent(cell, 2), (1.0 - SPAWN_TWO_PROBABILITY) / empty);
        }
    }

    /// Spawns one tile on a uniformly random empty cell: exponent 1 with
    /// probability 0.9, exponent 2 otherwise.
    pub fn spawn_random(&self, b: Board, rng: &mut SplitMix64) -> Result<Spawn, EngineError> {
        let empty = self.count_empty(b);
        if empty == 0 {
            return Err(EngineError::BoardFull);
        }
        let mut target = rng.next_below(empty as u64) as u32;
        let mut cell = 0u8;
        for i in 0..self.cell_count() {
            if b.exponent(i) == 0 {
                if target == 0 {
                    cell = i;
                    break;
                }
                target -= 1;
            }
        }
        let exponent = if rng.next_f64() < SPAWN_TWO_PROBABILITY { 1 } else { 2 };
        let probability =
            if exponent == 1 { SPAWN_TWO_PROBABILITY } else { 1.0 - SPAWN_TWO_PROBABILITY }
                / empty as f64;
        Ok(Spawn {
            board: b.with_exponent(cell, exponent),
            cell,
            exponent,
            probability,
        })
    }

    /// Starting position: two random tiles spawned on an empty board.
    pub fn initial_state(&self, rng: &mut SplitMix64) -> Board {
        let first = self.spawn_random(Board::EMPTY, rng).expect("empty board has room");
        let second = self.spawn_random(first.board, rng).expect("one tile leaves room");
        second.board
    }

    /// Renders the board as `rows` lines of decimal tile values separated by
    /// single spaces, with 0 for empty cells.
    pub fn render(&self, b: Board) -> String {
        let mut out = String::new();
        for r in 0..self.rows {
            for c in 0..self.cols {
                if c > 0 {
                    out.push(' ');
                }
                let e = b.exponent(r * self.cols + c);
                let value: u32 = if e == 0 { 0 } else { 1 << e };
                let _ = write!(out, "{value}");
            }
            out.push('\n');
        }
        out
    }
}
