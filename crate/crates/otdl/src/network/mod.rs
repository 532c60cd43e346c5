//! N-tuple value networks over bitboard positions.
//!
//! A network is a set of tuples — small fixed lists of board cells — each
//! backed by a lookup table indexed by the tuple's cell exponents in radix
//! 16. The position value is the sum of one table read per tuple; with
//! symmetric sampling each tuple is additionally read at every symmetric
//! image of the board, sharing a single table across all placements.
//!
//! Tables store `f64` weights in atomic cells. Reads and writes of a cell
//! are tear-free, and the parallel training driver relies on exactly that:
//! concurrent read-modify-write races may lose increments without
//! corrupting a weight. Deterministic runs use a single worker.

mod io;
mod presets;

pub use io::{load_network, save_network};
pub use presets::{preset, preset_names, PRESET_FORMAT_VERSION};

use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

use crate::engine::{Board, Engine};

#[derive(Error, Debug)]
pub enum NetworkError {
    #[error("tuple cells must be distinct, non-empty, at most 8, and inside the board")]
    InvalidTuple,
    #[error("network has no tuples")]
    Empty,
    #[error("bad magic bytes (not a network file)")]
    BadMagic,
    #[error("unsupported network format version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated network payload")]
    Truncated,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One tuple: an ordered list of distinct board cells.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TupleDef {
    cells: Vec<u8>,
}

impl TupleDef {
    /// At most 8 distinct cells; cell indices must fit any board the tuple
    /// is later attached to (validated again at network construction).
    pub fn new(cells: Vec<u8>) -> Result<TupleDef, NetworkError> {
        if cells.is_empty() || cells.len() > 8 {
            return Err(NetworkError::InvalidTuple);
        }
        if cells.iter().any(|&c| c >= 16) {
            return Err(NetworkError::InvalidTuple);
        }
        let mut seen = [false; 16];
        for &c in &cells {
            if seen[c as usize] {
                return Err(NetworkError::InvalidTuple);
            }
            seen[c as usize] = true;
        }
        Ok(TupleDef { cells })
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Table size for this tuple: `16^n`.
    pub fn table_len(&self) -> usize {
        1usize << (4 * self.cells.len())
    }

    /// Feature index of `board` under this tuple: the cell at list position
    /// `j` (0-based) contributes its exponent times `16^j`.
    pub fn extract(&self, board: Board) -> u32 {
        extract_cells(&self.cells, board)
    }
}

/// Feature index for an explicit cell list (low list position = low nibble).
#[inline]
pub fn extract_cells(cells: &[u8], board: Board) -> u32 {
    let mut index = 0u32;
    for (j, &cell) in cells.iter().enumerate() {
        index |= (board.exponent(cell) as u32) << (4 * j);
    }
    index
}

/// Lookup table of f64 weights in atomic cells.
pub(crate) struct WeightTable {
    cells: Box<[AtomicU64]>,
}

impl WeightTable {
    fn new(len: usize) -> WeightTable {
        let cells: Vec<AtomicU64> = (0..len).map(|_| AtomicU64::new(0)).collect();
        WeightTable { cells: cells.into_boxed_slice() }
    }

    #[inline]
    pub(crate) fn get(&self, i: usize) -> f64 {
        f64::from_bits(self.cells[i].load(Ordering::Relaxed))
    }

    #[inline]
    pub(crate) fn set(&self, i: usize, v: f64) {
        self.cells[i].store(v.to_bits(), Ordering::Relaxed);
    }

    /// Read-modify-write without synchronisation: racing writers may lose
    /// increments, never corrupt a value.
    #[inline]
    pub(crate) fn add(&self, i: usize, delta: f64) {
        self.set(i, self.get(i) + delta);
    }

    pub(crate) fn len(&self) -> usize {
        self.cells.len()
    }

    fn fill(&self, v: f64) {
        let bits = v.to_bits();
        for cell in self.cells.iter() {
            cell.store(bits, Ordering::Relaxed);
        }
    }
}

impl Clone for WeightTable {
    fn clone(&self) -> Self {
        let cells: Vec<AtomicU64> = self
            .cells
            .iter()
            .map(|c| AtomicU64::new(c.load(Ordering::Relaxed)))
            .collect();
        WeightTable { cells: cells.into_boxed_slice() }
    }
}

/// One table lookup: which table, and which board cells feed the index.
#[derive(Clone, Copy)]
struct LookupSpec {
    table: u16,
    n: u8,
    cells: [u8; 8],
}

/// N-tuple network: tuples, their weight tables, and the precomputed lookup
/// lists (one per tuple, or one per tuple and symmetry image when symmetric
/// sampling is on).
pub struct NTupleNetwork {
    cell_count: u8,
    square: bool,
    symmetric: bool,
    tuples: Vec<TupleDef>,
    tables: Vec<WeightTable>,
    lookups: Vec<LookupSpec>,
}

impl NTupleNetwork {
    /// Builds a zero-initialised network for `engine`'s geometry. With
    /// `symmetric` set, every tuple is sampled at all of the geometry's
    /// symmetry transforms while sharing one table.
    pub fn new(engine: &Engine, tuples: Vec<TupleDef>, symmetric: bool) -> Result<NTupleNetwork, NetworkError> {
        if tuples.is_empty() {
            return Err(NetworkError::Empty);
        }
        let cell_count = engine.cell_count();
        for t in &tuples {
            if t.cells.iter().any(|&c| c >= cell_count) {
                return Err(NetworkError::InvalidTuple);
            }
        }
        let tables = tuples.iter().map(|t| WeightTable::new(t.table_len())).collect();
        let mut net = NTupleNetwork {
            cell_count,
            square: engine.rows() == engine.cols(),
            symmetric,
            tuples,
            tables,
            lookups: Vec::new(),
        };
        net.rebuild_lookups(engine);
        Ok(net)
    }

    fn rebuild_lookups(&mut self, engine: &Engine) {
        assert_eq!(engine.cell_count(), self.cell_count, "engine geometry mismatch");
        let mut lookups = Vec::new();
        for (ti, tuple) in self.tuples.iter().enumerate() {
            let images: usize = if self.symmetric { engine.transforms().len() } else { 1 };
            for g in 0..images {
                let transform = &engine.transforms()[g];
                let mut cells = [0u8; 8];
                for (j, &c) in tuple.cells.iter().enumerate() {
                    // Reading cell c of the transformed board reads
                    // transform.source(c) of the original.
                    cells[j] = transform.source(c);
                }
                lookups.push(LookupSpec { table: ti as u16, n: tuple.len() as u8, cells });
            }
        }
        self.lookups = lookups;
    }

    pub fn tuples(&self) -> &[TupleDef] {
        &self.tuples
    }

    pub fn symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn num_tables(&self) -> usize {
        self.tables.len()
    }

    pub fn table_len(&self, table: usize) -> usize {
        self.tables[table].len()
    }

    /// Total number of table reads per evaluation (`m` tuples, times the
    /// symmetry-group size when symmetric sampling is on).
    pub fn lookup_count(&self) -> usize {
        self.lookups.len()
    }

    /// Total number of weights.
    pub fn weight_count(&self) -> usize {
        self.tables.iter().map(|t| t.len()).sum()
    }

    #[inline]
    pub fn cell(&self, table: usize, index: u32) -> f64 {
        self.tables[table].get(index as usize)
    }

    #[inline]
    pub fn set_cell(&self, table: usize, index: u32, v: f64) {
        self.tables[table].set(index as usize, v);
    }

    #[inline]
    pub fn add_to_cell(&self, table: usize, index: u32, delta: f64) {
        self.tables[table].add(index as usize, delta);
    }

    /// Calls `f(table, feature_index)` for every lookup of `board`.
    #[inline]
    pub fn for_each_feature<F: FnMut(usize, u32)>(&self, board: Board, mut f: F) {
        for spec in &self.lookups {
            let mut index = 0u32;
            for j in 0..spec.n as usize {
                index |= (board.exponent(spec.cells[j]) as u32) << (4 * j);
            }
            f(spec.table as usize, index);
        }
    }

    /// Position value: the sum of all table lookups.
    #[inline]
    pub fn value(&self, board: Board) -> f64 {
        let mut total = 0.0;
        self.for_each_feature(board, |t, i| total += self.tables[t].get(i as usize));
        total
    }

    /// Distributes `adjustment` equally over all lookups of `board`: each
    /// looked-up weight receives `adjustment / F` where `F` is
    /// [`lookup_count`](Self::lookup_count). A cell hit `k` times (tuple
    /// images coinciding on a symmetric position) receives `k` shares.
    #[inline]
    pub fn update(&self, board: Board, adjustment: f64) {
        let share = adjustment / self.lookups.len() as f64;
        self.for_each_feature(board, |t, i| self.tables[t].add(i as usize, share));
    }

    /// Optimistic initialization: sets every weight to `v_init / F` so that
    /// every position value is exactly `v_init`.
    pub fn init_optimistic(&self, v_init: f64) {
        let share = v_init / self.lookups.len() as f64;
        for table in &self.tables {
            table.fill(share);
        }
    }

    /// Deep copy (snapshot) of the current weights.
    pub fn snapshot(&self) -> NTupleNetwork {
        NTupleNetwork {
            cell_count: self.cell_count,
            square: self.square,
            symmetric: self.symmetric,
            tuples: self.tuples.clone(),
            tables: self.tables.clone(),
            lookups: self.lookups.clone(),
        }
    }

    fn same_shape(&self, other: &NTupleNetwork) -> bool {
        self.cell_count == other.cell_count
            && self.symmetric == other.symmetric
            && self.tuples == other.tuples
    }

}

impl Clone for NTupleNetwork {
    fn clone(&self) -> Self {
        self.snapshot()
    }
}

impl std::fmt::Debug for NTupleNetwork {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NTupleNetwork")
            .field("tuples", &self.tuples)
            .field("symmetric", &self.symmetric)
            .field("weights", &self.weight_count())
            .finish()
    }
}

/// Stochastic weight averaging: element-wise mean of same-shape networks.
/// Because the position value is linear in the weights, the averaged
/// network's value is the mean of the member networks' values.
pub fn swa_average(nets: &[&NTupleNetwork]) -> Result<NTupleNetwork, NetworkError> {
    let first = *nets.first().ok_or(NetworkError::Empty)?;
    for n in &nets[1..] {
        if !first.same_shape(n) {
            return Err(NetworkError::ShapeMismatch(
                "averaged networks must share tuples and symmetry".into(),
            ));
        }
    }
    let out = first.snapshot();
    let scale = 1.0 / nets.len() as f64;
    for (ti, table) in out.tables.iter().enumerate() {
        for i in 0..table.len() {
            let mut sum = 0.0;
            for n in nets {
                sum += n.tables[ti].get(i);
            }
            table.set(i, sum * scale);
        }
    }
    Ok(out)
}

/// Threshold for multistage routing: a multiset of tile exponents that must
/// all be present on the board for the stage to be active.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct TileThreshold {
    exponents: Vec<u8>,
}

impl TileThreshold {
    pub const EMPTY: TileThreshold = TileThreshold { exponents: Vec::new() };

    /// Builds a threshold from tile exponents (each in `1..=15`), stored as
    /// a sorted multiset.
    pub fn from_exponents(mut exponents: Vec<u8>) -> Result<TileThreshold, NetworkError> {
        if exponents.iter().any(|&e| e == 0 || e > 15) {
            return Err(NetworkError::ShapeMismatch("threshold exponents must be in 1..=15".into()));
        }
        exponents.sort_unstable();
        Ok(TileThreshold { exponents })
    }

    /// Builds a threshold from tile values (powers of two, e.g. 16384).
    pub fn from_tiles(tiles: &[u64]) -> Result<TileThreshold, NetworkError> {
        let mut exponents = Vec::with_capacity(tiles.len());
        for &t in tiles {
            if !t.is_power_of_two() || t < 2 || t > (1 << 15) {
                return Err(NetworkError::ShapeMismatch(format!("{t} is not a valid tile value")));
            }
            exponents.push(t.trailing_zeros() as u8);
        }
        TileThreshold::from_exponents(exponents)
    }

    pub fn exponents(&self) -> &[u8] {
        &self.exponents
    }

    /// True when every threshold tile is present on the board, counted with
    /// multiplicity.
    pub fn contained_in(&self, counts: &[u8; 16]) -> bool {
        let mut needed = [0u8; 16];
        for &e in &self.exponents {
            needed[e as usize] += 1;
        }
        (1..16).all(|e| needed[e] <= counts[e])
    }

    /// True when `other` contains this threshold with multiplicity and is
    /// strictly larger.
    fn strictly_contains(&self, other: &TileThreshold) -> bool {
        let mut counts = [0u8; 16];
        for &e in &self.exponents {
            counts[e as usize] += 1;
        }
        let mut other_counts = [0u8; 16];
        for &e in &other.exponents {
            other_counts[e as usize] += 1;
        }
        (1..16).all(|e| other_counts[e] <= counts[e]) && self.exponents.len() > other.exponents.len()
    }
}

/// Standard threshold ladder: stage `i` requires the first `i` tiles of
/// 16384, 8192, 4096, … all present at once.
pub fn default_thresholds(stages: usize) -> Vec<TileThreshold> {
    (0..stages)
        .map(|i| {
            let exponents: Vec<u8> = (0..i).map(|k| 14 - k as u8).collect();
            TileThreshold::from_exponents(exponents).expect("ladder exponents are valid")
        })
        .collect()
}

/// A stack of same-shape networks covering successive phases of the game.
/// Stage 0 is always active; later stages take over once their threshold
/// tiles are on the board.
pub struct MultistageNetwork {
    stages: Vec<NTupleNetwork>,
    thresholds: Vec<TileThreshold>,
}

impl MultistageNetwork {
    pub fn new(stages: Vec<NTupleNetwork>, thresholds: Vec<TileThreshold>) -> Result<MultistageNetwork, NetworkError> {
        if stages.is_empty() {
            return Err(NetworkError::Empty);
        }
        if stages.len() != thresholds.len() {
            return Err(NetworkError::ShapeMismatch(format!(
                "{} stages but {} thresholds",
                stages.len(),
                thresholds.len()
            )));
        }
        if !thresholds[0].exponents().is_empty() {
            return Err(NetworkError::ShapeMismatch("stage 0 threshold must be empty".into()));
        }
        for w in thresholds.windows(2) {
            if !w[1].strictly_contains(&w[0]) {
                return Err(NetworkError::ShapeMismatch(
                    "stage thresholds must strictly grow in containment order".into(),
                ));
            }
        }
        for s in &stages[1..] {
            if !stages[0].same_shape(s) {
                return Err(NetworkError::ShapeMismatch("stages must share tuples and symmetry".into()));
            }
        }
        Ok(MultistageNetwork { stages, thresholds })
    }

    /// Single-stage wrapper around a plain network.
    pub fn single(net: NTupleNetwork) -> MultistageNetwork {
        MultistageNetwork { stages: vec![net], thresholds: vec![TileThreshold::EMPTY] }
    }

    pub fn stage_count(&self) -> usize {
        self.stages.len()
    }

    pub fn stage(&self, i: usize) -> &NTupleNetwork {
        &self.stages[i]
    }

    pub fn stages(&self) -> &[NTupleNetwork] {
        &self.stages
    }

    pub fn thresholds(&self) -> &[TileThreshold] {
        &self.thresholds
    }

    /// Replaces the routing thresholds (e.g. after loading a network file,
    /// which stores weights but not thresholds).
    pub fn set_thresholds(&mut self, thresholds: Vec<TileThreshold>) -> Result<(), NetworkError> {
        if thresholds.len() != self.stages.len() {
            return Err(NetworkError::ShapeMismatch(format!(
                "{} stages but {} thresholds",
                self.stages.len(),
                thresholds.len()
            )));
        }
        let stages = std::mem::take(&mut self.stages);
        let rebuilt = MultistageNetwork::new(stages, thresholds)?;
        *self = rebuilt;
        Ok(())
    }

    /// Index of the highest stage whose threshold multiset is contained in
    /// the board's tile multiset.
    #[inline]
    pub fn stage_select(&self, board: Board) -> usize {
        if self.stages.len() == 1 {
            return 0;
        }
        let counts = board.exponent_counts();
        let mut selected = 0;
        for (i, t) in self.thresholds.iter().enumerate().skip(1) {
            if t.contained_in(&counts) {
                selected = i;
            }
        }
        selected
    }

    /// Value of the board under the stage selected for it.
    #[inline]
    pub fn value(&self, board: Board) -> f64 {
        self.stages[self.stage_select(board)].value(board)
    }
}

impl Clone for MultistageNetwork {
    fn clone(&self) -> Self {
        MultistageNetwork { stages: self.stages.clone(), thresholds: self.thresholds.clone() }
    }
}

impl std::fmt::Debug for MultistageNetwork {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MultistageNetwork")
            .field("stages", &self.stages.len())
            .field("thresholds", &self.thresholds)
            .finish()
    }
}

/// Temporal-coherence memory: per-weight sums of past errors (`E`) and of
/// their magnitudes (`A`), shaped exactly like a network's tables.
pub struct CoherenceStore {
    e: Vec<WeightTable>,
    a: Vec<WeightTable>,
}

impl CoherenceStore {
    pub fn for_network(net: &NTupleNetwork) -> CoherenceStore {
        CoherenceStore {
            e: net.tables.iter().map(|t| WeightTable::new(t.len())).collect(),
            a: net.tables.iter().map(|t| WeightTable::new(t.len())).collect(),
        }
    }

    pub fn matches(&self, net: &NTupleNetwork) -> bool {
        self.e.len() == net.tables.len()
            && self.e.iter().zip(&net.tables).all(|(e, t)| e.len() == t.len())
    }

    /// Coherence resetting: zeroes every `E` and `A`.
    pub fn reset(&self) {
        for table in self.e.iter().chain(self.a.iter()) {
            table.fill(0.0);
        }
    }

    /// Learning-rate modulation for one weight: `|E|/A`, or 1 when the
    /// accumulators are empty.
    #[inline]
    pub fn beta(&self, table: usize, index: u32) -> f64 {
        let a = self.a[table].get(index as usize);
        if a == 0.0 {
            1.0
        } else {
            (self.e[table].get(index as usize)).abs() / a
        }
    }

    /// Accumulates an observed error for one weight.
    #[inline]
    pub fn accumulate(&self, table: usize, index: u32, delta: f64) {
        self.e[table].add(index as usize, delta);
        self.a[table].add(index as usize, delta.abs());
    }

    #[inline]
    pub fn error_sum(&self, table: usize, index: u32) -> f64 {
        self.e[table].get(index as usize)
    }

    #[inline]
    pub fn magnitude_sum(&self, table: usize, index: u32) -> f64 {
        self.a[table].get(index as usize)
    }

    pub(crate) fn tables(&self) -> (&[WeightTable], &[WeightTable]) {
        (&self.e, &self.a)
    }

    pub(crate) fn from_tables(e: Vec<WeightTable>, a: Vec<WeightTable>) -> CoherenceStore {
        CoherenceStore { e, a }
    }
}

impl std::fmt::Debug for CoherenceStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CoherenceStore").field("tables", &self.e.len()).finish()
    }
}

/// Anything that can score an afterstate.
pub trait Evaluator: Sync {
    fn value(&self, board: Board) -> f64;
}

impl Evaluator for NTupleNetwork {
    #[inline]
    fn value(&self, board: Board) -> f64 {
        NTupleNetwork::value(self, board)
    }
}

impl Evaluator for MultistageNetwork {
    #[inline]
    fn value(&self, board: Board) -> f64 {
        MultistageNetwork::value(self, board)
    }
}

/// The all-zero value function (plain score-greedy play, pure search).
pub struct ZeroEvaluator;

impl Evaluator for ZeroEvaluator {
    #[inline]
    fn value(&self, _board: Board) -> f64 {
        0.0
    }
}

impl<F: Fn(Board) -> f64 + Sync> Evaluator for F {
    #[inline]
    fn value(&self, board: Board) -> f64 {
        self(board)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn engine() -> &'static Engine {
        Engine::shared_4x4()
    }

    fn tuple(cells: &[u8]) -> TupleDef {
        TupleDef::new(cells.to_vec()).unwrap()
    }

    fn random_board(rng: &mut SplitMix64) -> Board {
        // Random exponents capped so boards stay plausible.
        let mut exps = [0u8; 16];
        for e in exps.iter_mut() {
            *e = (rng.next_below(12)) as u8;
        }
        Board::from_exponents(&exps)
    }

    #[test]
    fn tuple_validation() {
        assert!(TupleDef::new(vec![]).is_err());
        assert!(TupleDef::new(vec![0, 0]).is_err());
        assert!(TupleDef::new(vec![16]).is_err());
        assert!(TupleDef::new(vec![0, 1, 2, 3, 4, 5, 6, 7, 8]).is_err());
        assert!(TupleDef::new(vec![0, 1, 2]).is_ok());
    }

    #[test]
    fn extraction_uses_low_nibble_for_first_cell() {
        // First row holds tiles 32,2,0,0 -> exponents (5,1,0,0) -> index 21.
        let b = Board::from_exponents(&[5, 1, 0, 0, 5, 0, 0, 0, 3, 0, 0, 0, 4, 0, 0, 0]);
        let t = tuple(&[0, 1, 2, 3]);
        assert_eq!(t.extract(b), 5 + (1 << 4));
    }

    #[test]
    fn rotated_extraction_reads_first_column() {
        // The same tuple on the rotated image reads cells (12,8,4,0):
        // tiles 16,8,32,32 -> exponents (4,3,5,5).
        let b = Board::from_exponents(&[5, 1, 0, 0, 5, 0, 0, 0, 3, 0, 0, 0, 4, 0, 0, 0]);
        assert_eq!(extract_cells(&[12, 8, 4, 0], b), 4 + (3 << 4) + (5 << 8) + (5 << 12));
    }

    #[test]
    fn symmetric_network_has_eight_lookups_per_tuple() {
        let net = NTupleNetwork::new(engine(), vec![tuple(&[0, 1, 2, 3]), tuple(&[4, 5, 6, 7])], true).unwrap();
        assert_eq!(net.lookup_count(), 16);
        let plain = NTupleNetwork::new(engine(), vec![tuple(&[0, 1, 2, 3])], false).unwrap();
        assert_eq!(plain.lookup_count(), 1);
    }

    #[test]
    fn value_is_invariant_under_isomorphism_when_symmetric() {
        let e = engine();
        let net = NTupleNetwork::new(e, vec![tuple(&[0, 1, 2, 3]), tuple(&[0, 4, 8, 12])], true).unwrap();
        let mut rng = SplitMix64::new(5);
        // Scatter random weights.
        for t in 0..net.num_tables() {
            for _ in 0..500 {
                let idx = rng.next_below(net.table_len(t) as u64) as u32;
                net.set_cell(t, idx, rng.next_f64() * 100.0);
            }
        }
        for _ in 0..50 {
            let b = random_board(&mut rng);
            let v = net.value(b);
            for img in e.isomorphisms(b) {
                assert!((net.value(img) - v).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn update_distributes_equal_shares() {
        let net = NTupleNetwork::new(engine(), vec![tuple(&[0, 1]), tuple(&[2, 3])], false).unwrap();
        let b = Board::from_exponents(&[1, 2, 3, 4, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0]);
        net.update(b, 10.0);
        assert!((net.value(b) - 10.0).abs() < 1e-12);
        // Each of the two lookups got half the adjustment.
        assert!((net.cell(0, (1 + (2 << 4)) as u32) - 5.0).abs() < 1e-12);
        assert!((net.cell(1, (3 + (4 << 4)) as u32) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn update_gives_k_shares_to_repeated_cells() {
        // A tuple whose symmetric images coincide on a uniform board: all 8
        // images of the first-row tuple read the same feature there, so that
        // feature takes all 8 shares.
        let net = NTupleNetwork::new(engine(), vec![tuple(&[0, 1, 2, 3])], true).unwrap();
        let b = Board::from_exponents(&[1; 16]);
        net.update(b, 8.0);
        let feature = extract_cells(&[0, 1, 2, 3], b);
        assert!((net.cell(0, feature) - 8.0).abs() < 1e-12);
        assert!((net.value(b) - 64.0).abs() < 1e-12, "8 lookups of the same cell");
    }

    #[test]
    fn optimistic_init_makes_every_value_v_init() {
        let net = NTupleNetwork::new(
            engine(),
            vec![tuple(&[0, 1, 2, 3]), tuple(&[4, 5, 6, 7]), tuple(&[8, 9, 10, 11]), tuple(&[12, 13, 14, 15])],
            true,
        )
        .unwrap();
        net.init_optimistic(320_000.0);
        let mut rng = SplitMix64::new(17);
        for _ in 0..100 {
            let b = random_board(&mut rng);
            let v = net.value(b);
            assert!((v - 320_000.0).abs() <= 1e-9 * 320_000.0, "value {v}");
        }
    }

    #[test]
    fn swa_average_is_linear_in_values() {
        let e = engine();
        let mut rng = SplitMix64::new(23);
        let tuples = vec![tuple(&[0, 1, 4, 5]), tuple(&[2, 3, 6, 7])];
        let nets: Vec<NTupleNetwork> = (0..5)
            .map(|_| {
                let n = NTupleNetwork::new(e, tuples.clone(), true).unwrap();
                for t in 0..n.num_tables() {
                    for i in 0..n.table_len(t) {
                        // f32-representable random weights.
                        n.set_cell(t, i as u32, (rng.next_f64() * 64.0) as f32 as f64);
                    }
                }
                n
            })
            .collect();
        let refs: Vec<&NTupleNetwork> = nets.iter().collect();
        let avg = swa_average(&refs).unwrap();
        for _ in 0..100 {
            let b = random_board(&mut rng);
            let mean: f64 = nets.iter().map(|n| n.value(b)).sum::<f64>() / nets.len() as f64;
            let got = avg.value(b);
            let tol = 1e-9 * mean.abs().max(1.0);
            assert!((got - mean).abs() <= tol, "avg {got} vs mean {mean}");
        }
    }

    #[test]
    fn swa_average_rejects_shape_mismatch() {
        let e = engine();
        let a = NTupleNetwork::new(e, vec![tuple(&[0, 1])], true).unwrap();
        let b = NTupleNetwork::new(e, vec![tuple(&[0, 2])], true).unwrap();
        assert!(swa_average(&[&a, &b]).is_err());
    }

    #[test]
    fn stage_select_routes_by_contained_tiles() {
        let e = engine();
        let tuples = vec![tuple(&[0, 1, 2, 3])];
        let stages: Vec<NTupleNetwork> =
            (0..3).map(|_| NTupleNetwork::new(e, tuples.clone(), true).unwrap()).collect();
        let msn = MultistageNetwork::new(stages, default_thresholds(3)).unwrap();

        let plain = Board::from_exponents(&[1, 2, 3, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(msn.stage_select(plain), 0);

        let with_16384 = plain.with_exponent(5, 14);
        assert_eq!(msn.stage_select(with_16384), 1);

        let with_both = with_16384.with_exponent(6, 13);
        assert_eq!(msn.stage_select(with_both), 2);

        // Merging the pair away (32768 present, 16384 absent) falls back.
        let merged = plain.with_exponent(5, 15);
        assert_eq!(msn.stage_select(merged), 0);
    }

    #[test]
    fn multistage_value_uses_selected_stage() {
        let e = engine();
        let tuples = vec![tuple(&[0])];
        let stages: Vec<NTupleNetwork> =
            (0..2).map(|_| NTupleNetwork::new(e, tuples.clone(), false).unwrap()).collect();
        stages[0].set_cell(0, 1, 10.0);
        stages[1].set_cell(0, 1, 99.0);
        let msn = MultistageNetwork::new(stages, default_thresholds(2)).unwrap();
        let plain = Board::from_exponents(&[1]);
        assert!((msn.value(plain) - 10.0).abs() < 1e-12);
        let staged = plain.with_exponent(5, 14);
        // Stage 1 is selected; cell 0 still holds exponent 1.
        assert!((msn.value(staged) - 99.0).abs() < 1e-12);
    }

    #[test]
    fn thresholds_must_grow_strictly() {
        let e = engine();
        let tuples = vec![tuple(&[0])];
        let stages: Vec<NTupleNetwork> =
            (0..2).map(|_| NTupleNetwork::new(e, tuples.clone(), false).unwrap()).collect();
        let bad = vec![TileThreshold::EMPTY, TileThreshold::EMPTY];
        assert!(MultistageNetwork::new(stages, bad).is_err());
    }

    #[test]
    fn threshold_multiset_containment_counts_duplicates() {
        let t = TileThreshold::from_tiles(&[16384, 16384]).unwrap();
        let one = Board::EMPTY.with_exponent(0, 14);
        assert!(!t.contained_in(&one.exponent_counts()));
        let two = one.with_exponent(1, 14);
        assert!(t.contained_in(&two.exponent_counts()));
    }

    #[test]
    fn coherence_beta_definition() {
        let e = engine();
        let net = NTupleNetwork::new(e, vec![tuple(&[0])], false).unwrap();
        let store = CoherenceStore::for_network(&net);
        // Fresh accumulators: learning rate passes through.
        assert_eq!(store.beta(0, 3), 1.0);
        store.accumulate(0, 3, 4.0);
        assert_eq!(store.error_sum(0, 3), 4.0);
        assert_eq!(store.magnitude_sum(0, 3), 4.0);
        assert_eq!(store.beta(0, 3), 1.0);
        store.accumulate(0, 3, -4.0);
        // Perfectly incoherent history: beta drops to zero.
        assert_eq!(store.beta(0, 3), 0.0);
        store.reset();
        assert_eq!(store.beta(0, 3), 1.0);
        assert_eq!(store.error_sum(0, 3), 0.0);
    }
}
