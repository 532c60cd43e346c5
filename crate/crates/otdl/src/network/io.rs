//! Binary network files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "NTNW" | version u16 | flags u8 (bit 0: symmetric) | stage count u8
//! per stage:
//!   tuple count u16
//!   per tuple: n u8, then n cell indices (u8 each)
//!   per tuple, same order: 16^n weights as f32
//! optional appendix:
//!   magic "COHR"
//!   per stage, per tuple: E table then A table, 16^n f32 values each
//! ```
//!
//! Weights are stored as f32; in-memory tables are f64, so saving quantizes.
//! `save(load(bytes)) == bytes` always holds, and `load(save(net)) == net`
//! holds whenever the weights are f32-representable.

use std::io::{Read, Write};

use super::{
    default_thresholds, CoherenceStore, MultistageNetwork, NTupleNetwork, NetworkError, TupleDef,
    WeightTable,
};
use crate::engine::Engine;

const MAGIC: &[u8; 4] = b"NTNW";
const COHERENCE_MAGIC: &[u8; 4] = b"COHR";
const FORMAT_VERSION: u16 = 1;
const FLAG_SYMMETRIC: u8 = 0b0000_0001;
const MAX_STAGES: usize = 14;

/// Serializes a network (and, optionally, one coherence store per stage).
pub fn save_network<W: Write>(
    writer: &mut W,
    network: &MultistageNetwork,
    coherence: Option<&[CoherenceStore]>,
) -> Result<(), NetworkError> {
    if let Some(stores) = coherence {
        if stores.len() != network.stage_count() {
            return Err(NetworkError::ShapeMismatch(format!(
                "{} coherence stores for {} stages",
                stores.len(),
                network.stage_count()
            )));
        }
        for (store, stage) in stores.iter().zip(network.stages()) {
            if !store.matches(stage) {
                return Err(NetworkError::ShapeMismatch(
                    "coherence store shape differs from stage tables".into(),
                ));
            }
        }
    }

    writer.write_all(MAGIC)?;
    writer.write_all(&FORMAT_VERSION.to_le_bytes())?;
    let first = network.stage(0);
    let flags = if first.symmetric() { FLAG_SYMMETRIC } else { 0 };
    writer.write_all(&[flags, network.stage_count() as u8])?;

    for stage in network.stages() {
        write_stage_header(writer, stage.tuples())?;
        for table in &stage.tables {
            write_table(writer, table)?;
        }
    }

    if let Some(stores) = coherence {
        writer.write_all(COHERENCE_MAGIC)?;
        for store in stores {
            let (e_tables, a_tables) = store.tables();
            for (e, a) in e_tables.iter().zip(a_tables) {
                write_table(writer, e)?;
                write_table(writer, a)?;
            }
        }
    }
    writer.flush()?;
    Ok(())
}

fn write_stage_header<W: Write>(writer: &mut W, tuples: &[TupleDef]) -> Result<(), NetworkError> {
    writer.write_all(&(tuples.len() as u16).to_le_bytes())?;
    for t in tuples {
        writer.write_all(&[t.len() as u8])?;
        writer.write_all(t.cells())?;
    }
    Ok(())
}

fn write_table<W: Write>(writer: &mut W, table: &WeightTable) -> Result<(), NetworkError> {
    // Chunked f64 -> f32 conversion keeps the buffer small.
    let mut buf = [0u8; 4 * 4096];
    let mut filled = 0usize;
    for i in 0..table.len() {
        let bytes = (table.get(i) as f32).to_le_bytes();
        buf[filled..filled + 4].copy_from_slice(&bytes);
        filled += 4;
        if filled == buf.len() {
            writer.write_all(&buf)?;
            filled = 0;
        }
    }
    if filled > 0 {
        writer.write_all(&buf[..filled])?;
    }
    Ok(())
}

/// Deserializes a network for `engine`'s geometry. Routing thresholds are
/// configuration, not weights: multi-stage files come back with the default
/// threshold ladder, which [`MultistageNetwork::set_thresholds`] can replace.
pub fn load_network<R: Read>(
    reader: &mut R,
    engine: &Engine,
) -> Result<(MultistageNetwork, Option<Vec<CoherenceStore>>), NetworkError> {
    let mut magic = [0u8; 4];
    read_exact(reader, &mut magic)?;
    if &magic != MAGIC {
        return Err(NetworkError::BadMagic);
    }
    let version = read_u16(reader)?;
    if version != FORMAT_VERSION {
        return Err(NetworkError::UnsupportedVersion(version));
    }
    let mut head = [0u8; 2];
    read_exact(reader, &mut head)?;
    let symmetric = head[0] & FLAG_SYMMETRIC != 0;
    let stage_count = head[1] as usize;
    if stage_count == 0 || stage_count > MAX_STAGES {
        return Err(NetworkError::ShapeMismatch(format!("stage count {stage_count} out of range")));
    }

    let mut stages = Vec::with_capacity(stage_count);
    for _ in 0..stage_count {
        let tuple_count = read_u16(reader)? as usize;
        if tuple_count == 0 {
            return Err(NetworkError::ShapeMismatch("stage with zero tuples".into()));
        }
        let mut tuples = Vec::with_capacity(tuple_count);
        for _ in 0..tuple_count {
            let mut len_buf = [0u8; 1];
            read_exact(reader, &mut len_buf)?;
            let n = len_buf[0] as usize;
            if n == 0 || n > 8 {
                return Err(NetworkError::ShapeMismatch(format!("tuple length {n} out of range")));
            }
            let mut cells = vec![0u8; n];
            read_exact(reader, &mut cells)?;
            tuples.push(TupleDef::new(cells).map_err(|_| {
                NetworkError::ShapeMismatch("tuple cells invalid for this board".into())
            })?);
        }
        let net = NTupleNetwork::new(engine, tuples, symmetric)?;
        for table in &net.tables {
            read_table(reader, table)?;
        }
        stages.push(net);
    }

    let shapes: Vec<usize> = stages[0].tables.iter().map(|t| t.len()).collect();
    let network = MultistageNetwork::new(stages, default_thresholds(stage_count))?;

    // Optional coherence appendix, detected by its magic.
    let mut appendix = [0u8; 4];
    let coherence = match read_exact_or_eof(reader, &mut appendix)? {
        false => None,
        true => {
            if &appendix != COHERENCE_MAGIC {
                return Err(NetworkError::BadMagic);
            }
            let mut stores = Vec::with_capacity(stage_count);
            for _ in 0..stage_count {
                let mut e_tables = Vec::with_capacity(shapes.len());
                let mut a_tables = Vec::with_capacity(shapes.len());
                for &len in &shapes {
                    let e = WeightTable::new(len);
                    read_table(reader, &e)?;
                    let a = WeightTable::new(len);
                    read_table(reader, &a)?;
                    e_tables.push(e);
                    a_tables.push(a);
                }
                stores.push(CoherenceStore::from_tables(e_tables, a_tables));
            }
            Some(stores)
        }
    };

    Ok((network, coherence))
}

fn read_table<R: Read>(reader: &mut R, table: &WeightTable) -> Result<(), NetworkError> {
    let mut buf = [0u8; 4 * 4096];
    let mut i = 0usize;
    while i < table.len() {
        let want = (table.len() - i).min(4096) * 4;
        read_exact(reader, &mut buf[..want])?;
        for chunk in buf[..want].chunks_exact(4) {
            let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
            table.set(i, v as f64);
            i += 1;
        }
    }
    Ok(())
}

fn read_u16<R: Read>(reader: &mut R) -> Result<u16, NetworkError> {
    let mut buf = [0u8; 2];
    read_exact(reader, &mut buf)?;
    Ok(u16::from_le_bytes(buf))
}

fn read_exact<R: Read>(reader: &mut R, buf: &mut [u8]) -> Result<(), NetworkError> {
    reader.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            NetworkError::Truncated
        } else {
            NetworkError::Io(e)
        }
    })
}

/// Fills `buf` completely, or returns `Ok(false)` if the reader was already
/// at end-of-file. A partial fill is a truncation error.
fn read_exact_or_eof<R: Read>(reader: &mut R, buf: &mut [u8]) -> Result<bool, NetworkError> {
    let mut filled = 0usize;
    while filled < buf.len() {
        match reader.read(&mut buf[filled..]) {
            Ok(0) => {
                return if filled == 0 { Ok(false) } else { Err(NetworkError::Truncated) };
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(NetworkError::Io(e)),
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{swa_average, TileThreshold};
    use crate::rng::SplitMix64;

    fn engine() -> &'static Engine {
        Engine::shared_4x4()
    }

    fn small_net(rng: &mut SplitMix64, symmetric: bool) -> NTupleNetwork {
        let tuples = vec![
            TupleDef::new(vec![0, 1, 2]).unwrap(),
            TupleDef::new(vec![4, 5, 6, 7]).unwrap(),
        ];
        let net = NTupleNetwork::new(engine(), tuples, symmetric).unwrap();
        for t in 0..net.num_tables() {
            for i in 0..net.table_len(t) {
                // f32-representable weights so the round trip is lossless.
                net.set_cell(t, i as u32, (rng.next_f64() * 1000.0 - 500.0) as f32 as f64);
            }
        }
        net
    }

    fn to_bytes(network: &MultistageNetwork, coherence: Option<&[CoherenceStore]>) -> Vec<u8> {
        let mut out = Vec::new();
        save_network(&mut out, network, coherence).unwrap();
        out
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let mut rng = SplitMix64::new(31);
        let net = small_net(&mut rng, true);
        let msn = MultistageNetwork::single(net);
        let bytes = to_bytes(&msn, None);
        let (loaded, coherence) = load_network(&mut bytes.as_slice(), engine()).unwrap();
        assert!(coherence.is_none());
        assert_eq!(loaded.stage_count(), 1);
        let a = msn.stage(0);
        let b = loaded.stage(0);
        assert_eq!(a.tuples(), b.tuples());
        assert_eq!(a.symmetric(), b.symmetric());
        for t in 0..a.num_tables() {
            for i in 0..a.table_len(t) {
                assert_eq!(a.cell(t, i as u32).to_bits(), b.cell(t, i as u32).to_bits());
            }
        }
        // Byte-level idempotence.
        assert_eq!(bytes, to_bytes(&loaded, None));
    }

    #[test]
    fn round_trip_with_stages_and_coherence() {
        let mut rng = SplitMix64::new(77);
        let stages = vec![small_net(&mut rng, false), small_net(&mut rng, false)];
        let thresholds = vec![TileThreshold::EMPTY, TileThreshold::from_tiles(&[16384]).unwrap()];
        let msn = MultistageNetwork::new(stages, thresholds).unwrap();
        let stores: Vec<CoherenceStore> =
            msn.stages().iter().map(CoherenceStore::for_network).collect();
        stores[0].accumulate(0, 5, 2.5);
        stores[1].accumulate(1, 9, -1.25);

        let bytes = to_bytes(&msn, Some(&stores));
        let (loaded, loaded_stores) = load_network(&mut bytes.as_slice(), engine()).unwrap();
        let loaded_stores = loaded_stores.unwrap();
        assert_eq!(loaded.stage_count(), 2);
        assert_eq!(loaded_stores.len(), 2);
        assert_eq!(loaded_stores[0].error_sum(0, 5), 2.5);
        assert_eq!(loaded_stores[0].magnitude_sum(0, 5), 2.5);
        assert_eq!(loaded_stores[1].error_sum(1, 9), -1.25);
        assert_eq!(loaded_stores[1].magnitude_sum(1, 9), 1.25);
        // Loaded files carry the default threshold ladder.
        assert_eq!(loaded.thresholds()[1], TileThreshold::from_tiles(&[16384]).unwrap());
    }

    #[test]
    fn bad_magic_is_distinct() {
        let bytes = b"XXXX rest does not matter".to_vec();
        match load_network(&mut bytes.as_slice(), engine()) {
            Err(NetworkError::BadMagic) => {}
            other => panic!("expected BadMagic, got {other:?}"),
        }
    }

    #[test]
    fn truncation_is_distinct() {
        let mut rng = SplitMix64::new(13);
        let msn = MultistageNetwork::single(small_net(&mut rng, false));
        let bytes = to_bytes(&msn, None);
        let cut = &bytes[..bytes.len() / 2];
        match load_network(&mut &cut[..], engine()) {
            Err(NetworkError::Truncated) => {}
            other => panic!("expected Truncated, got {other:?}"),
        }
    }

    #[test]
    fn unsupported_version_is_distinct() {
        let mut rng = SplitMix64::new(13);
        let msn = MultistageNetwork::single(small_net(&mut rng, false));
        let mut bytes = to_bytes(&msn, None);
        bytes[4] = 0xFF;
        match load_network(&mut bytes.as_slice(), engine()) {
            Err(NetworkError::UnsupportedVersion(_)) => {}
            other => panic!("expected UnsupportedVersion, got {other:?}"),
        }
    }

    #[test]
    fn oversized_cells_are_a_shape_mismatch() {
        // A tuple referencing cell 12 does not fit a 2x3 board.
        let mut rng = SplitMix64::new(13);
        let msn = MultistageNetwork::single(small_net(&mut rng, false));
        let bytes = to_bytes(&msn, None);
        let small = Engine::new(2, 3).unwrap();
        match load_network(&mut bytes.as_slice(), &small) {
            Err(NetworkError::InvalidTuple) | Err(NetworkError::ShapeMismatch(_)) => {}
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn averaging_loaded_snapshots_matches_linearity() {
        // Write, reload, and average: values stay linear because file
        // weights are exactly representable.
        let mut rng = SplitMix64::new(101);
        let nets: Vec<NTupleNetwork> = (0..3).map(|_| small_net(&mut rng, true)).collect();
        let mut reloaded = Vec::new();
        for n in &nets {
            let bytes = to_bytes(&MultistageNetwork::single(n.snapshot()), None);
            let (msn, _) = load_network(&mut bytes.as_slice(), engine()).unwrap();
            reloaded.push(msn);
        }
        let refs: Vec<&NTupleNetwork> = reloaded.iter().map(|m| m.stage(0)).collect();
        let avg = swa_average(&refs).unwrap();
        let mut exps = [0u8; 16];
        for (i, e) in exps.iter_mut().enumerate() {
            *e = (i % 11) as u8;
        }
        let b = crate::engine::Board::from_exponents(&exps);
        let mean: f64 = refs.iter().map(|n| n.value(b)).sum::<f64>() / refs.len() as f64;
        assert!((avg.value(b) - mean).abs() <= 1e-9 * mean.abs().max(1.0));
    }
}
