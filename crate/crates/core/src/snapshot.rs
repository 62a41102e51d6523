//! Binary snapshots of states, ensembles and noise paths.
//!
//! A snapshot is one line of JSON (the header) followed by a block of
//! little-endian `f64` values, `rows × cols` of them in row-major order. The
//! header records the block length and its SHA-256, so truncation and
//! corruption are detected on load.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::forcing::NoisePath;
use crate::measures::Ensemble;
use crate::rng::SeedLineage;
use crate::spectral::SpectralState;

pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotKind {
    State,
    Ensemble,
    NoisePath,
}

/// Provenance recorded with every snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SnapshotMeta {
    pub time: f64,
    pub config_hash: String,
    pub master_seed: Option<u64>,
    pub lineage: Vec<SeedLineage>,
    /// Step size, for noise paths.
    pub dt: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotHeader {
    pub format_version: u32,
    pub kind: SnapshotKind,
    pub rows: usize,
    pub cols: usize,
    /// Modes per state; equals `cols` except for noise paths.
    pub n_modes: usize,
    #[serde(flatten)]
    pub meta: SnapshotMeta,
    pub byte_length: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub header: SnapshotHeader,
    pub data: Vec<f64>,
}

impl Snapshot {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.header.cols..(i + 1) * self.header.cols]
    }
}

/// Serializes a `rows × cols` block with its header.
pub fn encode(
    kind: SnapshotKind,
    rows: usize,
    cols: usize,
    n_modes: usize,
    data: &[f64],
    meta: SnapshotMeta,
) -> Result<Vec<u8>> {
    if data.len() != rows * cols {
        return Err(Error::DimensionMismatch { expected: rows * cols, found: data.len() });
    }
    let block: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
    let header = SnapshotHeader {
        format_version: SNAPSHOT_VERSION,
        kind,
        rows,
        cols,
        n_modes,
        meta,
        byte_length: block.len(),
        sha256: hex::encode(Sha256::digest(&block)),
    };
    let mut out = serde_json::to_vec(&header)?;
    out.push(b'\n');
    out.extend_from_slice(&block);
    Ok(out)
}

/// Parses only the header line.
pub fn decode_header(bytes: &[u8]) -> Result<(SnapshotHeader, usize)> {
    let newline = bytes
        .iter()
        .position(|b| *b == b'\n')
        .ok_or_else(|| Error::Format("snapshot header is not terminated".into()))?;
    let raw: serde_json::Value = serde_json::from_slice(&bytes[..newline])
        .map_err(|e| Error::Format(format!("snapshot header is not JSON: {e}")))?;
    let version = raw
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::Format("snapshot header has no format_version".into()))?;
    if version != u64::from(SNAPSHOT_VERSION) {
        return Err(Error::VersionMismatch { expected: SNAPSHOT_VERSION, found: version as u32 });
    }
    let header: SnapshotHeader =
        serde_json::from_value(raw).map_err(|e| Error::Format(format!("bad snapshot header: {e}")))?;
    Ok((header, newline + 1))
}

pub fn decode(bytes: &[u8]) -> Result<Snapshot> {
    let (header, start) = decode_header(bytes)?;
    let block = &bytes[start..];
    if block.len() != header.byte_length || hex::encode(Sha256::digest(block)) != header.sha256 {
        return Err(Error::Checksum);
    }
    if header.byte_length != 8 * header.rows * header.cols {
        return Err(Error::Format("block length does not match rows × cols".into()));
    }
    let data = block.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
    Ok(Snapshot { header, data })
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut file = fs::File::create(path)?;
    file.write_all(bytes)?;
    file.sync_all()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Snapshot> {
    decode(&fs::read(path)?)
}

pub fn read_header(path: &Path) -> Result<SnapshotHeader> {
    Ok(decode_header(&fs::read(path)?)?.0)
}

fn expect_kind(snapshot: &Snapshot, kind: SnapshotKind) -> Result<()> {
    if snapshot.header.kind != kind {
        return Err(Error::Format(format!("expected a {kind:?} snapshot, found {:?}", snapshot.header.kind)));
    }
    Ok(())
}

pub fn save_snapshot(path: &Path, state: &SpectralState, meta: SnapshotMeta) -> Result<()> {
    let n = state.n_modes();
    write_atomic(path, &encode(SnapshotKind::State, 1, n, n, state.coeffs(), meta)?)
}

pub fn load_snapshot(path: &Path) -> Result<(SpectralState, SnapshotHeader)> {
    let snap = load(path)?;
    expect_kind(&snap, SnapshotKind::State)?;
    Ok((SpectralState::new(snap.data)?, snap.header))
}

pub fn save_ensemble(path: &Path, ensemble: &Ensemble, master_seed: Option<u64>) -> Result<()> {
    let n = ensemble.n_modes();
    let data: Vec<f64> = ensemble.states.iter().flat_map(|s| s.coeffs().iter().copied()).collect();
    let meta = SnapshotMeta {
        time: ensemble.t,
        config_hash: ensemble.config_hash.clone(),
        master_seed,
        lineage: ensemble.seeds.clone(),
        dt: None,
    };
    write_atomic(path, &encode(SnapshotKind::Ensemble, ensemble.len(), n, n, &data, meta)?)
}

pub fn load_ensemble(path: &Path) -> Result<Ensemble> {
    let snap = load(path)?;
    expect_kind(&snap, SnapshotKind::Ensemble)?;
    let states = (0..snap.header.rows).map(|i| SpectralState::new(snap.row(i).to_vec())).collect::<Result<Vec<_>>>()?;
    let meta = snap.header.meta;
    Ensemble::new(states, meta.time, meta.config_hash, meta.lineage)
}

/// Rows are driving motions, columns are steps.
pub fn save_noise_path(path: &Path, noise: &NoisePath, config_hash: &str) -> Result<()> {
    let rows = noise.increments.len();
    let cols = noise.n_steps();
    let data: Vec<f64> = noise.increments.iter().flatten().copied().collect();
    let meta = SnapshotMeta {
        time: cols as f64 * noise.dt,
        config_hash: config_hash.into(),
        master_seed: Some(noise.seed.seed),
        lineage: vec![noise.seed],
        dt: Some(noise.dt),
    };
    write_atomic(path, &encode(SnapshotKind::NoisePath, rows, cols, 0, &data, meta)?)
}

pub fn load_noise_path(path: &Path) -> Result<NoisePath> {
    let snap = load(path)?;
    expect_kind(&snap, SnapshotKind::NoisePath)?;
    let dt = snap.header.meta.dt.ok_or_else(|| Error::Format("noise path without dt".into()))?;
    let seed = *snap.header.meta.lineage.first().ok_or_else(|| Error::Format("noise path without lineage".into()))?;
    let increments = (0..snap.header.rows).map(|i| snap.row(i).to_vec()).collect();
    Ok(NoisePath { dt, seed, increments })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forcing::sample_noise;

    fn meta() -> SnapshotMeta {
        SnapshotMeta {
            time: 1.5,
            config_hash: "abc".into(),
            master_seed: Some(7),
            lineage: vec![SeedLineage::new(7, 2)],
            dt: None,
        }
    }

    #[test]
    fn state_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.snap");
        let u = SpectralState::new(vec![1.0 / 3.0, -0.0, 1e-300, f64::MAX, -2.5]).unwrap();
        save_snapshot(&path, &u, meta()).unwrap();
        let (v, header) = load_snapshot(&path).unwrap();
        assert!(u.coeffs().iter().zip(v.coeffs()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(header.meta, meta());
        assert_eq!(header.format_version, SNAPSHOT_VERSION);
    }

    #[test]
    fn header_is_standalone_json() {
        let bytes = encode(SnapshotKind::State, 1, 3, 3, &[1.0, 2.0, 3.0], meta()).unwrap();
        let line = bytes.split(|b| *b == b'\n').next().unwrap();
        let value: serde_json::Value = serde_json::from_slice(line).unwrap();
        assert_eq!(value["format_version"], 1);
        assert_eq!(value["config_hash"], "abc");
        assert_eq!(value["byte_length"], 24);
    }

    #[test]
    fn truncation_and_corruption_are_detected() {
        let bytes = encode(SnapshotKind::State, 1, 4, 4, &[1.0, 2.0, 3.0, 4.0], meta()).unwrap();
        assert!(matches!(decode(&bytes[..bytes.len() - 3]), Err(Error::Checksum)));
        let mut flipped = bytes.clone();
        *flipped.last_mut().unwrap() ^= 1;
        assert!(matches!(decode(&flipped), Err(Error::Checksum)));
    }

    #[test]
    fn version_mismatch_is_fatal() {
        let bytes = encode(SnapshotKind::State, 1, 1, 1, &[1.0], meta()).unwrap();
        let text = String::from_utf8_lossy(&bytes).replace("\"format_version\":1", "\"format_version\":99");
        assert!(matches!(decode(text.as_bytes()), Err(Error::VersionMismatch { expected: 1, found: 99 })));
    }

    #[test]
    fn ensembles_and_noise_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let e = Ensemble::new(
            vec![SpectralState::mode(3, 1, 1.0), SpectralState::mode(3, 3, -2.0)],
            0.5,
            "h".into(),
            vec![SeedLineage::new(1, 0), SeedLineage::new(1, 1)],
        )
        .unwrap();
        let path = dir.path().join("e.snap");
        save_ensemble(&path, &e, Some(1)).unwrap();
        assert_eq!(load_ensemble(&path).unwrap(), e);
        assert!(load_snapshot(&path).is_err());

        let noise = sample_noise(3, 1e-3, 17).unwrap();
        let path = dir.path().join("n.snap");
        save_noise_path(&path, &noise, "h").unwrap();
        assert_eq!(load_noise_path(&path).unwrap(), noise);
    }
}
