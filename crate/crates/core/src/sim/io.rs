//! Sequence files: a JSON manifest plus a binary grid sidecar.
//!
//! Sidecar layout, all integers little-endian u32:
//!
//! | offset | content                                          |
//! |--------|--------------------------------------------------|
//! | 0      | magic `M3DG`                                     |
//! | 4      | format version                                   |
//! | 8      | object count `K`                                 |
//! | 12     | grid resolution `r`                              |
//! | 16     | `K` bit-packed grids of `ceil(r^3 / 8)` bytes each |
//!
//! Grids are stored in object order; bit `i` of a grid (byte `i / 8`, LSB
//! first) is the cell at flat index `i`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::scene::{FrameState, SceneConfig, SceneSequence};
use crate::error::{Error, Result};
use crate::geometry::OccupancyGrid;

pub const SEQUENCE_FORMAT_VERSION: u32 = 1;
pub const GRID_SIDECAR_MAGIC: &[u8; 4] = b"M3DG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceManifest {
    pub format_version: u32,
    pub sequence_id: String,
    /// Sidecar file name, relative to the manifest.
    pub grid_file: String,
    pub config: SceneConfig,
    pub frames: Vec<FrameState>,
}

fn sidecar_bytes(grids: &[&OccupancyGrid]) -> Vec<u8> {
    let res = grids.first().map_or(0, |g| g.resolution());
    let mut out = Vec::new();
    out.extend_from_slice(GRID_SIDECAR_MAGIC);
    for v in [SEQUENCE_FORMAT_VERSION, grids.len() as u32, res as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for g in grids {
        out.extend_from_slice(&g.to_packed());
    }
    out
}

fn parse_sidecar(bytes: &[u8]) -> Result<Vec<OccupancyGrid>> {
    if bytes.len() < 16 || &bytes[..4] != GRID_SIDECAR_MAGIC {
        return Err(Error::Format("grid sidecar: bad magic or truncated header".into()));
    }
    let word = |k: usize| u32::from_le_bytes(bytes[k..k + 4].try_into().unwrap()) as usize;
    if word(4) != SEQUENCE_FORMAT_VERSION as usize {
        return Err(Error::Format(format!("grid sidecar: unsupported version {}", word(4))));
    }
    let (count, res) = (word(8), word(12));
    let stride = res.pow(3).div_ceil(8);
    if bytes.len() != 16 + count * stride {
        return Err(Error::Format(format!(
            "grid sidecar: expected {} bytes for {count} grids, got {}",
            16 + count * stride,
            bytes.len()
        )));
    }
    bytes[16..]
        .chunks_exact(stride.max(1))
        .take(count)
        .map(|c| OccupancyGrid::from_packed(res, c))
        .collect()
}

/// Writes `<dir>/<id>.json` and its grid sidecar; returns the manifest path.
pub fn write_sequence(seq: &SceneSequence, dir: &Path) -> Result<PathBuf> {
    let grid_file = format!("{}.grids.bin", seq.id);
    let manifest = SequenceManifest {
        format_version: SEQUENCE_FORMAT_VERSION,
        sequence_id: seq.id.clone(),
        grid_file: grid_file.clone(),
        config: seq.config.clone(),
        frames: seq.frames.clone(),
    };
    let grids: Vec<&OccupancyGrid> = seq.config.objects.iter().map(|o| &o.grid).collect();
    std::fs::write(dir.join(&grid_file), sidecar_bytes(&grids))?;
    let path = dir.join(format!("{}.json", seq.id));
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(path)
}

pub fn read_sequence(path: &Path) -> Result<SceneSequence> {
    let m: SequenceManifest = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    if m.format_version != SEQUENCE_FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported sequence format version {}", m.format_version)));
    }
    let dir = path.parent().unwrap_or(Path::new("."));
    let grids = parse_sidecar(&std::fs::read(dir.join(&m.grid_file))?)?;
    if grids.len() != m.config.objects.len() {
        return Err(Error::Format(format!(
            "sequence {} lists {} objects but the sidecar holds {} grids",
            m.sequence_id,
            m.config.objects.len(),
            grids.len()
        )));
    }
    let mut config = m.config;
    for (o, g) in config.objects.iter_mut().zip(grids) {
        o.grid = g;
    }
    if m.frames.iter().any(|f| f.objects.len() != config.objects.len()) {
        return Err(Error::Format("frame object count differs from the scene".into()));
    }
    config.validate()?;
    Ok(SceneSequence {
        id: m.sequence_id,
        config,
        frames: m.frames,
    })
}
