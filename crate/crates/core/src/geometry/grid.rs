use serde::{Deserialize, Serialize};

use super::Vec3;
use crate::error::{Error, Result};

pub const GRID_RES: usize = 32;
pub const GRID_CELLS: usize = GRID_RES * GRID_RES * GRID_RES;

/// Boolean voxel grid over the normalized object cube `[-0.5, 0.5]^3`.
///
/// Cell `(x, y, z)` lives at flat index `(x * res + y) * res + z`; its center
/// has normalized coordinate `(i + 0.5) / res - 0.5` along each axis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GridRepr", into = "GridRepr")]
pub struct OccupancyGrid {
    resolution: usize,
    cells: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
struct GridRepr {
    resolution: usize,
    /// base64 of the bit-packed cells, LSB first
    bits: String,
}

impl From<OccupancyGrid> for GridRepr {
    fn from(g: OccupancyGrid) -> Self {
        use base64::Engine;
        GridRepr {
            resolution: g.resolution,
            bits: base64::engine::general_purpose::STANDARD.encode(g.to_packed()),
        }
    }
}

impl TryFrom<GridRepr> for OccupancyGrid {
    type Error = Error;

    fn try_from(r: GridRepr) -> Result<Self> {
        use base64::Engine;
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(r.bits.as_bytes())
            .map_err(|e| Error::Format(format!("grid bits: {e}")))?;
        OccupancyGrid::from_packed(r.resolution, &bytes)
    }
}

impl Default for OccupancyGrid {
    fn default() -> Self {
        Self::empty()
    }
}

impl OccupancyGrid {
    pub fn empty() -> Self {
        Self::with_resolution(GRID_RES)
    }

    pub fn with_resolution(resolution: usize) -> Self {
        OccupancyGrid {
            resolution,
            cells: vec![false; resolution.pow(3)],
        }
    }

    pub fn from_cells(resolution: usize, cells: Vec<bool>) -> Result<Self> {
        if cells.len() != resolution.pow(3) {
            return Err(Error::InvalidInput(format!(
                "grid of resolution {resolution} needs {} cells, got {}",
                resolution.pow(3),
                cells.len()
            )));
        }
        Ok(OccupancyGrid { resolution, cells })
    }

    pub fn from_fn(mut f: impl FnMut(usize, usize, usize) -> bool) -> Self {
        let mut g = Self::empty();
        for x in 0..GRID_RES {
            for y in 0..GRID_RES {
                for z in 0..GRID_RES {
                    if f(x, y, z) {
                        g.set(x, y, z, true);
                    }
                }
            }
        }
        g
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (x * self.resolution + y) * self.resolution + z
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.cells[self.index(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, v: bool) {
        let i = self.index(x, y, z);
        self.cells[i] = v;
    }

    pub fn flip(&mut self, i: usize) {
        self.cells[i] = !self.cells[i];
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|c| **c).count()
    }

    pub fn coords(&self, i: usize) -> (usize, usize, usize) {
        let r = self.resolution;
        (i / (r * r), (i / r) % r, i % r)
    }

    /// Normalized coordinate of a cell center.
    pub fn noc_center(&self, i: usize) -> Vec3 {
        let (x, y, z) = self.coords(i);
        let r = self.resolution as f64;
        Vec3::new(
            (x as f64 + 0.5) / r - 0.5,
            (y as f64 + 0.5) / r - 0.5,
            (z as f64 + 0.5) / r - 0.5,
        )
    }

    /// Normalized extent of the occupied cells (cell faces, not centers).
    pub fn occupied_bounds(&self) -> Option<(Vec3, Vec3)> {
        let r = self.resolution as f64;
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        let mut any = false;
        for (i, _) in self.cells.iter().enumerate().filter(|(_, c)| **c) {
            let (x, y, z) = self.coords(i);
            for (k, v) in [x, y, z].into_iter().enumerate() {
                lo[k] = lo[k].min(v);
                hi[k] = hi[k].max(v);
            }
            any = true;
        }
        any.then(|| {
            (
                Vec3::new(lo[0] as f64 / r - 0.5, lo[1] as f64 / r - 0.5, lo[2] as f64 / r - 0.5),
                Vec3::new(
                    (hi[0] + 1) as f64 / r - 0.5,
                    (hi[1] + 1) as f64 / r - 0.5,
                    (hi[2] + 1) as f64 / r - 0.5,
                ),
            )
        })
    }

    /// Occupied cells with at least one free (or out-of-grid) 6-neighbor.
    pub fn surface_cells(&self) -> Vec<usize> {
        let r = self.resolution as isize;
        let occupied = |x: isize, y: isize, z: isize| {
            x >= 0 && y >= 0 && z >= 0 && x < r && y < r && z < r && self.get(x as usize, y as usize, z as usize)
        };
        let mut out = Vec::new();
        for (i, _) in self.cells.iter().enumerate().filter(|(_, c)| **c) {
            let (x, y, z) = self.coords(i);
            let (x, y, z) = (x as isize, y as isize, z as isize);
            let nbrs = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)];
            if nbrs.iter().any(|(dx, dy, dz)| !occupied(x + dx, y + dy, z + dz)) {
                out.push(i);
            }
        }
        out
    }

    /// Free cells that touch an occupied cell.
    pub fn shell_cells(&self) -> Vec<usize> {
        let r = self.resolution as isize;
        let mut out = Vec::new();
        for (i, _) in self.cells.iter().enumerate().filter(|(_, c)| !**c) {
            let (x, y, z) = self.coords(i);
            let (x, y, z) = (x as isize, y as isize, z as isize);
            let touching = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]
                .iter()
                .any(|(dx, dy, dz)| {
                    let (a, b, c) = (x + dx, y + dy, z + dz);
                    a >= 0 && b >= 0 && c >= 0 && a < r && b < r && c < r && self.get(a as usize, b as usize, c as usize)
                });
            if touching {
                out.push(i);
            }
        }
        out
    }

    /// Cells as a `{0, 1}` volume.
    pub fn to_f64(&self) -> Vec<f64> {
        self.cells.iter().map(|&c| if c { 1.0 } else { 0.0 }).collect()
    }

    pub fn to_packed(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.cells.len().div_ceil(8)];
        for (i, _) in self.cells.iter().enumerate().filter(|(_, c)| **c) {
            out[i / 8] |= 1 << (i % 8);
        }
        out
    }

    pub fn from_packed(resolution: usize, bytes: &[u8]) -> Result<Self> {
        let n = resolution.pow(3);
        if bytes.len() != n.div_ceil(8) {
            return Err(Error::Format(format!(
                "packed grid of resolution {resolution} needs {} bytes, got {}",
                n.div_ceil(8),
                bytes.len()
            )));
        }
        let cells = (0..n).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect();
        Ok(OccupancyGrid { resolution, cells })
    }

    /// Rotation by 180 degrees about the normalized up (z) axis.
    pub fn rotated_half_turn(&self) -> OccupancyGrid {
        let r = self.resolution;
        let mut out = OccupancyGrid::with_resolution(r);
        for (i, _) in self.cells.iter().enumerate().filter(|(_, c)| **c) {
            let (x, y, z) = self.coords(i);
            out.set(r - 1 - x, r - 1 - y, z, true);
        }
        out
    }
}
