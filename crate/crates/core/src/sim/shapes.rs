//! Procedural furniture shapes in normalized object space.
//!
//! Every instance draws its own proportions, so two objects of one class
//! generally have different grids. The longest side of an object spans the
//! unit cube; its metric scale is that side's length.

use rand::Rng;

use crate::association::ObjectClass;
use crate::geometry::{OccupancyGrid, Vec3, GRID_RES};

/// Axis-aligned part in normalized coordinates.
#[derive(Debug, Clone, Copy)]
struct Part {
    lo: Vec3,
    hi: Vec3,
}

impl Part {
    fn new(lo: [f64; 3], hi: [f64; 3]) -> Self {
        Part {
            lo: Vec3::from(lo),
            hi: Vec3::from(hi),
        }
    }

    fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|k| p[k] >= self.lo[k] && p[k] <= self.hi[k])
    }
}

/// Metric dimensions (x width, y depth, z height) and parts in a local box
/// `[0, w] x [0, d] x [0, h]`.
struct Design {
    dims: Vec3,
    parts: Vec<Part>,
}

fn legs(w: f64, d: f64, h: f64, t: f64) -> Vec<Part> {
    [(0.0, 0.0), (w - t, 0.0), (0.0, d - t), (w - t, d - t)]
        .iter()
        .map(|&(x, y)| Part::new([x, y, 0.0], [x + t, y + t, h]))
        .collect()
}

fn design(class: ObjectClass, rng: &mut impl Rng) -> Design {
    let mut u = |a: f64, b: f64| rng.random_range(a..=b);
    match class {
        ObjectClass::Chair => {
            let (w, d, h) = (u(0.42, 0.6), u(0.42, 0.6), u(0.8, 1.05));
            let seat = u(0.4, 0.5);
            let slab = u(0.04, 0.08);
            let leg = u(0.03, 0.06);
            let back = u(0.03, 0.08);
            let mut parts = legs(w, d, seat - slab, leg);
            parts.push(Part::new([0.0, 0.0, seat - slab], [w, d, seat]));
            parts.push(Part::new([0.0, d - back, seat], [w, d, h]));
            if u(0.0, 1.0) < 0.4 {
                let arm = u(0.18, 0.26);
                parts.push(Part::new([0.0, 0.0, seat + arm - 0.04], [0.05, d, seat + arm]));
                parts.push(Part::new([w - 0.05, 0.0, seat + arm - 0.04], [w, d, seat + arm]));
            }
            Design {
                dims: Vec3::new(w, d, h),
                parts,
            }
        }
        ObjectClass::Table => {
            let (w, d, h) = (u(0.8, 1.6), u(0.6, 0.9), u(0.7, 0.78));
            let top = u(0.03, 0.06);
            let mut parts = legs(w, d, h - top, u(0.04, 0.08));
            parts.push(Part::new([0.0, 0.0, h - top], [w, d, h]));
            Design {
                dims: Vec3::new(w, d, h),
                parts,
            }
        }
        ObjectClass::Sofa => {
            let (w, d, h) = (u(1.4, 2.2), u(0.8, 1.0), u(0.75, 0.95));
            let seat = u(0.38, 0.48);
            let arm_w = u(0.12, 0.25);
            let arm_h = u(0.55, 0.7);
            let back = u(0.15, 0.3);
            Design {
                dims: Vec3::new(w, d, h),
                parts: vec![
                    Part::new([0.0, 0.0, 0.0], [w, d, seat]),
                    Part::new([0.0, d - back, 0.0], [w, d, h]),
                    Part::new([0.0, 0.0, 0.0], [arm_w, d, arm_h]),
                    Part::new([w - arm_w, 0.0, 0.0], [w, d, arm_h]),
                ],
            }
        }
        ObjectClass::Bed => {
            let (w, d, h) = (u(1.0, 1.8), u(1.9, 2.2), u(0.8, 1.1));
            let mattress = u(0.4, 0.6);
            let head = u(0.06, 0.12);
            let mut parts = vec![
                Part::new([0.0, 0.0, 0.1], [w, d, mattress]),
                Part::new([0.0, d - head, 0.0], [w, d, h]),
            ];
            parts.extend(legs(w, d, 0.1, 0.08));
            Design {
                dims: Vec3::new(w, d, h),
                parts,
            }
        }
        ObjectClass::TvStand => {
            let (w, d, h) = (u(1.0, 1.8), u(0.35, 0.5), u(0.4, 0.6));
            let wall = u(0.03, 0.05);
            let shelf = u(0.35, 0.65) * h;
            Design {
                dims: Vec3::new(w, d, h),
                parts: vec![
                    Part::new([0.0, 0.0, 0.0], [w, d, wall]),
                    Part::new([0.0, 0.0, h - wall], [w, d, h]),
                    Part::new([0.0, 0.0, 0.0], [wall, d, h]),
                    Part::new([w - wall, 0.0, 0.0], [w, d, h]),
                    Part::new([0.0, d - wall, 0.0], [w, d, h]),
                    Part::new([0.0, 0.0, shelf - wall / 2.0], [w, d, shelf + wall / 2.0]),
                ],
            }
        }
        ObjectClass::Cooler => {
            let (w, d, h) = (u(0.5, 0.8), u(0.55, 0.75), u(0.8, 1.9));
            let handle_z = u(0.5, 0.8) * h;
            Design {
                dims: Vec3::new(w, d, h),
                parts: vec![
                    Part::new([0.0, 0.04, 0.0], [w, d, h]),
                    Part::new([w * 0.8, 0.0, handle_z - 0.2], [w * 0.8 + 0.04, 0.04, handle_z]),
                ],
            }
        }
        ObjectClass::Nightstand => {
            let (w, d, h) = (u(0.4, 0.6), u(0.35, 0.5), u(0.45, 0.65));
            let gap = u(0.15, 0.25) * h;
            let wall = 0.04;
            let mut parts = legs(w, d, 0.08, 0.04);
            parts.extend([
                Part::new([0.0, 0.0, 0.08], [w, d, h - gap - wall]),
                Part::new([0.0, 0.0, h - wall], [w, d, h]),
                Part::new([0.0, 0.0, 0.08], [wall, d, h]),
                Part::new([w - wall, 0.0, 0.08], [w, d, h]),
                Part::new([0.0, d - wall, 0.08], [w, d, h]),
            ]);
            Design {
                dims: Vec3::new(w, d, h),
                parts,
            }
        }
    }
}

/// A sampled object shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Shape {
    pub grid: OccupancyGrid,
    /// Length of the longest side, meters.
    pub scale: f64,
    /// Metric half extents of the occupied region.
    pub half_extents: Vec3,
}

pub fn sample_shape(class: ObjectClass, rng: &mut impl Rng) -> Shape {
    let Design { dims, parts } = design(class, rng);
    let scale = dims.max();
    // local metric box centered, then normalized by the longest side
    let offset = dims / 2.0;
    let parts: Vec<Part> = parts
        .iter()
        .map(|p| Part {
            lo: (p.lo - offset) / scale,
            hi: (p.hi - offset) / scale,
        })
        .collect();
    let r = GRID_RES as f64;
    let grid = OccupancyGrid::from_fn(|x, y, z| {
        let c = Vec3::new((x as f64 + 0.5) / r - 0.5, (y as f64 + 0.5) / r - 0.5, (z as f64 + 0.5) / r - 0.5);
        parts.iter().any(|p| p.contains(&c))
    });
    let (lo, hi) = grid.occupied_bounds().unwrap_or((Vec3::repeat(-0.5), Vec3::repeat(0.5)));
    Shape {
        grid,
        scale,
        half_extents: (hi - lo) * scale / 2.0,
    }
}
