use nalgebra::Vector2;

use super::{Box2, Box3, OccupancyGrid};
use crate::error::{Error, Result};

type P2 = Vector2<f64>;

fn cross(o: &P2, a: &P2, b: &P2) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

fn polygon_area(poly: &[P2]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
        s += a.x * b.y - a.y * b.x;
    }
    0.5 * s.abs()
}

/// Sutherland-Hodgman clip of `subject` by the convex CCW polygon `clip`.
fn clip_convex(subject: &[P2], clip: &[P2]) -> Vec<P2> {
    let mut out = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let cur_in = cross(&a, &b, &cur) >= 0.0;
            let prev_in = cross(&a, &b, &prev) >= 0.0;
            if cur_in {
                if !prev_in {
                    out.push(line_hit(&prev, &cur, &a, &b));
                }
                out.push(cur);
            } else if prev_in {
                out.push(line_hit(&prev, &cur, &a, &b));
            }
        }
    }
    out
}

fn line_hit(p: &P2, q: &P2, a: &P2, b: &P2) -> P2 {
    let d1 = cross(a, b, p);
    let d2 = cross(a, b, q);
    let t = d1 / (d1 - d2);
    p + (q - p) * t
}

fn z_overlap(a: &Box3, b: &Box3) -> f64 {
    let lo = (a.center[2] - a.half_extents[2]).max(b.center[2] - b.half_extents[2]);
    let hi = (a.center[2] + a.half_extents[2]).min(b.center[2] + b.half_extents[2]);
    (hi - lo).max(0.0)
}

/// Volumetric IoU of two yaw boxes: footprint polygon intersection times
/// height-interval overlap.
pub fn iou3d_boxes(a: &Box3, b: &Box3) -> f64 {
    let (va, vb) = (a.volume(), b.volume());
    if !(va > 0.0 && vb > 0.0) {
        return 0.0;
    }
    let h = z_overlap(a, b);
    if h <= 0.0 {
        return 0.0;
    }
    let area = polygon_area(&clip_convex(&a.footprint(), &b.footprint()));
    let inter = area * h;
    let union = va + vb - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Separating-axis overlap test for yaw boxes. Touching faces do not count.
pub fn boxes_collide(a: &Box3, b: &Box3) -> bool {
    if z_overlap(a, b) <= 0.0 {
        return false;
    }
    let (fa, fb) = (a.footprint(), b.footprint());
    let axes = [fa[1] - fa[0], fa[3] - fa[0], fb[1] - fb[0], fb[3] - fb[0]];
    for axis in axes {
        let n = P2::new(-axis.y, axis.x);
        let proj = |poly: &[P2; 4]| {
            poly.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                let d = n.dot(p);
                (lo.min(d), hi.max(d))
            })
        };
        let (a0, a1) = proj(&fa);
        let (b0, b1) = proj(&fb);
        if a1 <= b0 || b1 <= a0 {
            return false;
        }
    }
    true
}

pub fn iou2d(a: &Box2, b: &Box2) -> f64 {
    let w = (a.max[0].min(b.max[0]) - a.min[0].max(b.min[0])).max(0.0);
    let h = (a.max[1].min(b.max[1]) - a.min[1].max(b.min[1])).max(0.0);
    let inter = w * h;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// `|a ∧ b| / |a ∨ b|`; two empty grids score 1.
pub fn iou3d_grids(a: &OccupancyGrid, b: &OccupancyGrid) -> Result<f64> {
    if a.resolution() != b.resolution() {
        return Err(Error::ResolutionMismatch(a.resolution(), b.resolution()));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (x, y) in a.cells().iter().zip(b.cells()) {
        inter += (*x && *y) as usize;
        union += (*x || *y) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}
