use nalgebra::{Rotation3, UnitQuaternion};

use crate::geometry::{Pose7, Vec3};

/// Cubic Bezier control points for each segment between consecutive
/// waypoints, with Catmull-Rom tangents (end tangents from duplicated
/// endpoints).
pub fn bezier_controls(points: &[Vec3]) -> Vec<[Vec3; 4]> {
    let n = points.len();
    (0..n.saturating_sub(1))
        .map(|k| {
            let prev = points[k.saturating_sub(1)];
            let next = points[(k + 2).min(n - 1)];
            let (a, b) = (points[k], points[k + 1]);
            [a, a + (b - prev) / 6.0, b - (next - a) / 6.0, b]
        })
        .collect()
}

pub fn bezier_point(c: &[Vec3; 4], t: f64) -> Vec3 {
    let s = 1.0 - t;
    c[0] * (s * s * s) + c[1] * (3.0 * s * s * t) + c[2] * (3.0 * s * t * t) + c[3] * (t * t * t)
}

/// Dense per-frame poses from waypoints placed every `stride` frames.
///
/// Positions follow the Bezier segments, rotations are slerped per segment,
/// and the scale of the first waypoint is kept. A single waypoint gives a
/// constant trajectory.
pub fn smooth_trajectory(waypoints: &[Pose7], stride: usize, frames: usize) -> Vec<Pose7> {
    assert!(!waypoints.is_empty() && stride > 0);
    if waypoints.len() == 1 {
        return vec![waypoints[0]; frames];
    }
    let positions: Vec<Vec3> = waypoints.iter().map(|p| p.translation).collect();
    let controls = bezier_controls(&positions);
    let quats: Vec<UnitQuaternion<f64>> = waypoints
        .iter()
        .map(|p| UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(p.rotation)))
        .collect();
    (0..frames)
        .map(|f| {
            let seg = (f / stride).min(controls.len() - 1);
            let t = (f - seg * stride) as f64 / stride as f64;
            if t == 0.0 {
                return waypoints[seg];
            }
            if t >= 1.0 {
                return waypoints[seg + 1];
            }
            let q = quats[seg].slerp(&quats[seg + 1], t);
            Pose7 {
                scale: waypoints[0].scale,
                rotation: *q.to_rotation_matrix().matrix(),
                translation: bezier_point(&controls[seg], t),
            }
        })
        .collect()
}
