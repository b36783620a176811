//! Poses, point clouds, occupancy grids, boxes and the pinhole camera.
//!
//! World frame is z-up. Camera frame follows the usual pinhole convention:
//! x right, y down, z forward. Euler angles are intrinsic XYZ, i.e.
//! `R = Rx(alpha) * Ry(beta) * Rz(gamma)`.

mod grid;
mod iou;

pub use grid::{OccupancyGrid, GRID_CELLS, GRID_RES};
pub use iou::{boxes_collide, iou2d, iou3d_boxes, iou3d_grids};

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(x: f64) -> f64 {
    let mut w = (x + PI).rem_euclid(TAU) - PI;
    if w <= -PI {
        w += TAU;
    }
    w
}

/// Rotation from intrinsic XYZ Euler angles.
pub fn rotation_from_euler(e: &Vec3) -> Mat3 {
    let rx = Rotation3::from_axis_angle(&Vector3::x_axis(), e.x);
    let ry = Rotation3::from_axis_angle(&Vector3::y_axis(), e.y);
    let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), e.z);
    (rx * ry * rz).into_inner()
}

/// Inverse of [`rotation_from_euler`]. Each component lies in `(-pi, pi]`.
pub fn euler_from_rotation(r: &Mat3) -> Vec3 {
    let sb = r[(0, 2)].clamp(-1.0, 1.0);
    let beta = sb.asin();
    let (alpha, gamma) = if sb.abs() < 1.0 - 1e-12 {
        (
            (-r[(1, 2)]).atan2(r[(2, 2)]),
            (-r[(0, 1)]).atan2(r[(0, 0)]),
        )
    } else {
        // gimbal lock: only alpha +/- gamma is observable, put it all in alpha
        (r[(2, 1)].atan2(r[(1, 1)]), 0.0)
    };
    Vec3::new(wrap_angle(alpha), wrap_angle(beta), wrap_angle(gamma))
}

/// Heading of the rotated x axis in the ground plane.
pub fn yaw_of(r: &Mat3) -> f64 {
    r[(1, 0)].atan2(r[(0, 0)])
}

/// 7-DoF similarity transform `x -> scale * rotation * x + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseRepr", into = "PoseRepr")]
pub struct Pose7 {
    pub scale: f64,
    pub rotation: Mat3,
    pub translation: Vec3,
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    scale: f64,
    /// row-major
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl From<Pose7> for PoseRepr {
    fn from(p: Pose7) -> Self {
        let r = &p.rotation;
        PoseRepr {
            scale: p.scale,
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            translation: p.translation.into(),
        }
    }
}

impl TryFrom<PoseRepr> for Pose7 {
    type Error = Error;

    fn try_from(r: PoseRepr) -> Result<Self> {
        let rot = Mat3::from_fn(|i, j| r.rotation[i][j]);
        Pose7::new(r.scale, rot, Vec3::from(r.translation))
    }
}

/// Tolerance used when validating rotations read from files or callers.
const ROTATION_TOL: f64 = 1e-6;

pub(crate) fn is_rotation(r: &Mat3, tol: f64) -> bool {
    let err = (r.transpose() * r - Mat3::identity()).abs().max();
    err < tol && (r.determinant() - 1.0).abs() < tol
}

impl Pose7 {
    pub fn new(scale: f64, rotation: Mat3, translation: Vec3) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidInput(format!("pose scale must be positive, got {scale}")));
        }
        if !is_rotation(&rotation, ROTATION_TOL) {
            return Err(Error::InvalidInput("pose rotation is not in SO(3)".into()));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("pose translation is not finite".into()));
        }
        Ok(Pose7 {
            scale,
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Pose7 {
            scale: 1.0,
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn rigid(rotation: Mat3, translation: Vec3) -> Self {
        Pose7 {
            scale: 1.0,
            rotation,
            translation,
        }
    }

    pub fn apply(&self, x: &Vec3) -> Vec3 {
        self.scale * (self.rotation * x) + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose7) -> Pose7 {
        Pose7 {
            scale: self.scale * other.scale,
            rotation: self.rotation * other.rotation,
            translation: self.scale * (self.rotation * other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose7 {
        let rt = self.rotation.transpose();
        let s = 1.0 / self.scale;
        Pose7 {
            scale: s,
            rotation: rt,
            translation: -s * (rt * self.translation),
        }
    }

    pub fn to_euler(&self, time_step: i64) -> EulerPose {
        EulerPose {
            scale: self.scale,
            euler: euler_from_rotation(&self.rotation),
            translation: self.translation,
            time_step,
        }
    }
}

pub fn apply_pose(p: &Pose7, cloud: &PointCloud) -> PointCloud {
    PointCloud {
        points: cloud.points.iter().map(|x| p.apply(x)).collect(),
    }
}

/// Pose in the Euler parameterization used for edge features.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerPose {
    pub scale: f64,
    pub euler: Vec3,
    pub translation: Vec3,
    pub time_step: i64,
}

impl EulerPose {
    pub fn to_pose(&self) -> Pose7 {
        Pose7 {
            scale: self.scale,
            rotation: rotation_from_euler(&self.euler),
            translation: self.translation,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::InvalidInput("point cloud has non-finite coordinates".into()));
        }
        Ok(PointCloud { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box2 {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Box2 {
    pub fn new(min: [f64; 2], max: [f64; 2]) -> Result<Self> {
        if min[0] > max[0] || min[1] > max[1] {
            return Err(Error::InvalidInput(format!("box min {min:?} exceeds max {max:?}")));
        }
        Ok(Box2 { min, max })
    }

    /// Tight box around a set of pixel positions. `None` for an empty set.
    pub fn bounding(pixels: impl IntoIterator<Item = Vector2<f64>>) -> Option<Self> {
        let mut it = pixels.into_iter();
        let first = it.next()?;
        let (mut lo, mut hi) = (first, first);
        for p in it {
            lo = lo.inf(&p);
            hi = hi.sup(&p);
        }
        Some(Box2 {
            min: [lo.x, lo.y],
            max: [hi.x, hi.y],
        })
    }

    pub fn area(&self) -> f64 {
        (self.max[0] - self.min[0]).max(0.0) * (self.max[1] - self.min[1]).max(0.0)
    }

    pub fn clip(&self, width: f64, height: f64) -> Box2 {
        Box2 {
            min: [self.min[0].clamp(0.0, width), self.min[1].clamp(0.0, height)],
            max: [self.max[0].clamp(0.0, width), self.max[1].clamp(0.0, height)],
        }
    }
}

/// Gravity-aligned box with a heading about the world z axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3 {
    pub center: [f64; 3],
    pub half_extents: [f64; 3],
    pub yaw: f64,
}

impl Box3 {
    pub fn new(center: Vec3, half_extents: Vec3, yaw: f64) -> Result<Self> {
        if !half_extents.iter().all(|h| *h > 0.0) {
            return Err(Error::InvalidInput(format!(
                "box half extents must be positive, got {half_extents:?}"
            )));
        }
        Ok(Box3 {
            center: center.into(),
            half_extents: half_extents.into(),
            yaw,
        })
    }

    pub fn center(&self) -> Vec3 {
        Vec3::from(self.center)
    }

    pub fn volume(&self) -> f64 {
        8.0 * self.half_extents.iter().product::<f64>()
    }

    /// Ground-plane footprint, counter-clockwise.
    pub fn footprint(&self) -> [Vector2<f64>; 4] {
        let (s, c) = self.yaw.sin_cos();
        let [hx, hy, _] = self.half_extents;
        let ctr = Vector2::new(self.center[0], self.center[1]);
        [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)].map(|(a, b)| {
            let lx = a * hx;
            let ly = b * hy;
            ctr + Vector2::new(c * lx - s * ly, s * lx + c * ly)
        })
    }

    pub fn corners(&self) -> [Vec3; 8] {
        let fp = self.footprint();
        let z0 = self.center[2] - self.half_extents[2];
        let z1 = self.center[2] + self.half_extents[2];
        let mut out = [Vec3::zeros(); 8];
        for (i, p) in fp.iter().enumerate() {
            out[i] = Vec3::new(p.x, p.y, z0);
            out[i + 4] = Vec3::new(p.x, p.y, z1);
        }
        out
    }

    /// Box of an object whose normalized-space occupancy spans
    /// `[noc_min, noc_max]`, placed by `pose`.
    pub fn from_pose_and_extent(pose: &Pose7, noc_min: Vec3, noc_max: Vec3) -> Box3 {
        let mid = 0.5 * (noc_min + noc_max);
        let half = 0.5 * pose.scale * (noc_max - noc_min);
        let center = pose.apply(&mid);
        Box3 {
            center: center.into(),
            half_extents: half.map(|h| h.max(1e-6)).into(),
            yaw: wrap_angle(yaw_of(&pose.rotation)),
        }
    }
}

/// Rigid camera-to-world transform plus pinhole intrinsics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    /// camera -> world, scale fixed at 1
    pub extrinsic: Pose7,
}

/// Distance range treated as inside the viewing frustum.
pub const NEAR_PLANE: f64 = 0.1;
pub const FAR_PLANE: f64 = 20.0;

impl CameraModel {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32, extrinsic: Pose7) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::InvalidInput("focal lengths must be positive".into()));
        }
        if (extrinsic.scale - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput("camera extrinsic must be rigid".into()));
        }
        Ok(CameraModel {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            extrinsic,
        })
    }

    pub fn backproject_pixel(&self, u: f64, v: f64, depth: f64) -> Vec3 {
        Vec3::new((u - self.cx) * depth / self.fx, (v - self.cy) * depth / self.fy, depth)
    }

    /// Camera-frame point to `(u, v, depth)`.
    pub fn project(&self, p: &Vec3) -> (f64, f64, f64) {
        (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy, p.z)
    }

    pub fn world_to_camera(&self, p: &Vec3) -> Vec3 {
        self.extrinsic.rotation.transpose() * (p - self.extrinsic.translation)
    }

    pub fn camera_to_world(&self, p: &Vec3) -> Vec3 {
        self.extrinsic.apply(p)
    }

    pub fn in_frustum(&self, world: &Vec3) -> bool {
        let p = self.world_to_camera(world);
        if !(NEAR_PLANE..=FAR_PLANE).contains(&p.z) {
            return false;
        }
        let (u, v, _) = self.project(&p);
        (0.0..=self.width as f64).contains(&u) && (0.0..=self.height as f64).contains(&v)
    }

    /// Lifts a camera-frame pose into the world frame.
    pub fn pose_to_world(&self, cam_pose: &Pose7) -> Pose7 {
        self.extrinsic.compose(cam_pose)
    }
}

/// Row-major depth patch cut from a depth image at `(u0, v0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthPatch {
    pub u0: u32,
    pub v0: u32,
    pub width: usize,
    pub height: usize,
    pub depths: Vec<f64>,
}

/// One camera-frame point per pixel of the patch, in row-major order.
pub fn backproject(patch: &DepthPatch, cam: &CameraModel) -> Result<PointCloud> {
    if patch.depths.len() != patch.width * patch.height {
        return Err(Error::InvalidInput(format!(
            "depth patch holds {} values for {}x{} pixels",
            patch.depths.len(),
            patch.width,
            patch.height
        )));
    }
    let mut points = Vec::with_capacity(patch.depths.len());
    for row in 0..patch.height {
        for col in 0..patch.width {
            let d = patch.depths[row * patch.width + col];
            if !d.is_finite() || d <= 0.0 {
                return Err(Error::InvalidInput(format!(
                    "depth at patch pixel ({col}, {row}) is {d}"
                )));
            }
            let u = (patch.u0 as usize + col) as f64;
            let v = (patch.v0 as usize + row) as f64;
            points.push(cam.backproject_pixel(u, v, d));
        }
    }
    Ok(PointCloud { points })
}
