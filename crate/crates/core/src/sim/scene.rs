use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::shapes::sample_shape;
use super::smooth::smooth_trajectory;
use super::derive_seed;
use crate::association::ObjectClass;
use crate::error::{Error, Result};
use crate::geometry::{boxes_collide, rotation_from_euler, Box3, CameraModel, OccupancyGrid, Pose7, Vec3};

/// Visibility at or above which an object counts as present in a frame.
pub const MIN_VISIBILITY: f64 = 0.5;

/// Displacement above which an object counts as moving, meters.
pub const MOVING_EPS: f64 = 0.01;

/// Attempts at regenerating a sequence whose smoothed trajectories or camera
/// path turned out inadmissible.
const MAX_ATTEMPTS: u64 = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for Intrinsics {
    fn default() -> Self {
        Intrinsics {
            fx: 400.0,
            fy: 400.0,
            width: 640,
            height: 480,
        }
    }
}

impl Intrinsics {
    pub fn camera(&self, extrinsic: Pose7) -> Result<CameraModel> {
        CameraModel::new(
            self.fx,
            self.fy,
            self.width as f64 / 2.0,
            self.height as f64 / 2.0,
            self.width,
            self.height,
            extrinsic,
        )
    }
}

/// Per-sequence motion and sampling parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionParams {
    pub frames: usize,
    /// Object position step bound per axis, meters.
    pub object_step: f64,
    /// Object rotation step bound per angle, radians.
    pub object_angle: f64,
    /// Base camera position step bound, meters; grows with the frame index.
    pub camera_step: f64,
    pub camera_angle: f64,
    /// Obstacle distance below which steps are pushed away, meters.
    pub repulsion_distance: f64,
    pub repulsion_gain: f64,
    pub max_tries: usize,
    pub interest_threshold: f64,
    /// Interest weight per class, in `ObjectClass::ALL` order.
    pub class_weights: [f64; 7],
    pub moving_weight: f64,
    /// Frames between object waypoints; frames in between are smoothed.
    pub waypoint_stride: usize,
    /// Objects stay on the floor and only turn about the vertical axis.
    pub planar_objects: bool,
    /// Camera poses must keep every object at least half visible.
    pub require_all_visible: bool,
    pub intrinsics: Intrinsics,
}

impl Default for MotionParams {
    fn default() -> Self {
        MotionParams {
            frames: 25,
            object_step: 0.15,
            object_angle: 0.1,
            camera_step: 0.1,
            camera_angle: 0.1,
            repulsion_distance: 0.6,
            repulsion_gain: 1.0,
            max_tries: 500,
            interest_threshold: 1.0,
            class_weights: [1.0; 7],
            moving_weight: 2.0,
            waypoint_stride: 2,
            planar_objects: true,
            require_all_visible: true,
            intrinsics: Intrinsics::default(),
        }
    }
}

impl MotionParams {
    pub fn validate(&self) -> Result<()> {
        if self.frames < 2 {
            return Err(Error::Config("frames must be at least 2".into()));
        }
        let nonneg = [
            ("object_step", self.object_step),
            ("object_angle", self.object_angle),
            ("camera_step", self.camera_step),
            ("camera_angle", self.camera_angle),
            ("interest_threshold", self.interest_threshold),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        let pos = [
            ("repulsion_distance", self.repulsion_distance),
            ("repulsion_gain", self.repulsion_gain),
            ("moving_weight", self.moving_weight),
            ("fx", self.intrinsics.fx),
            ("fy", self.intrinsics.fy),
        ];
        for (name, v) in pos {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.class_weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::Config("class weights must be positive".into()));
        }
        if self.max_tries < 1 || self.waypoint_stride < 1 {
            return Err(Error::Config("max_tries and waypoint_stride must be at least 1".into()));
        }
        if self.intrinsics.width == 0 || self.intrinsics.height == 0 {
            return Err(Error::Config("image size must be positive".into()));
        }
        Ok(())
    }

    fn class_weight(&self, class: ObjectClass) -> f64 {
        let k = ObjectClass::ALL.iter().position(|c| *c == class).expect("known class");
        self.class_weights[k]
    }
}

/// Ranges from which individual scenes are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayoutParams {
    pub min_objects: usize,
    pub max_objects: usize,
    pub room_size_min: [f64; 3],
    pub room_size_max: [f64; 3],
    pub max_obstacles: usize,
    /// Relative class frequencies, in `ObjectClass::ALL` order.
    pub class_frequencies: [f64; 7],
}

impl Default for LayoutParams {
    fn default() -> Self {
        LayoutParams {
            min_objects: 3,
            max_objects: 5,
            room_size_min: [4.0, 4.0, 2.8],
            room_size_max: [6.0, 6.0, 3.2],
            max_obstacles: 2,
            class_frequencies: [4.0, 1.5, 1.0, 0.6, 1.0, 1.0, 1.5],
        }
    }
}

impl LayoutParams {
    pub fn validate(&self) -> Result<()> {
        if self.min_objects < 3 {
            return Err(Error::Config(format!(
                "at least 3 objects per scene are required, got min_objects = {}",
                self.min_objects
            )));
        }
        if self.max_objects < self.min_objects {
            return Err(Error::Config("max_objects must be at least min_objects".into()));
        }
        for k in 0..3 {
            if !(self.room_size_min[k] > 0.0 && self.room_size_max[k] >= self.room_size_min[k]) {
                return Err(Error::Config("room size ranges must be positive and ordered".into()));
            }
        }
        if self.class_frequencies.iter().any(|f| !(*f >= 0.0)) || self.class_frequencies.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("class frequencies must be non-negative and not all zero".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneParams {
    pub motion: MotionParams,
    pub layout: LayoutParams,
}

impl SceneParams {
    pub fn validate(&self) -> Result<()> {
        self.motion.validate()?;
        self.layout.validate()
    }
}

/// Axis-aligned room with static obstacles; the floor is at `min.z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Room {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub obstacles: Vec<Box3>,
}

impl Room {
    fn contains_box(&self, b: &Box3) -> bool {
        b.corners()
            .iter()
            .all(|c| (0..3).all(|k| c[k] >= self.min[k] - 1e-9 && c[k] <= self.max[k] + 1e-9))
    }

    fn contains_point(&self, p: &Vec3, margin: f64) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] + margin && p[k] <= self.max[k] - margin)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub class: ObjectClass,
    /// Length of the longest side, meters.
    pub scale: f64,
    /// Canonical occupancy in normalized space; stored outside the manifest.
    #[serde(skip)]
    pub grid: OccupancyGrid,
}

impl ObjectSpec {
    fn extent(&self) -> (Vec3, Vec3) {
        self.grid
            .occupied_bounds()
            .unwrap_or((Vec3::repeat(-0.5), Vec3::repeat(0.5)))
    }

    pub fn box_at(&self, pose: &Pose7) -> Box3 {
        let (lo, hi) = self.extent();
        Box3::from_pose_and_extent(pose, lo, hi)
    }
}

/// A concrete scene: room, objects and motion parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub motion: MotionParams,
    pub room: Room,
    pub objects: Vec<ObjectSpec>,
    pub seed: u64,
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        self.motion.validate()?;
        if self.objects.len() < 3 {
            return Err(Error::Config(format!(
                "a scene needs at least 3 objects, got {}",
                self.objects.len()
            )));
        }
        for k in 0..3 {
            if !(self.room.max[k] > self.room.min[k]) {
                return Err(Error::Config("room bounds must be positive".into()));
            }
        }
        if self.objects.iter().any(|o| !(o.scale > 0.0)) {
            return Err(Error::Config("object scales must be positive".into()));
        }
        Ok(())
    }
}

/// `σ(n, d)`: `½ σ₀ (1/d − 1/d*)²` close to an obstacle while tries remain,
/// else 1.
pub fn repulsion_weight(d: f64, d_star: f64, sigma0: f64, n: usize, n_max: usize) -> Result<f64> {
    if !(d > 0.0) {
        return Err(Error::InvalidInput(format!("obstacle distance must be positive, got {d}")));
    }
    Ok(if d < d_star && n < n_max {
        0.5 * sigma0 * (1.0 / d - 1.0 / d_star).powi(2)
    } else {
        1.0
    })
}

/// Nearest point of a yaw box to `p`.
fn closest_on_box(b: &Box3, p: &Vec3) -> Vec3 {
    let (s, c) = b.yaw.sin_cos();
    let d = p - b.center();
    let local = Vec3::new(c * d.x + s * d.y, -s * d.x + c * d.y, d.z);
    let h = b.half_extents;
    let q = Vec3::new(
        local.x.clamp(-h[0], h[0]),
        local.y.clamp(-h[1], h[1]),
        local.z.clamp(-h[2], h[2]),
    );
    b.center() + Vec3::new(c * q.x - s * q.y, s * q.x + c * q.y, q.z)
}

/// Obstacles seen by one moving object.
pub struct Surroundings<'a> {
    pub room: &'a Room,
    /// Boxes of the other objects.
    pub others: &'a [Box3],
}

impl Surroundings<'_> {
    /// Distance from `p` to the nearest obstacle and the unit direction
    /// pointing away from it.
    pub fn nearest_obstacle(&self, p: &Vec3, planar: bool) -> Option<(f64, Vec3)> {
        let mut best: Option<(f64, Vec3)> = None;
        let mut consider = |d: f64, away: Vec3| {
            if d > 0.0 && best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, away));
            }
        };
        let (lo, hi) = (self.room.min, self.room.max);
        let axes = if planar { 2 } else { 3 };
        for k in 0..axes {
            let mut e = Vec3::zeros();
            e[k] = 1.0;
            consider(p[k] - lo[k], e);
            consider(hi[k] - p[k], -e);
        }
        for b in self.others.iter().chain(&self.room.obstacles) {
            let mut v = p - closest_on_box(b, p);
            if planar {
                v.z = 0.0;
            }
            let d = v.norm();
            if d > 0.0 {
                consider(d, v / d);
            }
        }
        best
    }
}

/// One candidate object step: uniform in the step cube (in the object's
/// frame), with the component along the away-from-obstacle direction made
/// non-negative and scaled by the repulsion weight when an obstacle is
/// closer than the repulsion distance. The step is right-composed onto the
/// rigid part of the pose.
pub fn propose_object_step(
    pose: &Pose7,
    surroundings: &Surroundings,
    params: &MotionParams,
    n: usize,
    rng: &mut impl Rng,
) -> Pose7 {
    let (sg, ph) = (params.object_step, params.object_angle);
    let mut local = Vec3::new(
        uniform(rng, sg),
        uniform(rng, sg),
        if params.planar_objects { 0.0 } else { uniform(rng, sg) },
    );
    let angles = if params.planar_objects {
        Vec3::new(0.0, 0.0, uniform(rng, ph))
    } else {
        Vec3::new(uniform(rng, ph), uniform(rng, ph), uniform(rng, ph))
    };
    let r = pose.rotation;
    if let Some((d, away)) = surroundings.nearest_obstacle(&pose.translation, params.planar_objects) {
        if d < params.repulsion_distance && n < params.max_tries {
            let w = repulsion_weight(d, params.repulsion_distance, params.repulsion_gain, n, params.max_tries)
                .expect("positive distance");
            let world = r * local;
            let along = world.dot(&away);
            let perp = world - along * away;
            let pushed = perp + (w * along.abs()).min(sg) * away;
            local = r.transpose() * pushed;
        }
    }
    Pose7 {
        scale: pose.scale,
        rotation: r * rotation_from_euler(&angles),
        translation: pose.translation + r * local,
    }
}

fn uniform(rng: &mut impl Rng, bound: f64) -> f64 {
    if bound > 0.0 {
        rng.random_range(-bound..=bound)
    } else {
        0.0
    }
}

/// An object box is admissible inside the room, clear of obstacles and of
/// the other objects' boxes.
pub fn object_admissible(b: &Box3, surroundings: &Surroundings) -> bool {
    surroundings.room.contains_box(b)
        && !surroundings
            .others
            .iter()
            .chain(&surroundings.room.obstacles)
            .any(|o| boxes_collide(b, o))
}

/// Samples steps until one is admissible; after `max_tries` failures the
/// pose is held. Returns the new pose and whether a step was accepted.
pub fn sample_object_step(
    pose: &Pose7,
    spec: &ObjectSpec,
    surroundings: &Surroundings,
    params: &MotionParams,
    rng: &mut impl Rng,
) -> (Pose7, bool) {
    for n in 1..=params.max_tries {
        let cand = propose_object_step(pose, surroundings, params, n, rng);
        if object_admissible(&spec.box_at(&cand), surroundings) {
            return (cand, true);
        }
    }
    log::debug!("object step exhausted {} tries; holding pose", params.max_tries);
    (*pose, false)
}

/// Fraction of a box's corners inside the camera frustum.
pub fn visibility(cam: &CameraModel, b: &Box3) -> f64 {
    b.corners().iter().filter(|c| cam.in_frustum(c)).count() as f64 / 8.0
}

/// Weighted sum of object visibilities, moving objects counted
/// `moving_weight` times.
pub fn interest_score(cam: &CameraModel, boxes: &[Box3], weights: &[f64], moving: &[bool], moving_weight: f64) -> f64 {
    boxes
        .iter()
        .zip(weights)
        .zip(moving)
        .map(|((b, w), m)| w * visibility(cam, b) * if *m { moving_weight } else { 1.0 })
        .sum()
}

/// Camera position step bound at frame `i`.
pub fn camera_step_bound(eps0: f64, i: usize) -> f64 {
    eps0 * (1.0 + ((i + 1) as f64).ln())
}

pub fn propose_camera_step(pose: &Pose7, i: usize, params: &MotionParams, rng: &mut impl Rng) -> Pose7 {
    let eps = camera_step_bound(params.camera_step, i);
    let x = Vec3::new(uniform(rng, eps), uniform(rng, eps), uniform(rng, eps));
    let ph = params.camera_angle;
    let theta = Vec3::new(uniform(rng, ph), uniform(rng, ph), uniform(rng, ph));
    pose.compose(&Pose7::rigid(rotation_from_euler(&theta), x))
}

/// What a camera pose is judged against in one frame.
pub struct CameraView<'a> {
    pub room: &'a Room,
    pub boxes: &'a [Box3],
    pub weights: &'a [f64],
    pub moving: &'a [bool],
}

impl CameraView<'_> {
    pub fn admissible(&self, cam: &CameraModel, params: &MotionParams) -> bool {
        let p = cam.extrinsic.translation;
        if !self.room.contains_point(&p, 0.2) {
            return false;
        }
        let inside = |b: &Box3| {
            let q = closest_on_box(b, &p);
            (q - p).norm() < 0.2
        };
        if self.boxes.iter().chain(&self.room.obstacles).any(inside) {
            return false;
        }
        if params.require_all_visible && self.boxes.iter().any(|b| visibility(cam, b) < MIN_VISIBILITY) {
            return false;
        }
        interest_score(cam, self.boxes, self.weights, self.moving, params.moving_weight) >= params.interest_threshold
    }
}

/// Samples camera steps for frame `i` until one is admissible; holds the
/// pose after `max_tries` failures.
pub fn sample_camera_step(
    pose: &Pose7,
    i: usize,
    view: &CameraView,
    params: &MotionParams,
    rng: &mut impl Rng,
) -> Result<(Pose7, bool)> {
    for _ in 0..params.max_tries {
        let cand = propose_camera_step(pose, i, params, rng);
        if view.admissible(&params.intrinsics.camera(cand)?, params) {
            return Ok((cand, true));
        }
    }
    Ok((*pose, false))
}

/// Camera-to-world rotation looking from `eye` at `target` with world z up.
pub fn look_at(eye: &Vec3, target: &Vec3) -> Option<Matrix3<f64>> {
    let f = (target - eye).try_normalize(1e-9)?;
    let x = f.cross(&Vec3::z()).try_normalize(1e-9)?;
    let y = f.cross(&x);
    Some(Matrix3::from_columns(&[x, y, f]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectState {
    pub pose: Pose7,
    pub box3: Box3,
    pub visibility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameState {
    pub camera: CameraModel,
    pub interest: f64,
    /// Indexed like `SceneConfig::objects`.
    pub objects: Vec<ObjectState>,
}

/// Ground truth of one visible object in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GtObject {
    pub instance: u32,
    pub class: ObjectClass,
    pub pose: Pose7,
    pub box3: Box3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSequence {
    pub id: String,
    pub config: SceneConfig,
    pub frames: Vec<FrameState>,
}

impl SceneSequence {
    /// Objects at least half visible in frame `f`.
    pub fn gt_frame(&self, f: usize) -> Vec<GtObject> {
        self.frames[f]
            .objects
            .iter()
            .enumerate()
            .filter(|(_, o)| o.visibility >= MIN_VISIBILITY)
            .map(|(k, o)| GtObject {
                instance: k as u32,
                class: self.config.objects[k].class,
                pose: o.pose,
                box3: o.box3,
            })
            .collect()
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }
}

fn weighted_class(freq: &[f64; 7], rng: &mut impl Rng) -> ObjectClass {
    let total: f64 = freq.iter().sum();
    let mut x = rng.random_range(0.0..total);
    for (c, f) in ObjectClass::ALL.iter().zip(freq) {
        if x < *f {
            return *c;
        }
        x -= f;
    }
    ObjectClass::ALL[6]
}

/// Draws a room, its obstacles and the object shapes.
pub fn sample_scene_config(params: &SceneParams, seed: u64) -> Result<SceneConfig> {
    params.validate()?;
    let lay = &params.layout;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x5CE9E));
    let size: Vec<f64> = (0..3)
        .map(|k| rng.random_range(lay.room_size_min[k]..=lay.room_size_max[k]))
        .collect();
    let mut room = Room {
        min: [0.0, 0.0, 0.0],
        max: [size[0], size[1], size[2]],
        obstacles: vec![],
    };
    let n_obs = rng.random_range(0..=lay.max_obstacles);
    for _ in 0..n_obs {
        // wall-side cabinets and pillars
        let h = Vec3::new(rng.random_range(0.15..0.4), rng.random_range(0.15..0.4), size[2] / 2.0);
        let along_x = rng.random_bool(0.5);
        let at_low = rng.random_bool(0.5);
        let c = if along_x {
            let y = if at_low { h.y } else { size[1] - h.y };
            Vec3::new(rng.random_range(h.x..size[0] - h.x), y, h.z)
        } else {
            let x = if at_low { h.x } else { size[0] - h.x };
            Vec3::new(x, rng.random_range(h.y..size[1] - h.y), h.z)
        };
        let b = Box3::new(c, h, 0.0)?;
        if !room.obstacles.iter().any(|o| boxes_collide(o, &b)) {
            room.obstacles.push(b);
        }
    }
    let k = rng.random_range(lay.min_objects..=lay.max_objects);
    let objects = (0..k)
        .map(|_| {
            let class = weighted_class(&lay.class_frequencies, &mut rng);
            let shape = sample_shape(class, &mut rng);
            ObjectSpec {
                class,
                scale: shape.scale,
                grid: shape.grid,
            }
        })
        .collect();
    let cfg = SceneConfig {
        motion: params.motion.clone(),
        room,
        objects,
        seed,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn initial_layout(cfg: &SceneConfig, rng: &mut impl Rng) -> Option<Vec<Pose7>> {
    let room = &cfg.room;
    let mut poses: Vec<Pose7> = Vec::new();
    let mut boxes: Vec<Box3> = Vec::new();
    for spec in &cfg.objects {
        let (lo, _) = spec.extent();
        let mut placed = false;
        for _ in 0..cfg.motion.max_tries {
            let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let rot = rotation_from_euler(&Vec3::new(0.0, 0.0, yaw));
            let x = rng.random_range(room.min[0]..room.max[0]);
            let y = rng.random_range(room.min[1]..room.max[1]);
            // rest the lowest occupied cell on the floor
            let z = room.min[2] - spec.scale * lo.z;
            let pose = Pose7 {
                scale: spec.scale,
                rotation: rot,
                translation: Vec3::new(x, y, z),
            };
            let b = spec.box_at(&pose);
            // leave a gap so early steps have room to move
            let grown = Box3 {
                half_extents: b.half_extents.map(|h| h + 0.1),
                ..b
            };
            let sur = Surroundings { room, others: &boxes };
            if object_admissible(&b, &sur) && !boxes.iter().any(|o| boxes_collide(o, &grown)) {
                poses.push(pose);
                boxes.push(b);
                placed = true;
                break;
            }
        }
        if !placed {
            return None;
        }
    }
    Some(poses)
}

fn object_trajectories(cfg: &SceneConfig, rng: &mut impl Rng) -> Option<Vec<Vec<Pose7>>> {
    let m = &cfg.motion;
    let start = initial_layout(cfg, rng)?;
    let n_way = (m.frames - 1).div_ceil(m.waypoint_stride) + 1;
    let mut way: Vec<Vec<Pose7>> = start.iter().map(|p| vec![*p]).collect();
    let mut current = start;
    for _ in 1..n_way {
        for k in 0..cfg.objects.len() {
            let others: Vec<Box3> = (0..cfg.objects.len())
                .filter(|&j| j != k)
                .map(|j| cfg.objects[j].box_at(&current[j]))
                .collect();
            let sur = Surroundings {
                room: &cfg.room,
                others: &others,
            };
            let (next, _) = sample_object_step(&current[k], &cfg.objects[k], &sur, m, rng);
            current[k] = next;
            way[k].push(next);
        }
    }
    let dense: Vec<Vec<Pose7>> = way
        .iter()
        .map(|w| smooth_trajectory(w, m.waypoint_stride, m.frames))
        .collect();
    // smoothing can cut corners; reject trajectories that then collide
    for f in 0..m.frames {
        let boxes: Vec<Box3> = cfg.objects.iter().zip(&dense).map(|(s, d)| s.box_at(&d[f])).collect();
        for i in 0..boxes.len() {
            let sur = Surroundings {
                room: &cfg.room,
                others: &[],
            };
            if !object_admissible(&boxes[i], &sur) || boxes[i + 1..].iter().any(|b| boxes_collide(&boxes[i], b)) {
                return None;
            }
        }
    }
    Some(dense)
}

fn initial_camera(cfg: &SceneConfig, view: &CameraView, rng: &mut impl Rng) -> Result<Option<Pose7>> {
    let m = &cfg.motion;
    let n = view.boxes.len() as f64;
    let centroid = view.boxes.iter().map(|b| b.center()).sum::<Vec3>() / n;
    let room = &cfg.room;
    for _ in 0..m.max_tries {
        let eye = Vec3::new(
            rng.random_range(room.min[0] + 0.2..room.max[0] - 0.2),
            rng.random_range(room.min[1] + 0.2..room.max[1] - 0.2),
            rng.random_range(1.2..(room.max[2] - 0.3).max(1.3)),
        );
        let target = centroid + Vec3::new(uniform(rng, 0.3), uniform(rng, 0.3), uniform(rng, 0.2));
        let Some(rot) = look_at(&eye, &target) else { continue };
        let pose = Pose7::rigid(rot, eye);
        if view.admissible(&m.intrinsics.camera(pose)?, m) {
            return Ok(Some(pose));
        }
    }
    Ok(None)
}

fn try_generate(cfg: &SceneConfig, id: &str, seed: u64) -> Result<Option<SceneSequence>> {
    let m = &cfg.motion;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let Some(traj) = object_trajectories(cfg, &mut rng) else {
        return Ok(None);
    };
    let weights: Vec<f64> = cfg.objects.iter().map(|o| m.class_weight(o.class)).collect();
    let boxes_at = |f: usize| -> Vec<Box3> { cfg.objects.iter().zip(&traj).map(|(s, t)| s.box_at(&t[f])).collect() };
    let moving_at = |f: usize| -> Vec<bool> {
        traj.iter()
            .map(|t| f > 0 && (t[f].translation - t[f - 1].translation).norm() > MOVING_EPS)
            .collect()
    };
    let mut frames = Vec::with_capacity(m.frames);
    let mut cam_pose = Pose7::identity();
    for f in 0..m.frames {
        let boxes = boxes_at(f);
        let moving = moving_at(f);
        let view = CameraView {
            room: &cfg.room,
            boxes: &boxes,
            weights: &weights,
            moving: &moving,
        };
        if f == 0 {
            match initial_camera(cfg, &view, &mut rng)? {
                Some(p) => cam_pose = p,
                None => return Ok(None),
            }
        } else {
            let (p, ok) = sample_camera_step(&cam_pose, f, &view, m, &mut rng)?;
            if !ok {
                // the held pose may no longer be admissible
                if !view.admissible(&m.intrinsics.camera(p)?, m) {
                    return Ok(None);
                }
            }
            cam_pose = p;
        }
        let camera = m.intrinsics.camera(cam_pose)?;
        let interest = interest_score(&camera, &boxes, &weights, &moving, m.moving_weight);
        let objects = traj
            .iter()
            .zip(&boxes)
            .map(|(t, b)| ObjectState {
                pose: t[f],
                box3: *b,
                visibility: visibility(&camera, b),
            })
            .collect();
        frames.push(FrameState {
            camera,
            interest,
            objects,
        });
    }
    Ok(Some(SceneSequence {
        id: id.to_string(),
        config: cfg.clone(),
        frames,
    }))
}

/// Generates object and camera trajectories for a scene. Inadmissible draws
/// (collisions introduced by smoothing, a camera path that cannot keep its
/// interest) are retried with derived seeds.
pub fn generate_sequence(cfg: &SceneConfig, id: &str) -> Result<SceneSequence> {
    cfg.validate()?;
    for attempt in 0..MAX_ATTEMPTS {
        if let Some(seq) = try_generate(cfg, id, derive_seed(cfg.seed, attempt))? {
            return Ok(seq);
        }
    }
    Err(Error::InvalidInput(format!(
        "no admissible sequence for scene {id} after {MAX_ATTEMPTS} attempts"
    )))
}
