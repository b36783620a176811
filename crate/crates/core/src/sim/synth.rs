use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::derive_seed;
use super::scene::{SceneSequence, MIN_VISIBILITY};
use super::shapes::sample_shape;
use crate::association::{DetectionFile, DetectionRecord, ObjectClass};
use crate::error::{Error, Result};
use crate::geometry::{rotation_from_euler, Box2, CameraModel, OccupancyGrid, PointCloud, Pose7, Vec3, NEAR_PLANE};
use crate::pose::Correspondences;

/// How ground truth is corrupted into detections.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    /// Std of Gaussian noise on observed points, meters.
    pub correspondence_noise_std: f64,
    /// Per-detection systematic error of the object coordinates: offset std
    /// in normalized units, rotation std about the up axis in radians and
    /// relative scale std. Unlike point noise it survives outlier rejection
    /// and shows up as pose error.
    pub noc_offset_std: f64,
    pub noc_rotation_std: f64,
    pub noc_scale_std: f64,
    /// Fraction of correspondences replaced by gross outliers.
    pub outlier_fraction: f64,
    /// Probability that a visible object yields no detection.
    pub dropout_prob: f64,
    /// Probability that a detected object also yields a spurious second
    /// detection with a wrong class and that class's shape; per-class
    /// suppression keeps both.
    pub duplicate_prob: f64,
    /// Objectness is uniform on `[objectness_min, objectness_max]`.
    pub objectness_min: f64,
    pub objectness_max: f64,
    /// Flip probability of each surface and shell cell of the grid.
    pub grid_corruption_rate: f64,
    pub points_per_detection: usize,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            correspondence_noise_std: 0.005,
            noc_offset_std: 0.03,
            noc_rotation_std: 0.05,
            noc_scale_std: 0.03,
            outlier_fraction: 0.1,
            dropout_prob: 0.1,
            duplicate_prob: 0.0,
            objectness_min: 0.3,
            objectness_max: 1.0,
            grid_corruption_rate: 0.1,
            points_per_detection: 150,
        }
    }
}

impl NoiseModel {
    /// No corruption at all; every visible object is detected exactly.
    pub fn zero() -> Self {
        NoiseModel {
            correspondence_noise_std: 0.0,
            noc_offset_std: 0.0,
            noc_rotation_std: 0.0,
            noc_scale_std: 0.0,
            outlier_fraction: 0.0,
            dropout_prob: 0.0,
            duplicate_prob: 0.0,
            objectness_min: 1.0,
            objectness_max: 1.0,
            grid_corruption_rate: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit_open = [
            ("outlier_fraction", self.outlier_fraction),
            ("dropout_prob", self.dropout_prob),
            ("duplicate_prob", self.duplicate_prob),
        ];
        for (name, v) in unit_open {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        if !(self.outlier_fraction < 1.0) {
            return Err(Error::Config("outlier_fraction must be below 1".into()));
        }
        for (name, v) in [
            ("correspondence_noise_std", self.correspondence_noise_std),
            ("noc_offset_std", self.noc_offset_std),
            ("noc_rotation_std", self.noc_rotation_std),
            ("noc_scale_std", self.noc_scale_std),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if !(0.0 <= self.objectness_min && self.objectness_min <= self.objectness_max && self.objectness_max <= 1.0) {
            return Err(Error::Config("objectness range must satisfy 0 <= min <= max <= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.grid_corruption_rate) {
            return Err(Error::Config("grid_corruption_rate must be in [0, 1]".into()));
        }
        if self.points_per_detection < 3 {
            return Err(Error::Config("points_per_detection must be at least 3".into()));
        }
        Ok(())
    }
}

/// One synthesized detection and which of its correspondences were
/// replaced by outliers.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDetection {
    pub record: DetectionRecord,
    pub outliers: Vec<bool>,
}

/// Observation of one object from one camera; `None` if the object leaves
/// no points in the image.
#[allow(clippy::too_many_arguments)]
pub fn synthesize_object(
    frame: u32,
    instance: u32,
    class: ObjectClass,
    grid: &OccupancyGrid,
    pose: &Pose7,
    camera: &CameraModel,
    noise: &NoiseModel,
    rng: &mut impl Rng,
) -> Option<SyntheticDetection> {
    let surface = grid.surface_cells();
    if surface.is_empty() {
        return None;
    }
    let half_cell = 0.5 / grid.resolution() as f64;
    let (w, h) = (camera.width as f64, camera.height as f64);
    let mut noc = Vec::with_capacity(noise.points_per_detection);
    let mut obs = Vec::with_capacity(noise.points_per_detection);
    for _ in 0..noise.points_per_detection * 4 {
        if noc.len() == noise.points_per_detection {
            break;
        }
        let cell = surface[rng.random_range(0..surface.len())];
        let jitter = Vec3::new(
            rng.random_range(-half_cell..half_cell),
            rng.random_range(-half_cell..half_cell),
            rng.random_range(-half_cell..half_cell),
        );
        let n = grid.noc_center(cell) + jitter;
        let p = camera.world_to_camera(&pose.apply(&n));
        if p.z <= NEAR_PLANE {
            continue;
        }
        let (u, v, _) = camera.project(&p);
        if (0.0..w).contains(&u) && (0.0..h).contains(&v) {
            noc.push(n);
            obs.push(p);
        }
    }
    if obs.is_empty() {
        return None;
    }
    let bias_scale = gauss(rng, noise.noc_scale_std).exp();
    let bias_rot = rotation_from_euler(&Vec3::new(0.0, 0.0, gauss(rng, noise.noc_rotation_std)));
    let bias_offset = Vec3::new(
        gauss(rng, noise.noc_offset_std),
        gauss(rng, noise.noc_offset_std),
        gauss(rng, noise.noc_offset_std),
    );
    for n in &mut noc {
        *n = bias_scale * (bias_rot * *n) + bias_offset;
    }
    if noise.correspondence_noise_std > 0.0 {
        let g = Normal::new(0.0, noise.correspondence_noise_std).expect("valid std");
        for p in &mut obs {
            *p += Vec3::new(g.sample(rng), g.sample(rng), g.sample(rng));
        }
    }
    let mut outliers = vec![false; obs.len()];
    let n_out = (noise.outlier_fraction * obs.len() as f64).round() as usize;
    if n_out > 0 {
        let centroid = obs.iter().sum::<Vec3>() / obs.len() as f64;
        let reach = pose.scale;
        for i in sample(rng, obs.len(), n_out).into_vec() {
            obs[i] = centroid
                + Vec3::new(
                    rng.random_range(-reach..reach),
                    rng.random_range(-reach..reach),
                    rng.random_range(-reach..reach),
                );
            outliers[i] = true;
        }
    }
    let mut grid = grid.clone();
    if noise.grid_corruption_rate > 0.0 {
        let mut cells = grid.surface_cells();
        cells.extend(grid.shell_cells());
        cells.sort_unstable();
        for i in cells {
            if rng.random_bool(noise.grid_corruption_rate) {
                grid.flip(i);
            }
        }
    }
    let objectness = if noise.objectness_max > noise.objectness_min {
        rng.random_range(noise.objectness_min..=noise.objectness_max)
    } else {
        noise.objectness_max
    };
    let box2 = image_box(camera, grid_corners(pose, &grid))?;
    let correspondences = Correspondences::new(
        PointCloud::new(noc).expect("finite"),
        PointCloud::new(obs).expect("finite"),
    )
    .expect("equal lengths");
    Some(SyntheticDetection {
        record: DetectionRecord {
            frame,
            class,
            objectness,
            box2,
            box3: None,
            pose: None,
            correspondences,
            grid,
            gt_instance: Some(instance),
        },
        outliers,
    })
}

fn gauss(rng: &mut impl Rng, std: f64) -> f64 {
    if std > 0.0 {
        Normal::new(0.0, std).expect("valid std").sample(rng)
    } else {
        0.0
    }
}

fn grid_corners(pose: &Pose7, grid: &OccupancyGrid) -> Vec<Vec3> {
    let (lo, hi) = grid.occupied_bounds().unwrap_or((Vec3::repeat(-0.5), Vec3::repeat(0.5)));
    (0..8)
        .map(|k| {
            let pick = |bit: usize, axis: usize| if k >> bit & 1 == 1 { hi[axis] } else { lo[axis] };
            pose.apply(&Vec3::new(pick(0, 0), pick(1, 1), pick(2, 2)))
        })
        .collect()
}

fn image_box(camera: &CameraModel, corners: Vec<Vec3>) -> Option<Box2> {
    let pixels = corners.iter().filter_map(|c| {
        let p = camera.world_to_camera(c);
        (p.z > NEAR_PLANE).then(|| {
            let (u, v, _) = camera.project(&p);
            nalgebra::Vector2::new(u, v)
        })
    });
    let b = Box2::bounding(pixels)?.clip(camera.width as f64, camera.height as f64);
    (b.area() > 0.0).then_some(b)
}

/// Detections for every object at least half visible in each frame, in
/// frame order and then object order.
pub fn synthesize_detections(seq: &SceneSequence, noise: &NoiseModel, seed: u64) -> Result<DetectionFile> {
    noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xDE7EC7));
    let mut dets = Vec::new();
    for (f, state) in seq.frames.iter().enumerate() {
        for (k, obj) in state.objects.iter().enumerate() {
            if obj.visibility < MIN_VISIBILITY {
                continue;
            }
            // draw even when dropped so one object's dropout does not shift
            // the others' random streams
            let dropped = noise.dropout_prob > 0.0 && rng.random_bool(noise.dropout_prob);
            let mut local = ChaCha8Rng::seed_from_u64(rng.random());
            if dropped {
                continue;
            }
            let spec = &seq.config.objects[k];
            if let Some(d) = synthesize_object(
                f as u32,
                k as u32,
                spec.class,
                &spec.grid,
                &obj.pose,
                &state.camera,
                noise,
                &mut local,
            ) {
                dets.push(d.record);
            }
            if noise.duplicate_prob > 0.0 && local.random_bool(noise.duplicate_prob) {
                let others: Vec<ObjectClass> = ObjectClass::ALL.into_iter().filter(|c| *c != spec.class).collect();
                let class = others[local.random_range(0..others.len())];
                let shape = sample_shape(class, &mut local);
                if let Some(mut d) =
                    synthesize_object(f as u32, k as u32, class, &shape.grid, &obj.pose, &state.camera, noise, &mut local)
                {
                    // belongs to no object
                    d.record.gt_instance = None;
                    dets.push(d.record);
                }
            }
        }
    }
    let cameras = seq.frames.iter().map(|s| s.camera).collect();
    Ok(DetectionFile::new(seq.id.clone(), cameras, dets))
}
