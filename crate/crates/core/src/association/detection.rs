use std::fmt;
use std::path::Path;

use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Box2, Box3, CameraModel, OccupancyGrid, PointCloud, Pose7, Vec3};
use crate::pose::Correspondences;

pub const DETECTION_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectClass {
    Chair,
    Table,
    Sofa,
    Bed,
    TvStand,
    Cooler,
    Nightstand,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 7] = [
        ObjectClass::Chair,
        ObjectClass::Table,
        ObjectClass::Sofa,
        ObjectClass::Bed,
        ObjectClass::TvStand,
        ObjectClass::Cooler,
        ObjectClass::Nightstand,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ObjectClass::Chair => "chair",
            ObjectClass::Table => "table",
            ObjectClass::Sofa => "sofa",
            ObjectClass::Bed => "bed",
            ObjectClass::TvStand => "tv_stand",
            ObjectClass::Cooler => "cooler",
            ObjectClass::Nightstand => "nightstand",
        }
    }
}

impl fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One per-frame object observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub frame: u32,
    pub class: ObjectClass,
    pub objectness: f64,
    pub box2: Box2,
    /// Filled once a pose is known.
    #[serde(default)]
    pub box3: Option<Box3>,
    /// World-frame pose; `None` until estimated or when estimation failed.
    #[serde(default)]
    pub pose: Option<Pose7>,
    #[serde(with = "corr_serde")]
    pub correspondences: Correspondences,
    pub grid: OccupancyGrid,
    #[serde(default)]
    pub gt_instance: Option<u32>,
}

impl DetectionRecord {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.objectness) {
            return Err(Error::InvalidInput(format!("objectness {} outside [0, 1]", self.objectness)));
        }
        Ok(())
    }

    pub fn center(&self) -> Option<Vec3> {
        self.pose.map(|p| p.translation)
    }

    /// Sets the pose and derives the box from the grid's occupied extent.
    pub fn set_pose(&mut self, pose: Pose7) {
        self.pose = Some(pose);
        let (lo, hi) = self
            .grid
            .occupied_bounds()
            .unwrap_or((Vec3::repeat(-0.5), Vec3::repeat(0.5)));
        self.box3 = Some(Box3::from_pose_and_extent(&pose, lo, hi));
    }
}

pub(crate) fn encode_points(points: &[Vec3]) -> String {
    let mut bytes = Vec::with_capacity(points.len() * 24);
    for p in points {
        for v in p.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

pub(crate) fn decode_points(s: &str) -> Result<Vec<Vec3>> {
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(s.as_bytes())
        .map_err(|e| Error::Format(format!("point blob: {e}")))?;
    if bytes.len() % 24 != 0 {
        return Err(Error::Format(format!("point blob of {} bytes is not a multiple of 24", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(24)
        .map(|c| {
            let f = |k: usize| f64::from_le_bytes(c[k * 8..k * 8 + 8].try_into().unwrap());
            Vec3::new(f(0), f(1), f(2))
        })
        .collect())
}

mod corr_serde {
    use super::*;
    use serde::{Deserializer, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Repr {
        count: usize,
        noc_points: String,
        obs_points: String,
    }

    pub fn serialize<S: Serializer>(c: &Correspondences, s: S) -> std::result::Result<S::Ok, S::Error> {
        Repr {
            count: c.len(),
            noc_points: encode_points(&c.noc_points.points),
            obs_points: encode_points(&c.obs_points.points),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Correspondences, D::Error> {
        use serde::de::Error as _;
        let r = Repr::deserialize(d)?;
        let noc = decode_points(&r.noc_points).map_err(D::Error::custom)?;
        let obs = decode_points(&r.obs_points).map_err(D::Error::custom)?;
        if noc.len() != r.count || obs.len() != r.count {
            return Err(D::Error::custom("correspondence count does not match blobs"));
        }
        let noc = PointCloud::new(noc).map_err(D::Error::custom)?;
        let obs = PointCloud::new(obs).map_err(D::Error::custom)?;
        Correspondences::new(noc, obs).map_err(D::Error::custom)
    }
}

/// All detections of one sequence together with the per-frame cameras
/// needed to lift poses into the world frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionFile {
    pub format_version: u32,
    pub sequence_id: String,
    pub cameras: Vec<CameraModel>,
    pub detections: Vec<DetectionRecord>,
}

impl DetectionFile {
    pub fn new(sequence_id: impl Into<String>, cameras: Vec<CameraModel>, detections: Vec<DetectionRecord>) -> Self {
        DetectionFile {
            format_version: DETECTION_FORMAT_VERSION,
            sequence_id: sequence_id.into(),
            cameras,
            detections,
        }
    }

    pub fn num_frames(&self) -> usize {
        self.cameras.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != DETECTION_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported detection format version {}",
                self.format_version
            )));
        }
        for d in &self.detections {
            d.validate()?;
            if d.frame as usize >= self.cameras.len() {
                return Err(Error::Format(format!(
                    "detection at frame {} but only {} cameras",
                    d.frame,
                    self.cameras.len()
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: DetectionFile = serde_json::from_str(s)?;
        f.validate()?;
        Ok(f)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Detections grouped by frame, `num_frames` groups.
    pub fn by_frame(&self) -> Vec<Vec<DetectionRecord>> {
        let mut out = vec![Vec::new(); self.cameras.len()];
        for d in &self.detections {
            out[d.frame as usize].push(d.clone());
        }
        out
    }
}
