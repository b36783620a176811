//! Run configuration shared by every command, read from TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::association::{FilterParams, EDGE_THRESHOLD, HEURISTIC_GATE, LABEL_IOU_THRESHOLD};
use crate::error::{Error, Result};
use crate::eval::MATCH_RADIUS;
use crate::losses::LossWeights;
use crate::neural::{GnnConfig, TrainSchedule};
use crate::pose::OutlierParams;
use crate::sim::{NoiseModel, SceneParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateParams {
    pub sequences: usize,
}

impl Default for GenerateParams {
    fn default() -> Self {
        GenerateParams { sequences: 50 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackingParams {
    /// Edge probability above which two detections are linked.
    pub edge_threshold: f64,
    /// Gating radius of the distance heuristic, meters.
    pub heuristic_gate: f64,
    /// Minimum 3D IoU for a detection to take a ground-truth label.
    pub label_iou: f64,
}

impl Default for TrackingParams {
    fn default() -> Self {
        TrackingParams {
            edge_threshold: EDGE_THRESHOLD,
            heuristic_gate: HEURISTIC_GATE,
            label_iou: LABEL_IOU_THRESHOLD,
        }
    }
}

impl TrackingParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.edge_threshold) {
            return Err(Error::Config("edge_threshold must be in [0, 1)".into()));
        }
        if !(self.heuristic_gate > 0.0) {
            return Err(Error::Config("heuristic_gate must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.label_iou) {
            return Err(Error::Config("label_iou must be in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalParams {
    /// Center distance below which a prediction matches, meters.
    pub radius: f64,
}

impl Default for EvalParams {
    fn default() -> Self {
        EvalParams { radius: MATCH_RADIUS }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Base of every random stream in a run.
    pub seed: u64,
    pub generate: GenerateParams,
    pub scene: SceneParams,
    pub noise: NoiseModel,
    pub pose: OutlierParams,
    pub filter: FilterParams,
    pub gnn: GnnConfig,
    pub schedule: TrainSchedule,
    pub loss: LossWeights,
    pub tracking: TrackingParams,
    pub eval: EvalParams,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.generate.sequences == 0 {
            return Err(Error::Config("generate.sequences must be at least 1".into()));
        }
        self.scene.validate()?;
        self.noise.validate()?;
        self.pose.validate()?;
        self.filter.validate()?;
        self.gnn.validate()?;
        self.schedule.validate()?;
        self.loss.validate()?;
        self.tracking.validate()?;
        if !(self.eval.radius > 0.0) {
            return Err(Error::Config("eval.radius must be positive".into()));
        }
        Ok(())
    }

    /// Parses and validates; missing keys take their defaults.
    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}
