use serde::{Deserialize, Serialize};

use super::DetectionRecord;
use crate::error::{Error, Result};
use crate::geometry::{iou2d, Box2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterParams {
    /// Minimum objectness score.
    pub min_objectness: f64,
    /// Boxes of one class overlapping a higher-scored box by more than this
    /// 2D IoU are suppressed.
    pub nms_iou: f64,
    /// With ground truth available, minimum best 2D IoU against any GT box.
    pub min_gt_iou: f64,
}

impl Default for FilterParams {
    fn default() -> Self {
        FilterParams {
            min_objectness: 0.35,
            nms_iou: 0.5,
            min_gt_iou: 0.35,
        }
    }
}

impl FilterParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("min_objectness", self.min_objectness),
            ("nms_iou", self.nms_iou),
            ("min_gt_iou", self.min_gt_iou),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

/// Score threshold, per-class 2D non-maximum suppression within each frame,
/// and (when `gt_boxes` is given, indexed by frame) the ground-truth overlap
/// gate. Survivors keep their input order.
pub fn filter_detections(
    dets: &[DetectionRecord],
    params: &FilterParams,
    gt_boxes: Option<&[Vec<Box2>]>,
) -> Vec<DetectionRecord> {
    surviving_indices(dets, params, gt_boxes)
        .into_iter()
        .map(|i| dets[i].clone())
        .collect()
}

/// Positions of the detections `filter_detections` keeps, increasing.
pub fn surviving_indices(dets: &[DetectionRecord], params: &FilterParams, gt_boxes: Option<&[Vec<Box2>]>) -> Vec<usize> {
    let mut alive: Vec<bool> = dets.iter().map(|d| d.objectness >= params.min_objectness).collect();
    let mut order: Vec<usize> = (0..dets.len()).filter(|&i| alive[i]).collect();
    order.sort_by(|&a, &b| dets[b].objectness.total_cmp(&dets[a].objectness).then(a.cmp(&b)));
    for (k, &i) in order.iter().enumerate() {
        if !alive[i] {
            continue;
        }
        for &j in &order[k + 1..] {
            let (a, b) = (&dets[i], &dets[j]);
            if alive[j] && a.frame == b.frame && a.class == b.class && iou2d(&a.box2, &b.box2) > params.nms_iou {
                alive[j] = false;
            }
        }
    }
    if let Some(gt) = gt_boxes {
        for (i, d) in dets.iter().enumerate() {
            let best = gt
                .get(d.frame as usize)
                .map(|boxes| boxes.iter().map(|g| iou2d(&d.box2, g)).fold(0.0, f64::max))
                .unwrap_or(0.0);
            if best < params.min_gt_iou {
                alive[i] = false;
            }
        }
    }
    (0..dets.len()).filter(|&i| alive[i]).collect()
}
