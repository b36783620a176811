use super::DetectionRecord;
use crate::error::{Error, Result};
use crate::geometry::{iou3d_boxes, Box3};
use crate::neural::{EdgeFeature, GraphInput, NodeInput};

/// Default 3D IoU below which a detection matches no ground-truth object.
pub const LABEL_IOU_THRESHOLD: f64 = 0.05;

/// Temporal association graph over one sequence.
///
/// Nodes are detections sorted by frame. Edge `(i, j)` joins two posed
/// detections with `frame(i) < frame(j) <= frame(i) + window - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackGraph {
    pub detections: Vec<DetectionRecord>,
    pub window: usize,
    pub edges: Vec<(usize, usize)>,
    pub features: Vec<EdgeFeature>,
    /// Ground-truth activity per edge, once labeled.
    pub labels: Option<Vec<bool>>,
    /// Ground-truth instance per node, once labeled.
    pub node_instances: Option<Vec<Option<u32>>>,
}

pub fn build_graph(dets: &[DetectionRecord], window: usize) -> Result<TrackGraph> {
    if window < 2 {
        return Err(Error::Config("window must be at least 2".into()));
    }
    let mut detections = dets.to_vec();
    detections.sort_by_key(|d| d.frame);
    let mut edges = Vec::new();
    let mut features = Vec::new();
    let max_gap = (window - 1) as u32;
    for i in 0..detections.len() {
        let Some(pi) = detections[i].pose else { continue };
        for j in i + 1..detections.len() {
            let (fi, fj) = (detections[i].frame, detections[j].frame);
            if fj - fi > max_gap {
                break;
            }
            if fj == fi {
                continue;
            }
            if let Some(pj) = detections[j].pose {
                edges.push((i, j));
                features.push(EdgeFeature::between(&pi, fi, &pj, fj));
            }
        }
    }
    Ok(TrackGraph {
        detections,
        window,
        edges,
        features,
        labels: None,
        node_instances: None,
    })
}

impl TrackGraph {
    pub fn num_nodes(&self) -> usize {
        self.detections.len()
    }

    pub fn to_input(&self) -> GraphInput {
        GraphInput {
            nodes: NodeInput::Grids(self.detections.iter().map(|d| d.grid.clone()).collect()),
            edges: self.edges.clone(),
            edge_features: self.features.iter().map(EdgeFeature::to_array).collect(),
        }
    }
}

/// Ground-truth boxes of one frame with their instance ids.
pub type GtFrame = Vec<(u32, Box3)>;

/// Assigns each detection the instance of its best-overlapping ground-truth
/// box in the same frame, drops edges touching unmatched detections, and
/// marks an edge active iff both ends share an instance.
///
/// Ties in IoU go to the smaller instance id, so the result does not depend
/// on the order of `gt`.
pub fn label_graph(graph: &TrackGraph, gt: &[GtFrame], tau: f64) -> TrackGraph {
    let instances: Vec<Option<u32>> = graph
        .detections
        .iter()
        .map(|d| {
            let b = d.box3?;
            let frame = gt.get(d.frame as usize)?;
            let mut best: Option<(f64, u32)> = None;
            for &(id, ref g) in frame {
                let iou = iou3d_boxes(&b, g);
                let better = match best {
                    None => true,
                    Some((bi, bid)) => iou > bi || (iou == bi && id < bid),
                };
                if better {
                    best = Some((iou, id));
                }
            }
            best.filter(|(iou, _)| *iou >= tau).map(|(_, id)| id)
        })
        .collect();
    let mut out = graph.clone();
    out.edges.clear();
    out.features.clear();
    let mut labels = Vec::new();
    for (&(i, j), f) in graph.edges.iter().zip(&graph.features) {
        if let (Some(a), Some(b)) = (instances[i], instances[j]) {
            out.edges.push((i, j));
            out.features.push(*f);
            labels.push(a == b);
        }
    }
    out.labels = Some(labels);
    out.node_instances = Some(instances);
    out
}
