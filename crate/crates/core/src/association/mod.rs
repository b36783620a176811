//! Detection records, the temporal tracking graph and tracklet assembly.

mod detection;
mod filter;
mod graph;
mod tracklets;

pub use detection::{DetectionFile, DetectionRecord, ObjectClass, DETECTION_FORMAT_VERSION};
pub use filter::{filter_detections, surviving_indices, FilterParams};
pub use graph::{build_graph, label_graph, GtFrame, TrackGraph, LABEL_IOU_THRESHOLD};
pub use tracklets::{
    assemble_tracklets, heuristic_tracker, Tracklet, TrackletEntry, TrackletFile, EDGE_THRESHOLD, HEURISTIC_GATE,
    TRACKLET_FORMAT_VERSION,
};
