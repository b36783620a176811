use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DetectionRecord, ObjectClass, TrackGraph};
use crate::error::{Error, Result};
use crate::geometry::{OccupancyGrid, Pose7, Vec3};

pub const TRACKLET_FORMAT_VERSION: u32 = 1;

/// Default probability above which an edge counts as active.
pub const EDGE_THRESHOLD: f64 = 0.5;

/// Default gating radius of the distance heuristic, meters.
pub const HEURISTIC_GATE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackletEntry {
    pub frame: u32,
    /// Index into the detection list the tracklet was built from.
    pub detection: usize,
    pub pose: Pose7,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tracklet {
    pub instance_id: u32,
    pub class: ObjectClass,
    pub entries: Vec<TrackletEntry>,
    /// Voxel-wise majority of the member detections' grids.
    pub grid: OccupancyGrid,
}

impl Tracklet {
    pub fn center_at(&self, frame: u32) -> Option<Vec3> {
        self.entries
            .binary_search_by_key(&frame, |e| e.frame)
            .ok()
            .map(|k| self.entries[k].pose.translation)
    }

    pub fn last(&self) -> &TrackletEntry {
        self.entries.last().expect("tracklets are never empty")
    }
}

struct Builder {
    nodes: Vec<usize>,
}

fn finish(builders: Vec<Builder>, dets: &[DetectionRecord]) -> Vec<Tracklet> {
    builders
        .into_iter()
        .enumerate()
        .map(|(id, b)| {
            let mut votes: BTreeMap<ObjectClass, usize> = BTreeMap::new();
            for &n in &b.nodes {
                *votes.entry(dets[n].class).or_default() += 1;
            }
            // most votes, ties to the first class in enum order
            let class = votes
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .map(|(c, _)| *c)
                .expect("non-empty tracklet");
            let grids: Vec<&OccupancyGrid> = b.nodes.iter().map(|&n| &dets[n].grid).collect();
            Tracklet {
                instance_id: id as u32,
                class,
                entries: b
                    .nodes
                    .iter()
                    .map(|&n| TrackletEntry {
                        frame: dets[n].frame,
                        detection: n,
                        pose: dets[n].pose.expect("only posed detections are tracked"),
                    })
                    .collect(),
                grid: majority_grid(&grids),
            }
        })
        .collect()
}

fn majority_grid(grids: &[&OccupancyGrid]) -> OccupancyGrid {
    let res = grids[0].resolution();
    let mut counts = vec![0usize; grids[0].cells().len()];
    for g in grids.iter().filter(|g| g.resolution() == res) {
        for (c, &v) in counts.iter_mut().zip(g.cells()) {
            *c += v as usize;
        }
    }
    let cells = counts.iter().map(|&c| 2 * c > grids.len()).collect();
    OccupancyGrid::from_cells(res, cells).expect("same resolution")
}

fn distance(a: &DetectionRecord, b: &DetectionRecord) -> f64 {
    (a.pose.expect("posed").translation - b.pose.expect("posed").translation).norm()
}

/// Frame-ordered greedy linking. `candidates(tails, frame_nodes)` yields
/// (tracklet, node) links allowed in this frame; links are taken in
/// ascending center distance from the tracklet's last detection, each
/// tracklet and node used at most once. Unclaimed nodes start tracklets.
fn link_frames(
    dets: &[DetectionRecord],
    mut candidates: impl FnMut(&[Builder], &[usize]) -> Vec<(usize, usize)>,
) -> Vec<Tracklet> {
    let mut frames: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, d) in dets.iter().enumerate().filter(|(_, d)| d.pose.is_some()) {
        frames.entry(d.frame).or_default().push(i);
    }
    let mut builders: Vec<Builder> = Vec::new();
    for nodes in frames.values() {
        let mut links: Vec<(f64, usize, usize)> = candidates(&builders, nodes)
            .into_iter()
            .map(|(t, n)| (distance(&dets[*builders[t].nodes.last().unwrap()], &dets[n]), t, n))
            .collect();
        links.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut claimed_t = vec![false; builders.len()];
        let mut claimed_n: BTreeMap<usize, bool> = nodes.iter().map(|&n| (n, false)).collect();
        for (_, t, n) in links {
            if !claimed_t[t] && !claimed_n[&n] {
                claimed_t[t] = true;
                claimed_n.insert(n, true);
                builders[t].nodes.push(n);
            }
        }
        for (&n, &c) in &claimed_n {
            if !c {
                builders.push(Builder { nodes: vec![n] });
            }
        }
    }
    finish(builders, dets)
}

/// Tracklets from classified graph edges.
///
/// An edge with probability above `threshold` is active. A tracklet may
/// extend to a detection in the current frame when an active edge joins
/// that detection to any of the tracklet's members.
pub fn assemble_tracklets(graph: &TrackGraph, probs: &[f64], threshold: f64) -> Result<Vec<Tracklet>> {
    if probs.len() != graph.edges.len() {
        return Err(Error::ShapeMismatch {
            op: "assemble_tracklets",
            lhs: vec![graph.edges.len()],
            rhs: vec![probs.len()],
        });
    }
    let mut back: Vec<Vec<usize>> = vec![Vec::new(); graph.num_nodes()];
    for (&(i, j), &p) in graph.edges.iter().zip(probs) {
        if p > threshold {
            back[j].push(i);
        }
    }
    let mut owner: Vec<Option<usize>> = vec![None; graph.num_nodes()];
    let tracklets = link_frames(&graph.detections, |builders, nodes| {
        for (t, b) in builders.iter().enumerate() {
            for &n in &b.nodes {
                owner[n] = Some(t);
            }
        }
        let mut out = Vec::new();
        for &n in nodes {
            let mut ts: Vec<usize> = back[n].iter().filter_map(|&u| owner[u]).collect();
            ts.sort_unstable();
            ts.dedup();
            out.extend(ts.into_iter().map(|t| (t, n)));
        }
        out
    });
    Ok(tracklets)
}

/// Distance-only baseline: each frame, tracklets whose last detection is in
/// the previous frame are greedily extended to the nearest detection within
/// `gate` meters.
pub fn heuristic_tracker(dets: &[DetectionRecord], gate: f64) -> Vec<Tracklet> {
    link_frames(dets, |builders, nodes| {
        let frame = dets[nodes[0]].frame;
        let mut out = Vec::new();
        for (t, b) in builders.iter().enumerate() {
            let tail = &dets[*b.nodes.last().unwrap()];
            if tail.frame + 1 != frame {
                continue;
            }
            for &n in nodes {
                if distance(tail, &dets[n]) <= gate {
                    out.push((t, n));
                }
            }
        }
        out
    })
}

/// Tracker output for one sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackletFile {
    pub format_version: u32,
    pub sequence_id: String,
    pub num_frames: usize,
    pub tracklets: Vec<Tracklet>,
}

impl TrackletFile {
    pub fn new(sequence_id: impl Into<String>, num_frames: usize, tracklets: Vec<Tracklet>) -> Self {
        TrackletFile {
            format_version: TRACKLET_FORMAT_VERSION,
            sequence_id: sequence_id.into(),
            num_frames,
            tracklets,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: TrackletFile = serde_json::from_str(s)?;
        if f.format_version != TRACKLET_FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported tracklet format version {}", f.format_version)));
        }
        for t in &f.tracklets {
            if t.entries.is_empty() || t.entries.windows(2).any(|w| w[0].frame >= w[1].frame) {
                return Err(Error::Format(format!("tracklet {} frames are not strictly increasing", t.instance_id)));
            }
        }
        Ok(f)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
