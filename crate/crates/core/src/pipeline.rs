//! End-to-end glue: datasets on disk, pose recovery, graph labeling,
//! training and tracking.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::association::{
    assemble_tracklets, build_graph, heuristic_tracker, label_graph, surviving_indices, DetectionFile,
    DetectionRecord, GtFrame, TrackGraph, TrackletFile,
};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::losses::{default_w_occ, loss_noc, loss_rec};
use crate::eval::{evaluate, TrackReport};
use crate::neural::{LabeledGraph, TrackerNet};
use crate::pose::{estimate_pose, OutlierParams};
use crate::sim::{
    derive_seed, generate_sequence, read_sequence, sample_scene_config, synthesize_detections, write_sequence,
    SceneSequence,
};

pub const INDEX_FORMAT_VERSION: u32 = 1;
pub const INDEX_FILE: &str = "index.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexEntry {
    pub id: String,
    /// Paths relative to the index.
    pub sequence: String,
    pub detections: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetIndex {
    pub format_version: u32,
    pub seed: u64,
    pub sequences: Vec<IndexEntry>,
}

impl DatasetIndex {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(INDEX_FILE);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::EmptyDataset(format!("cannot read {}: {e}", path.display())))?;
        let idx: DatasetIndex = serde_json::from_str(&text)?;
        if idx.format_version != INDEX_FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported index format version {}", idx.format_version)));
        }
        Ok(idx)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::write(dir.join(INDEX_FILE), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Sequence id of the `k`-th generated sequence.
pub fn sequence_id(k: usize) -> String {
    format!("seq{k:04}")
}

/// Scenes drawn for one sequence before giving up on a layout range.
const MAX_SCENE_DRAWS: u64 = 20;

/// Scene and detections of sequence `k` under `cfg`. A drawn scene in which
/// no admissible motion is found (a crowded room) is replaced by a fresh
/// draw.
pub fn simulate(cfg: &RunConfig, k: usize) -> Result<(SceneSequence, DetectionFile)> {
    let base = derive_seed(cfg.seed, k as u64);
    let mut last = None;
    for draw in 0..MAX_SCENE_DRAWS {
        let seed = if draw == 0 { base } else { derive_seed(base, draw) };
        let scene = sample_scene_config(&cfg.scene, seed)?;
        match generate_sequence(&scene, &sequence_id(k)) {
            Ok(seq) => {
                let dets = synthesize_detections(&seq, &cfg.noise, seed)?;
                return Ok((seq, dets));
            }
            Err(e) => {
                log::debug!("sequence {k}: scene draw {draw} rejected: {e}");
                last = Some(e);
            }
        }
    }
    Err(last.expect("at least one draw"))
}

/// Writes `cfg.generate.sequences` sequences, their detections and an
/// index into `dir`.
pub fn generate_dataset(cfg: &RunConfig, dir: &Path) -> Result<DatasetIndex> {
    cfg.validate()?;
    std::fs::create_dir_all(dir)?;
    let entries: Vec<IndexEntry> = (0..cfg.generate.sequences)
        .into_par_iter()
        .map(|k| {
            let (seq, dets) = simulate(cfg, k)?;
            write_sequence(&seq, dir)?;
            let det_name = format!("{}.detections.json", seq.id);
            dets.write(&dir.join(&det_name))?;
            log::info!("generated {} ({} detections)", seq.id, dets.detections.len());
            Ok(IndexEntry {
                sequence: format!("{}.json", seq.id),
                detections: det_name,
                id: seq.id,
            })
        })
        .collect::<Result<_>>()?;
    let idx = DatasetIndex {
        format_version: INDEX_FORMAT_VERSION,
        seed: cfg.seed,
        sequences: entries,
    };
    idx.write(dir)?;
    Ok(idx)
}

/// A sequence loaded from disk.
pub struct LoadedSequence {
    pub gt: SceneSequence,
    pub detections: DetectionFile,
}

pub fn load_dataset(dir: &Path) -> Result<Vec<LoadedSequence>> {
    let idx = DatasetIndex::read(dir)?;
    if idx.sequences.is_empty() {
        return Err(Error::EmptyDataset(format!("{} lists no sequences", dir.join(INDEX_FILE).display())));
    }
    idx.sequences
        .par_iter()
        .map(|e| {
            Ok(LoadedSequence {
                gt: read_sequence(&dir.join(&e.sequence))?,
                detections: DetectionFile::read(&dir.join(&e.detections))?,
            })
        })
        .collect()
}

/// Detections that pass the score and overlap filters, with world poses
/// where estimation succeeds. Each detection draws its RANSAC stream from
/// its position in the file, so the result does not depend on filtering.
pub fn prepare_detections(file: &DetectionFile, cfg: &RunConfig) -> Vec<DetectionRecord> {
    surviving_indices(&file.detections, &cfg.filter, None)
        .into_iter()
        .map(|i| {
            let mut d = file.detections[i].clone();
            d.pose = None;
            d.box3 = None;
            pose_detection(&mut d, file, i, &cfg.pose, cfg.seed);
            d
        })
        .collect()
}

fn pose_detection(d: &mut DetectionRecord, file: &DetectionFile, i: usize, params: &OutlierParams, seed: u64) {
    let Some(cam) = file.cameras.get(d.frame as usize) else {
        log::warn!("detection {i} of {} has no camera", file.sequence_id);
        return;
    };
    match estimate_pose(d, cam, params, derive_seed(seed, i as u64)) {
        Ok(p) => d.set_pose(p),
        Err(e) => log::debug!("{} detection {i}: {e}", file.sequence_id),
    }
}

/// Ground-truth boxes per frame.
pub fn gt_frames(seq: &SceneSequence) -> Vec<GtFrame> {
    (0..seq.num_frames())
        .map(|f| seq.gt_frame(f).into_iter().map(|o| (o.instance, o.box3)).collect())
        .collect()
}

/// Mean pose and reconstruction losses of the labeled detections: the pose
/// term compares the observed points mapped back into object space with
/// their object coordinates, the reconstruction term scores the detection's
/// grid against the instance's true grid.
fn front_end_losses(graph: &TrackGraph, seq: &SceneSequence) -> Result<(f64, f64)> {
    let instances = graph.node_instances.as_deref().unwrap_or(&[]);
    let (mut noc, mut rec, mut n) = (0.0, 0.0, 0usize);
    for (d, inst) in graph.detections.iter().zip(instances) {
        let (Some(pose), Some(inst)) = (d.pose, inst) else { continue };
        let inv = pose.inverse();
        let cam = &seq.frames[d.frame as usize].camera;
        let pred: Vec<Vec3> = d
            .correspondences
            .obs_points
            .points
            .iter()
            .map(|p| inv.apply(&cam.camera_to_world(p)))
            .collect();
        noc += loss_noc(&pred, &d.correspondences.noc_points.points, d.class)?.value;
        let gt = &seq.config.objects[*inst as usize].grid;
        rec += loss_rec(&d.grid.to_f64(), gt, default_w_occ(gt))?.value;
        n += 1;
    }
    let n = n.max(1) as f64;
    Ok((noc / n, rec / n))
}

/// Builds and labels the association graph of one sequence.
pub fn labeled_graph(seq: &SceneSequence, file: &DetectionFile, cfg: &RunConfig) -> Result<(TrackGraph, LabeledGraph)> {
    let dets = prepare_detections(file, cfg);
    let graph = build_graph(&dets, cfg.gnn.window)?;
    let graph = label_graph(&graph, &gt_frames(seq), cfg.tracking.label_iou);
    let (noc_loss, rec_loss) = front_end_losses(&graph, seq)?;
    let labeled = LabeledGraph {
        input: graph.to_input(),
        labels: graph.labels.clone().unwrap_or_default(),
        noc_loss,
        rec_loss,
    };
    Ok((graph, labeled))
}

/// How tracklets are formed.
#[derive(Clone, Copy)]
pub enum Tracker<'a> {
    Gnn(&'a TrackerNet),
    Heuristic,
}

pub fn track_sequence(file: &DetectionFile, tracker: Tracker, cfg: &RunConfig) -> Result<TrackletFile> {
    let dets = prepare_detections(file, cfg);
    let tracklets = match tracker {
        Tracker::Heuristic => heuristic_tracker(&dets, cfg.tracking.heuristic_gate),
        Tracker::Gnn(net) => {
            let graph = build_graph(&dets, net.config.window)?;
            let probs = net.predict(&graph.to_input())?;
            assemble_tracklets(&graph, &probs, cfg.tracking.edge_threshold)?
        }
    };
    Ok(TrackletFile::new(file.sequence_id.clone(), file.num_frames(), tracklets))
}

/// Tracks every sequence, in parallel across sequences.
pub fn track_all(files: &[&DetectionFile], tracker: Tracker, cfg: &RunConfig) -> Result<Vec<TrackletFile>> {
    files.par_iter().map(|f| track_sequence(f, tracker, cfg)).collect()
}

/// Output path of a sequence's tracklets inside `dir`.
pub fn tracklet_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.tracklets.json"))
}

/// Labeled training graphs of every loaded sequence, built in parallel.
pub fn training_graphs(data: &[LoadedSequence], cfg: &RunConfig) -> Result<Vec<LabeledGraph>> {
    data.par_iter()
        .map(|s| labeled_graph(&s.gt, &s.detections, cfg).map(|(_, g)| g))
        .collect()
}

/// Tracks every sequence listed in `data_dir` and writes one tracklet file
/// per sequence into `out_dir`.
pub fn track_dataset(data_dir: &Path, out_dir: &Path, tracker: Tracker, cfg: &RunConfig) -> Result<Vec<TrackletFile>> {
    let data = load_dataset(data_dir)?;
    let files: Vec<&DetectionFile> = data.iter().map(|s| &s.detections).collect();
    let out = track_all(&files, tracker, cfg)?;
    std::fs::create_dir_all(out_dir)?;
    for t in &out {
        t.write(&tracklet_path(out_dir, &t.sequence_id))?;
    }
    Ok(out)
}

/// Reads the tracklet file of each id from `dir`, failing with the list of
/// ids that have none.
pub fn load_tracklets(dir: &Path, ids: &[String]) -> Result<Vec<TrackletFile>> {
    let missing: Vec<&str> = ids
        .iter()
        .filter(|id| !tracklet_path(dir, id).is_file())
        .map(String::as_str)
        .collect();
    if !missing.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no tracklets in {} for sequences: [{}]",
            dir.display(),
            missing.join(", ")
        )));
    }
    ids.par_iter().map(|id| TrackletFile::read(&tracklet_path(dir, id))).collect()
}

/// A scored dataset with the inputs of the score.
pub struct Evaluation {
    pub report: TrackReport,
    pub predictions: Vec<TrackletFile>,
    pub ground_truth: Vec<SceneSequence>,
}

/// Scores the tracklets in `tracklet_dir` against the ground truth of
/// `data_dir`.
pub fn evaluate_dataset(data_dir: &Path, tracklet_dir: &Path, radius: f64) -> Result<Evaluation> {
    let idx = DatasetIndex::read(data_dir)?;
    let ids: Vec<String> = idx.sequences.iter().map(|e| e.id.clone()).collect();
    let preds = load_tracklets(tracklet_dir, &ids)?;
    let gts: Vec<SceneSequence> = idx
        .sequences
        .par_iter()
        .map(|e| read_sequence(&data_dir.join(&e.sequence)))
        .collect::<Result<_>>()?;
    Ok(Evaluation {
        report: evaluate(&preds, &gts, radius)?,
        predictions: preds,
        ground_truth: gts,
    })
}
