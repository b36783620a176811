//! CLEAR-MOT scoring of tracklets against simulated ground truth.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::association::{ObjectClass, Tracklet, TrackletEntry, TrackletFile};
use crate::error::{Error, Result};
use crate::geometry::{iou3d_grids, OccupancyGrid, Vec3};
use crate::sim::SceneSequence;

pub const REPORT_FORMAT_VERSION: u32 = 1;

/// Default match radius between predicted and true centers, meters.
pub const MATCH_RADIUS: f64 = 0.4;

/// Minimum-cost assignment of rows to columns (`rows <= cols`), by the
/// shortest augmenting path form of the Hungarian method. Returns the column
/// of each row.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return vec![];
    }
    let m = cost[0].len();
    assert!(n <= m, "hungarian needs rows <= cols");
    // 1-based potentials and column owners; column 0 is the virtual start
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=m {
        if owner[j] > 0 {
            out[owner[j] - 1] = j - 1;
        }
    }
    out
}

/// A predicted object center in one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredPoint {
    pub track: u32,
    pub center: Vec3,
}

/// A ground-truth object center in one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtPoint {
    pub instance: u32,
    pub center: Vec3,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameMatch {
    /// `(gt instance, track)` pairs.
    pub matches: Vec<(u32, u32)>,
    pub misses: usize,
    pub false_positives: usize,
    pub mismatches: usize,
    /// Ground-truth instances counted as misses / tracks counted as false
    /// positives / instances counted as mismatches.
    pub missed: Vec<u32>,
    pub spurious: Vec<u32>,
    pub switched: Vec<u32>,
}

/// Last track each ground-truth instance was matched to.
pub type MatchCarry = BTreeMap<u32, u32>;

/// One CLEAR-MOT frame: correspondences from the carry that are still
/// within `radius` persist; the rest are assigned by minimum total distance
/// among pairs closer than `radius`.
pub fn match_frame(preds: &[PredPoint], gts: &[GtPoint], radius: f64, carry: &mut MatchCarry) -> FrameMatch {
    let dist = |g: &GtPoint, p: &PredPoint| (g.center - p.center).norm();
    let mut gt_done = vec![false; gts.len()];
    let mut pred_done = vec![false; preds.len()];
    let mut matches = Vec::new();
    for (gi, g) in gts.iter().enumerate() {
        let Some(&t) = carry.get(&g.instance) else { continue };
        if let Some(pi) = preds.iter().position(|p| p.track == t) {
            if !pred_done[pi] && dist(g, &preds[pi]) < radius {
                gt_done[gi] = true;
                pred_done[pi] = true;
                matches.push((gi, pi));
            }
        }
    }
    let rows: Vec<usize> = (0..gts.len()).filter(|&i| !gt_done[i]).collect();
    let cols: Vec<usize> = (0..preds.len()).filter(|&j| !pred_done[j]).collect();
    if !rows.is_empty() && !cols.is_empty() {
        // pairs beyond the radius cost more than any feasible matching
        let forbidden = 1.0 + radius * (rows.len().max(cols.len()) as f64 + 1.0);
        let transpose = rows.len() > cols.len();
        let (a, b) = if transpose { (&cols, &rows) } else { (&rows, &cols) };
        let cost: Vec<Vec<f64>> = a
            .iter()
            .map(|&x| {
                b.iter()
                    .map(|&y| {
                        let (gi, pi) = if transpose { (y, x) } else { (x, y) };
                        let d = dist(&gts[gi], &preds[pi]);
                        if d < radius {
                            d
                        } else {
                            forbidden
                        }
                    })
                    .collect()
            })
            .collect();
        for (ai, bi) in hungarian(&cost).into_iter().enumerate() {
            let (gi, pi) = if transpose { (b[bi], a[ai]) } else { (a[ai], b[bi]) };
            if dist(&gts[gi], &preds[pi]) < radius {
                gt_done[gi] = true;
                pred_done[pi] = true;
                matches.push((gi, pi));
            }
        }
    }
    matches.sort_unstable();
    let mut out = FrameMatch::default();
    for (gi, pi) in matches {
        let (g, t) = (gts[gi].instance, preds[pi].track);
        if carry.insert(g, t).is_some_and(|prev| prev != t) {
            out.mismatches += 1;
            out.switched.push(g);
        }
        out.matches.push((g, t));
    }
    out.missed = (0..gts.len()).filter(|&i| !gt_done[i]).map(|i| gts[i].instance).collect();
    out.spurious = (0..preds.len()).filter(|&j| !pred_done[j]).map(|j| preds[j].track).collect();
    out.misses = out.missed.len();
    out.false_positives = out.spurious.len();
    out
}

/// `1 - (m + fp + mme) / gt`.
pub fn mota(misses: usize, false_positives: usize, mismatches: usize, gt_count: usize) -> Result<f64> {
    if gt_count == 0 {
        return Err(Error::UndefinedMetric("MOTA needs at least one ground-truth object".into()));
    }
    Ok(1.0 - (misses + false_positives + mismatches) as f64 / gt_count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Some ratio had a zero denominator and was reported as 0.
    pub undefined: bool,
}

/// Detection-level precision, recall and F1 from matched, missed and
/// spurious counts.
pub fn prf(true_positives: usize, misses: usize, false_positives: usize) -> Prf {
    let mut undefined = false;
    let mut ratio = |num: f64, den: f64| {
        if den > 0.0 {
            num / den
        } else {
            undefined = true;
            0.0
        }
    };
    let tp = true_positives as f64;
    let precision = ratio(tp, tp + false_positives as f64);
    let recall = ratio(tp, tp + misses as f64);
    let f1 = ratio(2.0 * precision * recall, precision + recall);
    Prf {
        precision,
        recall,
        f1,
        undefined,
    }
}

/// Integer CLEAR-MOT counters; merging is plain addition.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub matches: usize,
    pub misses: usize,
    pub false_positives: usize,
    pub mismatches: usize,
    pub gt_count: usize,
}

impl Counts {
    pub fn merge(&mut self, o: &Counts) {
        self.matches += o.matches;
        self.misses += o.misses;
        self.false_positives += o.false_positives;
        self.mismatches += o.mismatches;
        self.gt_count += o.gt_count;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    #[serde(flatten)]
    pub counts: Counts,
    /// `None` when there is no ground truth.
    pub mota: Option<f64>,
    #[serde(flatten)]
    pub prf: Prf,
}

impl From<Counts> for Metrics {
    fn from(c: Counts) -> Self {
        Metrics {
            counts: c,
            mota: mota(c.misses, c.false_positives, c.mismatches, c.gt_count).ok(),
            prf: prf(c.matches, c.misses, c.false_positives),
        }
    }
}

/// Mean voxel IoU of matched objects.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GridIouReport {
    /// Mean IoU and pair count per class.
    pub per_class: BTreeMap<ObjectClass, (f64, usize)>,
    pub overall: Option<f64>,
    pub pairs: usize,
}

/// Groups `(class, predicted, ground truth)` pairs by class. Pairs with
/// grids of different resolution are skipped.
pub fn grid_iou_report<'a>(pairs: impl IntoIterator<Item = (ObjectClass, &'a OccupancyGrid, &'a OccupancyGrid)>) -> GridIouReport {
    let mut sums: BTreeMap<ObjectClass, (f64, usize)> = BTreeMap::new();
    let (mut total, mut n) = (0.0, 0usize);
    for (class, p, g) in pairs {
        let Ok(iou) = iou3d_grids(p, g) else { continue };
        let e = sums.entry(class).or_default();
        e.0 += iou;
        e.1 += 1;
        total += iou;
        n += 1;
    }
    GridIouReport {
        per_class: sums.into_iter().map(|(c, (s, k))| (c, (s / k as f64, k))).collect(),
        overall: (n > 0).then(|| total / n as f64),
        pairs: n,
    }
}

/// Scoring of one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceScore {
    pub sequence_id: String,
    pub counts: Counts,
    pub per_class: BTreeMap<ObjectClass, Counts>,
    /// `(class, tracklet index, gt instance)` of each instance's most
    /// frequently matched tracklet.
    pub grid_pairs: Vec<(ObjectClass, usize, u32)>,
}

/// Frame-by-frame CLEAR-MOT over one sequence. Misses, matches and
/// mismatches are attributed to the ground-truth class, false positives to
/// the predicted tracklet's class.
pub fn score_sequence(pred: &TrackletFile, gt: &SceneSequence, radius: f64) -> SequenceScore {
    let mut carry = MatchCarry::new();
    let mut counts = Counts::default();
    let mut per_class: BTreeMap<ObjectClass, Counts> = BTreeMap::new();
    let mut hits: BTreeMap<u32, BTreeMap<usize, usize>> = BTreeMap::new();
    let track_class: BTreeMap<u32, (usize, ObjectClass)> = pred
        .tracklets
        .iter()
        .enumerate()
        .map(|(k, t)| (t.instance_id, (k, t.class)))
        .collect();
    for f in 0..gt.num_frames() {
        let gt_objs = gt.gt_frame(f);
        let gts: Vec<GtPoint> = gt_objs
            .iter()
            .map(|o| GtPoint {
                instance: o.instance,
                center: o.pose.translation,
            })
            .collect();
        let preds: Vec<PredPoint> = pred
            .tracklets
            .iter()
            .filter_map(|t| {
                t.center_at(f as u32).map(|c| PredPoint {
                    track: t.instance_id,
                    center: c,
                })
            })
            .collect();
        let fm = match_frame(&preds, &gts, radius, &mut carry);
        let class_of = |inst: u32| gt.config.objects[inst as usize].class;
        let fc = Counts {
            matches: fm.matches.len(),
            misses: fm.misses,
            false_positives: fm.false_positives,
            mismatches: fm.mismatches,
            gt_count: gts.len(),
        };
        counts.merge(&fc);
        for g in &gts {
            per_class.entry(class_of(g.instance)).or_default().gt_count += 1;
        }
        for &(g, t) in &fm.matches {
            per_class.entry(class_of(g)).or_default().matches += 1;
            *hits.entry(g).or_default().entry(track_class[&t].0).or_default() += 1;
        }
        for &g in &fm.missed {
            per_class.entry(class_of(g)).or_default().misses += 1;
        }
        for &g in &fm.switched {
            per_class.entry(class_of(g)).or_default().mismatches += 1;
        }
        for t in &fm.spurious {
            per_class.entry(track_class[t].1).or_default().false_positives += 1;
        }
    }
    let grid_pairs = hits
        .into_iter()
        .map(|(g, tracks)| {
            // most frames, ties to the lower tracklet index
            let (k, _) = tracks
                .into_iter()
                .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
                .expect("non-empty");
            (gt.config.objects[g as usize].class, k, g)
        })
        .collect();
    SequenceScore {
        sequence_id: gt.id.clone(),
        counts,
        per_class,
        grid_pairs,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackReport {
    pub format_version: u32,
    pub radius: f64,
    pub overall: Metrics,
    pub per_class: BTreeMap<ObjectClass, Metrics>,
    pub per_sequence: BTreeMap<String, Metrics>,
    pub grid_iou: GridIouReport,
}

/// Accumulated report over sequences. Every prediction needs a ground-truth
/// sequence of the same id and vice versa.
pub fn evaluate(preds: &[TrackletFile], gts: &[SceneSequence], radius: f64) -> Result<TrackReport> {
    if !(radius > 0.0) {
        return Err(Error::InvalidInput(format!("match radius must be positive, got {radius}")));
    }
    let pred_ids: BTreeSet<&str> = preds.iter().map(|p| p.sequence_id.as_str()).collect();
    let gt_ids: BTreeSet<&str> = gts.iter().map(|g| g.id.as_str()).collect();
    if pred_ids.len() != preds.len() || gt_ids.len() != gts.len() {
        return Err(Error::InvalidInput("duplicate sequence ids".into()));
    }
    let no_gt: Vec<&str> = pred_ids.difference(&gt_ids).copied().collect();
    let no_pred: Vec<&str> = gt_ids.difference(&pred_ids).copied().collect();
    if !no_gt.is_empty() || !no_pred.is_empty() {
        return Err(Error::InvalidInput(format!(
            "sequence ids differ; without ground truth: [{}]; without predictions: [{}]",
            no_gt.join(", "),
            no_pred.join(", ")
        )));
    }
    let by_id: BTreeMap<&str, &SceneSequence> = gts.iter().map(|g| (g.id.as_str(), g)).collect();
    let scores: Vec<(SequenceScore, &TrackletFile, &SceneSequence)> = preds
        .par_iter()
        .map(|p| {
            let g = by_id[p.sequence_id.as_str()];
            (score_sequence(p, g, radius), p, g)
        })
        .collect();
    let mut overall = Counts::default();
    let mut per_class: BTreeMap<ObjectClass, Counts> = BTreeMap::new();
    let mut per_sequence = BTreeMap::new();
    let mut grids = Vec::new();
    for (s, p, g) in &scores {
        overall.merge(&s.counts);
        for (c, k) in &s.per_class {
            per_class.entry(*c).or_default().merge(k);
        }
        per_sequence.insert(s.sequence_id.clone(), Metrics::from(s.counts));
        for &(class, k, inst) in &s.grid_pairs {
            grids.push((class, &p.tracklets[k].grid, &g.config.objects[inst as usize].grid));
        }
    }
    Ok(TrackReport {
        format_version: REPORT_FORMAT_VERSION,
        radius,
        overall: overall.into(),
        per_class: per_class.into_iter().map(|(c, k)| (c, k.into())).collect(),
        per_sequence,
        grid_iou: grid_iou_report(grids),
    })
}

impl TrackReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let r: TrackReport = serde_json::from_str(s)?;
        if r.format_version != REPORT_FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported report format version {}", r.format_version)));
        }
        Ok(r)
    }

    /// Aligned text table with one row for the total, each class and each
    /// sequence.
    pub fn table(&self) -> String {
        let mut rows: Vec<(String, &Metrics)> = vec![("overall".into(), &self.overall)];
        rows.extend(self.per_class.iter().map(|(c, m)| (format!("class {c}"), m)));
        rows.extend(self.per_sequence.iter().map(|(s, m)| (format!("seq {s}"), m)));
        let w = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max(5);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<w$} {:>7} {:>7} {:>5} {:>6} {:>9} {:>6} {:>7}",
            "", "m", "fp", "mme", "F1", "Precision", "Recall", "MOTA%"
        );
        for (name, m) in rows {
            let mota = m.mota.map_or("n/a".to_string(), |v| format!("{:.1}", 100.0 * v));
            let _ = writeln!(
                out,
                "{:<w$} {:>7} {:>7} {:>5} {:>6.3} {:>9.3} {:>6.3} {:>7}",
                name, m.counts.misses, m.counts.false_positives, m.counts.mismatches, m.prf.f1, m.prf.precision, m.prf.recall, mota
            );
        }
        if let Some(iou) = self.grid_iou.overall {
            let _ = writeln!(out, "mean grid IoU {:.3} over {} objects", iou, self.grid_iou.pairs);
        }
        out
    }
}

/// Ground truth as tracklets, one per instance, for self-evaluation.
pub fn gt_tracklets(seq: &SceneSequence) -> TrackletFile {
    let mut entries: BTreeMap<u32, Vec<TrackletEntry>> = BTreeMap::new();
    let mut n = 0;
    for f in 0..seq.num_frames() {
        for o in seq.gt_frame(f) {
            entries.entry(o.instance).or_default().push(TrackletEntry {
                frame: f as u32,
                detection: n,
                pose: o.pose,
            });
            n += 1;
        }
    }
    let tracklets = entries
        .into_iter()
        .map(|(inst, entries)| Tracklet {
            instance_id: inst,
            class: seq.config.objects[inst as usize].class,
            entries,
            grid: seq.config.objects[inst as usize].grid.clone(),
        })
        .collect();
    TrackletFile::new(seq.id.clone(), seq.num_frames(), tracklets)
}

/// Trajectory dump for plotting: `sequence,source,id,class,frame,x,y,z`.
pub fn trajectories_csv(preds: &[TrackletFile], gts: &[SceneSequence]) -> String {
    let mut out = String::from("sequence,source,id,class,frame,x,y,z\n");
    let mut rows = |seq: &str, src: &str, file: &TrackletFile| {
        for t in &file.tracklets {
            for e in &t.entries {
                let c = e.pose.translation;
                let _ = writeln!(out, "{seq},{src},{},{},{},{},{},{}", t.instance_id, t.class, e.frame, c.x, c.y, c.z);
            }
        }
    };
    for g in gts {
        rows(&g.id, "gt", &gt_tracklets(g));
    }
    for p in preds {
        rows(&p.sequence_id, "pred", p);
    }
    out
}
