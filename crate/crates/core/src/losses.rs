//! Training losses with analytic gradients.
//!
//! Each loss returns its value together with the gradient with respect to
//! the prediction, flattened in input order, so it can be attached to the
//! autodiff tape with [`crate::neural::Tape::scalar_fn`].

use serde::{Deserialize, Serialize};

use crate::association::ObjectClass;
use crate::error::{Error, Result};
use crate::geometry::{OccupancyGrid, Vec3};

/// Probabilities are clamped to `[CLAMP, 1 - CLAMP]` before taking logs.
pub const PROB_CLAMP: f64 = 1e-7;

/// Transition point of the smooth-L1 loss in normalized coordinates.
pub const HUBER_DELTA: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub noc_weight: f64,
    pub rec_weight: f64,
    /// Fixed occupied-cell weight; per-object balance when absent.
    pub w_occ: Option<f64>,
    /// Fixed active-edge weight; per-graph balance when absent.
    pub w_act: Option<f64>,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            noc_weight: 3.0,
            rec_weight: 0.75,
            w_occ: None,
            w_act: None,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if !ok(self.noc_weight) || !ok(self.rec_weight) {
            return Err(Error::Config("loss weights must be positive".into()));
        }
        if self.w_occ.is_some_and(|w| !ok(w)) || self.w_act.is_some_and(|w| !ok(w)) {
            return Err(Error::Config("w_occ and w_act must be positive".into()));
        }
        Ok(())
    }
}

fn huber(e: f64) -> (f64, f64) {
    if e.abs() < HUBER_DELTA {
        (0.5 * e * e, e)
    } else {
        (HUBER_DELTA * (e.abs() - 0.5 * HUBER_DELTA), HUBER_DELTA * e.signum())
    }
}

fn smooth_l1(pred: &[Vec3], gt: impl Iterator<Item = Vec3>) -> LossValue {
    let n = (pred.len() * 3) as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(pred.len() * 3);
    for (p, g) in pred.iter().zip(gt) {
        for k in 0..3 {
            let (v, d) = huber(p[k] - g[k]);
            value += v;
            grad.push(d / n);
        }
    }
    LossValue { value: value / n, grad }
}

/// Rotation by 180 degrees about the normalized up axis.
pub fn half_turn(p: &Vec3) -> Vec3 {
    Vec3::new(-p.x, -p.y, p.z)
}

/// Smooth-L1 over coordinates, averaged over points and channels. Tables
/// take the minimum over the target and its half-turn rotation.
pub fn loss_noc(pred: &[Vec3], gt: &[Vec3], class: ObjectClass) -> Result<LossValue> {
    if pred.len() != gt.len() {
        return Err(Error::ShapeMismatch {
            op: "loss_noc",
            lhs: vec![pred.len(), 3],
            rhs: vec![gt.len(), 3],
        });
    }
    if pred.is_empty() {
        return Ok(LossValue { value: 0.0, grad: vec![] });
    }
    let direct = smooth_l1(pred, gt.iter().copied());
    if class != ObjectClass::Table {
        return Ok(direct);
    }
    let turned = smooth_l1(pred, gt.iter().map(half_turn));
    Ok(if turned.value < direct.value { turned } else { direct })
}

/// Occupied-cell weight balancing free against occupied cells, in `[1, 50]`.
pub fn default_w_occ(gt: &OccupancyGrid) -> f64 {
    let occ = gt.count();
    if occ == 0 {
        return 1.0;
    }
    let free = gt.cells().len() - occ;
    (free as f64 / occ as f64).clamp(1.0, 50.0)
}

/// Active-edge weight balancing non-active against active edges, in `[1, 100]`.
pub fn default_w_act(labels: &[bool]) -> f64 {
    let act = labels.iter().filter(|l| **l).count();
    if act == 0 {
        return 1.0;
    }
    ((labels.len() - act) as f64 / act as f64).clamp(1.0, 100.0)
}

/// Compensated (Neumaier) summation.
#[derive(Default)]
struct Sum {
    total: f64,
    carry: f64,
}

impl Sum {
    fn add(&mut self, v: f64) {
        let t = self.total + v;
        if self.total.abs() >= v.abs() {
            self.carry += (self.total - t) + v;
        } else {
            self.carry += (v - t) + self.total;
        }
        self.total = t;
    }

    fn value(&self) -> f64 {
        self.total + self.carry
    }
}

/// `w_pos * mean(-ln p | pos) + mean(-ln(1 - p) | neg)`; an empty set adds 0.
fn balanced_bce(probs: &[f64], labels: impl Iterator<Item = bool> + Clone, w_pos: f64) -> LossValue {
    let n_pos = labels.clone().filter(|l| *l).count();
    let n_neg = probs.len() - n_pos;
    let (mut pos_sum, mut neg_sum) = (Sum::default(), Sum::default());
    let mut grad = Vec::with_capacity(probs.len());
    for (&p, pos) in probs.iter().zip(labels) {
        let clamped = !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p);
        let q = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        if pos {
            pos_sum.add(-q.ln());
            let w = w_pos / n_pos as f64;
            grad.push(if clamped { 0.0 } else { -w / q });
        } else {
            neg_sum.add(-(1.0 - q).ln());
            let w = 1.0 / n_neg as f64;
            grad.push(if clamped { 0.0 } else { w / (1.0 - q) });
        }
    }
    let mut value = 0.0;
    if n_pos > 0 {
        value += w_pos * (pos_sum.value() / n_pos as f64);
    }
    if n_neg > 0 {
        value += neg_sum.value() / n_neg as f64;
    }
    LossValue { value, grad }
}

/// Balanced binary cross-entropy between predicted occupancy probabilities
/// and a target grid.
pub fn loss_rec(pred_probs: &[f64], gt: &OccupancyGrid, w_occ: f64) -> Result<LossValue> {
    if pred_probs.len() != gt.cells().len() {
        return Err(Error::ShapeMismatch {
            op: "loss_rec",
            lhs: vec![pred_probs.len()],
            rhs: vec![gt.cells().len()],
        });
    }
    if !(w_occ > 0.0) {
        return Err(Error::InvalidInput(format!("w_occ must be positive, got {w_occ}")));
    }
    Ok(balanced_bce(pred_probs, gt.cells().iter().copied(), w_occ))
}

/// Balanced binary cross-entropy over edge activation probabilities.
pub fn loss_track(pred_probs: &[f64], labels: &[bool], w_act: f64) -> Result<LossValue> {
    if pred_probs.len() != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "loss_track",
            lhs: vec![pred_probs.len()],
            rhs: vec![labels.len()],
        });
    }
    if !(w_act > 0.0) {
        return Err(Error::InvalidInput(format!("w_act must be positive, got {w_act}")));
    }
    Ok(balanced_bce(pred_probs, labels.iter().copied(), w_act))
}
