use std::collections::BTreeMap;
use std::path::Path;

use base64::Engine;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{is_voxel_param, GnnConfig, GraphInput, NodeInput, Params, TrackerNet, NODE_DIM};
use super::tape::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::losses::{default_w_act, loss_track, LossWeights};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSchedule {
    /// Epochs with the voxel encoder frozen and only the tracking loss.
    pub pretrain_epochs: usize,
    /// Epochs with everything trainable and the pose and reconstruction terms
    /// added to the objective.
    pub joint_epochs: usize,
    pub learning_rate: f64,
    /// L2 penalty folded into the gradient.
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            pretrain_epochs: 40,
            joint_epochs: 20,
            learning_rate: 1e-3,
            weight_decay: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.weight_decay >= 0.0) {
            return Err(Error::Config("learning_rate and weight_decay must be non-negative".into()));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.epsilon > 0.0) {
            return Err(Error::Config("Adam betas must be in [0, 1) and epsilon positive".into()));
        }
        Ok(())
    }

    pub fn total_epochs(&self) -> usize {
        self.pretrain_epochs + self.joint_epochs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Pretrain,
    Joint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub stage: Stage,
    pub track_loss: f64,
    pub noc_loss: f64,
    pub rec_loss: f64,
    pub total_loss: f64,
}

/// A training graph with per-edge targets.
///
/// `noc_loss` and `rec_loss` are the mean pose and reconstruction losses of
/// the graph's detections. They come from the detection front end, which has
/// no trainable parameters here, so they enter the joint objective as
/// constants.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledGraph {
    pub input: GraphInput,
    pub labels: Vec<bool>,
    pub noc_loss: f64,
    pub rec_loss: f64,
}

impl LabeledGraph {
    pub fn validate(&self) -> Result<()> {
        self.input.validate()?;
        if self.labels.len() != self.input.edges.len() {
            return Err(Error::ShapeMismatch {
                op: "labeled_graph",
                lhs: vec![self.input.edges.len()],
                rhs: vec![self.labels.len()],
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub step: u64,
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
}

pub struct Trainer {
    pub net: TrackerNet,
    pub schedule: TrainSchedule,
    pub weights: LossWeights,
    pub adam: AdamState,
    pub history: Vec<EpochLog>,
}

impl Trainer {
    pub fn new(net: TrackerNet, schedule: TrainSchedule, weights: LossWeights) -> Result<Self> {
        schedule.validate()?;
        weights.validate()?;
        Ok(Trainer {
            net,
            schedule,
            weights,
            adam: AdamState::default(),
            history: vec![],
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.history.len()
    }

    pub fn stage_of(&self, epoch: usize) -> Stage {
        if epoch < self.schedule.pretrain_epochs {
            Stage::Pretrain
        } else {
            Stage::Joint
        }
    }

    /// One optimizer step on one graph. Returns the tracking loss, or `None`
    /// for a graph without edges.
    ///
    /// `fixed_nodes` replaces the voxel encoder with precomputed embeddings,
    /// which also freezes it.
    pub fn step(&mut self, graph: &LabeledGraph, fixed_nodes: Option<&[[f64; NODE_DIM]]>) -> Result<Option<f64>> {
        graph.validate()?;
        if graph.input.edges.is_empty() {
            return Ok(None);
        }
        let mut tape = Tape::new();
        let bound = self.net.bind(&mut tape);
        let nodes = match fixed_nodes {
            Some(e) => {
                if e.len() != graph.input.nodes.len() {
                    return Err(Error::ShapeMismatch {
                        op: "fixed_nodes",
                        lhs: vec![graph.input.nodes.len()],
                        rhs: vec![e.len()],
                    });
                }
                NodeInput::Embeddings(e.to_vec())
            }
            None => graph.input.nodes.clone(),
        };
        let a = self.net.node_var(&mut tape, &bound, &nodes)?;
        let probs = self.net.forward_from_nodes(&mut tape, &bound, a, &graph.input)?;
        let w_act = self.weights.w_act.unwrap_or_else(|| default_w_act(&graph.labels));
        let lv = loss_track(&tape.value(probs).data, &graph.labels, w_act)?;
        let loss = tape.scalar_fn(probs, lv.value, lv.grad)?;
        tape.backward(loss)?;
        let mut grads = BTreeMap::new();
        for (name, var) in bound.iter() {
            if fixed_nodes.is_some() && is_voxel_param(name) {
                continue;
            }
            if let Some(g) = tape.grad(*var) {
                grads.insert(name.clone(), g.to_vec());
            }
        }
        self.apply_adam(&grads);
        Ok(Some(lv.value))
    }

    fn apply_adam(&mut self, grads: &BTreeMap<String, Vec<f64>>) {
        let s = &self.schedule;
        self.adam.step += 1;
        let t = self.adam.step as i32;
        let bc1 = 1.0 - s.beta1.powi(t);
        let bc2 = 1.0 - s.beta2.powi(t);
        for (name, g) in grads {
            let p = self.net.params.tensors.get_mut(name).expect("bound parameter");
            let m = self.adam.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let v = self.adam.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            for i in 0..g.len() {
                let gi = g[i] + s.weight_decay * p.data[i];
                m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * gi;
                v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * gi * gi;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p.data[i] -= s.learning_rate * mh / (vh.sqrt() + s.epsilon);
            }
        }
    }

    fn epoch_order(&self, epoch: usize, n: usize) -> Vec<usize> {
        let seed = self.net.config.seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        order
    }

    /// Runs the remaining epochs of the schedule, at most `max_epochs` of
    /// them, calling `on_epoch` after each.
    pub fn run(
        &mut self,
        data: &[LabeledGraph],
        max_epochs: Option<usize>,
        mut on_epoch: impl FnMut(&EpochLog),
    ) -> Result<()> {
        if data.is_empty() {
            return Err(Error::EmptyDataset("no training graphs".into()));
        }
        for g in data {
            g.validate()?;
        }
        let end = self.schedule.total_epochs().min(self.epochs_done().saturating_add(max_epochs.unwrap_or(usize::MAX)));
        let mut cache: Option<Vec<Vec<[f64; NODE_DIM]>>> = None;
        while self.epochs_done() < end {
            let epoch = self.epochs_done();
            let stage = self.stage_of(epoch);
            if stage == Stage::Pretrain && self.net.config.use_geometry && cache.is_none() {
                cache = Some(self.cache_embeddings(data)?);
            }
            let (mut track, mut noc, mut rec, mut count) = (0.0, 0.0, 0.0, 0usize);
            for i in self.epoch_order(epoch, data.len()) {
                let fixed = match (&cache, stage) {
                    (Some(c), Stage::Pretrain) => Some(c[i].as_slice()),
                    _ => None,
                };
                if let Some(l) = self.step(&data[i], fixed)? {
                    track += l;
                    noc += data[i].noc_loss;
                    rec += data[i].rec_loss;
                    count += 1;
                }
            }
            let n = count.max(1) as f64;
            let (track, noc, rec) = (track / n, noc / n, rec / n);
            let total = match stage {
                Stage::Pretrain => track,
                Stage::Joint => track + self.weights.noc_weight * noc + self.weights.rec_weight * rec,
            };
            let log = EpochLog {
                epoch,
                stage,
                track_loss: track,
                noc_loss: noc,
                rec_loss: rec,
                total_loss: total,
            };
            log::info!("epoch {epoch} ({stage:?}): loss {total:.6}");
            on_epoch(&log);
            self.history.push(log);
        }
        Ok(())
    }

    fn cache_embeddings(&self, data: &[LabeledGraph]) -> Result<Vec<Vec<[f64; NODE_DIM]>>> {
        data.iter()
            .map(|g| match &g.input.nodes {
                NodeInput::Grids(grids) => self.net.embed_grids(grids),
                NodeInput::Embeddings(e) => Ok(e.clone()),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Blob {
    shape: Vec<usize>,
    /// base64 of little-endian f64
    data: String,
}

fn encode_f64(v: &[f64]) -> String {
    let bytes: Vec<u8> = v.iter().flat_map(|x| x.to_le_bytes()).collect();
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

fn decode_f64(s: &str) -> Result<Vec<f64>> {
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(s.as_bytes())
        .map_err(|e| Error::Format(format!("tensor blob: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Format("tensor blob length is not a multiple of 8".into()));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct OptimizerBlob {
    step: u64,
    m: BTreeMap<String, String>,
    v: BTreeMap<String, String>,
}

/// Serialized network parameters plus the optimizer state and loss history
/// needed to resume training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: GnnConfig,
    pub schedule: TrainSchedule,
    pub weights: LossWeights,
    layers: BTreeMap<String, Blob>,
    optimizer: OptimizerBlob,
    pub history: Vec<EpochLog>,
}

impl Checkpoint {
    pub fn from_trainer(t: &Trainer) -> Self {
        let layers = t
            .net
            .params
            .tensors
            .iter()
            .map(|(k, v)| {
                (
                    k.clone(),
                    Blob {
                        shape: v.shape.clone(),
                        data: encode_f64(&v.data),
                    },
                )
            })
            .collect();
        let enc = |m: &BTreeMap<String, Vec<f64>>| m.iter().map(|(k, v)| (k.clone(), encode_f64(v))).collect();
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            config: t.net.config.clone(),
            schedule: t.schedule.clone(),
            weights: t.weights,
            layers,
            optimizer: OptimizerBlob {
                step: t.adam.step,
                m: enc(&t.adam.m),
                v: enc(&t.adam.v),
            },
            history: t.history.clone(),
        }
    }

    pub fn net(&self) -> Result<TrackerNet> {
        let mut tensors = BTreeMap::new();
        for (k, b) in &self.layers {
            tensors.insert(k.clone(), Tensor::new(b.shape.clone(), decode_f64(&b.data)?)?);
        }
        TrackerNet::from_params(self.config.clone(), Params { tensors })
    }

    pub fn into_trainer(self) -> Result<Trainer> {
        let net = self.net()?;
        let mut t = Trainer::new(net, self.schedule, self.weights)?;
        let dec = |m: &BTreeMap<String, String>| -> Result<BTreeMap<String, Vec<f64>>> {
            m.iter().map(|(k, v)| Ok((k.clone(), decode_f64(v)?))).collect()
        };
        t.adam = AdamState {
            step: self.optimizer.step,
            m: dec(&self.optimizer.m)?,
            v: dec(&self.optimizer.v)?,
        };
        t.history = self.history;
        Ok(t)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(s)?;
        if c.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {}", c.format_version)));
        }
        c.net()?;
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
