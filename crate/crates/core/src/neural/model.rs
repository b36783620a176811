use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, OccupancyGrid, Pose7, Vec3, GRID_CELLS, GRID_RES};

pub const EDGE_FEATURE_DIM: usize = 8;
pub const EDGE_DIM: usize = 12;
pub const NODE_DIM: usize = 16;

const CONV1_KERNEL: usize = 4;
const CONV2_KERNEL: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GnnConfig {
    pub message_passing_steps: usize,
    /// Number of consecutive frames a graph edge may span, inclusive.
    pub window: usize,
    pub edge_encoder_hidden: usize,
    pub edge_update_hidden: usize,
    pub node_update_hidden: usize,
    pub classifier_hidden: usize,
    pub voxel_channels: [usize; 2],
    pub voxel_hidden: usize,
    pub leaky_slope: f64,
    /// When false, node embeddings are zero and the voxel encoder is unused.
    pub use_geometry: bool,
    pub seed: u64,
}

impl Default for GnnConfig {
    fn default() -> Self {
        GnnConfig {
            message_passing_steps: 4,
            window: 5,
            edge_encoder_hidden: 32,
            edge_update_hidden: 64,
            node_update_hidden: 64,
            classifier_hidden: 16,
            voxel_channels: [8, 16],
            voxel_hidden: 64,
            leaky_slope: 0.01,
            use_geometry: true,
            seed: 0,
        }
    }
}

impl GnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.message_passing_steps < 1 {
            return Err(Error::Config("message_passing_steps must be at least 1".into()));
        }
        if self.window < 2 {
            return Err(Error::Config("window must be at least 2".into()));
        }
        let sizes = [
            self.edge_encoder_hidden,
            self.edge_update_hidden,
            self.node_update_hidden,
            self.classifier_hidden,
            self.voxel_channels[0],
            self.voxel_channels[1],
            self.voxel_hidden,
        ];
        if sizes.contains(&0) {
            return Err(Error::Config("hidden sizes must be positive".into()));
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::Config("leaky_slope must be in [0, 1)".into()));
        }
        Ok(())
    }

    /// Parameter names and shapes in initialization order.
    pub fn layer_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut dense = |name: &str, fin: usize, fout: usize| {
            out.push((format!("{name}.weight"), vec![fin, fout]));
            out.push((format!("{name}.bias"), vec![fout]));
        };
        dense("edge_encoder.0", EDGE_FEATURE_DIM, self.edge_encoder_hidden);
        dense("edge_encoder.1", self.edge_encoder_hidden, EDGE_DIM);
        dense("edge_update.0", EDGE_DIM + 2 * NODE_DIM, self.edge_update_hidden);
        dense("edge_update.1", self.edge_update_hidden, EDGE_DIM);
        dense("node_update.0", NODE_DIM + EDGE_DIM, self.node_update_hidden);
        dense("node_update.1", self.node_update_hidden, NODE_DIM);
        dense("classifier.0", EDGE_DIM, self.classifier_hidden);
        dense("classifier.1", self.classifier_hidden, 1);
        let [c1, c2] = self.voxel_channels;
        let flat = c2 * self.voxel_flat_cells();
        dense("voxel_encoder.fc0", flat, self.voxel_hidden);
        dense("voxel_encoder.fc1", self.voxel_hidden, NODE_DIM);
        let k1 = CONV1_KERNEL;
        let k2 = CONV2_KERNEL;
        out.push(("voxel_encoder.conv0.weight".into(), vec![c1, 1, k1, k1, k1]));
        out.push(("voxel_encoder.conv0.bias".into(), vec![c1]));
        out.push(("voxel_encoder.conv1.weight".into(), vec![c2, c1, k2, k2, k2]));
        out.push(("voxel_encoder.conv1.bias".into(), vec![c2]));
        out
    }

    fn voxel_flat_cells(&self) -> usize {
        let side = GRID_RES / CONV1_KERNEL / CONV2_KERNEL;
        side * side * side
    }
}

pub fn is_voxel_param(name: &str) -> bool {
    name.starts_with("voxel_encoder.")
}

/// Relative pose between two posed detections, from the earlier (`a`) to the
/// later (`b`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeFeature {
    pub rel_translation: Vec3,
    pub rel_euler: Vec3,
    pub log_scale_ratio: f64,
    pub rel_time: i64,
}

impl EdgeFeature {
    pub fn between(a: &Pose7, frame_a: u32, b: &Pose7, frame_b: u32) -> Self {
        let ea = a.to_euler(0).euler;
        let eb = b.to_euler(0).euler;
        EdgeFeature {
            rel_translation: b.translation - a.translation,
            rel_euler: (eb - ea).map(wrap_angle),
            log_scale_ratio: (b.scale / a.scale).ln(),
            rel_time: frame_b as i64 - frame_a as i64,
        }
    }

    pub fn to_array(&self) -> [f64; EDGE_FEATURE_DIM] {
        let (t, e) = (self.rel_translation, self.rel_euler);
        [t.x, t.y, t.z, e.x, e.y, e.z, self.log_scale_ratio, self.rel_time as f64]
    }

    pub fn validate(&self) -> Result<()> {
        if self.to_array().iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidInput("edge feature is not finite".into()))
        }
    }
}

/// Node inputs to the network: raw grids, or embeddings computed elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub enum NodeInput {
    Grids(Vec<OccupancyGrid>),
    Embeddings(Vec<[f64; NODE_DIM]>),
}

impl NodeInput {
    pub fn len(&self) -> usize {
        match self {
            NodeInput::Grids(g) => g.len(),
            NodeInput::Embeddings(e) => e.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A graph ready for the network: edge `k` joins `edges[k].0` to `edges[k].1`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphInput {
    pub nodes: NodeInput,
    pub edges: Vec<(usize, usize)>,
    pub edge_features: Vec<[f64; EDGE_FEATURE_DIM]>,
}

impl GraphInput {
    pub fn validate(&self) -> Result<()> {
        if self.edges.len() != self.edge_features.len() {
            return Err(Error::ShapeMismatch {
                op: "graph_input",
                lhs: vec![self.edges.len()],
                rhs: vec![self.edge_features.len()],
            });
        }
        let n = self.nodes.len();
        if let Some(&(a, b)) = self.edges.iter().find(|(a, b)| *a >= n || *b >= n || a == b) {
            return Err(Error::InvalidInput(format!("edge ({a}, {b}) invalid for {n} nodes")));
        }
        if self.edge_features.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("edge feature is not finite".into()));
        }
        Ok(())
    }
}

/// Named parameter tensors, ordered by name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Params {
    pub tensors: BTreeMap<String, Tensor>,
}

impl Params {
    pub fn get(&self, name: &str) -> &Tensor {
        &self.tensors[name]
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }
}

/// Parameters placed on a tape.
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Var {
        self.vars[name]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

/// The association network: edge encoder, voxel encoder, message passing
/// and edge classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackerNet {
    pub config: GnnConfig,
    pub params: Params,
}

impl TrackerNet {
    /// Uniform initialization in `±1/sqrt(fan_in)` for weights and biases.
    pub fn new(config: GnnConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut tensors = BTreeMap::new();
        let mut fan_in = 1;
        for (name, shape) in config.layer_shapes() {
            if name.ends_with(".weight") {
                fan_in = if shape.len() == 2 { shape[0] } else { shape[1..].iter().product() };
            }
            let bound = 1.0 / (fan_in as f64).sqrt();
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
            tensors.insert(name, Tensor::new(shape, data)?);
        }
        Ok(TrackerNet {
            config,
            params: Params { tensors },
        })
    }

    pub fn from_params(config: GnnConfig, params: Params) -> Result<Self> {
        config.validate()?;
        let expected = config.layer_shapes();
        if expected.len() != params.tensors.len() {
            return Err(Error::Format(format!(
                "expected {} parameter tensors, found {}",
                expected.len(),
                params.tensors.len()
            )));
        }
        for (name, shape) in expected {
            match params.tensors.get(&name) {
                Some(t) if t.shape == shape => {}
                Some(t) => {
                    return Err(Error::ShapeMismatch {
                        op: "load_params",
                        lhs: shape,
                        rhs: t.shape.clone(),
                    })
                }
                None => return Err(Error::Format(format!("missing parameter {name}"))),
            }
        }
        Ok(TrackerNet { config, params })
    }

    pub fn bind(&self, tape: &mut Tape) -> Bound {
        let vars = self
            .params
            .tensors
            .iter()
            .map(|(k, t)| (k.clone(), tape.leaf(t.clone())))
            .collect();
        Bound { vars }
    }

    fn dense(&self, tape: &mut Tape, b: &Bound, name: &str, x: Var) -> Result<Var> {
        tape.affine(x, b.var(&format!("{name}.weight")), b.var(&format!("{name}.bias")))
    }

    /// affine, leaky ReLU, affine
    fn mlp(&self, tape: &mut Tape, b: &Bound, name: &str, x: Var) -> Result<Var> {
        let h = self.dense(tape, b, &format!("{name}.0"), x)?;
        let h = tape.leaky_relu(h, self.config.leaky_slope);
        self.dense(tape, b, &format!("{name}.1"), h)
    }

    /// `[E, 8]` features to `[E, 12]` embeddings.
    pub fn encode_edges(&self, tape: &mut Tape, b: &Bound, features: Var) -> Result<Var> {
        self.mlp(tape, b, "edge_encoder", features)
    }

    /// `[N, 1, 32, 32, 32]` occupancy volumes to `[N, 16]` embeddings.
    pub fn encode_voxels(&self, tape: &mut Tape, b: &Bound, grids: Var) -> Result<Var> {
        let slope = self.config.leaky_slope;
        let n = tape.value(grids).shape[0];
        let h = tape.conv3d(
            grids,
            b.var("voxel_encoder.conv0.weight"),
            b.var("voxel_encoder.conv0.bias"),
            CONV1_KERNEL,
        )?;
        let h = tape.leaky_relu(h, slope);
        let h = tape.conv3d(
            h,
            b.var("voxel_encoder.conv1.weight"),
            b.var("voxel_encoder.conv1.bias"),
            CONV2_KERNEL,
        )?;
        let h = tape.leaky_relu(h, slope);
        let flat = tape.value(h).len() / n;
        let h = tape.reshape(h, vec![n, flat])?;
        let h = self.dense(tape, b, "voxel_encoder.fc0", h)?;
        let h = tape.leaky_relu(h, slope);
        self.dense(tape, b, "voxel_encoder.fc1", h)
    }

    /// Alternating edge and node updates; returns the final edge embeddings.
    ///
    /// Each edge is updated from its previous embedding and both endpoint
    /// nodes; each node from its previous embedding and the mean of its
    /// incident edge embeddings (zero for isolated nodes).
    pub fn message_passing(
        &self,
        tape: &mut Tape,
        b: &Bound,
        nodes: Var,
        edges: Var,
        pairs: &[(usize, usize)],
    ) -> Result<Var> {
        let n = tape.value(nodes).shape[0];
        let src: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let dst: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let mut incident = vec![Vec::new(); n];
        for (k, &(i, j)) in pairs.iter().enumerate() {
            incident[i].push(k);
            incident[j].push(k);
        }
        let (mut a, mut e) = (nodes, edges);
        for _ in 0..self.config.message_passing_steps {
            let ai = tape.gather(a, &src)?;
            let aj = tape.gather(a, &dst)?;
            let cat = tape.concat(&[e, ai, aj])?;
            e = self.mlp(tape, b, "edge_update", cat)?;
            let msg = tape.mean_aggregate(e, incident.clone())?;
            let cat = tape.concat(&[a, msg])?;
            a = self.mlp(tape, b, "node_update", cat)?;
        }
        Ok(e)
    }

    /// `[E, 12]` embeddings to `[E, 1]` activation probabilities.
    pub fn classify(&self, tape: &mut Tape, b: &Bound, edges: Var) -> Result<Var> {
        let logits = self.mlp(tape, b, "classifier", edges)?;
        Ok(tape.sigmoid(logits))
    }

    /// Node embeddings as a tape input: encoded grids, precomputed
    /// embeddings, or zeros when geometry is disabled.
    pub fn node_var(&self, tape: &mut Tape, b: &Bound, nodes: &NodeInput) -> Result<Var> {
        let n = nodes.len();
        if !self.config.use_geometry {
            return Ok(tape.constant(Tensor::zeros(vec![n, NODE_DIM])));
        }
        match nodes {
            NodeInput::Grids(grids) => {
                let mut data = Vec::with_capacity(n * GRID_CELLS);
                for g in grids {
                    if g.resolution() != GRID_RES {
                        return Err(Error::ResolutionMismatch(g.resolution(), GRID_RES));
                    }
                    data.extend(g.cells().iter().map(|&c| if c { 1.0 } else { 0.0 }));
                }
                let x = tape.constant(Tensor::new(vec![n, 1, GRID_RES, GRID_RES, GRID_RES], data)?);
                self.encode_voxels(tape, b, x)
            }
            NodeInput::Embeddings(e) => {
                let data = e.iter().flatten().copied().collect();
                Ok(tape.constant(Tensor::new(vec![n, NODE_DIM], data)?))
            }
        }
    }

    /// Full forward pass; `None` when the graph has no edges.
    pub fn forward(&self, tape: &mut Tape, b: &Bound, input: &GraphInput) -> Result<Option<Var>> {
        input.validate()?;
        if input.edges.is_empty() || input.nodes.is_empty() {
            return Ok(None);
        }
        let a = self.node_var(tape, b, &input.nodes)?;
        self.forward_from_nodes(tape, b, a, input).map(Some)
    }

    /// Forward pass from node embeddings already on the tape.
    pub fn forward_from_nodes(&self, tape: &mut Tape, b: &Bound, a: Var, input: &GraphInput) -> Result<Var> {
        let feats = input.edge_features.iter().flatten().copied().collect();
        let f = tape.constant(Tensor::new(vec![input.edges.len(), EDGE_FEATURE_DIM], feats)?);
        let e = self.encode_edges(tape, b, f)?;
        let e = self.message_passing(tape, b, a, e, &input.edges)?;
        self.classify(tape, b, e)
    }

    /// Edge activation probabilities.
    pub fn predict(&self, input: &GraphInput) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape);
        Ok(match self.forward(&mut tape, &b, input)? {
            Some(p) => tape.value(p).data.clone(),
            None => vec![],
        })
    }

    pub fn encode_edge(&self, f: &EdgeFeature) -> Result<[f64; EDGE_DIM]> {
        f.validate()?;
        let mut tape = Tape::new();
        let b = self.bind(&mut tape);
        let x = tape.constant(Tensor::new(vec![1, EDGE_FEATURE_DIM], f.to_array().to_vec())?);
        let y = self.encode_edges(&mut tape, &b, x)?;
        Ok(tape.value(y).data.as_slice().try_into().expect("edge embedding width"))
    }

    /// Embeds grids with the current voxel encoder, ignoring `use_geometry`.
    pub fn embed_grids(&self, grids: &[OccupancyGrid]) -> Result<Vec<[f64; NODE_DIM]>> {
        if grids.is_empty() {
            return Ok(vec![]);
        }
        let geo = TrackerNet {
            config: GnnConfig {
                use_geometry: true,
                ..self.config.clone()
            },
            params: self.params.clone(),
        };
        let mut tape = Tape::new();
        let b = geo.bind(&mut tape);
        let v = geo.node_var(&mut tape, &b, &NodeInput::Grids(grids.to_vec()))?;
        Ok(tape
            .value(v)
            .data
            .chunks_exact(NODE_DIM)
            .map(|c| c.try_into().expect("node embedding width"))
            .collect())
    }

    pub fn encode_voxels_grid(&self, grid: &OccupancyGrid) -> Result<[f64; NODE_DIM]> {
        Ok(self.embed_grids(std::slice::from_ref(grid))?[0])
    }
}
