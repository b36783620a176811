//! Finite-difference cases for every differentiable piece, and the
//! structural checks on message passing. Each gradient case takes a seed and
//! returns the worst relative error it saw.

use std::collections::VecDeque;

use mot3d::association::ObjectClass;
use mot3d::geometry::{OccupancyGrid, Vec3};
use mot3d::losses::{default_w_act, loss_noc, loss_rec, loss_track};
use mot3d::neural::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::*;

pub type GradCase = (&'static str, fn(u64) -> f64);

pub fn gradient_cases() -> Vec<GradCase> {
    vec![
        ("affine", affine),
        ("leaky_relu", leaky_relu),
        ("sigmoid", sigmoid_op),
        ("conv3d", conv3d),
        ("mean_aggregate", mean_aggregate),
        ("concat", concat),
        ("gather", gather),
        ("edge encoder", edge_encoder),
        ("voxel encoder", voxel_encoder),
        ("message passing parameters", message_passing_params),
        ("message passing inputs", message_passing_inputs),
        ("classifier", classifier),
        ("forward with tracking loss", forward_with_loss),
        ("pose loss", noc_loss),
        ("reconstruction loss", rec_loss),
        ("tracking loss", track_loss),
    ]
}

fn affine(seed: u64) -> f64 {
    let mut r = rng(seed);
    let x = rand_tensor(&mut r, vec![4, 3], 1.0);
    let w = rand_tensor(&mut r, vec![3, 5], 1.0);
    let b = rand_tensor(&mut r, vec![5], 1.0);
    grad_check(&[x, w, b], 64, seed, |t, v| {
        let y = t.affine(v[0], v[1], v[2])?;
        reduce(t, y, seed)
    })
}

fn leaky_relu(seed: u64) -> f64 {
    let x = rand_tensor(&mut rng(seed), vec![4, 3], 1.0);
    grad_check(&[x], 64, seed, |t, v| {
        let y = t.leaky_relu(v[0], 0.1);
        reduce(t, y, seed)
    })
}

fn sigmoid_op(seed: u64) -> f64 {
    let x = rand_tensor(&mut rng(seed), vec![6], 4.0);
    grad_check(&[x], 64, seed, |t, v| {
        let y = t.sigmoid(v[0]);
        reduce(t, y, seed)
    })
}

fn conv3d(seed: u64) -> f64 {
    let mut r = rng(seed);
    let x = rand_tensor(&mut r, vec![2, 2, 4, 4, 4], 1.0);
    let k = rand_tensor(&mut r, vec![3, 2, 2, 2, 2], 1.0);
    let b = rand_tensor(&mut r, vec![3], 1.0);
    grad_check(&[x, k, b], 48, seed, |t, v| {
        let y = t.conv3d(v[0], v[1], v[2], 2)?;
        reduce(t, y, seed)
    })
}

fn mean_aggregate(seed: u64) -> f64 {
    let x = rand_tensor(&mut rng(seed), vec![4, 3], 1.0);
    let groups = vec![vec![0, 2, 3], vec![], vec![1], vec![3, 0]];
    grad_check(&[x], 64, seed, |t, v| {
        let y = t.mean_aggregate(v[0], groups.clone())?;
        reduce(t, y, seed)
    })
}

fn concat(seed: u64) -> f64 {
    let mut r = rng(seed);
    let x = rand_tensor(&mut r, vec![4, 3], 1.0);
    let z = rand_tensor(&mut r, vec![4, 2], 1.0);
    grad_check(&[x, z], 64, seed, |t, v| {
        let y = t.concat(&[v[0], v[1], v[0]])?;
        reduce(t, y, seed)
    })
}

fn gather(seed: u64) -> f64 {
    let x = rand_tensor(&mut rng(seed), vec![4, 3], 1.0);
    grad_check(&[x], 64, seed, |t, v| {
        let y = t.gather(v[0], &[3, 0, 3, 1, 1])?;
        reduce(t, y, seed)
    })
}

fn tiny_net(seed: u64) -> TrackerNet {
    TrackerNet::new(tiny_config(seed)).unwrap()
}

fn features(t: &mut Tape, g: &GraphInput) -> Var {
    let data = g.edge_features.iter().flatten().copied().collect();
    t.constant(Tensor::new(vec![g.edges.len(), EDGE_FEATURE_DIM], data).unwrap())
}

pub fn random_grid(r: &mut ChaCha8Rng) -> OccupancyGrid {
    let density = r.random_range(0.1..0.5);
    OccupancyGrid::from_fn(|_, _, _| r.random_bool(density))
}

fn edge_encoder(seed: u64) -> f64 {
    let g = embedded_graph(&mut rng(seed), 4, window_edges(2, 2, 2));
    net_grad_check(&tiny_net(seed), "edge_encoder", 40, seed, |n, t, b| {
        let f = features(t, &g);
        let e = n.encode_edges(t, b, f)?;
        reduce(t, e, seed)
    })
}

/// Smallest distance of any leaky ReLU input in the voxel encoder from the
/// kink, where finite differences are meaningless.
fn kink_margin(n: &TrackerNet, input: &Tensor) -> f64 {
    let mut t = Tape::new();
    let b = n.bind(&mut t);
    let x = t.constant(input.clone());
    let h0 = t
        .conv3d(x, b.var("voxel_encoder.conv0.weight"), b.var("voxel_encoder.conv0.bias"), 4)
        .unwrap();
    let a0 = t.leaky_relu(h0, n.config.leaky_slope);
    let h1 = t
        .conv3d(a0, b.var("voxel_encoder.conv1.weight"), b.var("voxel_encoder.conv1.bias"), 2)
        .unwrap();
    let a1 = t.leaky_relu(h1, n.config.leaky_slope);
    let flat = t.reshape(a1, vec![input.shape[0], t.value(a1).len() / input.shape[0]]).unwrap();
    let h2 = t
        .affine(flat, b.var("voxel_encoder.fc0.weight"), b.var("voxel_encoder.fc0.bias"))
        .unwrap();
    [h0, h1, h2]
        .iter()
        .flat_map(|&v| t.value(v).data.clone())
        .fold(f64::INFINITY, |m, v| m.min(v.abs()))
}

fn voxel_encoder(seed: u64) -> f64 {
    let mut r = rng(seed);
    let n = tiny_net(seed);
    let input = loop {
        let grids: Vec<f64> = (0..2).flat_map(|_| random_grid(&mut r).to_f64()).collect();
        let input = Tensor::new(vec![2, 1, 32, 32, 32], grids).unwrap();
        if kink_margin(&n, &input) > 1e-3 {
            break input;
        }
    };
    net_grad_check(&n, "voxel_encoder", 24, seed, |n, t, b| {
        let x = t.constant(input.clone());
        let y = n.encode_voxels(t, b, x)?;
        reduce(t, y, seed)
    })
}

fn message_passing_params(seed: u64) -> f64 {
    let n = tiny_net(seed);
    let g = embedded_graph(&mut rng(seed), 6, window_edges(3, 2, 3));
    ["edge_update", "node_update"]
        .iter()
        .map(|prefix| {
            net_grad_check(&n, prefix, 40, seed, |n, t, b| {
                let a = n.node_var(t, b, &g.nodes)?;
                let f = features(t, &g);
                let e = n.encode_edges(t, b, f)?;
                let e = n.message_passing(t, b, a, e, &g.edges)?;
                reduce(t, e, seed)
            })
        })
        .fold(0.0, f64::max)
}

fn message_passing_inputs(seed: u64) -> f64 {
    let n = tiny_net(seed);
    let g = embedded_graph(&mut rng(seed), 6, window_edges(3, 2, 3));
    let NodeInput::Embeddings(emb) = &g.nodes else { unreachable!() };
    let nodes = Tensor::new(vec![6, NODE_DIM], emb.iter().flatten().copied().collect()).unwrap();
    let edges = rand_tensor(&mut rng(seed + 100), vec![g.edges.len(), EDGE_DIM], 1.0);
    grad_check(&[nodes, edges], 64, seed, |t, v| {
        let b = n.bind(t);
        let e = n.message_passing(t, &b, v[0], v[1], &g.edges)?;
        reduce(t, e, seed)
    })
}

fn classifier(seed: u64) -> f64 {
    let input = rand_tensor(&mut rng(seed), vec![5, EDGE_DIM], 1.0);
    net_grad_check(&tiny_net(seed), "classifier", 64, seed, |n, t, b| {
        let x = t.constant(input.clone());
        let p = n.classify(t, b, x)?;
        reduce(t, p, seed)
    })
}

fn forward_with_loss(seed: u64) -> f64 {
    let mut r = rng(seed);
    let g = embedded_graph(&mut r, 6, window_edges(3, 2, 3));
    let labels: Vec<bool> = (0..g.edges.len()).map(|_| r.random_bool(0.3)).collect();
    let w_act = default_w_act(&labels);
    net_grad_check(&tiny_net(seed), "", 12, seed, |n, t, b| {
        let p = n.forward(t, b, &g)?.unwrap();
        let lv = loss_track(&t.value(p).data, &labels, w_act)?;
        t.scalar_fn(p, lv.value, lv.grad)
    })
}

fn noc_loss(seed: u64) -> f64 {
    let mut r = rng(seed);
    let gt: Vec<Vec3> = (0..12).map(|_| Vec3::from_fn(|_, _| r.random_range(-0.5..0.5))).collect();
    // offsets reach both the quadratic and the linear branch
    let pred: Vec<f64> = gt
        .iter()
        .flat_map(|p| p.iter().map(|v| v + r.random_range(-2.0..2.0)).collect::<Vec<_>>())
        .collect();
    [ObjectClass::Chair, ObjectClass::Table]
        .into_iter()
        .map(|class| {
            loss_grad_check(&pred, 64, seed, |x| {
                let pts: Vec<Vec3> = x.chunks(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect();
                loss_noc(&pts, &gt, class).unwrap()
            })
        })
        .fold(0.0, f64::max)
}

fn rec_loss(seed: u64) -> f64 {
    let mut r = rng(seed);
    let grid = random_grid(&mut r);
    let probs: Vec<f64> = (0..grid.cells().len()).map(|_| r.random_range(0.05..0.95)).collect();
    loss_grad_check(&probs, 64, seed, |x| loss_rec(x, &grid, 3.0).unwrap())
}

fn track_loss(seed: u64) -> f64 {
    let mut r = rng(seed);
    let labels: Vec<bool> = (0..20).map(|_| r.random_bool(0.4)).collect();
    let probs: Vec<f64> = (0..20).map(|_| r.random_range(0.05..0.95)).collect();
    loss_grad_check(&probs, 64, seed, |x| loss_track(x, &labels, 2.5).unwrap())
}

/// The graph with nodes moved by `node_perm` (old index to new) and edges
/// listed in `edge_perm` order.
pub fn permuted(g: &GraphInput, node_perm: &[usize], edge_perm: &[usize]) -> GraphInput {
    let NodeInput::Embeddings(emb) = &g.nodes else { unreachable!() };
    let mut nodes = vec![[0.0; NODE_DIM]; emb.len()];
    for (old, &new) in node_perm.iter().enumerate() {
        nodes[new] = emb[old];
    }
    GraphInput {
        nodes: NodeInput::Embeddings(nodes),
        edges: edge_perm
            .iter()
            .map(|&k| (node_perm[g.edges[k].0], node_perm[g.edges[k].1]))
            .collect(),
        edge_features: edge_perm.iter().map(|&k| g.edge_features[k]).collect(),
    }
}

/// Number of edge outputs that are not bit-identical after relabeling.
pub fn permutation_mismatches(net: &TrackerNet, g: &GraphInput, node_perm: &[usize], edge_perm: &[usize]) -> usize {
    let base = net.predict(g).unwrap();
    let moved = net.predict(&permuted(g, node_perm, edge_perm)).unwrap();
    edge_perm
        .iter()
        .enumerate()
        .filter(|&(k_new, &k_old)| moved[k_new].to_bits() != base[k_old].to_bits())
        .count()
}

fn hops(n: usize, edges: &[(usize, usize)], from: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; n];
    dist[from] = 0;
    let mut q = VecDeque::from([from]);
    while let Some(u) = q.pop_front() {
        for &(a, b) in edges {
            for (x, y) in [(a, b), (b, a)] {
                if x == u && dist[y] == usize::MAX {
                    dist[y] = dist[u] + 1;
                    q.push_back(y);
                }
            }
        }
    }
    dist
}

/// On a 6-node path, perturbs each node's embedding and compares every edge
/// output with the breadth-first oracle: an edge may change iff the node is
/// fewer than `steps` hops from its nearer endpoint. Returns the violations.
pub fn locality_violations(steps: usize) -> Vec<String> {
    let edges: Vec<(usize, usize)> = (0..5).map(|i| (i, i + 1)).collect();
    let n = TrackerNet::new(GnnConfig {
        message_passing_steps: steps,
        seed: steps as u64,
        ..GnnConfig::default()
    })
    .unwrap();
    let g = embedded_graph(&mut rng(11), 6, edges.clone());
    let base = n.predict(&g).unwrap();
    let mut out = Vec::new();
    for x in 0..6 {
        let mut h = g.clone();
        if let NodeInput::Embeddings(e) = &mut h.nodes {
            e[x].iter_mut().for_each(|v| *v += 0.5);
        }
        let moved = n.predict(&h).unwrap();
        let dist = hops(6, &edges, x);
        for (k, &(u, v)) in edges.iter().enumerate() {
            let affected = dist[u].min(dist[v]) < steps;
            if (moved[k] != base[k]) != affected {
                out.push(format!("steps {steps}, node {x}, edge ({u}, {v}), expected affected = {affected}"));
            }
        }
    }
    out
}
