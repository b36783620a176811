//! Shared test helpers: a central finite-difference gradient checker and
//! small network fixtures.
#![allow(dead_code)]

pub mod suite;

use mot3d::losses::LossValue;
use mot3d::neural::{
    Bound, GnnConfig, GraphInput, NodeInput, Tape, Tensor, TrackerNet, Var, EDGE_FEATURE_DIM, NODE_DIM,
};
use mot3d::Result;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, r: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-r..r)).collect()).unwrap()
}

/// Relative error `|num - ana| / (|num| + |ana|)` over all checked
/// coordinates, with a floor on the denominator for all-zero gradients.
pub fn relative_error(num: &[f64], ana: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = num.iter().zip(ana).map(|(a, b)| a - b).collect();
    norm(&diff) / (norm(num) + norm(ana)).max(1e-7)
}

/// Compares the tape gradient of the scalar built by `build` with central
/// differences, for every input tensor. Inputs larger than `max_coords` are
/// checked on a random subset of that many coordinates. Returns the largest
/// relative error over the inputs.
pub fn grad_check(
    inputs: &[Tensor],
    max_coords: usize,
    seed: u64,
    build: impl Fn(&mut Tape, &[Var]) -> Result<Var>,
) -> f64 {
    let eval = |ts: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ts.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = build(&mut tape, &vars).unwrap();
        tape.value(out).data[0]
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &vars).unwrap();
    assert_eq!(tape.value(out).len(), 1, "gradient check needs a scalar output");
    tape.backward(out).unwrap();
    let mut pick = rng(seed);
    let mut worst: f64 = 0.0;
    for (k, t) in inputs.iter().enumerate() {
        let ana_all = tape.grad(vars[k]).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]);
        let coords: Vec<usize> = if t.len() > max_coords {
            sample(&mut pick, t.len(), max_coords).into_vec()
        } else {
            (0..t.len()).collect()
        };
        let mut num = Vec::with_capacity(coords.len());
        let mut ana = Vec::with_capacity(coords.len());
        for &i in &coords {
            let mut plus = inputs.to_vec();
            let mut minus = inputs.to_vec();
            plus[k].data[i] += FD_STEP;
            minus[k].data[i] -= FD_STEP;
            num.push((eval(&plus) - eval(&minus)) / (2.0 * FD_STEP));
            ana.push(ana_all[i]);
        }
        worst = worst.max(relative_error(&num, &ana));
    }
    worst
}

/// Like `grad_check`, over the network parameters whose names start with
/// `prefix`; at most `max_coords` coordinates per tensor.
pub fn net_grad_check(
    net: &TrackerNet,
    prefix: &str,
    max_coords: usize,
    seed: u64,
    build: impl Fn(&TrackerNet, &mut Tape, &Bound) -> Result<Var>,
) -> f64 {
    let eval = |n: &TrackerNet| -> f64 {
        let mut tape = Tape::new();
        let b = n.bind(&mut tape);
        let out = build(n, &mut tape, &b).unwrap();
        tape.value(out).data[0]
    };
    let mut tape = Tape::new();
    let b = net.bind(&mut tape);
    let out = build(net, &mut tape, &b).unwrap();
    assert_eq!(tape.value(out).len(), 1, "gradient check needs a scalar output");
    tape.backward(out).unwrap();
    let mut pick = rng(seed);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (name, t) in net.params.tensors.iter().filter(|(k, _)| k.starts_with(prefix)) {
        let ana_all = tape.grad(b.var(name)).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]);
        let coords: Vec<usize> = if t.len() > max_coords {
            sample(&mut pick, t.len(), max_coords).into_vec()
        } else {
            (0..t.len()).collect()
        };
        let mut num = Vec::with_capacity(coords.len());
        let mut ana = Vec::with_capacity(coords.len());
        for &i in &coords {
            let mut plus = net.clone();
            let mut minus = net.clone();
            plus.params.tensors.get_mut(name).unwrap().data[i] += FD_STEP;
            minus.params.tensors.get_mut(name).unwrap().data[i] -= FD_STEP;
            num.push((eval(&plus) - eval(&minus)) / (2.0 * FD_STEP));
            ana.push(ana_all[i]);
        }
        worst = worst.max(relative_error(&num, &ana));
        checked += 1;
    }
    assert!(checked > 0, "no parameters match {prefix}");
    worst
}

/// Checks a loss's closed-form gradient against central differences of its
/// value, on at most `max_coords` coordinates of `x`.
pub fn loss_grad_check(x: &[f64], max_coords: usize, seed: u64, f: impl Fn(&[f64]) -> LossValue) -> f64 {
    let ana_all = f(x).grad;
    assert_eq!(ana_all.len(), x.len());
    let coords: Vec<usize> = if x.len() > max_coords {
        sample(&mut rng(seed), x.len(), max_coords).into_vec()
    } else {
        (0..x.len()).collect()
    };
    let mut num = Vec::new();
    let mut ana = Vec::new();
    for &i in &coords {
        let mut plus = x.to_vec();
        let mut minus = x.to_vec();
        plus[i] += FD_STEP;
        minus[i] -= FD_STEP;
        num.push((f(&plus).value - f(&minus).value) / (2.0 * FD_STEP));
        ana.push(ana_all[i]);
    }
    relative_error(&num, &ana)
}

/// Random linear functional of `v`, giving a scalar with a generic gradient.
pub fn reduce(tape: &mut Tape, v: Var, seed: u64) -> Result<Var> {
    let mut r = rng(seed ^ 0x5eed);
    let coeffs: Vec<f64> = (0..tape.value(v).len()).map(|_| r.random_range(-1.0..1.0)).collect();
    tape.weighted_sum(v, &coeffs)
}

/// A network small enough for exhaustive finite differences.
pub fn tiny_config(seed: u64) -> GnnConfig {
    GnnConfig {
        message_passing_steps: 2,
        edge_encoder_hidden: 5,
        edge_update_hidden: 6,
        node_update_hidden: 6,
        classifier_hidden: 4,
        voxel_channels: [2, 2],
        voxel_hidden: 4,
        seed,
        ..GnnConfig::default()
    }
}

/// Random edge features with plausible magnitudes and a valid frame gap.
pub fn rand_features(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f64; EDGE_FEATURE_DIM]> {
    (0..n)
        .map(|_| {
            let mut f = [0.0; EDGE_FEATURE_DIM];
            for v in f.iter_mut().take(7) {
                *v = rng.random_range(-0.5..0.5);
            }
            f[7] = rng.random_range(1..=4) as f64;
            f
        })
        .collect()
}

/// Graph with explicit node embeddings.
pub fn embedded_graph(rng: &mut ChaCha8Rng, n: usize, edges: Vec<(usize, usize)>) -> GraphInput {
    let nodes = (0..n)
        .map(|_| {
            let mut a = [0.0; NODE_DIM];
            a.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
            a
        })
        .collect();
    let edge_features = rand_features(rng, edges.len());
    GraphInput {
        nodes: NodeInput::Embeddings(nodes),
        edges,
        edge_features,
    }
}

/// Every pair of nodes across distinct "frames" of `per_frame` nodes, with
/// gaps below `window`.
pub fn window_edges(frames: usize, per_frame: usize, window: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for fa in 0..frames {
        for fb in fa + 1..frames.min(fa + window) {
            for a in 0..per_frame {
                for b in 0..per_frame {
                    out.push((fa * per_frame + a, fb * per_frame + b));
                }
            }
        }
    }
    out
}
