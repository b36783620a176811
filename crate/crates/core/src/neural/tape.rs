//! A small reverse-mode automatic differentiation tape over dense `f64`
//! tensors.
//!
//! Every operation appends a node holding its forward value; [`Tape::backward`]
//! walks the nodes in reverse and accumulates gradients into each node's
//! [`Tensor::grad`]. Only the primitives needed by the tracking network are
//! provided.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() || shape.contains(&0) {
            return Err(Error::ShapeMismatch {
                op: "tensor",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Tensor { shape, data, grad: None })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
            grad: None,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
            grad: None,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Product of all but the leading dimension.
    pub fn row_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let w = self.row_len();
        &self.data[r * w..(r + 1) * w]
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Const,
    Affine { x: Var, w: Var, b: Var },
    LeakyRelu { x: Var, slope: f64 },
    Sigmoid { x: Var },
    Conv3d { x: Var, k: Var, b: Var, stride: usize },
    Concat { xs: Vec<Var> },
    Gather { x: Var, rows: Vec<usize> },
    MeanAggregate { x: Var, groups: Vec<Vec<usize>> },
    Reshape { x: Var },
    Add { a: Var, b: Var },
    Scale { x: Var, s: f64 },
    WeightedSum { x: Var, coeffs: Vec<f64> },
    /// Scalar function of `x` whose local gradient was computed eagerly.
    ScalarFn { x: Var, local_grad: Vec<f64> },
}

#[derive(Debug, Default)]
pub struct Tape {
    values: Vec<Tensor>,
    ops: Vec<Op>,
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: a.shape.clone(),
        rhs: b.shape.clone(),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.values.push(value);
        self.ops.push(op);
        Var(self.values.len() - 1)
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(Tensor { grad: None, ..t }, Op::Leaf)
    }

    /// A leaf that never receives a gradient (inputs, frozen data).
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Tensor { grad: None, ..t }, Op::Const)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.values[v.0].grad.as_deref()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `x [n, in] · w [in, out] + b [out]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xt, wt, bt) = (self.value(x), self.value(w), self.value(b));
        if xt.shape.len() != 2 || wt.shape.len() != 2 || xt.shape[1] != wt.shape[0] {
            return Err(mismatch("affine", xt, wt));
        }
        if bt.shape != [wt.shape[1]] {
            return Err(mismatch("affine", wt, bt));
        }
        let (n, fin, fout) = (xt.shape[0], wt.shape[0], wt.shape[1]);
        let mut out = vec![0.0; n * fout];
        for r in 0..n {
            let o = &mut out[r * fout..(r + 1) * fout];
            o.copy_from_slice(&bt.data);
            for i in 0..fin {
                let xi = xt.data[r * fin + i];
                if xi != 0.0 {
                    for (oj, wj) in o.iter_mut().zip(&wt.data[i * fout..(i + 1) * fout]) {
                        *oj += xi * wj;
                    }
                }
            }
        }
        let t = Tensor::new(vec![n, fout], out)?;
        Ok(self.push(t, Op::Affine { x, w, b }))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let xt = self.value(x);
        let data = xt.data.iter().map(|&v| if v > 0.0 { v } else { slope * v }).collect();
        let t = Tensor {
            shape: xt.shape.clone(),
            data,
            grad: None,
        };
        self.push(t, Op::LeakyRelu { x, slope })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let xt = self.value(x);
        let data = xt.data.iter().map(|&v| sigmoid(v)).collect();
        let t = Tensor {
            shape: xt.shape.clone(),
            data,
            grad: None,
        };
        self.push(t, Op::Sigmoid { x })
    }

    /// Valid (unpadded) 3D convolution.
    ///
    /// `x [n, c, d, h, w]`, `k [o, c, s, s, s]`, `b [o]`.
    pub fn conv3d(&mut self, x: Var, k: Var, b: Var, stride: usize) -> Result<Var> {
        let (xt, kt, bt) = (self.value(x), self.value(k), self.value(b));
        if xt.shape.len() != 5 || kt.shape.len() != 5 || xt.shape[1] != kt.shape[1] {
            return Err(mismatch("conv3d", xt, kt));
        }
        let ks = kt.shape[2];
        if kt.shape[3] != ks || kt.shape[4] != ks || xt.shape[2..].iter().any(|&d| d < ks) || stride == 0 {
            return Err(mismatch("conv3d", xt, kt));
        }
        if bt.shape != [kt.shape[0]] {
            return Err(mismatch("conv3d", kt, bt));
        }
        let g = ConvGeom::new(&xt.shape, &kt.shape, stride);
        let mut out = vec![0.0; g.n * g.o * g.od * g.oh * g.ow];
        for n in 0..g.n {
            for o in 0..g.o {
                for zd in 0..g.od {
                    for zh in 0..g.oh {
                        for zw in 0..g.ow {
                            let mut acc = bt.data[o];
                            for c in 0..g.c {
                                for a in 0..ks {
                                    for bb in 0..ks {
                                        let xo = g.x_index(n, c, zd * stride + a, zh * stride + bb, zw * stride);
                                        let ko = g.k_index(o, c, a, bb, 0);
                                        let xs = &xt.data[xo..xo + ks];
                                        let kk = &kt.data[ko..ko + ks];
                                        acc += xs.iter().zip(kk).map(|(p, q)| p * q).sum::<f64>();
                                    }
                                }
                            }
                            out[g.out_index(n, o, zd, zh, zw)] = acc;
                        }
                    }
                }
            }
        }
        let t = Tensor::new(vec![g.n, g.o, g.od, g.oh, g.ow], out)?;
        Ok(self.push(t, Op::Conv3d { x, k, b, stride }))
    }

    /// Concatenates 2D tensors along the feature axis.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let first = self.value(xs[0]);
        let rows = first.shape[0];
        let mut width = 0;
        for &v in xs {
            let t = self.value(v);
            if t.shape.len() != 2 || t.shape[0] != rows {
                return Err(mismatch("concat", first, t));
            }
            width += t.shape[1];
        }
        let mut out = Vec::with_capacity(rows * width);
        for r in 0..rows {
            for &v in xs {
                out.extend_from_slice(self.value(v).row(r));
            }
        }
        let t = Tensor::new(vec![rows, width], out)?;
        Ok(self.push(t, Op::Concat { xs: xs.to_vec() }))
    }

    /// Selects rows of a 2D tensor (with repetition).
    pub fn gather(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let xt = self.value(x);
        if xt.shape.len() != 2 {
            return Err(mismatch("gather", xt, xt));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= xt.shape[0]) {
            return Err(Error::ShapeMismatch {
                op: "gather",
                lhs: xt.shape.clone(),
                rhs: vec![bad],
            });
        }
        let w = xt.shape[1];
        let mut out = Vec::with_capacity(rows.len() * w);
        for &r in rows {
            out.extend_from_slice(xt.row(r));
        }
        let t = if rows.is_empty() {
            Tensor {
                shape: vec![0, w],
                data: vec![],
                grad: None,
            }
        } else {
            Tensor::new(vec![rows.len(), w], out)?
        };
        Ok(self.push(t, Op::Gather { x, rows: rows.to_vec() }))
    }

    /// Output row `g` is the mean of the input rows listed in `groups[g]`;
    /// an empty group yields a zero row.
    ///
    /// Each group is summed in a canonical order (rows sorted by value), so
    /// the result does not depend on how the input rows are enumerated.
    pub fn mean_aggregate(&mut self, x: Var, groups: Vec<Vec<usize>>) -> Result<Var> {
        let xt = self.value(x);
        if xt.shape.len() != 2 {
            return Err(mismatch("mean_aggregate", xt, xt));
        }
        let w = xt.shape[1];
        let mut groups = groups;
        let mut out = vec![0.0; groups.len() * w];
        for (g, members) in groups.iter_mut().enumerate() {
            if let Some(&bad) = members.iter().find(|&&r| r >= xt.shape[0]) {
                return Err(Error::ShapeMismatch {
                    op: "mean_aggregate",
                    lhs: xt.shape.clone(),
                    rhs: vec![bad],
                });
            }
            if members.is_empty() {
                continue;
            }
            members.sort_by(|&a, &b| {
                xt.row(a)
                    .iter()
                    .zip(xt.row(b))
                    .map(|(p, q)| p.total_cmp(q))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            });
            let o = &mut out[g * w..(g + 1) * w];
            for &r in members.iter() {
                for (oj, xj) in o.iter_mut().zip(xt.row(r)) {
                    *oj += xj;
                }
            }
            let inv = 1.0 / members.len() as f64;
            o.iter_mut().for_each(|v| *v *= inv);
        }
        let t = Tensor::new(vec![groups.len(), w], out)?;
        Ok(self.push(t, Op::MeanAggregate { x, groups }))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let xt = self.value(x);
        if shape.iter().product::<usize>() != xt.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: xt.shape.clone(),
                rhs: shape,
            });
        }
        let t = Tensor {
            shape,
            data: xt.data.clone(),
            grad: None,
        };
        Ok(self.push(t, Op::Reshape { x }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.shape != bt.shape {
            return Err(mismatch("add", at, bt));
        }
        let data = at.data.iter().zip(&bt.data).map(|(p, q)| p + q).collect();
        let t = Tensor {
            shape: at.shape.clone(),
            data,
            grad: None,
        };
        Ok(self.push(t, Op::Add { a, b }))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let xt = self.value(x);
        let t = Tensor {
            shape: xt.shape.clone(),
            data: xt.data.iter().map(|v| v * s).collect(),
            grad: None,
        };
        self.push(t, Op::Scale { x, s })
    }

    /// `Σ coeffs_i x_i`, a scalar.
    pub fn weighted_sum(&mut self, x: Var, coeffs: &[f64]) -> Result<Var> {
        let xt = self.value(x);
        if coeffs.len() != xt.len() {
            return Err(Error::ShapeMismatch {
                op: "weighted_sum",
                lhs: xt.shape.clone(),
                rhs: vec![coeffs.len()],
            });
        }
        let v = xt.data.iter().zip(coeffs).map(|(p, q)| p * q).sum();
        Ok(self.push(Tensor::scalar(v), Op::WeightedSum { x, coeffs: coeffs.to_vec() }))
    }

    /// Records a scalar function of `x` given its value and gradient.
    pub fn scalar_fn(&mut self, x: Var, value: f64, local_grad: Vec<f64>) -> Result<Var> {
        let xt = self.value(x);
        if local_grad.len() != xt.len() {
            return Err(Error::ShapeMismatch {
                op: "scalar_fn",
                lhs: xt.shape.clone(),
                rhs: vec![local_grad.len()],
            });
        }
        Ok(self.push(Tensor::scalar(value), Op::ScalarFn { x, local_grad }))
    }

    /// Reverse pass from a scalar output. Clears previous gradients.
    pub fn backward(&mut self, out: Var) -> Result<()> {
        if self.values[out.0].len() != 1 {
            return Err(Error::ShapeMismatch {
                op: "backward",
                lhs: self.values[out.0].shape.clone(),
                rhs: vec![1],
            });
        }
        for v in &mut self.values {
            v.grad = None;
        }
        self.values[out.0].grad = Some(vec![1.0]);
        for i in (0..=out.0).rev() {
            let Some(g) = self.values[i].grad.take() else {
                continue;
            };
            self.propagate(i, &g);
            self.values[i].grad = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, f: impl FnOnce(&mut [f64], &Tensor)) {
        if matches!(self.ops[v.0], Op::Const) {
            return;
        }
        let t = &mut self.values[v.0];
        let mut g = t.grad.take().unwrap_or_else(|| vec![0.0; t.data.len()]);
        f(&mut g, t);
        self.values[v.0].grad = Some(g);
    }

    fn propagate(&mut self, i: usize, g: &[f64]) {
        // ops are only read here; swap out to appease the borrow checker
        let op = std::mem::replace(&mut self.ops[i], Op::Leaf);
        match &op {
            Op::Leaf | Op::Const => {}
            Op::Affine { x, w, b } => {
                let xt = self.values[x.0].data.clone();
                let wt = self.values[w.0].data.clone();
                let fin = self.values[w.0].shape[0];
                let fout = self.values[w.0].shape[1];
                let n = self.values[x.0].shape[0];
                self.accumulate(*x, |gx, _| {
                    for r in 0..n {
                        let go = &g[r * fout..(r + 1) * fout];
                        for i in 0..fin {
                            let wrow = &wt[i * fout..(i + 1) * fout];
                            gx[r * fin + i] += go.iter().zip(wrow).map(|(p, q)| p * q).sum::<f64>();
                        }
                    }
                });
                self.accumulate(*w, |gw, _| {
                    for r in 0..n {
                        let go = &g[r * fout..(r + 1) * fout];
                        for i in 0..fin {
                            let xi = xt[r * fin + i];
                            if xi != 0.0 {
                                for (gwj, goj) in gw[i * fout..(i + 1) * fout].iter_mut().zip(go) {
                                    *gwj += xi * goj;
                                }
                            }
                        }
                    }
                });
                self.accumulate(*b, |gb, _| {
                    for r in 0..n {
                        for (gbj, goj) in gb.iter_mut().zip(&g[r * fout..(r + 1) * fout]) {
                            *gbj += goj;
                        }
                    }
                });
            }
            Op::LeakyRelu { x, slope } => {
                let slope = *slope;
                self.accumulate(*x, |gx, xt| {
                    for ((gi, xi), go) in gx.iter_mut().zip(&xt.data).zip(g) {
                        *gi += if *xi > 0.0 { *go } else { slope * go };
                    }
                });
            }
            Op::Sigmoid { x } => {
                let y = self.values[i].data.clone();
                self.accumulate(*x, |gx, _| {
                    for ((gi, yi), go) in gx.iter_mut().zip(&y).zip(g) {
                        *gi += go * yi * (1.0 - yi);
                    }
                });
            }
            Op::Conv3d { x, k, b, stride } => {
                let stride = *stride;
                let g_geom = ConvGeom::new(&self.values[x.0].shape, &self.values[k.0].shape, stride);
                let xd = self.values[x.0].data.clone();
                let kd = self.values[k.0].data.clone();
                let ks = g_geom.ks;
                let geo = &g_geom;
                self.accumulate(*x, |gx, _| {
                    for n in 0..geo.n {
                        for o in 0..geo.o {
                            for zd in 0..geo.od {
                                for zh in 0..geo.oh {
                                    for zw in 0..geo.ow {
                                        let go = g[geo.out_index(n, o, zd, zh, zw)];
                                        if go == 0.0 {
                                            continue;
                                        }
                                        for c in 0..geo.c {
                                            for a in 0..ks {
                                                for bb in 0..ks {
                                                    let xo = geo.x_index(n, c, zd * stride + a, zh * stride + bb, zw * stride);
                                                    let ko = geo.k_index(o, c, a, bb, 0);
                                                    for t in 0..ks {
                                                        gx[xo + t] += go * kd[ko + t];
                                                    }
                                                }
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                });
                self.accumulate(*k, |gk, _| {
                    for n in 0..geo.n {
                        for o in 0..geo.o {
                            for zd in 0..geo.od {
                                for zh in 0..geo.oh {
                                    for zw in 0..geo.ow {
                                        let go = g[geo.out_index(n, o, zd, zh, zw)];
                                        if go == 0.0 {
                                            continue;
                                        }
                                        for c in 0..geo.c {
                                            for a in 0..ks {
                                                for bb in 0..ks {
                                                    let xo = geo.x_index(n, c, zd * stride + a, zh * stride + bb, zw * stride);
                                                    let ko = geo.k_index(o, c, a, bb, 0);
                                                    for t in 0..ks {
                                                        gk[ko + t] += go * xd[xo + t];
                                                    }
                                                }
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                });
                self.accumulate(*b, |gb, _| {
                    let per = geo.od * geo.oh * geo.ow;
                    for n in 0..geo.n {
                        for (o, gbo) in gb.iter_mut().enumerate() {
                            let base = (n * geo.o + o) * per;
                            *gbo += g[base..base + per].iter().sum::<f64>();
                        }
                    }
                });
            }
            Op::Concat { xs } => {
                let rows = self.values[i].shape[0];
                let width = self.values[i].shape[1];
                let mut offset = 0;
                for &v in xs {
                    let w = self.values[v.0].shape[1];
                    self.accumulate(v, |gx, _| {
                        for r in 0..rows {
                            for j in 0..w {
                                gx[r * w + j] += g[r * width + offset + j];
                            }
                        }
                    });
                    offset += w;
                }
            }
            Op::Gather { x, rows } => {
                let w = self.values[x.0].shape[1];
                self.accumulate(*x, |gx, _| {
                    for (k, &r) in rows.iter().enumerate() {
                        for j in 0..w {
                            gx[r * w + j] += g[k * w + j];
                        }
                    }
                });
            }
            Op::MeanAggregate { x, groups } => {
                let w = self.values[x.0].shape[1];
                self.accumulate(*x, |gx, _| {
                    for (gi, members) in groups.iter().enumerate() {
                        if members.is_empty() {
                            continue;
                        }
                        let inv = 1.0 / members.len() as f64;
                        for &r in members {
                            for j in 0..w {
                                gx[r * w + j] += inv * g[gi * w + j];
                            }
                        }
                    }
                });
            }
            Op::Reshape { x } => {
                self.accumulate(*x, |gx, _| {
                    for (a, b) in gx.iter_mut().zip(g) {
                        *a += b;
                    }
                });
            }
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    self.accumulate(v, |gx, _| {
                        for (p, q) in gx.iter_mut().zip(g) {
                            *p += q;
                        }
                    });
                }
            }
            Op::Scale { x, s } => {
                let s = *s;
                self.accumulate(*x, |gx, _| {
                    for (p, q) in gx.iter_mut().zip(g) {
                        *p += s * q;
                    }
                });
            }
            Op::WeightedSum { x, coeffs } => {
                self.accumulate(*x, |gx, _| {
                    for (p, c) in gx.iter_mut().zip(coeffs) {
                        *p += g[0] * c;
                    }
                });
            }
            Op::ScalarFn { x, local_grad } => {
                self.accumulate(*x, |gx, _| {
                    for (p, c) in gx.iter_mut().zip(local_grad) {
                        *p += g[0] * c;
                    }
                });
            }
        }
        self.ops[i] = op;
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

struct ConvGeom {
    n: usize,
    c: usize,
    d: usize,
    h: usize,
    w: usize,
    o: usize,
    ks: usize,
    od: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn new(x: &[usize], k: &[usize], stride: usize) -> Self {
        let ks = k[2];
        ConvGeom {
            n: x[0],
            c: x[1],
            d: x[2],
            h: x[3],
            w: x[4],
            o: k[0],
            ks,
            od: (x[2] - ks) / stride + 1,
            oh: (x[3] - ks) / stride + 1,
            ow: (x[4] - ks) / stride + 1,
        }
    }

    #[inline]
    fn x_index(&self, n: usize, c: usize, d: usize, h: usize, w: usize) -> usize {
        (((n * self.c + c) * self.d + d) * self.h + h) * self.w + w
    }

    #[inline]
    fn k_index(&self, o: usize, c: usize, a: usize, b: usize, t: usize) -> usize {
        (((o * self.c + c) * self.ks + a) * self.ks + b) * self.ks + t
    }

    #[inline]
    fn out_index(&self, n: usize, o: usize, d: usize, h: usize, w: usize) -> usize {
        (((n * self.o + o) * self.od + d) * self.oh + h) * self.ow + w
    }
}
