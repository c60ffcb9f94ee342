//! Dense tensors with reverse-mode automatic differentiation, sized for
//! bidirectional LSTMs, attention, and softmax losses on a single CPU.
//!
//! A [`Tape`] is built define-by-run: every operation appends a node holding
//! its forward value, and [`Tape::backward`] walks the nodes once in reverse,
//! accumulating gradients additively into each [`ParamSet`] leaf. Values are
//! 64-bit throughout; shape errors are programmer errors and panic with both
//! shapes in the message.

mod checkpoint;
mod gradcheck;
mod optim;

pub use checkpoint::{load_params, save_params, CheckpointError};
pub use gradcheck::{grad_check, GradCheckFailure, GradCheckReport};
pub use optim::{Adam, OptimError, ParamId, ParamSet};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Row-major value with shape; scalars use shape `[1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; len] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {:?} does not hold {} values",
            shape,
            data.len()
        );
        Tensor { shape: shape.to_vec(), data }
    }

    pub fn scalar(x: f64) -> Self {
        Tensor { shape: vec![1], data: vec![x] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var },
    MatVec { m: Var, v: Var },
    Dot { a: Var, b: Var },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    ScaleBy { s: Var, x: Var },
    Affine { x: Var, a: f64 },
    Concat { parts: Vec<Var> },
    Slice { x: Var, start: usize },
    Sum { x: Var },
    Log { x: Var },
    Tanh { x: Var },
    Sigmoid { x: Var },
    Softmax { x: Var, axis: usize },
    Embed { table: Var, row: usize },
    Dropout { x: Var, mask: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
    param: Option<ParamId>,
}

/// Define-by-run graph of one forward pass.
pub struct Tape {
    nodes: Vec<Node>,
    train: bool,
    rng: ChaCha8Rng,
}

impl Tape {
    /// `train` controls dropout; the seed fixes its masks.
    pub fn new(train: bool, seed: u64) -> Self {
        Tape { nodes: Vec::new(), train, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    // Non-finite values are allowed to flow as IEEE data: divergence
    // detection in training reads them off the loss, and the optimizer
    // refuses non-finite gradients, so nothing here should panic.
    fn push(&mut self, value: Tensor, op: Op, param: Option<ParamId>) -> Var {
        self.nodes.push(Node { value, op, param });
        Var(self.nodes.len() - 1)
    }

    /// Copies a parameter's current value in as a leaf; gradients flow back
    /// to the set on [`Tape::backward`].
    pub fn param(&mut self, set: &ParamSet, id: ParamId) -> Var {
        self.push(set.value(id).clone(), Op::Leaf, Some(id))
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, None)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape_of(a), self.shape_of(b));
        assert!(
            sa.len() == 2 && sb.len() == 2 && sa[1] == sb[0],
            "matmul shape mismatch: {sa:?} vs {sb:?}"
        );
        let (m, n, p) = (sa[0], sa[1], sb[1]);
        let (da, db) = (self.data(a), self.data(b));
        let mut out = vec![0.0; m * p];
        for i in 0..m {
            for k in 0..n {
                let aik = da[i * n + k];
                for j in 0..p {
                    out[i * p + j] += aik * db[k * p + j];
                }
            }
        }
        self.push(Tensor::from_vec(&[m, p], out), Op::MatMul { a, b }, None)
    }

    pub fn matvec(&mut self, m: Var, v: Var) -> Var {
        let (sm, sv) = (self.shape_of(m), self.shape_of(v));
        assert!(
            sm.len() == 2 && sv.len() == 1 && sm[1] == sv[0],
            "matvec shape mismatch: {sm:?} vs {sv:?}"
        );
        let (rows, cols) = (sm[0], sm[1]);
        let (dm, dv) = (self.data(m), self.data(v));
        let mut out = vec![0.0; rows];
        for r in 0..rows {
            let row = &dm[r * cols..(r + 1) * cols];
            out[r] = row.iter().zip(dv).map(|(a, b)| a * b).sum();
        }
        self.push(Tensor::from_vec(&[rows], out), Op::MatVec { m, v }, None)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape_of(a), self.shape_of(b));
        assert!(sa == sb && sa.len() == 1, "dot shape mismatch: {sa:?} vs {sb:?}");
        let s: f64 = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).sum();
        self.push(Tensor::scalar(s), Op::Dot { a, b }, None)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape_of(a), self.shape_of(b));
        assert!(sa == sb, "add shape mismatch: {sa:?} vs {sb:?}");
        let out: Vec<f64> = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x + y).collect();
        let shape = self.shape_of(a);
        self.push(Tensor::from_vec(&shape, out), Op::Add { a, b }, None)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape_of(a), self.shape_of(b));
        assert!(sa == sb, "mul shape mismatch: {sa:?} vs {sb:?}");
        let out: Vec<f64> = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).collect();
        let shape = self.shape_of(a);
        self.push(Tensor::from_vec(&shape, out), Op::Mul { a, b }, None)
    }

    /// Scalar `s` times every element of `x`.
    pub fn scale_by(&mut self, s: Var, x: Var) -> Var {
        assert!(
            self.value(s).len() == 1,
            "scale_by needs a scalar, got shape {:?}",
            self.shape_of(s)
        );
        let sv = self.data(s)[0];
        let out: Vec<f64> = self.data(x).iter().map(|v| sv * v).collect();
        let shape = self.shape_of(x);
        self.push(Tensor::from_vec(&shape, out), Op::ScaleBy { s, x }, None)
    }

    /// Elementwise `a * x + b` with constant coefficients.
    pub fn affine(&mut self, x: Var, a: f64, b: f64) -> Var {
        let out: Vec<f64> = self.data(x).iter().map(|v| a * v + b).collect();
        let shape = self.shape_of(x);
        self.push(Tensor::from_vec(&shape, out), Op::Affine { x, a }, None)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let mut out = Vec::new();
        for p in parts {
            let s = self.shape_of(*p);
            assert!(s.len() == 1, "concat needs vectors, got shape {s:?}");
            out.extend_from_slice(self.data(*p));
        }
        let n = out.len();
        self.push(Tensor::from_vec(&[n], out), Op::Concat { parts: parts.to_vec() }, None)
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Var {
        let s = self.shape_of(x);
        assert!(
            s.len() == 1 && start + len <= s[0],
            "slice {start}..{} out of shape {s:?}",
            start + len
        );
        let out = self.data(x)[start..start + len].to_vec();
        self.push(Tensor::from_vec(&[len], out), Op::Slice { x, start }, None)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.data(x).iter().sum();
        self.push(Tensor::scalar(s), Op::Sum { x }, None)
    }

    pub fn log(&mut self, x: Var) -> Var {
        let out: Vec<f64> = self.data(x).iter().map(|v| v.ln()).collect();
        let shape = self.shape_of(x);
        self.push(Tensor::from_vec(&shape, out), Op::Log { x }, None)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out: Vec<f64> = self.data(x).iter().map(|v| v.tanh()).collect();
        let shape = self.shape_of(x);
        self.push(Tensor::from_vec(&shape, out), Op::Tanh { x }, None)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out: Vec<f64> = self.data(x).iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect();
        let shape = self.shape_of(x);
        self.push(Tensor::from_vec(&shape, out), Op::Sigmoid { x }, None)
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Var {
        let shape = self.shape_of(x);
        assert!(axis < shape.len(), "softmax axis {axis} out of shape {shape:?}");
        let mut out = self.data(x).to_vec();
        for (base, stride, n) in lanes(&shape, axis) {
            softmax_lane(&mut out, base, stride, n, None);
        }
        self.push(Tensor::from_vec(&shape, out), Op::Softmax { x, axis }, None)
    }

    /// Softmax over the unmasked entries of a vector; masked entries get
    /// probability exactly 0. Iteration order over unmasked entries matches a
    /// softmax over the gathered subset bit for bit.
    pub fn masked_softmax(&mut self, x: Var, mask: &[bool]) -> Var {
        let shape = self.shape_of(x);
        assert!(
            shape.len() == 1 && shape[0] == mask.len(),
            "mask of {} entries against shape {shape:?}",
            mask.len()
        );
        assert!(mask.iter().any(|m| *m), "masked_softmax with nothing unmasked");
        let mut out = self.data(x).to_vec();
        softmax_lane(&mut out, 0, 1, mask.len(), Some(mask));
        self.push(Tensor::from_vec(&shape, out), Op::Softmax { x, axis: 0 }, None)
    }

    pub fn embed(&mut self, table: Var, row: usize) -> Var {
        let s = self.shape_of(table);
        assert!(s.len() == 2, "embedding table must be a matrix, got shape {s:?}");
        assert!(row < s[0], "embedding row {row} out of {} rows", s[0]);
        let cols = s[1];
        let out = self.data(table)[row * cols..(row + 1) * cols].to_vec();
        self.push(Tensor::from_vec(&[cols], out), Op::Embed { table, row }, None)
    }

    /// Inverted dropout: identity at eval time, mask-and-rescale by
    /// `1/(1-p)` at train time so the expected value matches the input.
    pub fn dropout(&mut self, x: Var, p: f64) -> Var {
        assert!((0.0..1.0).contains(&p), "dropout rate {p} outside [0,1)");
        if !self.train || p == 0.0 {
            return x;
        }
        let keep = 1.0 - p;
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if self.rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let out: Vec<f64> = self.data(x).iter().zip(&mask).map(|(v, m)| v * m).collect();
        let shape = self.shape_of(x);
        self.push(Tensor::from_vec(&shape, out), Op::Dropout { x, mask }, None)
    }

    /// One LSTM step. `w` is `[4h x (input + h)]` over the concatenated
    /// `[x : h]`, `b` is `[4h]`, gate layout `[input, forget, output, cand]`.
    pub fn lstm_cell(&mut self, w: Var, b: Var, x: Var, h: Var, c: Var) -> (Var, Var) {
        let hs = self.shape_of(h)[0];
        let ins = self.shape_of(x)[0];
        let (sw, sb) = (self.shape_of(w), self.shape_of(b));
        assert!(
            sw == [4 * hs, ins + hs] && sb == [4 * hs],
            "lstm_cell weights {sw:?}/{sb:?} against input {ins} hidden {hs}"
        );
        let xh = self.concat(&[x, h]);
        let lin = self.matvec(w, xh);
        let z = self.add(lin, b);
        let i_gate = self.slice(z, 0, hs);
        let i_gate = self.sigmoid(i_gate);
        let f_gate = self.slice(z, hs, hs);
        let f_gate = self.sigmoid(f_gate);
        let o_gate = self.slice(z, 2 * hs, hs);
        let o_gate = self.sigmoid(o_gate);
        let cand = self.slice(z, 3 * hs, hs);
        let cand = self.tanh(cand);
        let keep = self.mul(f_gate, c);
        let write = self.mul(i_gate, cand);
        let c2 = self.add(keep, write);
        let c2_act = self.tanh(c2);
        let h2 = self.mul(o_gate, c2_act);
        (h2, c2)
    }

    fn shape_of(&self, v: Var) -> Vec<usize> {
        self.nodes[v.0].value.shape().to_vec()
    }

    /// Reverse pass from a scalar loss; leaf gradients are added into
    /// `params`, so repeated calls without zeroing accumulate.
    pub fn backward(&mut self, loss: Var, params: &mut ParamSet) {
        assert!(
            self.value(loss).len() == 1,
            "loss must be scalar, got shape {:?}",
            self.shape_of(loss)
        );
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul { a, b } => {
                    let (m, nn) = {
                        let s = self.nodes[a.0].value.shape();
                        (s[0], s[1])
                    };
                    let p = self.nodes[b.0].value.shape()[1];
                    let da = self.nodes[a.0].value.data();
                    let db = self.nodes[b.0].value.data();
                    let (ga, gb) = {
                        let mut ga = vec![0.0; m * nn];
                        let mut gb = vec![0.0; nn * p];
                        for i2 in 0..m {
                            for j in 0..p {
                                let gij = g[i2 * p + j];
                                for k in 0..nn {
                                    ga[i2 * nn + k] += gij * db[k * p + j];
                                    gb[k * p + j] += da[i2 * nn + k] * gij;
                                }
                            }
                        }
                        (ga, gb)
                    };
                    acc(&mut grads[a.0], &ga);
                    acc(&mut grads[b.0], &gb);
                }
                Op::MatVec { m, v } => {
                    let (rows, cols) = {
                        let s = self.nodes[m.0].value.shape();
                        (s[0], s[1])
                    };
                    let dm = self.nodes[m.0].value.data();
                    let dv = self.nodes[v.0].value.data();
                    let mut gm = vec![0.0; rows * cols];
                    let mut gv = vec![0.0; cols];
                    for r in 0..rows {
                        let gr = g[r];
                        for c in 0..cols {
                            gm[r * cols + c] += gr * dv[c];
                            gv[c] += dm[r * cols + c] * gr;
                        }
                    }
                    acc(&mut grads[m.0], &gm);
                    acc(&mut grads[v.0], &gv);
                }
                Op::Dot { a, b } => {
                    let g0 = g[0];
                    let da: Vec<f64> =
                        self.nodes[b.0].value.data().iter().map(|x| g0 * x).collect();
                    let db: Vec<f64> =
                        self.nodes[a.0].value.data().iter().map(|x| g0 * x).collect();
                    acc(&mut grads[a.0], &da);
                    acc(&mut grads[b.0], &db);
                }
                Op::Add { a, b } => {
                    acc(&mut grads[a.0], &g);
                    acc(&mut grads[b.0], &g);
                }
                Op::Mul { a, b } => {
                    let da: Vec<f64> = self.nodes[b.0]
                        .value
                        .data()
                        .iter()
                        .zip(&g)
                        .map(|(x, gi)| x * gi)
                        .collect();
                    let db: Vec<f64> = self.nodes[a.0]
                        .value
                        .data()
                        .iter()
                        .zip(&g)
                        .map(|(x, gi)| x * gi)
                        .collect();
                    acc(&mut grads[a.0], &da);
                    acc(&mut grads[b.0], &db);
                }
                Op::ScaleBy { s, x } => {
                    let sv = self.nodes[s.0].value.data()[0];
                    let gs: f64 =
                        self.nodes[x.0].value.data().iter().zip(&g).map(|(x, gi)| x * gi).sum();
                    let gx: Vec<f64> = g.iter().map(|gi| sv * gi).collect();
                    acc(&mut grads[s.0], &[gs]);
                    acc(&mut grads[x.0], &gx);
                }
                Op::Affine { x, a } => {
                    let gx: Vec<f64> = g.iter().map(|gi| a * gi).collect();
                    acc(&mut grads[x.0], &gx);
                }
                Op::Concat { parts } => {
                    let mut off = 0;
                    for p in parts.clone() {
                        let len = self.nodes[p.0].value.len();
                        acc(&mut grads[p.0], &g[off..off + len]);
                        off += len;
                    }
                }
                Op::Slice { x, start } => {
                    let start = *start;
                    let len = self.nodes[x.0].value.len();
                    let mut gx = vec![0.0; len];
                    gx[start..start + g.len()].copy_from_slice(&g);
                    acc(&mut grads[x.0], &gx);
                }
                Op::Sum { x } => {
                    let g0 = g[0];
                    let gx = vec![g0; self.nodes[x.0].value.len()];
                    acc(&mut grads[x.0], &gx);
                }
                Op::Log { x } => {
                    let gx: Vec<f64> = self.nodes[x.0]
                        .value
                        .data()
                        .iter()
                        .zip(&g)
                        .map(|(x, gi)| gi / x)
                        .collect();
                    acc(&mut grads[x.0], &gx);
                }
                Op::Tanh { x } => {
                    let gx: Vec<f64> =
                        node.value.data().iter().zip(&g).map(|(y, gi)| gi * (1.0 - y * y)).collect();
                    acc(&mut grads[x.0], &gx);
                }
                Op::Sigmoid { x } => {
                    let gx: Vec<f64> =
                        node.value.data().iter().zip(&g).map(|(y, gi)| gi * y * (1.0 - y)).collect();
                    acc(&mut grads[x.0], &gx);
                }
                Op::Softmax { x, axis } => {
                    let y = node.value.data();
                    let shape = node.value.shape().to_vec();
                    let mut gx = vec![0.0; y.len()];
                    for (base, stride, n2) in lanes(&shape, *axis) {
                        let mut dot = 0.0;
                        for k in 0..n2 {
                            let idx = base + k * stride;
                            dot += g[idx] * y[idx];
                        }
                        for k in 0..n2 {
                            let idx = base + k * stride;
                            gx[idx] = y[idx] * (g[idx] - dot);
                        }
                    }
                    acc(&mut grads[x.0], &gx);
                }
                Op::Embed { table, row } => {
                    let cols = self.nodes[table.0].value.shape()[1];
                    let rows = self.nodes[table.0].value.shape()[0];
                    let start = row * cols;
                    let mut gt = vec![0.0; rows * cols];
                    gt[start..start + cols].copy_from_slice(&g);
                    acc(&mut grads[table.0], &gt);
                }
                Op::Dropout { x, mask } => {
                    let gx: Vec<f64> = mask.iter().zip(&g).map(|(m, gi)| m * gi).collect();
                    acc(&mut grads[x.0], &gx);
                }
            }
            if let Some(pid) = self.nodes[i].param {
                params.accumulate_grad(pid, &g);
            }
        }
    }
}

/// Adds `contribution` into a lazily allocated gradient slot.
fn acc(slot: &mut Option<Vec<f64>>, contribution: &[f64]) {
    match slot {
        Some(g) => {
            for (gi, c) in g.iter_mut().zip(contribution) {
                *gi += c;
            }
        }
        None => *slot = Some(contribution.to_vec()),
    }
}

/// `(base, stride, lane length)` triples covering every 1-D lane along `axis`.
fn lanes(shape: &[usize], axis: usize) -> Vec<(usize, usize, usize)> {
    let n = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = Vec::with_capacity(outer * inner);
    for o in 0..outer {
        for i in 0..inner {
            out.push((o * n * inner + i, inner, n));
        }
    }
    out
}

/// Stable softmax over one strided lane, in place. Masked entries (mask
/// false) are excluded from max and sum and end up exactly 0.
fn softmax_lane(data: &mut [f64], base: usize, stride: usize, n: usize, mask: Option<&[bool]>) {
    let live = |k: usize| mask.is_none_or(|m| m[k]);
    let mut max = f64::NEG_INFINITY;
    for k in 0..n {
        if live(k) {
            max = max.max(data[base + k * stride]);
        }
    }
    let mut sum = 0.0;
    for k in 0..n {
        let idx = base + k * stride;
        if live(k) {
            data[idx] = (data[idx] - max).exp();
            sum += data[idx];
        } else {
            data[idx] = 0.0;
        }
    }
    for k in 0..n {
        if live(k) {
            data[base + k * stride] /= sum;
        }
    }
}
