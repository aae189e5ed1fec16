//! Define-by-run compute tape with reverse-mode differentiation.
//!
//! Every op evaluates eagerly and records enough state to compute its
//! vector-Jacobian product. Node ids are tape order, which is a topological
//! order by construction, so the backward pass is a single reverse sweep.
//!
//! Determinism: given the same seed, inputs and parameters, forward values
//! and gradients are bit-identical. All internal parallelism writes disjoint
//! output rows with a fixed per-element summation order, and gradient
//! accumulation happens on the single tape-walking thread.

use std::collections::HashMap;

use indexmap::IndexMap;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

use super::array::{Array, Scalar};
use super::kernels;

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// Named parameter gradients produced by a backward pass. Iteration order is
/// the order parameters were bound, which keeps optimizer updates
/// deterministic.
pub type Gradients<T> = IndexMap<String, Array<T>>;

enum Op<T: Scalar> {
    Leaf,
    Relu { x: usize },
    Sigmoid { x: usize },
    Tanh { x: usize },
    /// 1 where the input is > 0, else 0. Gradient is defined as zero.
    HardGate,
    Scale { x: usize, c: f64 },
    AddScalar { x: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    /// a: [..., K] flattened to [M, K]; b: [K, N].
    MatMul { a: usize, b: usize },
    /// b (1-D, len = dim-1 extent) broadcast-added over dim 1.
    BiasAdd { x: usize, b: usize },
    /// g (1-D, len = dim-1 extent) broadcast-multiplied over dim 1.
    ChanMul { x: usize, g: usize },
    /// w has x's shape minus the last axis; multiplies along it.
    MulBcastLast { x: usize, w: usize },
    Softmax { x: usize },
    Concat { xs: Vec<usize>, axis: usize },
    Reshape { x: usize },
    Permute { x: usize, perm: Vec<usize> },
    ReduceSum { x: usize, axis: usize },
    ReduceMean { x: usize, axis: usize },
    ReduceMax { x: usize, arg: Vec<u32> },
    ReduceMin { x: usize, arg: Vec<u32> },
    MeanAll { x: usize },
    Conv2d { x: usize, w: usize, stride: usize, pad: usize },
    MaxPool2d { x: usize, arg: Vec<u32> },
    BatchNorm { x: usize, gamma: usize, beta: usize, mean: Vec<T>, invstd: Vec<T> },
    GridSample { x: usize, theta: usize },
    PairConcat { a: usize, b: usize },
    GatherRows { x: usize, idx: Vec<u32>, in_rows: usize },
    RepeatBatch { x: usize, n: usize },
    AggregateNodes { edges: usize, presence: usize },
    SplatPoints { values: usize, points: usize },
    SoftmaxCrossEntropy { logits: usize, targets: Vec<u32>, probs: Vec<T> },
    BceWithLogits { logits: usize, targets: usize },
    L1Norm { x: usize },
    SliceChannels { x: usize, from: usize },
}

struct Node<T: Scalar> {
    op: Op<T>,
    value: Array<T>,
    /// Index into `param_names` when this node is a bound trainable leaf.
    param: Option<usize>,
}

/// Compute tape. One instance per forward/backward pass; single-writer.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    param_names: Vec<String>,
    bound: HashMap<String, Var>,
    rng: ChaCha8Rng,
    training: bool,
    stat_updates: Vec<(String, Array<T>)>,
}

impl<T: Scalar> Graph<T> {
    pub fn new(seed: u64, training: bool) -> Self {
        Graph {
            nodes: Vec::new(),
            param_names: Vec::new(),
            bound: HashMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            training,
        stat_updates: Vec::new(),
        }
    }

    pub fn training(&self) -> bool {
        self.training
    }

    pub fn value(&self, v: Var) -> &Array<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Running-statistic updates recorded during the pass (batch-norm).
    /// The trainer applies these to the parameter store after the step.
    pub fn take_stat_updates(&mut self) -> Vec<(String, Array<T>)> {
        std::mem::take(&mut self.stat_updates)
    }

    pub(crate) fn push_stat_update(&mut self, name: &str, value: Array<T>) {
        self.stat_updates.push((name.to_string(), value));
    }

    fn push(&mut self, op: Op<T>, value: Array<T>, param: Option<usize>) -> Var {
        self.nodes.push(Node { op, value, param });
        Var(self.nodes.len() - 1)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Array<T>) -> Var {
        self.push(Op::Leaf, value, None)
    }

    /// Trainable leaf. Binding the same name twice returns the first node.
    pub fn param(&mut self, name: &str, value: &Array<T>) -> Var {
        if let Some(&v) = self.bound.get(name) {
            return v;
        }
        self.param_names.push(name.to_string());
        let idx = self.param_names.len() - 1;
        let v = self.push(Op::Leaf, value.clone(), Some(idx));
        self.bound.insert(name.to_string(), v);
        v
    }

    // ── elementwise ─────────────────────────────────────────────────

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max_s(T::ZERO));
        self.push(Op::Relu { x: x.0 }, out, None)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid_scalar);
        self.push(Op::Sigmoid { x: x.0 }, out, None)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.tanh());
        self.push(Op::Tanh { x: x.0 }, out, None)
    }

    pub fn hard_gate(&mut self, x: Var) -> Var {
        let out = self
            .value(x)
            .map(|v| if v > T::ZERO { T::ONE } else { T::ZERO });
        self.push(Op::HardGate, out, None)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let cs = T::from_f64(c);
        let out = self.value(x).map(|v| v * cs);
        self.push(Op::Scale { x: x.0, c }, out, None)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let cs = T::from_f64(c);
        let out = self.value(x).map(|v| v + cs);
        self.push(Op::AddScalar { x: x.0 }, out, None)
    }

    fn binary_elementwise(&mut self, a: Var, b: Var, name: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Config(format!(
                "{name}: shape mismatch {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise(a, b, "add")?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.push(Op::Add { a: a.0, b: b.0 }, data, None))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise(a, b, "sub")?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x - y);
        Ok(self.push(Op::Sub { a: a.0, b: b.0 }, data, None))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise(a, b, "mul")?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x * y);
        Ok(self.push(Op::Mul { a: a.0, b: b.0 }, data, None))
    }

    // ── linear algebra ──────────────────────────────────────────────

    /// x: [..., K] (leading axes flattened), w: [K, N] -> [..., N].
    pub fn matmul(&mut self, x: Var, w: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.is_empty() || ws.len() != 2 || xs[xs.len() - 1] != ws[0] {
            return Err(Error::Config(format!(
                "matmul: incompatible shapes {xs:?} x {ws:?}"
            )));
        }
        let k = ws[0];
        let n = ws[1];
        let m = self.value(x).numel() / k;
        let data = kernels::matmul(self.value(x).data(), self.value(w).data(), m, k, n);
        let mut out_shape = xs[..xs.len() - 1].to_vec();
        out_shape.push(n);
        let out = Array::from_vec(&out_shape, data);
        Ok(self.push(Op::MatMul { a: x.0, b: w.0 }, out, None))
    }

    pub fn bias_add(&mut self, x: Var, b: Var) -> Result<Var> {
        let (c, trail) = dim1_layout(self.shape(x))?;
        if self.shape(b) != [c] {
            return Err(Error::Config(format!(
                "bias_add: bias {:?} does not match dim-1 extent {c}",
                self.shape(b)
            )));
        }
        let xv = self.value(x);
        let bv = self.value(b).data();
        let mut data = xv.data().to_vec();
        for chunk in data.chunks_mut(c * trail) {
            for (ci, bval) in bv.iter().enumerate() {
                for v in &mut chunk[ci * trail..(ci + 1) * trail] {
                    *v += *bval;
                }
            }
        }
        let out = Array::from_vec(xv.shape(), data);
        Ok(self.push(Op::BiasAdd { x: x.0, b: b.0 }, out, None))
    }

    pub fn chan_mul(&mut self, x: Var, g: Var) -> Result<Var> {
        let (c, trail) = dim1_layout(self.shape(x))?;
        if self.shape(g) != [c] {
            return Err(Error::Config(format!(
                "chan_mul: scale {:?} does not match dim-1 extent {c}",
                self.shape(g)
            )));
        }
        let xv = self.value(x);
        let gv = self.value(g).data();
        let mut data = xv.data().to_vec();
        for chunk in data.chunks_mut(c * trail) {
            for (ci, gval) in gv.iter().enumerate() {
                for v in &mut chunk[ci * trail..(ci + 1) * trail] {
                    *v *= *gval;
                }
            }
        }
        let out = Array::from_vec(xv.shape(), data);
        Ok(self.push(Op::ChanMul { x: x.0, g: g.0 }, out, None))
    }

    /// x: [..., E] * w: [...] -> [..., E], w broadcast along the last axis.
    pub fn mul_bcast_last(&mut self, x: Var, w: Var) -> Result<Var> {
        let xs = self.shape(x);
        let ws = self.shape(w);
        if xs.len() < 2 || ws != &xs[..xs.len() - 1] {
            return Err(Error::Config(format!(
                "mul_bcast_last: {ws:?} is not {xs:?} minus its last axis"
            )));
        }
        let e = xs[xs.len() - 1];
        let xv = self.value(x);
        let wv = self.value(w).data();
        let mut data = xv.data().to_vec();
        for (row, wval) in data.chunks_mut(e).zip(wv) {
            for v in row {
                *v *= *wval;
            }
        }
        let out = Array::from_vec(xv.shape(), data);
        Ok(self.push(Op::MulBcastLast { x: x.0, w: w.0 }, out, None))
    }

    // ── shape ops ───────────────────────────────────────────────────

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(Op::Reshape { x: x.0 }, out, None))
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let mut seen = vec![false; xs.len()];
        if perm.len() != xs.len() || perm.iter().any(|&p| p >= xs.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::Config(format!(
                "permute: {perm:?} is not a permutation of axes of {xs:?}"
            )));
        }
        let out = permute_array(self.value(x), perm);
        Ok(self.push(Op::Permute { x: x.0, perm: perm.to_vec() }, out, None))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::Usage("concat: empty input list".into()));
        }
        let base = self.shape(xs[0]).to_vec();
        if axis >= base.len() {
            return Err(Error::Config(format!(
                "concat: axis {axis} out of range for rank {}",
                base.len()
            )));
        }
        let mut axis_total = 0;
        for &v in xs {
            let s = self.shape(v);
            if s.len() != base.len()
                || s.iter()
                    .zip(&base)
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(Error::Config(format!(
                    "concat: shape {s:?} incompatible with {base:?} on axis {axis}"
                )));
            }
            axis_total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out_shape = base.clone();
        out_shape[axis] = axis_total;
        let mut data = vec![T::ZERO; outer * axis_total * inner];
        let mut offset = 0;
        for &v in xs {
            let s_axis = self.shape(v)[axis];
            let src = self.value(v).data();
            for o in 0..outer {
                let dst_start = (o * axis_total + offset) * inner;
                let src_start = o * s_axis * inner;
                data[dst_start..dst_start + s_axis * inner]
                    .copy_from_slice(&src[src_start..src_start + s_axis * inner]);
            }
            offset += s_axis;
        }
        let out = Array::from_vec(&out_shape, data);
        Ok(self.push(
            Op::Concat {
                xs: xs.iter().map(|v| v.0).collect(),
                axis,
            },
            out,
            None,
        ))
    }

    /// Slice `[from, to)` along dim 1.
    pub fn slice_channels(&mut self, x: Var, from: usize, to: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let (c, trail) = dim1_layout(&xs)?;
        if from >= to || to > c {
            return Err(Error::Config(format!(
                "slice_channels: [{from},{to}) out of range for {c} channels"
            )));
        }
        let width = to - from;
        let batch = xs[0];
        let src = self.value(x).data();
        let mut data = vec![T::ZERO; batch * width * trail];
        for b in 0..batch {
            let s = &src[(b * c + from) * trail..(b * c + to) * trail];
            data[b * width * trail..(b + 1) * width * trail].copy_from_slice(s);
        }
        let mut out_shape = xs.clone();
        out_shape[1] = width;
        let out = Array::from_vec(&out_shape, data);
        Ok(self.push(Op::SliceChannels { x: x.0, from }, out, None))
    }

    /// Gather rows along dim 0 (with repetition allowed).
    pub fn gather_rows(&mut self, x: Var, idx: &[u32]) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.is_empty() {
            return Err(Error::Config("gather_rows: rank-0 input".into()));
        }
        let rows = xs[0];
        if idx.iter().any(|&i| i as usize >= rows) {
            return Err(Error::Config(format!(
                "gather_rows: index out of range (rows = {rows})"
            )));
        }
        let stride: usize = xs[1..].iter().product();
        let src = self.value(x).data();
        let mut data = vec![T::ZERO; idx.len() * stride];
        for (r, &i) in idx.iter().enumerate() {
            data[r * stride..(r + 1) * stride]
                .copy_from_slice(&src[i as usize * stride..(i as usize + 1) * stride]);
        }
        let mut out_shape = xs.clone();
        out_shape[0] = idx.len();
        let out = Array::from_vec(&out_shape, data);
        Ok(self.push(
            Op::GatherRows { x: x.0, idx: idx.to_vec(), in_rows: rows },
            out,
            None,
        ))
    }

    /// Repeat each dim-0 row n times consecutively: [B, ...] -> [B*n, ...].
    pub fn repeat_batch(&mut self, x: Var, n: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.is_empty() || n == 0 {
            return Err(Error::Config("repeat_batch: bad input".into()));
        }
        let stride: usize = xs[1..].iter().product();
        let src = self.value(x).data();
        let mut data = vec![T::ZERO; src.len() * n];
        for b in 0..xs[0] {
            let row = &src[b * stride..(b + 1) * stride];
            for i in 0..n {
                data[(b * n + i) * stride..(b * n + i + 1) * stride].copy_from_slice(row);
            }
        }
        let mut out_shape = xs.clone();
        out_shape[0] *= n;
        let out = Array::from_vec(&out_shape, data);
        Ok(self.push(Op::RepeatBatch { x: x.0, n }, out, None))
    }

    // ── reductions and softmax ──────────────────────────────────────

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x);
        if xs.is_empty() {
            return Err(Error::Config("softmax: rank-0 input".into()));
        }
        let k = xs[xs.len() - 1];
        let xv = self.value(x);
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(k) {
            softmax_row(row);
        }
        let out = Array::from_vec(xv.shape(), data);
        Ok(self.push(Op::Softmax { x: x.0 }, out, None))
    }

    pub fn reduce_sum(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce_sum_mean(x, axis, false)
    }

    pub fn reduce_mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce_sum_mean(x, axis, true)
    }

    fn reduce_sum_mean(&mut self, x: Var, axis: usize, mean: bool) -> Result<Var> {
        let (outer, extent, inner, out_shape) = reduce_layout(self.shape(x), axis)?;
        let src = self.value(x).data();
        let mut data = vec![T::ZERO; outer * inner];
        for o in 0..outer {
            for e in 0..extent {
                let base = (o * extent + e) * inner;
                for i in 0..inner {
                    data[o * inner + i] += src[base + i];
                }
            }
        }
        if mean {
            let inv = T::from_f64(1.0 / extent as f64);
            for v in &mut data {
                *v *= inv;
            }
        }
        let out = Array::from_vec(&out_shape, data);
        let op = if mean {
            Op::ReduceMean { x: x.0, axis }
        } else {
            Op::ReduceSum { x: x.0, axis }
        };
        Ok(self.push(op, out, None))
    }

    pub fn reduce_max(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce_extreme(x, axis, true)
    }

    pub fn reduce_min(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce_extreme(x, axis, false)
    }

    fn reduce_extreme(&mut self, x: Var, axis: usize, is_max: bool) -> Result<Var> {
        let (outer, extent, inner, out_shape) = reduce_layout(self.shape(x), axis)?;
        if extent == 0 {
            return Err(Error::Config("reduce over empty axis".into()));
        }
        let src = self.value(x).data();
        let mut data = vec![T::ZERO; outer * inner];
        let mut arg = vec![0u32; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let mut best = src[o * extent * inner + i];
                let mut best_e = 0usize;
                for e in 1..extent {
                    let v = src[(o * extent + e) * inner + i];
                    let better = if is_max { v > best } else { v < best };
                    if better {
                        best = v;
                        best_e = e;
                    }
                }
                data[o * inner + i] = best;
                arg[o * inner + i] = ((o * extent + best_e) * inner + i) as u32;
            }
        }
        let out = Array::from_vec(&out_shape, data);
        let op = if is_max {
            Op::ReduceMax { x: x.0, arg }
        } else {
            Op::ReduceMin { x: x.0, arg }
        };
        Ok(self.push(op, out, None))
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let n = xv.numel().max(1);
        let s: T = xv.data().iter().copied().sum();
        let out = Array::scalar(s * T::from_f64(1.0 / n as f64));
        self.push(Op::MeanAll { x: x.0 }, out, None)
    }

    // ── convolution and pooling ─────────────────────────────────────

    /// x: [B, Cin, H, W], w: [Cout, Cin, kh, kw] -> [B, Cout, OH, OW].
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] {
            return Err(Error::Config(format!(
                "conv2d: incompatible shapes x{xs:?} w{ws:?} (stride {stride}, pad {pad})"
            )));
        }
        let (batch, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, kh, kw) = (ws[0], ws[2], ws[3]);
        if h + 2 * pad < kh || wd + 2 * pad < kw || stride == 0 {
            return Err(Error::Config(format!(
                "conv2d: kernel {kh}x{kw} does not fit input {h}x{wd} with pad {pad}"
            )));
        }
        let oh = kernels::conv_out_extent(h, kh, stride, pad);
        let ow = kernels::conv_out_extent(wd, kw, stride, pad);
        let patch = cin * kh * kw;
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let mut data = vec![T::ZERO; batch * cout * oh * ow];
        data.par_chunks_mut(cout * oh * ow)
            .enumerate()
            .for_each(|(b, out_img)| {
                let mut cols = vec![T::ZERO; oh * ow * patch];
                kernels::im2col(
                    &xv[b * cin * h * wd..(b + 1) * cin * h * wd],
                    cin,
                    h,
                    wd,
                    kh,
                    kw,
                    stride,
                    pad,
                    &mut cols,
                );
                // [oh*ow, patch] x [cout, patch]^T -> [oh*ow, cout]
                let prod = kernels::matmul_nt(&cols, wv, oh * ow, patch, cout);
                for co in 0..cout {
                    for p in 0..oh * ow {
                        out_img[co * oh * ow + p] = prod[p * cout + co];
                    }
                }
            });
        let out = Array::from_vec(&[batch, cout, oh, ow], data);
        Ok(self.push(Op::Conv2d { x: x.0, w: w.0, stride, pad }, out, None))
    }

    pub fn max_pool2d(&mut self, x: Var, kernel: usize, stride: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 || kernel == 0 || stride == 0 || xs[2] < kernel || xs[3] < kernel {
            return Err(Error::Config(format!(
                "max_pool2d: bad input {xs:?} kernel {kernel} stride {stride}"
            )));
        }
        let (batch, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let oh = kernels::conv_out_extent(h, kernel, stride, 0);
        let ow = kernels::conv_out_extent(w, kernel, stride, 0);
        let xv = self.value(x).data();
        let mut data = vec![T::ZERO; batch * c * oh * ow];
        let mut arg = vec![0u32; batch * c * oh * ow];
        for b in 0..batch {
            let (o, a) = kernels::max_pool(&xv[b * c * h * w..(b + 1) * c * h * w], c, h, w, kernel, stride);
            data[b * c * oh * ow..(b + 1) * c * oh * ow].copy_from_slice(&o);
            arg[b * c * oh * ow..(b + 1) * c * oh * ow].copy_from_slice(&a);
        }
        let out = Array::from_vec(&[batch, c, oh, ow], data);
        Ok(self.push(Op::MaxPool2d { x: x.0, arg }, out, None))
    }

    /// Batch normalization over dim 1, reducing all other axes.
    ///
    /// Training mode computes batch statistics (biased variance) and records
    /// a running-average update under `stat_name`; inference mode normalizes
    /// with the provided running statistics.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: (&Array<T>, &Array<T>),
        stat_name: (&str, &str),
        eps: f64,
        momentum: f64,
    ) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let (c, _trail) = dim1_layout(&xs)?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::Config(format!(
                "batch_norm: gamma/beta must have shape [{c}]"
            )));
        }
        let (mean, var): (Vec<T>, Vec<T>) = if self.training {
            let (m, v) = channel_stats(self.value(x), c);
            // Exponential running averages for inference.
            let mom = T::from_f64(momentum);
            let rm_new: Vec<T> = running
                .0
                .data()
                .iter()
                .zip(&m)
                .map(|(&old, &new)| old * mom + new * (T::ONE - mom))
                .collect();
            let rv_new: Vec<T> = running
                .1
                .data()
                .iter()
                .zip(&v)
                .map(|(&old, &new)| old * mom + new * (T::ONE - mom))
                .collect();
            self.push_stat_update(stat_name.0, Array::from_vec(&[c], rm_new));
            self.push_stat_update(stat_name.1, Array::from_vec(&[c], rv_new));
            (m, v)
        } else {
            (running.0.data().to_vec(), running.1.data().to_vec())
        };
        let invstd: Vec<T> = var
            .iter()
            .map(|&v| T::ONE / (v + T::from_f64(eps)).sqrt())
            .collect();
        let gv = self.value(gamma).data().to_vec();
        let bv = self.value(beta).data().to_vec();
        let xv = self.value(x);
        let trail: usize = xs[2..].iter().product();
        let mut data = xv.data().to_vec();
        for chunk in data.chunks_mut(c * trail) {
            for ci in 0..c {
                let (m, s, g, bb) = (mean[ci], invstd[ci], gv[ci], bv[ci]);
                for v in &mut chunk[ci * trail..(ci + 1) * trail] {
                    *v = (*v - m) * s * g + bb;
                }
            }
        }
        let out = Array::from_vec(&xs, data);
        Ok(self.push(
            Op::BatchNorm { x: x.0, gamma: gamma.0, beta: beta.0, mean, invstd },
            out,
            None,
        ))
    }

    // ── sampling ops ────────────────────────────────────────────────

    /// Bilinear sampling of x: [B, C, H, W] at an affine grid of size
    /// (oh, ow). theta: [B, 6] rows are [a, b, tx, c, d, ty] mapping output
    /// coords (xo, yo) in [-1, 1] to input coords. Points outside the input
    /// read as zero.
    pub fn grid_sample(&mut self, x: Var, theta: Var, oh: usize, ow: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ts = self.shape(theta).to_vec();
        if xs.len() != 4 || ts.len() != 2 || ts[1] != 6 || ts[0] != xs[0] || oh == 0 || ow == 0 {
            return Err(Error::Config(format!(
                "grid_sample: x{xs:?} theta{ts:?} out ({oh},{ow})"
            )));
        }
        let (batch, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let xv = self.value(x).data();
        let tv = self.value(theta).data();
        let mut data = vec![T::ZERO; batch * c * oh * ow];
        data.par_chunks_mut(c * oh * ow).enumerate().for_each(|(b, out_img)| {
            let th = &tv[b * 6..(b + 1) * 6];
            let img = &xv[b * c * h * w..(b + 1) * c * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let (px, py) = grid_point(th, ox, oy, ow, oh, w, h);
                    bilinear_fetch(img, c, h, w, px, py, |ch, val| {
                        out_img[ch * oh * ow + oy * ow + ox] = val;
                    });
                }
            }
        });
        let out = Array::from_vec(&[batch, c, oh, ow], data);
        Ok(self.push(Op::GridSample { x: x.0, theta: theta.0 }, out, None))
    }

    /// Relaxed Gumbel-Sigmoid sample (training) or deterministic hard
    /// threshold at 0.5 (evaluation). Noise is drawn from the tape RNG and
    /// enters as a constant leaf, so gradients w.r.t. the logits flow
    /// through the reparameterization.
    pub fn gumbel_sigmoid(&mut self, logits: Var, temperature: f64) -> Result<Var> {
        if temperature <= 0.0 {
            return Err(Error::Config(format!(
                "gumbel_sigmoid: temperature must be > 0, got {temperature}"
            )));
        }
        if !self.training {
            return Ok(self.hard_gate(logits));
        }
        let shape = self.shape(logits).to_vec();
        let n = self.value(logits).numel();
        let noise: Vec<T> = (0..n)
            .map(|_| {
                let u: f64 = self.rng.random_range(1e-9..1.0 - 1e-9);
                T::from_f64((u / (1.0 - u)).ln())
            })
            .collect();
        let noise = self.constant(Array::from_vec(&shape, noise));
        let shifted = self.add(logits, noise)?;
        let scaled = self.scale(shifted, 1.0 / temperature);
        Ok(self.sigmoid(scaled))
    }

    /// Splat values\[b,n,:\] onto a zero canvas \[B, C, h, w\] at normalized
    /// points\[b,n,:\] = (x, y) with bilinear weights; out-of-range corners
    /// are dropped. Inverse-transform write used by attention summarisation.
    pub fn splat_points(&mut self, values: Var, points: Var, h: usize, w: usize) -> Result<Var> {
        let vs = self.shape(values).to_vec();
        let ps = self.shape(points).to_vec();
        if vs.len() != 3 || ps.len() != 3 || ps[2] != 2 || vs[0] != ps[0] || vs[1] != ps[1] {
            return Err(Error::Config(format!(
                "splat_points: values{vs:?} points{ps:?}"
            )));
        }
        let (batch, n, c) = (vs[0], vs[1], vs[2]);
        let vv = self.value(values).data();
        let pv = self.value(points).data();
        let mut data = vec![T::ZERO; batch * c * h * w];
        for b in 0..batch {
            let canvas = &mut data[b * c * h * w..(b + 1) * c * h * w];
            for node in 0..n {
                let px = to_pixel(pv[(b * n + node) * 2].to_f64(), w);
                let py = to_pixel(pv[(b * n + node) * 2 + 1].to_f64(), h);
                let val = &vv[(b * n + node) * c..(b * n + node + 1) * c];
                bilinear_splat(canvas, h, w, px, py, val);
            }
        }
        let out = Array::from_vec(&[batch, c, h, w], data);
        Ok(self.push(Op::SplatPoints { values: values.0, points: points.0 }, out, None))
    }

    // ── graph-network ops ───────────────────────────────────────────

    /// All-pairs concatenation: a\[b,j,:\] ++ b\[b,k,:\] laid out at row
    /// j * Nb + k. Inputs [B, Na, D] and [B, Nb, D] -> [B, Na*Nb, 2D].
    pub fn pair_concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[2] {
            return Err(Error::Config(format!("pair_concat: {sa:?} x {sb:?}")));
        }
        let (batch, na, d) = (sa[0], sa[1], sa[2]);
        let nb = sb[1];
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut data = vec![T::ZERO; batch * na * nb * 2 * d];
        for bi in 0..batch {
            for j in 0..na {
                let arow = &av[(bi * na + j) * d..(bi * na + j + 1) * d];
                for k in 0..nb {
                    let base = ((bi * na + j) * nb + k) * 2 * d;
                    data[base..base + d].copy_from_slice(arow);
                    data[base + d..base + 2 * d]
                        .copy_from_slice(&bv[(bi * nb + k) * d..(bi * nb + k + 1) * d]);
                }
            }
        }
        let out = Array::from_vec(&[batch, na * nb, 2 * d], data);
        Ok(self.push(Op::PairConcat { a: a.0, b: b.0 }, out, None))
    }

    /// Set aggregation of edge embeddings into target nodes.
    ///
    /// edges: [B, Nj, Nk, E] (source j, target k), presence: [B, Nj].
    /// Output [B, Nk, 4E] = concat(max, min, sum, mean) over the source set,
    /// where sum and mean weight each edge by its source presence and
    /// max/min range over sources with presence > 0. A target column whose
    /// source set is entirely absent aggregates to zeros.
    pub fn aggregate_nodes(&mut self, edges: Var, presence: Var) -> Result<Var> {
        let es = self.shape(edges).to_vec();
        let ps = self.shape(presence).to_vec();
        if es.len() != 4 || ps.len() != 2 || es[0] != ps[0] || es[1] != ps[1] {
            return Err(Error::Config(format!(
                "aggregate_nodes: edges{es:?} presence{ps:?}"
            )));
        }
        let (batch, nj, nk, e) = (es[0], es[1], es[2], es[3]);
        let ev = self.value(edges).data();
        let pv = self.value(presence).data();
        let mut data = vec![T::ZERO; batch * nk * 4 * e];
        for b in 0..batch {
            let pres = &pv[b * nj..(b + 1) * nj];
            let psum: T = pres.iter().copied().sum();
            let any = pres.iter().any(|&p| p > T::ZERO);
            for k in 0..nk {
                let out_row = &mut data[(b * nk + k) * 4 * e..(b * nk + k + 1) * 4 * e];
                if !any {
                    continue;
                }
                for ei in 0..e {
                    let mut mx = T::ZERO;
                    let mut mn = T::ZERO;
                    let mut first = true;
                    let mut sum = T::ZERO;
                    for j in 0..nj {
                        let x = ev[((b * nj + j) * nk + k) * e + ei];
                        let p = pres[j];
                        sum += p * x;
                        if p > T::ZERO {
                            if first {
                                mx = x;
                                mn = x;
                                first = false;
                            } else {
                                mx = mx.max_s(x);
                                mn = mn.min_s(x);
                            }
                        }
                    }
                    out_row[ei] = mx;
                    out_row[e + ei] = mn;
                    out_row[2 * e + ei] = sum;
                    out_row[3 * e + ei] = sum / psum;
                }
            }
        }
        let out = Array::from_vec(&[batch, nk, 4 * e], data);
        Ok(self.push(Op::AggregateNodes { edges: edges.0, presence: presence.0 }, out, None))
    }

    // ── losses ──────────────────────────────────────────────────────

    /// Mean softmax cross-entropy of logits [B, K] against class indices.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[u32]) -> Result<Var> {
        let ls = self.shape(logits).to_vec();
        if ls.len() != 2 || targets.len() != ls[0] {
            return Err(Error::Config(format!(
                "softmax_cross_entropy: logits {ls:?} vs {} targets",
                targets.len()
            )));
        }
        let k = ls[1];
        if targets.iter().any(|&t| t as usize >= k) {
            return Err(Error::Config("softmax_cross_entropy: target out of range".into()));
        }
        let lv = self.value(logits).data();
        let mut probs = lv.to_vec();
        let mut loss = 0.0f64;
        for (b, row) in probs.chunks_mut(k).enumerate() {
            softmax_row(row);
            let p = row[targets[b] as usize].to_f64().max(1e-300);
            loss -= p.ln();
        }
        loss /= ls[0] as f64;
        let out = Array::scalar(T::from_f64(loss));
        Ok(self.push(
            Op::SoftmaxCrossEntropy { logits: logits.0, targets: targets.to_vec(), probs },
            out,
            None,
        ))
    }

    /// Mean binary cross-entropy with logits, averaged over every element.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Var) -> Result<Var> {
        if self.shape(logits) != self.shape(targets) {
            return Err(Error::Config(format!(
                "bce_with_logits: shape mismatch {:?} vs {:?}",
                self.shape(logits),
                self.shape(targets)
            )));
        }
        let lv = self.value(logits).data();
        let tv = self.value(targets).data();
        let n = lv.len().max(1);
        let mut loss = 0.0f64;
        for (&z, &y) in lv.iter().zip(tv) {
            let z = z.to_f64();
            let y = y.to_f64();
            loss += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
        }
        loss /= n as f64;
        let out = Array::scalar(T::from_f64(loss));
        Ok(self.push(Op::BceWithLogits { logits: logits.0, targets: targets.0 }, out, None))
    }

    /// Sum of absolute values, as a scalar node.
    pub fn l1_norm(&mut self, x: Var) -> Var {
        let s: T = self.value(x).data().iter().map(|v| v.abs()).sum();
        let out = Array::scalar(s);
        self.push(Op::L1Norm { x: x.0 }, out, None)
    }

    // ── backward ────────────────────────────────────────────────────

    /// Reverse-mode gradients of a scalar loss w.r.t. every bound parameter
    /// reachable from it. Parameters that do not influence the loss get no
    /// entry.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Usage(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Array<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array::full(self.value(loss).shape(), T::ONE));
        for id in (0..=loss.0).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            self.vjp(id, &g, &mut grads);
            if self.nodes[id].param.is_some() {
                grads[id] = Some(g);
            }
        }
        let mut out = Gradients::new();
        for (id, node) in self.nodes.iter().enumerate() {
            if let Some(p) = node.param {
                if let Some(g) = grads[id].take() {
                    out.insert(self.param_names[p].clone(), g);
                }
            }
        }
        Ok(out)
    }

    fn accumulate(&self, grads: &mut [Option<Array<T>>], node: usize, delta: Array<T>) {
        match &mut grads[node] {
            Some(g) => {
                debug_assert_eq!(g.shape(), delta.shape());
                for (gv, dv) in g.data_mut().iter_mut().zip(delta.data()) {
                    *gv += *dv;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    #[allow(clippy::too_many_lines)]
    fn vjp(&self, id: usize, g: &Array<T>, grads: &mut [Option<Array<T>>]) {
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Relu { x } => {
                let dx = zip_map(g, &self.nodes[*x].value, |gv, xv| {
                    if xv > T::ZERO {
                        gv
                    } else {
                        T::ZERO
                    }
                });
                self.accumulate(grads, *x, dx);
            }
            Op::Sigmoid { x } => {
                let y = &self.nodes[id].value;
                let dx = zip_map(g, y, |gv, yv| gv * yv * (T::ONE - yv));
                self.accumulate(grads, *x, dx);
            }
            Op::Tanh { x } => {
                let y = &self.nodes[id].value;
                let dx = zip_map(g, y, |gv, yv| gv * (T::ONE - yv * yv));
                self.accumulate(grads, *x, dx);
            }
            Op::HardGate => {}
            Op::Scale { x, c } => {
                let cs = T::from_f64(*c);
                self.accumulate(grads, *x, g.map(|v| v * cs));
            }
            Op::AddScalar { x } => {
                self.accumulate(grads, *x, g.clone());
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub { a, b } => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul { a, b } => {
                let da = zip_map(g, &self.nodes[*b].value, |gv, bv| gv * bv);
                let db = zip_map(g, &self.nodes[*a].value, |gv, av| gv * av);
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::MatMul { a, b } => {
                let av = &self.nodes[*a].value;
                let bv = &self.nodes[*b].value;
                let k = bv.shape()[0];
                let n = bv.shape()[1];
                let m = av.numel() / k;
                // da = g * b^T, db = a^T * g
                let da = kernels::matmul_nt(g.data(), bv.data(), m, n, k);
                let db = kernels::matmul_tn(av.data(), g.data(), m, k, n);
                self.accumulate(grads, *a, Array::from_vec(av.shape(), da));
                self.accumulate(grads, *b, Array::from_vec(bv.shape(), db));
            }
            Op::BiasAdd { x, b } => {
                let (c, trail) = dim1_layout(g.shape()).expect("checked at build");
                let mut db = vec![T::ZERO; c];
                for chunk in g.data().chunks(c * trail) {
                    for ci in 0..c {
                        for &v in &chunk[ci * trail..(ci + 1) * trail] {
                            db[ci] += v;
                        }
                    }
                }
                self.accumulate(grads, *x, g.clone());
                self.accumulate(grads, *b, Array::from_vec(&[c], db));
            }
            Op::ChanMul { x, g: gate } => {
                let (c, trail) = dim1_layout(g.shape()).expect("checked at build");
                let xv = &self.nodes[*x].value;
                let gatev = self.nodes[*gate].value.data();
                let mut dx = g.data().to_vec();
                let mut dgate = vec![T::ZERO; c];
                for (chunk_g, chunk_x) in dx.chunks_mut(c * trail).zip(xv.data().chunks(c * trail)) {
                    for ci in 0..c {
                        let gv = gatev[ci];
                        for (dv, &xval) in chunk_g[ci * trail..(ci + 1) * trail]
                            .iter_mut()
                            .zip(&chunk_x[ci * trail..(ci + 1) * trail])
                        {
                            dgate[ci] += *dv * xval;
                            *dv *= gv;
                        }
                    }
                }
                self.accumulate(grads, *x, Array::from_vec(xv.shape(), dx));
                self.accumulate(grads, *gate, Array::from_vec(&[c], dgate));
            }
            Op::MulBcastLast { x, w } => {
                let xv = &self.nodes[*x].value;
                let wv = &self.nodes[*w].value;
                let e = *xv.shape().last().unwrap();
                let mut dx = g.data().to_vec();
                let mut dw = vec![T::ZERO; wv.numel()];
                for ((row_g, row_x), (wval, dwv)) in dx
                    .chunks_mut(e)
                    .zip(xv.data().chunks(e))
                    .zip(wv.data().iter().zip(dw.iter_mut()))
                {
                    for (dv, &xval) in row_g.iter_mut().zip(row_x) {
                        *dwv += *dv * xval;
                        *dv *= *wval;
                    }
                }
                self.accumulate(grads, *x, Array::from_vec(xv.shape(), dx));
                self.accumulate(grads, *w, Array::from_vec(wv.shape(), dw));
            }
            Op::Softmax { x } => {
                let y = &self.nodes[id].value;
                let k = *y.shape().last().unwrap();
                let mut dx = vec![T::ZERO; y.numel()];
                for ((drow, grow), yrow) in dx
                    .chunks_mut(k)
                    .zip(g.data().chunks(k))
                    .zip(y.data().chunks(k))
                {
                    let dot: T = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                    for i in 0..k {
                        drow[i] = yrow[i] * (grow[i] - dot);
                    }
                }
                self.accumulate(grads, *x, Array::from_vec(y.shape(), dx));
            }
            Op::Concat { xs, axis } => {
                let base = g.shape();
                let outer: usize = base[..*axis].iter().product();
                let inner: usize = base[*axis + 1..].iter().product();
                let axis_total = base[*axis];
                let mut offset = 0;
                for &xid in xs {
                    let xshape = self.nodes[xid].value.shape().to_vec();
                    let s_axis = xshape[*axis];
                    let mut dx = vec![T::ZERO; self.nodes[xid].value.numel()];
                    for o in 0..outer {
                        let src_start = (o * axis_total + offset) * inner;
                        let dst_start = o * s_axis * inner;
                        dx[dst_start..dst_start + s_axis * inner]
                            .copy_from_slice(&g.data()[src_start..src_start + s_axis * inner]);
                    }
                    self.accumulate(grads, xid, Array::from_vec(&xshape, dx));
                    offset += s_axis;
                }
            }
            Op::Reshape { x } => {
                let xshape = self.nodes[*x].value.shape().to_vec();
                let dx = Array::from_vec(&xshape, g.data().to_vec());
                self.accumulate(grads, *x, dx);
            }
            Op::Permute { x, perm } => {
                let mut inverse = vec![0usize; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inverse[p] = i;
                }
                let dx = permute_array(g, &inverse);
                self.accumulate(grads, *x, dx);
            }
            Op::ReduceSum { x, axis } | Op::ReduceMean { x, axis } => {
                let xv = &self.nodes[*x].value;
                let (outer, extent, inner, _) = reduce_layout(xv.shape(), *axis).expect("checked");
                let scale = match &self.nodes[id].op {
                    Op::ReduceMean { .. } => T::from_f64(1.0 / extent as f64),
                    _ => T::ONE,
                };
                let mut dx = vec![T::ZERO; xv.numel()];
                for o in 0..outer {
                    for e in 0..extent {
                        let base = (o * extent + e) * inner;
                        for i in 0..inner {
                            dx[base + i] = g.data()[o * inner + i] * scale;
                        }
                    }
                }
                self.accumulate(grads, *x, Array::from_vec(xv.shape(), dx));
            }
            Op::ReduceMax { x, arg, .. } | Op::ReduceMin { x, arg, .. } => {
                let xv = &self.nodes[*x].value;
                let mut dx = vec![T::ZERO; xv.numel()];
                for (i, &a) in arg.iter().enumerate() {
                    dx[a as usize] += g.data()[i];
                }
                self.accumulate(grads, *x, Array::from_vec(xv.shape(), dx));
            }
            Op::MeanAll { x } => {
                let xv = &self.nodes[*x].value;
                let gv = g.item() * T::from_f64(1.0 / xv.numel().max(1) as f64);
                self.accumulate(grads, *x, Array::full(xv.shape(), gv));
            }
            Op::Conv2d { x, w, stride, pad } => {
                let (dx, dw) = self.conv2d_vjp(*x, *w, *stride, *pad, g);
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *w, dw);
            }
            Op::MaxPool2d { x, arg, .. } => {
                let xv = &self.nodes[*x].value;
                let per_img = xv.shape()[1..].iter().product::<usize>();
                let out_per_img = g.shape()[1..].iter().product::<usize>();
                let mut dx = vec![T::ZERO; xv.numel()];
                for b in 0..xv.shape()[0] {
                    for i in 0..out_per_img {
                        let a = arg[b * out_per_img + i] as usize;
                        dx[b * per_img + a] += g.data()[b * out_per_img + i];
                    }
                }
                self.accumulate(grads, *x, Array::from_vec(xv.shape(), dx));
            }
            Op::BatchNorm { x, gamma, beta, mean, invstd } => {
                let (dx, dgamma, dbeta) = self.batch_norm_vjp(*x, *gamma, g, mean, invstd);
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *gamma, dgamma);
                self.accumulate(grads, *beta, dbeta);
            }
            Op::GridSample { x, theta } => {
                let (dx, dtheta) = self.grid_sample_vjp(*x, *theta, g);
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *theta, dtheta);
            }
            Op::PairConcat { a, b } => {
                let av = &self.nodes[*a].value;
                let bv = &self.nodes[*b].value;
                let (batch, na, d) = (av.shape()[0], av.shape()[1], av.shape()[2]);
                let nb = bv.shape()[1];
                let mut da = vec![T::ZERO; av.numel()];
                let mut db = vec![T::ZERO; bv.numel()];
                for bi in 0..batch {
                    for j in 0..na {
                        for k in 0..nb {
                            let base = ((bi * na + j) * nb + k) * 2 * d;
                            for t in 0..d {
                                da[(bi * na + j) * d + t] += g.data()[base + t];
                                db[(bi * nb + k) * d + t] += g.data()[base + d + t];
                            }
                        }
                    }
                }
                self.accumulate(grads, *a, Array::from_vec(av.shape(), da));
                self.accumulate(grads, *b, Array::from_vec(bv.shape(), db));
            }
            Op::GatherRows { x, idx, in_rows } => {
                let xv = &self.nodes[*x].value;
                let stride: usize = xv.shape()[1..].iter().product();
                let mut dx = vec![T::ZERO; in_rows * stride];
                for (r, &i) in idx.iter().enumerate() {
                    let src = &g.data()[r * stride..(r + 1) * stride];
                    for (d, &s) in dx[i as usize * stride..(i as usize + 1) * stride]
                        .iter_mut()
                        .zip(src)
                    {
                        *d += s;
                    }
                }
                self.accumulate(grads, *x, Array::from_vec(xv.shape(), dx));
            }
            Op::RepeatBatch { x, n } => {
                let xv = &self.nodes[*x].value;
                let stride: usize = xv.shape()[1..].iter().product();
                let mut dx = vec![T::ZERO; xv.numel()];
                for b in 0..xv.shape()[0] {
                    for i in 0..*n {
                        let src = &g.data()[(b * n + i) * stride..(b * n + i + 1) * stride];
                        for (d, &s) in dx[b * stride..(b + 1) * stride].iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
                self.accumulate(grads, *x, Array::from_vec(xv.shape(), dx));
            }
            Op::AggregateNodes { edges, presence } => {
                let (de, dp) = self.aggregate_vjp(id, *edges, *presence, g);
                self.accumulate(grads, *edges, de);
                self.accumulate(grads, *presence, dp);
            }
            Op::SplatPoints { values, points } => {
                let (dv, dp) = self.splat_vjp(*values, *points, g);
                self.accumulate(grads, *values, dv);
                self.accumulate(grads, *points, dp);
            }
            Op::SoftmaxCrossEntropy { logits, targets, probs } => {
                let lv = &self.nodes[*logits].value;
                let k = lv.shape()[1];
                let batch = lv.shape()[0];
                let scale = g.item() * T::from_f64(1.0 / batch as f64);
                let mut dx = probs.clone();
                for (b, row) in dx.chunks_mut(k).enumerate() {
                    row[targets[b] as usize] = row[targets[b] as usize] - T::ONE;
                    for v in row.iter_mut() {
                        *v *= scale;
                    }
                }
                self.accumulate(grads, *logits, Array::from_vec(lv.shape(), dx));
            }
            Op::BceWithLogits { logits, targets } => {
                let lv = &self.nodes[*logits].value;
                let tv = &self.nodes[*targets].value;
                let scale = g.item() * T::from_f64(1.0 / lv.numel().max(1) as f64);
                let dx = zip_map(lv, tv, |z, y| (sigmoid_scalar(z) - y) * scale);
                self.accumulate(grads, *logits, dx);
            }
            Op::L1Norm { x } => {
                let xv = &self.nodes[*x].value;
                let gv = g.item();
                let dx = xv.map(|v| {
                    if v > T::ZERO {
                        gv
                    } else if v < T::ZERO {
                        -gv
                    } else {
                        T::ZERO
                    }
                });
                self.accumulate(grads, *x, dx);
            }
            Op::SliceChannels { x, from } => {
                let xv = &self.nodes[*x].value;
                let (c, trail) = dim1_layout(xv.shape()).expect("checked");
                let width = g.shape()[1];
                let batch = xv.shape()[0];
                let mut dx = vec![T::ZERO; xv.numel()];
                for b in 0..batch {
                    let dst = (b * c + from) * trail;
                    let src = b * width * trail;
                    dx[dst..dst + width * trail]
                        .copy_from_slice(&g.data()[src..src + width * trail]);
                }
                self.accumulate(grads, *x, Array::from_vec(xv.shape(), dx));
            }
        }
    }

    fn conv2d_vjp(
        &self,
        x: usize,
        w: usize,
        stride: usize,
        pad: usize,
        g: &Array<T>,
    ) -> (Array<T>, Array<T>) {
        let xv = &self.nodes[x].value;
        let wv = &self.nodes[w].value;
        let (batch, cin, h, wd) = shape4(xv.shape());
        let (cout, _, kh, kw) = shape4(wv.shape());
        let (oh, ow) = (g.shape()[2], g.shape()[3]);
        let patch = cin * kh * kw;

        // dX: parallel over images, disjoint output.
        let mut dx = vec![T::ZERO; xv.numel()];
        dx.par_chunks_mut(cin * h * wd).enumerate().for_each(|(b, dximg)| {
            let gimg = &g.data()[b * cout * oh * ow..(b + 1) * cout * oh * ow];
            // [oh*ow, cout]
            let mut gmat = vec![T::ZERO; oh * ow * cout];
            for co in 0..cout {
                for p in 0..oh * ow {
                    gmat[p * cout + co] = gimg[co * oh * ow + p];
                }
            }
            // dcols = gmat [ohow, cout] x w [cout, patch]
            let dcols = kernels::matmul(&gmat, wv.data(), oh * ow, cout, patch);
            kernels::col2im(&dcols, cin, h, wd, kh, kw, stride, pad, dximg);
        });

        // dW: sequential over images for a deterministic accumulation order.
        let mut dw = vec![T::ZERO; wv.numel()];
        let mut cols = vec![T::ZERO; oh * ow * patch];
        let mut gmat = vec![T::ZERO; oh * ow * cout];
        for b in 0..batch {
            kernels::im2col(
                &xv.data()[b * cin * h * wd..(b + 1) * cin * h * wd],
                cin,
                h,
                wd,
                kh,
                kw,
                stride,
                pad,
                &mut cols,
            );
            let gimg = &g.data()[b * cout * oh * ow..(b + 1) * cout * oh * ow];
            for co in 0..cout {
                for p in 0..oh * ow {
                    gmat[p * cout + co] = gimg[co * oh * ow + p];
                }
            }
            // dW += gmat^T [cout, ohow] x cols [ohow, patch]
            let contrib = kernels::matmul_tn(&gmat, &cols, oh * ow, cout, patch);
            for (d, c) in dw.iter_mut().zip(&contrib) {
                *d += *c;
            }
        }
        (
            Array::from_vec(xv.shape(), dx),
            Array::from_vec(wv.shape(), dw),
        )
    }

    fn batch_norm_vjp(
        &self,
        x: usize,
        gamma: usize,
        g: &Array<T>,
        mean: &[T],
        invstd: &[T],
    ) -> (Array<T>, Array<T>, Array<T>) {
        let xv = &self.nodes[x].value;
        let gammav = self.nodes[gamma].value.data();
        let shape = xv.shape();
        let c = shape[1];
        let trail: usize = shape[2..].iter().product();
        let batch = shape[0];
        let count = (batch * trail) as f64;

        let mut dgamma = vec![T::ZERO; c];
        let mut dbeta = vec![T::ZERO; c];
        for b in 0..batch {
            for ci in 0..c {
                let base = (b * c + ci) * trail;
                for i in 0..trail {
                    let xhat = (xv.data()[base + i] - mean[ci]) * invstd[ci];
                    dgamma[ci] += g.data()[base + i] * xhat;
                    dbeta[ci] += g.data()[base + i];
                }
            }
        }
        let mut dx = vec![T::ZERO; xv.numel()];
        if self.training {
            let inv_count = T::from_f64(1.0 / count);
            for b in 0..batch {
                for ci in 0..c {
                    let base = (b * c + ci) * trail;
                    let scale = gammav[ci] * invstd[ci];
                    for i in 0..trail {
                        let xhat = (xv.data()[base + i] - mean[ci]) * invstd[ci];
                        let centered = g.data()[base + i]
                            - (dbeta[ci] + xhat * dgamma[ci]) * inv_count;
                        dx[base + i] = scale * centered;
                    }
                }
            }
        } else {
            // Running statistics are constants: plain affine gradient.
            for b in 0..batch {
                for ci in 0..c {
                    let base = (b * c + ci) * trail;
                    let scale = gammav[ci] * invstd[ci];
                    for i in 0..trail {
                        dx[base + i] = g.data()[base + i] * scale;
                    }
                }
            }
        }
        (
            Array::from_vec(shape, dx),
            Array::from_vec(&[c], dgamma),
            Array::from_vec(&[c], dbeta),
        )
    }

    fn grid_sample_vjp(&self, x: usize, theta: usize, g: &Array<T>) -> (Array<T>, Array<T>) {
        let xv = &self.nodes[x].value;
        let tv = &self.nodes[theta].value;
        let (batch, c, h, w) = shape4(xv.shape());
        let (oh, ow) = (g.shape()[2], g.shape()[3]);
        let mut dx = vec![T::ZERO; xv.numel()];
        let mut dtheta = vec![T::ZERO; tv.numel()];
        for b in 0..batch {
            let th = &tv.data()[b * 6..(b + 1) * 6];
            let img = &xv.data()[b * c * h * w..(b + 1) * c * h * w];
            let dximg = &mut dx[b * c * h * w..(b + 1) * c * h * w];
            let dth = &mut dtheta[b * 6..(b + 1) * 6];
            let gimg = &g.data()[b * c * oh * ow..(b + 1) * c * oh * ow];
            for oy in 0..oh {
                for ox in 0..ow {
                    let (px, py) = grid_point(th, ox, oy, ow, oh, w, h);
                    let x0 = px.floor();
                    let y0 = py.floor();
                    let fx = px - x0;
                    let fy = py - y0;
                    let (x0, y0) = (x0 as isize, y0 as isize);
                    // d(output)/d(px), d/d(py) accumulated over channels.
                    let mut dpx = 0.0f64;
                    let mut dpy = 0.0f64;
                    for ch in 0..c {
                        let go = gimg[ch * oh * ow + oy * ow + ox].to_f64();
                        if go == 0.0 {
                            continue;
                        }
                        let fetch = |ix: isize, iy: isize| -> f64 {
                            if ix >= 0 && ix < w as isize && iy >= 0 && iy < h as isize {
                                img[ch * h * w + iy as usize * w + ix as usize].to_f64()
                            } else {
                                0.0
                            }
                        };
                        let v00 = fetch(x0, y0);
                        let v10 = fetch(x0 + 1, y0);
                        let v01 = fetch(x0, y0 + 1);
                        let v11 = fetch(x0 + 1, y0 + 1);
                        // Scatter into dx.
                        let mut scatter = |ix: isize, iy: isize, wgt: f64| {
                            if ix >= 0 && ix < w as isize && iy >= 0 && iy < h as isize {
                                dximg[ch * h * w + iy as usize * w + ix as usize] +=
                                    T::from_f64(go * wgt);
                            }
                        };
                        scatter(x0, y0, (1.0 - fx) * (1.0 - fy));
                        scatter(x0 + 1, y0, fx * (1.0 - fy));
                        scatter(x0, y0 + 1, (1.0 - fx) * fy);
                        scatter(x0 + 1, y0 + 1, fx * fy);
                        dpx += go * ((v10 - v00) * (1.0 - fy) + (v11 - v01) * fy);
                        dpy += go * ((v01 - v00) * (1.0 - fx) + (v11 - v10) * fx);
                    }
                    // px = ((a*xo + b*yo + tx) + 1)/2 * (w-1)
                    let (xo, yo) = out_coord(ox, oy, ow, oh);
                    let sx = dpx * 0.5 * (w.max(2) - 1) as f64;
                    let sy = dpy * 0.5 * (h.max(2) - 1) as f64;
                    dth[0] += T::from_f64(sx * xo);
                    dth[1] += T::from_f64(sx * yo);
                    dth[2] += T::from_f64(sx);
                    dth[3] += T::from_f64(sy * xo);
                    dth[4] += T::from_f64(sy * yo);
                    dth[5] += T::from_f64(sy);
                }
            }
        }
        (
            Array::from_vec(xv.shape(), dx),
            Array::from_vec(tv.shape(), dtheta),
        )
    }

    fn aggregate_vjp(
        &self,
        id: usize,
        edges: usize,
        presence: usize,
        g: &Array<T>,
    ) -> (Array<T>, Array<T>) {
        let ev = &self.nodes[edges].value;
        let pv = &self.nodes[presence].value;
        let (batch, nj, nk, e) = shape4(ev.shape());
        let out = &self.nodes[id].value;
        let mut de = vec![T::ZERO; ev.numel()];
        let mut dp = vec![T::ZERO; pv.numel()];
        for b in 0..batch {
            let pres = &pv.data()[b * nj..(b + 1) * nj];
            let psum: T = pres.iter().copied().sum();
            let any = pres.iter().any(|&p| p > T::ZERO);
            if !any {
                continue;
            }
            for k in 0..nk {
                let grow = &g.data()[(b * nk + k) * 4 * e..(b * nk + k + 1) * 4 * e];
                let orow = &out.data()[(b * nk + k) * 4 * e..(b * nk + k + 1) * 4 * e];
                for ei in 0..e {
                    // Recompute argmax/argmin deterministically (first hit).
                    let mut arg_mx = usize::MAX;
                    let mut arg_mn = usize::MAX;
                    let mut mx = T::ZERO;
                    let mut mn = T::ZERO;
                    let mut first = true;
                    for j in 0..nj {
                        if pres[j] > T::ZERO {
                            let xval = ev.data()[((b * nj + j) * nk + k) * e + ei];
                            if first {
                                mx = xval;
                                mn = xval;
                                arg_mx = j;
                                arg_mn = j;
                                first = false;
                            } else {
                                if xval > mx {
                                    mx = xval;
                                    arg_mx = j;
                                }
                                if xval < mn {
                                    mn = xval;
                                    arg_mn = j;
                                }
                            }
                        }
                    }
                    let (g_max, g_min, g_sum, g_mean) =
                        (grow[ei], grow[e + ei], grow[2 * e + ei], grow[3 * e + ei]);
                    let mean_val = orow[3 * e + ei];
                    de[((b * nj + arg_mx) * nk + k) * e + ei] += g_max;
                    de[((b * nj + arg_mn) * nk + k) * e + ei] += g_min;
                    for j in 0..nj {
                        let idx = ((b * nj + j) * nk + k) * e + ei;
                        let xval = ev.data()[idx];
                        de[idx] += pres[j] * (g_sum + g_mean / psum);
                        dp[b * nj + j] +=
                            g_sum * xval + g_mean * (xval - mean_val) / psum;
                    }
                }
            }
        }
        (
            Array::from_vec(ev.shape(), de),
            Array::from_vec(pv.shape(), dp),
        )
    }

    fn splat_vjp(&self, values: usize, points: usize, g: &Array<T>) -> (Array<T>, Array<T>) {
        let vv = &self.nodes[values].value;
        let pv = &self.nodes[points].value;
        let (batch, n, c) = (vv.shape()[0], vv.shape()[1], vv.shape()[2]);
        let (h, w) = (g.shape()[2], g.shape()[3]);
        let mut dval = vec![T::ZERO; vv.numel()];
        let mut dpts = vec![T::ZERO; pv.numel()];
        for b in 0..batch {
            let gimg = &g.data()[b * c * h * w..(b + 1) * c * h * w];
            for node in 0..n {
                let px = to_pixel(pv.data()[(b * n + node) * 2].to_f64(), w);
                let py = to_pixel(pv.data()[(b * n + node) * 2 + 1].to_f64(), h);
                let x0f = px.floor();
                let y0f = py.floor();
                let fx = px - x0f;
                let fy = py - y0f;
                let (x0, y0) = (x0f as isize, y0f as isize);
                let corners = [
                    (x0, y0, (1.0 - fx) * (1.0 - fy), (-(1.0 - fy)), -(1.0 - fx)),
                    (x0 + 1, y0, fx * (1.0 - fy), 1.0 - fy, -fx),
                    (x0, y0 + 1, (1.0 - fx) * fy, -fy, 1.0 - fx),
                    (x0 + 1, y0 + 1, fx * fy, fy, fx),
                ];
                let val = &vv.data()[(b * n + node) * c..(b * n + node + 1) * c];
                let mut dpx = 0.0;
                let mut dpy = 0.0;
                for &(ix, iy, wgt, dwdx, dwdy) in &corners {
                    if ix < 0 || ix >= w as isize || iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ch in 0..c {
                        let go = gimg[ch * h * w + iy as usize * w + ix as usize].to_f64();
                        dval[(b * n + node) * c + ch] += T::from_f64(go * wgt);
                        dpx += go * val[ch].to_f64() * dwdx;
                        dpy += go * val[ch].to_f64() * dwdy;
                    }
                }
                dpts[(b * n + node) * 2] += T::from_f64(dpx * 0.5 * (w.max(2) - 1) as f64);
                dpts[(b * n + node) * 2 + 1] += T::from_f64(dpy * 0.5 * (h.max(2) - 1) as f64);
            }
        }
        (
            Array::from_vec(vv.shape(), dval),
            Array::from_vec(pv.shape(), dpts),
        )
    }
}

// ── helpers ─────────────────────────────────────────────────────────

fn zip_map<T: Scalar>(a: &Array<T>, b: &Array<T>, f: impl Fn(T, T) -> T) -> Array<T> {
    debug_assert_eq!(a.shape(), b.shape());
    Array::from_vec(
        a.shape(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}

fn sigmoid_scalar<T: Scalar>(v: T) -> T {
    // Stable in both tails.
    if v >= T::ZERO {
        T::ONE / (T::ONE + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::ONE + e)
    }
}

fn softmax_row<T: Scalar>(row: &mut [T]) {
    let mut m = row[0];
    for &v in row.iter() {
        m = m.max_s(v);
    }
    let mut s = T::ZERO;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    let inv = T::ONE / s;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

/// Per-channel mean and biased variance over all non-channel axes.
fn channel_stats<T: Scalar>(x: &Array<T>, c: usize) -> (Vec<T>, Vec<T>) {
    let shape = x.shape();
    let trail: usize = shape[2..].iter().product();
    let batch = shape[0];
    let count = T::from_f64(1.0 / (batch * trail) as f64);
    let mut mean = vec![T::ZERO; c];
    for b in 0..batch {
        for ci in 0..c {
            let base = (b * c + ci) * trail;
            for i in 0..trail {
                mean[ci] += x.data()[base + i];
            }
        }
    }
    for m in &mut mean {
        *m *= count;
    }
    let mut var = vec![T::ZERO; c];
    for b in 0..batch {
        for ci in 0..c {
            let base = (b * c + ci) * trail;
            for i in 0..trail {
                let d = x.data()[base + i] - mean[ci];
                var[ci] += d * d;
            }
        }
    }
    for v in &mut var {
        *v *= count;
    }
    (mean, var)
}

fn dim1_layout(shape: &[usize]) -> Result<(usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::Config(format!(
            "op requires rank >= 2, got {shape:?}"
        )));
    }
    Ok((shape[1], shape[2..].iter().product()))
}

fn reduce_layout(shape: &[usize], axis: usize) -> Result<(usize, usize, usize, Vec<usize>)> {
    if axis >= shape.len() {
        return Err(Error::Config(format!(
            "reduce: axis {axis} out of range for {shape:?}"
        )));
    }
    let outer: usize = shape[..axis].iter().product();
    let extent = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out_shape: Vec<usize> = shape.to_vec();
    out_shape.remove(axis);
    if out_shape.is_empty() {
        out_shape.push(1);
    }
    Ok((outer, extent, inner, out_shape))
}

fn shape4(shape: &[usize]) -> (usize, usize, usize, usize) {
    (shape[0], shape[1], shape[2], shape[3])
}

fn permute_array<T: Scalar>(x: &Array<T>, perm: &[usize]) -> Array<T> {
    let in_shape = x.shape();
    let rank = in_shape.len();
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
    }
    let mut data = vec![T::ZERO; x.numel()];
    let mut out_idx = vec![0usize; rank];
    for (o, slot) in data.iter_mut().enumerate() {
        // Decompose o into out coordinates.
        let mut rem = o;
        for i in (0..rank).rev() {
            out_idx[i] = rem % out_shape[i];
            rem /= out_shape[i];
        }
        let mut src = 0;
        for i in 0..rank {
            src += out_idx[i] * in_strides[perm[i]];
        }
        *slot = x.data()[src];
    }
    Array::from_vec(&out_shape, data)
}

/// Output-grid coordinate in [-1, 1] (align-corners convention).
fn out_coord(ox: usize, oy: usize, ow: usize, oh: usize) -> (f64, f64) {
    let xo = if ow > 1 {
        2.0 * ox as f64 / (ow - 1) as f64 - 1.0
    } else {
        0.0
    };
    let yo = if oh > 1 {
        2.0 * oy as f64 / (oh - 1) as f64 - 1.0
    } else {
        0.0
    };
    (xo, yo)
}

fn to_pixel(coord: f64, extent: usize) -> f64 {
    (coord + 1.0) * 0.5 * (extent.max(2) - 1) as f64
}

fn grid_point<T: Scalar>(
    theta: &[T],
    ox: usize,
    oy: usize,
    ow: usize,
    oh: usize,
    w: usize,
    h: usize,
) -> (f64, f64) {
    let (xo, yo) = out_coord(ox, oy, ow, oh);
    let a = theta[0].to_f64();
    let b = theta[1].to_f64();
    let tx = theta[2].to_f64();
    let c = theta[3].to_f64();
    let d = theta[4].to_f64();
    let ty = theta[5].to_f64();
    let xs = a * xo + b * yo + tx;
    let ys = c * xo + d * yo + ty;
    (to_pixel(xs, w), to_pixel(ys, h))
}

fn bilinear_fetch<T: Scalar>(
    img: &[T],
    c: usize,
    h: usize,
    w: usize,
    px: f64,
    py: f64,
    mut write: impl FnMut(usize, T),
) {
    let x0f = px.floor();
    let y0f = py.floor();
    let fx = px - x0f;
    let fy = py - y0f;
    let (x0, y0) = (x0f as isize, y0f as isize);
    let corners = [
        (x0, y0, (1.0 - fx) * (1.0 - fy)),
        (x0 + 1, y0, fx * (1.0 - fy)),
        (x0, y0 + 1, (1.0 - fx) * fy),
        (x0 + 1, y0 + 1, fx * fy),
    ];
    for ch in 0..c {
        let mut acc = 0.0f64;
        for &(ix, iy, wgt) in &corners {
            if ix >= 0 && ix < w as isize && iy >= 0 && iy < h as isize && wgt != 0.0 {
                acc += img[ch * h * w + iy as usize * w + ix as usize].to_f64() * wgt;
            }
        }
        write(ch, T::from_f64(acc));
    }
}

fn bilinear_splat<T: Scalar>(canvas: &mut [T], h: usize, w: usize, px: f64, py: f64, val: &[T]) {
    let x0f = px.floor();
    let y0f = py.floor();
    let fx = px - x0f;
    let fy = py - y0f;
    let (x0, y0) = (x0f as isize, y0f as isize);
    let corners = [
        (x0, y0, (1.0 - fx) * (1.0 - fy)),
        (x0 + 1, y0, fx * (1.0 - fy)),
        (x0, y0 + 1, (1.0 - fx) * fy),
        (x0 + 1, y0 + 1, fx * fy),
    ];
    for &(ix, iy, wgt) in &corners {
        if ix < 0 || ix >= w as isize || iy < 0 || iy >= h as isize || wgt == 0.0 {
            continue;
        }
        for (ch, &v) in val.iter().enumerate() {
            canvas[ch * h * w + iy as usize * w + ix as usize] += v * T::from_f64(wgt);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arr<T: Scalar>(shape: &[usize], data: &[f64]) -> Array<T> {
        Array::from_vec(shape, data.iter().map(|&v| T::from_f64(v)).collect())
    }

    #[test]
    fn relu_definition() {
        let mut g = Graph::<f64>::new(0, true);
        let x = g.constant(arr(&[3], &[-1.0, 0.0, 2.0]));
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn softmax_equal_logits_is_uniform() {
        let mut g = Graph::<f64>::new(0, true);
        let x = g.constant(arr(&[1, 8], &[0.3; 8]));
        let y = g.softmax(x).unwrap();
        for &v in g.value(y).data() {
            assert!((v - 0.125).abs() < 1e-12);
        }
    }

    /// Direct nested-loop convolution, the independent oracle.
    fn conv_oracle(
        x: &[f64],
        (h, w): (usize, usize),
        k: &[f64],
        (kh, kw): (usize, usize),
        stride: usize,
        pad: usize,
    ) -> Vec<f64> {
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        let mut out = vec![0.0; oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if iy >= 0 && (iy as usize) < h && ix >= 0 && (ix as usize) < w {
                            acc += x[iy as usize * w + ix as usize] * k[ky * kw + kx];
                        }
                    }
                }
                out[oy * ow + ox] = acc;
            }
        }
        out
    }

    #[test]
    fn conv2d_matches_nested_loop_oracle() {
        // 5x5 ramp image, 3x3 averaging kernel, stride 1, zero padding.
        let ramp: Vec<f64> = (0..25).map(|i| i as f64).collect();
        let kernel = vec![1.0 / 9.0; 9];
        let expect = conv_oracle(&ramp, (5, 5), &kernel, (3, 3), 1, 1);

        let mut g = Graph::<f64>::new(0, true);
        let x = g.constant(arr(&[1, 1, 5, 5], &ramp));
        let w = g.constant(arr(&[1, 1, 3, 3], &kernel));
        let y = g.conv2d(x, w, 1, 1).unwrap();
        assert_eq!(g.shape(y), &[1, 1, 5, 5]);
        for (a, b) in g.value(y).data().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn conv2d_shape_error_names_primitive_and_shapes() {
        let mut g = Graph::<f64>::new(0, true);
        let x = g.constant(Array::zeros(&[1, 2, 5, 5]));
        let w = g.constant(Array::zeros(&[4, 3, 3, 3])); // channel mismatch
        let err = g.conv2d(x, w, 1, 1).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("conv2d") && msg.contains("[1, 2, 5, 5]"), "{msg}");
    }

    #[test]
    fn grid_sample_identity_is_exact() {
        let data: Vec<f64> = (0..2 * 4 * 5).map(|i| (i as f64 * 0.7).sin()).collect();
        let mut g = Graph::<f64>::new(0, true);
        let x = g.constant(arr(&[1, 2, 4, 5], &data));
        let theta = g.constant(arr(&[1, 6], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]));
        let y = g.grid_sample(x, theta, 4, 5).unwrap();
        assert_eq!(g.value(y).data(), g.value(x).data());
    }

    #[test]
    fn grid_sample_one_pixel_shift_matches_interior() {
        // Translation by exactly one input-pixel pitch on a ramp: the output
        // interior equals the input shifted by one column.
        let w = 6usize;
        let h = 4usize;
        let ramp: Vec<f64> = (0..h * w).map(|i| i as f64).collect();
        let mut g = Graph::<f64>::new(0, true);
        let x = g.constant(arr(&[1, 1, h, w], &ramp));
        // One pixel along x in normalized units = 2/(W-1).
        let tx = 2.0 / (w as f64 - 1.0);
        let theta = g.constant(arr(&[1, 6], &[1.0, 0.0, tx, 0.0, 1.0, 0.0]));
        let y = g.grid_sample(x, theta, h, w).unwrap();
        let out = g.value(y).data();
        for row in 0..h {
            for col in 0..w - 1 {
                let got = out[row * w + col];
                let want = ramp[row * w + col + 1];
                assert!((got - want).abs() < 1e-9, "({row},{col}): {got} vs {want}");
            }
        }
    }

    #[test]
    fn grid_sample_outside_reads_zero() {
        let mut g = Graph::<f64>::new(0, true);
        let x = g.constant(arr(&[1, 1, 3, 3], &[5.0; 9]));
        // Large translation pushes every sample point outside [-1, 1].
        let theta = g.constant(arr(&[1, 6], &[1.0, 0.0, 10.0, 0.0, 1.0, 10.0]));
        let y = g.grid_sample(x, theta, 3, 3).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gumbel_sigmoid_saturates_for_large_logits() {
        let mut g = Graph::<f32>::new(7, true);
        let x = g.constant(arr(&[64], &[20.0; 64]));
        let y = g.gumbel_sigmoid(x, 0.7).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v > 0.99));
    }

    #[test]
    fn gumbel_sigmoid_rejects_nonpositive_temperature() {
        let mut g = Graph::<f32>::new(7, true);
        let x = g.constant(arr(&[1], &[0.0]));
        assert!(g.gumbel_sigmoid(x, 0.0).is_err());
    }

    #[test]
    fn gumbel_sigmoid_median_split_monte_carlo() {
        // Monte Carlo oracle: at logit 0 the relaxed sample is above 0.5
        // exactly when the logistic noise is positive, i.e. half the time.
        let n = 100_000usize;
        let mut g = Graph::<f64>::new(123, true);
        let x = g.constant(Array::zeros(&[n]));
        let y = g.gumbel_sigmoid(x, 0.01).unwrap();
        let frac = g.value(y).data().iter().filter(|&&v| v > 0.5).count() as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.02, "fraction {frac}");
    }

    #[test]
    fn gumbel_sigmoid_relaxed_outputs_strictly_open() {
        // At the default temperature the relaxed sample never reaches 0 or 1
        // (64-bit); extreme temperatures may saturate in floating point.
        let n = 100_000usize;
        let mut g = Graph::<f64>::new(321, true);
        let x = g.constant(Array::zeros(&[n]));
        let y = g.gumbel_sigmoid(x, 0.7).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn gumbel_sigmoid_eval_mode_is_hard_and_deterministic() {
        let mut g = Graph::<f64>::new(9, false);
        let x = g.constant(arr(&[4], &[-3.0, -0.1, 0.1, 3.0]));
        let y = g.gumbel_sigmoid(x, 0.7).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        let mut g = Graph::<f64>::new(0, true);
        let x = g.param("x", &Array::scalar(0.0));
        let y = g.sigmoid(x);
        let grads = g.backward(y).unwrap();
        assert!((grads["x"].item() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn softmax_cross_entropy_gradient_is_probs_minus_onehot() {
        let logits = [0.3, -1.2, 2.0, 0.0];
        let mut g = Graph::<f64>::new(0, true);
        let x = g.param("logits", &arr(&[1, 4], &logits));
        let loss = g.softmax_cross_entropy(x, &[2]).unwrap();
        let grads = g.backward(loss).unwrap();
        // Reference probabilities.
        let m = 2.0f64;
        let exps: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = exps.iter().sum();
        for (i, (&gv, &e)) in grads["logits"].data().iter().zip(&exps).enumerate() {
            let want = e / s - if i == 2 { 1.0 } else { 0.0 };
            assert!((gv - want).abs() < 1e-12, "{i}: {gv} vs {want}");
        }
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut g = Graph::<f64>::new(0, true);
        let x = g.param("x", &Array::zeros(&[3]));
        let y = g.relu(x);
        assert!(matches!(g.backward(y), Err(Error::Usage(_))));
    }

    #[test]
    fn aggregate_nodes_small_example() {
        // Edge set {[1,2],[3,0]}: max [3,2], min [1,0], sum [4,2], mean [2,1].
        let mut g = Graph::<f64>::new(0, true);
        let edges = g.constant(arr(&[1, 2, 1, 2], &[1.0, 2.0, 3.0, 0.0]));
        let pres = g.constant(arr(&[1, 2], &[1.0, 1.0]));
        let out = g.aggregate_nodes(edges, pres).unwrap();
        assert_eq!(g.shape(out), &[1, 1, 8]);
        assert_eq!(
            g.value(out).data(),
            &[3.0, 2.0, 1.0, 0.0, 4.0, 2.0, 2.0, 1.0]
        );
    }

    #[test]
    fn aggregate_nodes_singleton_equals_element() {
        let mut g = Graph::<f64>::new(0, true);
        let edges = g.constant(arr(&[1, 1, 1, 3], &[0.5, -1.0, 2.0]));
        let pres = g.constant(arr(&[1, 1], &[1.0]));
        let out = g.aggregate_nodes(edges, pres).unwrap();
        assert_eq!(
            g.value(out).data(),
            &[0.5, -1.0, 2.0, 0.5, -1.0, 2.0, 0.5, -1.0, 2.0, 0.5, -1.0, 2.0]
        );
    }

    #[test]
    fn aggregate_nodes_zero_presence_yields_zeros() {
        let mut g = Graph::<f64>::new(0, true);
        let edges = g.constant(arr(&[1, 2, 1, 2], &[1.0, 2.0, 3.0, 4.0]));
        let pres = g.constant(arr(&[1, 2], &[0.0, 0.0]));
        let out = g.aggregate_nodes(edges, pres).unwrap();
        assert!(g.value(out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn aggregate_nodes_masking_matches_removal() {
        // Masking source node 1 equals aggregating the set without it.
        let vals = [1.0, -2.0, 0.5, 4.0, 3.0, -1.0];
        let mut g = Graph::<f64>::new(0, true);
        let edges3 = g.constant(arr(&[1, 3, 1, 2], &vals));
        let pres3 = g.constant(arr(&[1, 3], &[1.0, 0.0, 1.0]));
        let masked = g.aggregate_nodes(edges3, pres3).unwrap();

        let kept = [1.0, -2.0, 3.0, -1.0];
        let edges2 = g.constant(arr(&[1, 2, 1, 2], &kept));
        let pres2 = g.constant(arr(&[1, 2], &[1.0, 1.0]));
        let removed = g.aggregate_nodes(edges2, pres2).unwrap();
        assert_eq!(g.value(masked).data(), g.value(removed).data());
    }

    #[test]
    fn batch_norm_inference_uses_running_statistics() {
        let mut g = Graph::<f64>::new(0, false);
        let x = g.constant(arr(&[2, 1, 1, 1], &[1.0, 3.0]));
        let gamma = g.constant(arr(&[1], &[2.0]));
        let beta = g.constant(arr(&[1], &[0.5]));
        let rm = arr::<f64>(&[1], &[1.0]);
        let rv = arr::<f64>(&[1], &[4.0]);
        let y = g
            .batch_norm(x, gamma, beta, (&rm, &rv), ("m", "v"), 0.0, 0.9)
            .unwrap();
        // (x - 1) / 2 * 2 + 0.5
        let out = g.value(y).data();
        assert!((out[0] - 0.5).abs() < 1e-12);
        assert!((out[1] - 2.5).abs() < 1e-12);
        assert!(g.take_stat_updates().is_empty());
    }

    #[test]
    fn determinism_bitwise_across_graphs() {
        let build = || {
            let mut g = Graph::<f32>::new(99, true);
            let x = g.param("x", &arr(&[4, 4], &(0..16).map(|i| i as f64 * 0.3).collect::<Vec<_>>()));
            let noise = g.gumbel_sigmoid(x, 0.7).unwrap();
            let w = g.param("w", &arr(&[4, 2], &(0..8).map(|i| 0.1 * i as f64).collect::<Vec<_>>()));
            let h = g.matmul(noise, w).unwrap();
            let s = g.softmax(h).unwrap();
            let loss = g.mean_all(s);
            let grads = g.backward(loss).unwrap();
            (
                g.value(loss).item(),
                grads["x"].data().to_vec(),
                grads["w"].data().to_vec(),
            )
        };
        let (l1, gx1, gw1) = build();
        let (l2, gx2, gw2) = build();
        assert_eq!(l1.to_bits(), l2.to_bits());
        assert_eq!(gx1, gx2);
        assert_eq!(gw1, gw2);
    }

    #[test]
    fn matmul_linear_chain_gradients() {
        // y = mean(relu(x W)) against finite differences.
        use super::super::finitediff;
        let xs: Vec<f64> = (0..6).map(|i| 0.4 * i as f64 - 1.1).collect();
        let ws: Vec<f64> = (0..12).map(|i| 0.3 * i as f64 - 1.7).collect();
        let mut store = ParamStore::new();
        store.insert("x", arr(&[2, 3], &xs), true);
        store.insert("w", arr(&[3, 4], &ws), true);
        let run = |s: &ParamStore<f64>| -> f64 {
            let mut g = Graph::<f64>::new(0, true);
            let x = g.param("x", s.get("x").unwrap());
            let w = g.param("w", s.get("w").unwrap());
            let h = g.matmul(x, w).unwrap();
            let r = g.relu(h);
            let loss = g.mean_all(r);
            g.value(loss).item()
        };
        let numeric = finitediff::finite_diff_gradients(&store, run);
        let mut g = Graph::<f64>::new(0, true);
        let x = g.param("x", store.get("x").unwrap());
        let w = g.param("w", store.get("w").unwrap());
        let h = g.matmul(x, w).unwrap();
        let r = g.relu(h);
        let loss = g.mean_all(r);
        let analytic = g.backward(loss).unwrap();
        let (err, name) = finitediff::max_gradient_error(&analytic, &numeric);
        assert!(err < finitediff::FD_TOLERANCE, "{name}: {err}");
    }

    use super::super::params::ParamStore;
}
