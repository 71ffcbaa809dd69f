//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation as a node holding its forward value.
//! [`Graph::backward`] walks the tape in reverse and accumulates gradients for
//! every node that depends on an input or a parameter. Graphs are built fresh
//! per forward pass and are confined to one thread.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, DiffError, Result};
use crate::params::{Gradients, ParameterStore};
use crate::tensor::{gemm, Strided, StridedMut, Tensor};

/// Sentinel index for [`Graph::gather`]: the output element is zero.
pub const GATHER_ZERO: usize = usize::MAX;

const LAYER_NORM_EPS: f64 = 1e-6;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Tensor),
    AddConst(Var),
    Sigmoid(Var),
    Tanh(Var),
    LeakyRelu(Var, f64),
    Relu(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    Gather(Var, Vec<usize>),
    Reshape(Var),
    Transpose(Var),
    Sum(Var),
    SoftmaxRows(Var),
    MaskedMse {
        pred: Var,
        target: Tensor,
        mask: Tensor,
        count: f64,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    CausalConv {
        x: Var,
        w: Var,
        b: Var,
        batch: usize,
        kernel: usize,
        dilation: usize,
    },
    NodeMix {
        x: Var,
        adj: Var,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        groups: usize,
        seq: usize,
        heads: usize,
        weights: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Read-only view of the softmax weights saved by [`Graph::attention`].
#[derive(Clone, Copy, Debug)]
pub struct AttentionMap<'a> {
    pub groups: usize,
    pub heads: usize,
    pub seq: usize,
    weights: &'a [f64],
}

impl AttentionMap<'_> {
    /// Weight that query `i` puts on key `j`, for one group and head.
    pub fn get(&self, group: usize, head: usize, i: usize, j: usize) -> f64 {
        let s = self.seq;
        self.weights[((group * self.heads + head) * s + i) * s + j]
    }

    /// Row `i` of one head's `seq x seq` attention matrix.
    pub fn row(&self, group: usize, head: usize, i: usize) -> &[f64] {
        let s = self.seq;
        let start = ((group * self.heads + head) * s + i) * s;
        &self.weights[start..start + s]
    }
}

pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    mode: Mode,
    rng: ChaCha8Rng,
    params: BTreeMap<String, Var>,
}

impl Graph {
    pub fn new(mode: Mode, seed: u64) -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            mode,
            rng: ChaCha8Rng::seed_from_u64(seed),
            params: BTreeMap::new(),
        }
    }

    /// Evaluation-mode graph; dropout and stochastic depth are disabled.
    pub fn eval() -> Self {
        Self::new(Mode::Eval, 0)
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_training(&self) -> bool {
        self.mode == Mode::Train
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A differentiable leaf, used for gradient checks against raw inputs.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf bound to a named parameter. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParameterStore, name: &str) -> Result<Var> {
        if let Some(v) = self.params.get(name) {
            return Ok(*v);
        }
        let value = store.get(name)?.clone();
        let v = self.push(value, Op::Leaf, true);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return shape_err(
                op,
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            );
        }
        Ok(())
    }

    fn zip(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.same_shape(op, a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(va.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip("add", a, b, |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// Adds a `1 x c` row vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        if self.dims(bias) != (1, c) {
            return shape_err("add_row", format!("{r}x{c} + {:?}", self.value(bias).shape()));
        }
        let mut value = self.value(a).clone();
        let b = self.value(bias).data().to_vec();
        for row in value.data_mut().chunks_mut(c) {
            for (x, y) in row.iter_mut().zip(&b) {
                *x += y;
            }
        }
        let rg = self.rg(&[a, bias]);
        Ok(self.push(value, Op::AddRow(a, bias), rg))
    }

    /// `x W + b`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_row(y, b)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x * s);
        let rg = self.rg(&[a]);
        self.push(value, Op::Scale(a, s), rg)
    }

    /// Elementwise product with a constant of the same shape.
    pub fn mul_const(&mut self, a: Var, c: Tensor) -> Result<Var> {
        if self.value(a).shape() != c.shape() {
            return shape_err("mul_const", format!("{:?} vs {:?}", self.value(a).shape(), c.shape()));
        }
        let data = self.value(a).data().iter().zip(c.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(c.shape().to_vec(), data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::MulConst(a, c), rg))
    }

    pub fn add_const(&mut self, a: Var, c: &Tensor) -> Result<Var> {
        if self.value(a).shape() != c.shape() {
            return shape_err("add_const", format!("{:?} vs {:?}", self.value(a).shape(), c.shape()));
        }
        let mut value = self.value(a).clone();
        value.add_assign(c);
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::AddConst(a), rg))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        let rg = self.rg(&[a]);
        self.push(value, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        let rg = self.rg(&[a]);
        self.push(value, Op::Tanh(a), rg)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = self.value(a).map(|x| if x >= 0.0 { x } else { slope * x });
        let rg = self.rg(&[a]);
        self.push(value, Op::LeakyRelu(a, slope), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        let rg = self.rg(&[a]);
        self.push(value, Op::Relu(a), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            return shape_err("concat_cols", "no inputs");
        };
        let rows = self.dims(*first).0;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (r, c) = self.dims(*p);
            if r != rows {
                return shape_err("concat_cols", format!("row counts {rows} vs {r}"));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; rows * total];
        let mut offset = 0;
        for (p, w) in parts.iter().zip(&widths) {
            let src = self.value(*p).data();
            for r in 0..rows {
                data[r * total + offset..r * total + offset + w].copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            offset += w;
        }
        let rg = self.rg(parts);
        Ok(self.push(Tensor::matrix(rows, total, data), Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(a);
        if start + len > c {
            return shape_err("slice_cols", format!("[{start}, {}) of {c} columns", start + len));
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(r * len);
        for row in 0..r {
            data.extend_from_slice(&src[row * c + start..row * c + start + len]);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::matrix(r, len, data), Op::SliceCols(a, start), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            return shape_err("concat_rows", "no inputs");
        };
        let cols = self.dims(*first).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let (r, c) = self.dims(*p);
            if c != cols {
                return shape_err("concat_rows", format!("column counts {cols} vs {c}"));
            }
            data.extend_from_slice(self.value(*p).data());
            rows += r;
        }
        let rg = self.rg(parts);
        Ok(self.push(Tensor::matrix(rows, cols, data), Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(a);
        if start + len > r {
            return shape_err("slice_rows", format!("[{start}, {}) of {r} rows", start + len));
        }
        let data = self.value(a).data()[start * c..(start + len) * c].to_vec();
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::matrix(len, c, data), Op::SliceRows(a, start), rg))
    }

    /// `out.data[i] = a.data[index[i]]`, or 0 where `index[i] == GATHER_ZERO`.
    pub fn gather(&mut self, a: Var, rows: usize, cols: usize, index: Vec<usize>) -> Result<Var> {
        if index.len() != rows * cols {
            return shape_err("gather", format!("{} indices for {rows}x{cols}", index.len()));
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(index.len());
        for &i in &index {
            if i == GATHER_ZERO {
                data.push(0.0);
            } else if i < src.len() {
                data.push(src[i]);
            } else {
                return shape_err("gather", format!("index {i} out of {}", src.len()));
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::matrix(rows, cols, data), Op::Gather(a, index), rg))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let value = self.value(a).clone().reshaped(&[rows, cols])?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).transpose()?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Transpose(a), rg))
    }

    /// Sum of all elements as a `1x1` tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let mut value = self.value(a).clone();
        for row in value.data_mut().chunks_mut(c.max(1)).take(r) {
            softmax_in_place(row);
        }
        let rg = self.rg(&[a]);
        self.push(value, Op::SoftmaxRows(a), rg)
    }

    /// Mean squared error over entries where `mask` is nonzero.
    pub fn masked_mse(&mut self, pred: Var, target: Tensor, mask: Tensor) -> Result<Var> {
        let p = self.value(pred);
        if p.shape() != target.shape() || p.shape() != mask.shape() {
            return shape_err(
                "masked_mse",
                format!("pred {:?}, target {:?}, mask {:?}", p.shape(), target.shape(), mask.shape()),
            );
        }
        let mut count = 0.0;
        let mut total = 0.0;
        for ((x, t), m) in p.data().iter().zip(target.data()).zip(mask.data()) {
            if *m != 0.0 {
                count += 1.0;
                total += (x - t) * (x - t);
            }
        }
        if count == 0.0 {
            return Err(DiffError::EmptyMask);
        }
        let rg = self.rg(&[pred]);
        Ok(self.push(
            Tensor::scalar(total / count),
            Op::MaskedMse {
                pred,
                target,
                mask,
                count,
            },
            rg,
        ))
    }

    /// Row-wise layer normalisation with learned scale and shift (`1 x c` each).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (r, c) = self.dims(x);
        if self.dims(gamma) != (1, c) || self.dims(beta) != (1, c) {
            return shape_err("layer_norm", format!("input {r}x{c}, affine {:?}", self.value(gamma).shape()));
        }
        let src = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![0.0; r * c];
        let mut out = vec![0.0; r * c];
        let mut inv_std = Vec::with_capacity(r);
        for row in 0..r {
            let xs = &src[row * c..(row + 1) * c];
            let mean = xs.iter().sum::<f64>() / c as f64;
            let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(is);
            for j in 0..c {
                let h = (xs[j] - mean) * is;
                xhat[row * c + j] = h;
                out[row * c + j] = h * g[j] + b[j];
            }
        }
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            Tensor::matrix(r, c, out),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat: Tensor::matrix(r, c, xhat),
                inv_std,
            },
            rg,
        ))
    }

    /// Dilated causal convolution without padding.
    ///
    /// `x` holds `len * batch` rows in time-major order (row `t * batch + s` is
    /// sample `s` at time `t`). `w` stacks the `kernel` taps as
    /// `(kernel * c_in) x c_out`, tap `j` reading input time `t + j * dilation`.
    /// The output has `len - dilation * (kernel - 1)` time steps, output step `t`
    /// aligned with input step `t + dilation * (kernel - 1)`, so it never sees
    /// later inputs.
    pub fn causal_conv1d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        batch: usize,
        kernel: usize,
        dilation: usize,
    ) -> Result<Var> {
        let (rows, cin) = self.dims(x);
        let (wr, cout) = self.dims(w);
        if batch == 0 || rows % batch != 0 || kernel == 0 || dilation == 0 {
            return shape_err("causal_conv1d", format!("{rows} rows, batch {batch}, kernel {kernel}"));
        }
        if wr != kernel * cin || self.dims(b) != (1, cout) {
            return shape_err(
                "causal_conv1d",
                format!("weights {wr}x{cout} for kernel {kernel} x {cin} channels"),
            );
        }
        let len = rows / batch;
        let span = dilation * (kernel - 1);
        if len <= span {
            return Err(DiffError::TooShort {
                len,
                required: span + 1,
            });
        }
        let out_len = len - span;
        let m = out_len * batch;
        let mut out = vec![0.0; m * cout];
        let bias = self.value(b).data();
        for row in out.chunks_mut(cout) {
            row.copy_from_slice(bias);
        }
        let xs = self.value(x).data();
        let ws = self.value(w).data();
        for j in 0..kernel {
            let x_off = j * dilation * batch * cin;
            let w_off = j * cin * cout;
            gemm(
                m,
                cin,
                cout,
                1.0,
                Strided::new(&xs[x_off..], cin as isize, 1),
                Strided::new(&ws[w_off..], cout as isize, 1),
                1.0,
                StridedMut::new(&mut out, cout as isize, 1),
            );
        }
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(
            Tensor::matrix(m, cout, out),
            Op::CausalConv {
                x,
                w,
                b,
                batch,
                kernel,
                dilation,
            },
            rg,
        ))
    }

    /// Graph propagation: each consecutive block of `n` rows of `x` is left
    /// multiplied by the `n x n` matrix `adj`.
    pub fn node_mix(&mut self, x: Var, adj: Var) -> Result<Var> {
        let (rows, c) = self.dims(x);
        let (n, n2) = self.dims(adj);
        if n != n2 || n == 0 || rows % n != 0 {
            return shape_err("node_mix", format!("x {rows}x{c}, adjacency {n}x{n2}"));
        }
        let xs = self.value(x).data();
        let a = self.value(adj).data();
        let mut out = vec![0.0; rows * c];
        for blk in 0..rows / n {
            let off = blk * n * c;
            gemm(
                n,
                n,
                c,
                1.0,
                Strided::new(a, n as isize, 1),
                Strided::new(&xs[off..], c as isize, 1),
                0.0,
                StridedMut::new(&mut out[off..], c as isize, 1),
            );
        }
        let rg = self.rg(&[x, adj]);
        Ok(self.push(Tensor::matrix(rows, c, out), Op::NodeMix { x, adj }, rg))
    }

    /// Multi-head scaled dot-product attention without projections.
    ///
    /// `q`, `k`, `v` are `(groups * seq) x dim` with each group's `seq` rows
    /// contiguous; head `h` uses columns `[h*dim/heads, (h+1)*dim/heads)`.
    /// Returns the concatenated per-head outputs; the softmax weights are kept
    /// on the node and exposed through [`Graph::attention_weights`].
    pub fn attention(&mut self, q: Var, k: Var, v: Var, groups: usize, seq: usize, heads: usize) -> Result<Var> {
        let (rows, dim) = self.dims(q);
        if self.dims(k) != (rows, dim) || self.dims(v) != (rows, dim) {
            return shape_err("attention", "q, k and v must share a shape");
        }
        if rows != groups * seq {
            return shape_err("attention", format!("{rows} rows for {groups} groups of {seq}"));
        }
        if heads == 0 || dim % heads != 0 {
            return Err(DiffError::HeadCount { dim, heads });
        }
        let dh = dim / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qs, ks, vs) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut weights = vec![0.0; groups * heads * seq * seq];
        let mut out = vec![0.0; rows * dim];
        let ld = dim as isize;
        for g in 0..groups {
            for h in 0..heads {
                let off = g * seq * dim + h * dh;
                let w_off = (g * heads + h) * seq * seq;
                let p = &mut weights[w_off..w_off + seq * seq];
                gemm(
                    seq,
                    dh,
                    seq,
                    scale,
                    Strided::new(&qs[off..], ld, 1),
                    Strided::new(&ks[off..], ld, 1).t(),
                    0.0,
                    StridedMut::new(p, seq as isize, 1),
                );
                for row in p.chunks_mut(seq) {
                    softmax_in_place(row);
                }
                gemm(
                    seq,
                    seq,
                    dh,
                    1.0,
                    Strided::new(p, seq as isize, 1),
                    Strided::new(&vs[off..], ld, 1),
                    0.0,
                    StridedMut::new(&mut out[off..], ld, 1),
                );
            }
        }
        let rg = self.rg(&[q, k, v]);
        Ok(self.push(
            Tensor::matrix(rows, dim, out),
            Op::Attention {
                q,
                k,
                v,
                groups,
                seq,
                heads,
                weights,
            },
            rg,
        ))
    }

    pub fn attention_weights(&self, v: Var) -> Option<AttentionMap<'_>> {
        match &self.nodes[v.0].op {
            Op::Attention {
                groups,
                seq,
                heads,
                weights,
                ..
            } => Some(AttentionMap {
                groups: *groups,
                heads: *heads,
                seq: *seq,
                weights,
            }),
            _ => None,
        }
    }

    /// Inverted dropout; identity outside training mode.
    pub fn dropout(&mut self, a: Var, p: f64) -> Result<Var> {
        if !self.is_training() || p <= 0.0 {
            return Ok(a);
        }
        let keep = 1.0 - p;
        let shape = self.value(a).shape().to_vec();
        let n = self.value(a).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if self.rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        self.mul_const(a, Tensor::new(shape, mask)?)
    }

    /// Stochastic depth: zeroes a whole residual branch per sample.
    ///
    /// Rows are grouped into consecutive blocks of `group_rows`, one block per
    /// sample; survivors are rescaled by `1 / (1 - p)`.
    pub fn drop_path(&mut self, a: Var, p: f64, group_rows: usize) -> Result<Var> {
        if !self.is_training() || p <= 0.0 {
            return Ok(a);
        }
        let (r, c) = self.dims(a);
        if group_rows == 0 || r % group_rows != 0 {
            return shape_err("drop_path", format!("{r} rows in groups of {group_rows}"));
        }
        let keep = 1.0 - p;
        let mut mask = Vec::with_capacity(r * c);
        for _ in 0..r / group_rows {
            let m = if self.rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 };
            mask.extend(std::iter::repeat(m).take(group_rows * c));
        }
        self.mul_const(a, Tensor::matrix(r, c, mask))
    }

    /// Gradient of the last `backward` call with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradients of every parameter bound through [`Graph::param`].
    pub fn param_gradients(&self) -> Gradients {
        let mut out = Gradients::default();
        for (name, v) in &self.params {
            let g = self
                .grad(*v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(self.value(*v).shape()));
            out.insert(name.clone(), g);
        }
        out
    }

    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.value(loss).shape().to_vec();
        if self.value(loss).len() != 1 {
            return Err(DiffError::NonScalarLoss(shape));
        }
        let Graph { nodes, grads, .. } = self;
        grads.clear();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::filled(&shape, 1.0));

        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(d) = grads[i].take() else { continue };
            backprop(nodes, grads, node, &d)?;
            grads[i] = Some(d);
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    if !nodes[v.0].requires_grad {
        return;
    }
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}

fn like(t: &Tensor, data: Vec<f64>) -> Tensor {
    Tensor::new(t.shape().to_vec(), data).expect("gradient shape")
}

fn backprop(nodes: &[Node], grads: &mut [Option<Tensor>], node: &Node, d: &Tensor) -> Result<()> {
    let val = |v: Var| &nodes[v.0].value;
    let needs = |v: Var| nodes[v.0].requires_grad;
    let dd = d.data();
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            let (m, k) = va.dims()?;
            let n = vb.cols();
            if needs(*a) {
                let mut ga = vec![0.0; m * k];
                gemm(
                    m,
                    n,
                    k,
                    1.0,
                    Strided::new(dd, n as isize, 1),
                    Strided::new(vb.data(), n as isize, 1).t(),
                    0.0,
                    StridedMut::new(&mut ga, k as isize, 1),
                );
                accumulate(nodes, grads, *a, like(va, ga));
            }
            if needs(*b) {
                let mut gb = vec![0.0; k * n];
                gemm(
                    k,
                    m,
                    n,
                    1.0,
                    Strided::new(va.data(), k as isize, 1).t(),
                    Strided::new(dd, n as isize, 1),
                    0.0,
                    StridedMut::new(&mut gb, n as isize, 1),
                );
                accumulate(nodes, grads, *b, like(vb, gb));
            }
        }
        Op::Add(a, b) => {
            accumulate(nodes, grads, *a, d.clone());
            accumulate(nodes, grads, *b, d.clone());
        }
        Op::Sub(a, b) => {
            accumulate(nodes, grads, *a, d.clone());
            accumulate(nodes, grads, *b, d.map(|x| -x));
        }
        Op::Mul(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            if needs(*a) {
                let g = dd.iter().zip(vb.data()).map(|(x, y)| x * y).collect();
                accumulate(nodes, grads, *a, like(va, g));
            }
            if needs(*b) {
                let g = dd.iter().zip(va.data()).map(|(x, y)| x * y).collect();
                accumulate(nodes, grads, *b, like(vb, g));
            }
        }
        Op::AddRow(a, bias) => {
            accumulate(nodes, grads, *a, d.clone());
            if needs(*bias) {
                let c = d.cols();
                let mut g = vec![0.0; c];
                for row in dd.chunks(c) {
                    for (acc, x) in g.iter_mut().zip(row) {
                        *acc += x;
                    }
                }
                accumulate(nodes, grads, *bias, Tensor::row(g));
            }
        }
        Op::Scale(a, s) => accumulate(nodes, grads, *a, d.map(|x| x * s)),
        Op::MulConst(a, c) => {
            let g = dd.iter().zip(c.data()).map(|(x, y)| x * y).collect();
            accumulate(nodes, grads, *a, like(d, g));
        }
        Op::AddConst(a) => accumulate(nodes, grads, *a, d.clone()),
        Op::Sigmoid(a) => {
            let y = node.value.data();
            let g = dd.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect();
            accumulate(nodes, grads, *a, like(d, g));
        }
        Op::Tanh(a) => {
            let y = node.value.data();
            let g = dd.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect();
            accumulate(nodes, grads, *a, like(d, g));
        }
        Op::LeakyRelu(a, slope) => {
            let x = val(*a).data();
            let g = dd
                .iter()
                .zip(x)
                .map(|(g, x)| if *x >= 0.0 { *g } else { g * slope })
                .collect();
            accumulate(nodes, grads, *a, like(d, g));
        }
        Op::Relu(a) => {
            let x = val(*a).data();
            let g = dd.iter().zip(x).map(|(g, x)| if *x > 0.0 { *g } else { 0.0 }).collect();
            accumulate(nodes, grads, *a, like(d, g));
        }
        Op::ConcatCols(parts) => {
            let (rows, total) = (d.rows(), d.cols());
            let mut offset = 0;
            for p in parts {
                let w = val(*p).cols();
                if needs(*p) {
                    let mut g = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        g.extend_from_slice(&dd[r * total + offset..r * total + offset + w]);
                    }
                    accumulate(nodes, grads, *p, Tensor::matrix(rows, w, g));
                }
                offset += w;
            }
        }
        Op::SliceCols(a, start) => {
            if needs(*a) {
                let va = val(*a);
                let (rows, c) = (va.rows(), va.cols());
                let len = d.cols();
                let mut g = vec![0.0; rows * c];
                for r in 0..rows {
                    g[r * c + start..r * c + start + len].copy_from_slice(&dd[r * len..(r + 1) * len]);
                }
                accumulate(nodes, grads, *a, like(va, g));
            }
        }
        Op::ConcatRows(parts) => {
            let c = d.cols();
            let mut offset = 0;
            for p in parts {
                let r = val(*p).rows();
                if needs(*p) {
                    let g = dd[offset * c..(offset + r) * c].to_vec();
                    accumulate(nodes, grads, *p, Tensor::matrix(r, c, g));
                }
                offset += r;
            }
        }
        Op::SliceRows(a, start) => {
            if needs(*a) {
                let va = val(*a);
                let c = va.cols();
                let mut g = vec![0.0; va.len()];
                g[start * c..start * c + dd.len()].copy_from_slice(dd);
                accumulate(nodes, grads, *a, like(va, g));
            }
        }
        Op::Gather(a, index) => {
            if needs(*a) {
                let va = val(*a);
                let mut g = vec![0.0; va.len()];
                for (i, &src) in index.iter().enumerate() {
                    if src != GATHER_ZERO {
                        g[src] += dd[i];
                    }
                }
                accumulate(nodes, grads, *a, like(va, g));
            }
        }
        Op::Reshape(a) => {
            let va = val(*a);
            accumulate(nodes, grads, *a, like(va, dd.to_vec()));
        }
        Op::Transpose(a) => accumulate(nodes, grads, *a, d.transpose()?),
        Op::Sum(a) => {
            let va = val(*a);
            accumulate(nodes, grads, *a, Tensor::filled(va.shape(), dd[0]));
        }
        Op::SoftmaxRows(a) => {
            let y = node.value.data();
            let c = d.cols().max(1);
            let mut g = vec![0.0; y.len()];
            for ((gr, yr), dr) in g.chunks_mut(c).zip(y.chunks(c)).zip(dd.chunks(c)) {
                let dot: f64 = yr.iter().zip(dr).map(|(a, b)| a * b).sum();
                for j in 0..c {
                    gr[j] = yr[j] * (dr[j] - dot);
                }
            }
            accumulate(nodes, grads, *a, like(d, g));
        }
        Op::MaskedMse {
            pred,
            target,
            mask,
            count,
        } => {
            let p = val(*pred);
            let s = 2.0 * dd[0] / count;
            let g = p
                .data()
                .iter()
                .zip(target.data())
                .zip(mask.data())
                .map(|((x, t), m)| if *m != 0.0 { s * (x - t) } else { 0.0 })
                .collect();
            accumulate(nodes, grads, *pred, like(p, g));
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
        } => {
            let (r, c) = (d.rows(), d.cols());
            let xh = xhat.data();
            if needs(*beta) || needs(*gamma) {
                let mut gb = vec![0.0; c];
                let mut gg = vec![0.0; c];
                for row in 0..r {
                    for j in 0..c {
                        gb[j] += dd[row * c + j];
                        gg[j] += dd[row * c + j] * xh[row * c + j];
                    }
                }
                accumulate(nodes, grads, *beta, Tensor::row(gb));
                accumulate(nodes, grads, *gamma, Tensor::row(gg));
            }
            if needs(*x) {
                let gm = val(*gamma).data();
                let mut gx = vec![0.0; r * c];
                let n = c as f64;
                for row in 0..r {
                    let base = row * c;
                    let mut s1 = 0.0;
                    let mut s2 = 0.0;
                    for j in 0..c {
                        let dh = dd[base + j] * gm[j];
                        s1 += dh;
                        s2 += dh * xh[base + j];
                    }
                    for j in 0..c {
                        let dh = dd[base + j] * gm[j];
                        gx[base + j] = inv_std[row] / n * (n * dh - s1 - xh[base + j] * s2);
                    }
                }
                accumulate(nodes, grads, *x, Tensor::matrix(r, c, gx));
            }
        }
        Op::CausalConv {
            x,
            w,
            b,
            batch,
            kernel,
            dilation,
        } => {
            let (vx, vw) = (val(*x), val(*w));
            let cin = vx.cols();
            let cout = d.cols();
            let m = d.rows();
            if needs(*b) {
                let mut gb = vec![0.0; cout];
                for row in dd.chunks(cout) {
                    for (acc, v) in gb.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                accumulate(nodes, grads, *b, Tensor::row(gb));
            }
            if needs(*x) {
                let mut gx = vec![0.0; vx.len()];
                for j in 0..*kernel {
                    let x_off = j * dilation * batch * cin;
                    let w_off = j * cin * cout;
                    gemm(
                        m,
                        cout,
                        cin,
                        1.0,
                        Strided::new(dd, cout as isize, 1),
                        Strided::new(&vw.data()[w_off..], cout as isize, 1).t(),
                        1.0,
                        StridedMut::new(&mut gx[x_off..], cin as isize, 1),
                    );
                }
                accumulate(nodes, grads, *x, like(vx, gx));
            }
            if needs(*w) {
                let mut gw = vec![0.0; vw.len()];
                for j in 0..*kernel {
                    let x_off = j * dilation * batch * cin;
                    let w_off = j * cin * cout;
                    gemm(
                        cin,
                        m,
                        cout,
                        1.0,
                        Strided::new(&vx.data()[x_off..], cin as isize, 1).t(),
                        Strided::new(dd, cout as isize, 1),
                        0.0,
                        StridedMut::new(&mut gw[w_off..], cout as isize, 1),
                    );
                }
                accumulate(nodes, grads, *w, like(vw, gw));
            }
        }
        Op::NodeMix { x, adj } => {
            let (vx, va) = (val(*x), val(*adj));
            let n = va.rows();
            let c = vx.cols();
            let blocks = vx.rows() / n;
            if needs(*x) {
                let mut gx = vec![0.0; vx.len()];
                for blk in 0..blocks {
                    let off = blk * n * c;
                    gemm(
                        n,
                        n,
                        c,
                        1.0,
                        Strided::new(va.data(), n as isize, 1).t(),
                        Strided::new(&dd[off..], c as isize, 1),
                        0.0,
                        StridedMut::new(&mut gx[off..], c as isize, 1),
                    );
                }
                accumulate(nodes, grads, *x, like(vx, gx));
            }
            if needs(*adj) {
                let mut ga = vec![0.0; n * n];
                for blk in 0..blocks {
                    let off = blk * n * c;
                    gemm(
                        n,
                        c,
                        n,
                        1.0,
                        Strided::new(&dd[off..], c as isize, 1),
                        Strided::new(&vx.data()[off..], c as isize, 1).t(),
                        1.0,
                        StridedMut::new(&mut ga, n as isize, 1),
                    );
                }
                accumulate(nodes, grads, *adj, like(va, ga));
            }
        }
        Op::Attention {
            q,
            k,
            v,
            groups,
            seq,
            heads,
            weights,
        } => {
            let (vq, vk, vv) = (val(*q), val(*k), val(*v));
            let dim = vq.cols();
            let dh = dim / heads;
            let scale = 1.0 / (dh as f64).sqrt();
            let ld = dim as isize;
            let s = *seq;
            let mut gq = vec![0.0; vq.len()];
            let mut gk = vec![0.0; vk.len()];
            let mut gv = vec![0.0; vv.len()];
            let mut dp = vec![0.0; s * s];
            for g in 0..*groups {
                for h in 0..*heads {
                    let off = g * s * dim + h * dh;
                    let w_off = (g * heads + h) * s * s;
                    let p = &weights[w_off..w_off + s * s];
                    // dV = P^T dO
                    gemm(
                        s,
                        s,
                        dh,
                        1.0,
                        Strided::new(p, s as isize, 1).t(),
                        Strided::new(&dd[off..], ld, 1),
                        0.0,
                        StridedMut::new(&mut gv[off..], ld, 1),
                    );
                    // dP = dO V^T
                    gemm(
                        s,
                        dh,
                        s,
                        1.0,
                        Strided::new(&dd[off..], ld, 1),
                        Strided::new(&vv.data()[off..], ld, 1).t(),
                        0.0,
                        StridedMut::new(&mut dp, s as isize, 1),
                    );
                    for (dr, pr) in dp.chunks_mut(s).zip(p.chunks(s)) {
                        let dot: f64 = dr.iter().zip(pr).map(|(a, b)| a * b).sum();
                        for (x, pv) in dr.iter_mut().zip(pr) {
                            *x = pv * (*x - dot);
                        }
                    }
                    gemm(
                        s,
                        s,
                        dh,
                        scale,
                        Strided::new(&dp, s as isize, 1),
                        Strided::new(&vk.data()[off..], ld, 1),
                        0.0,
                        StridedMut::new(&mut gq[off..], ld, 1),
                    );
                    gemm(
                        s,
                        s,
                        dh,
                        scale,
                        Strided::new(&dp, s as isize, 1).t(),
                        Strided::new(&vq.data()[off..], ld, 1),
                        0.0,
                        StridedMut::new(&mut gk[off..], ld, 1),
                    );
                }
            }
            accumulate(nodes, grads, *q, like(vq, gq));
            accumulate(nodes, grads, *k, like(vk, gk));
            accumulate(nodes, grads, *v, like(vv, gv));
        }
    }
    Ok(())
}
