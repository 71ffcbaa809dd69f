//! Parameterised building blocks. Each layer only remembers the names of its
//! parameters; values live in a [`ParameterStore`] so that one store can be
//! checkpointed, optimised, and shared between graph instances.

use rand::Rng;

use crate::error::{shape_err, DiffError, Result};
use crate::graph::{Graph, Var};
use crate::params::ParameterStore;
use crate::tensor::Tensor;

/// Uniform in `[-bound, bound]`.
pub fn uniform(rng: &mut impl Rng, rows: usize, cols: usize, bound: f64) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.gen_range(-bound..=bound))
}

/// Weights uniform in `±1/sqrt(fan_in)`.
pub fn fan_in_uniform(rng: &mut impl Rng, rows: usize, cols: usize, fan_in: usize) -> Tensor {
    uniform(rng, rows, cols, 1.0 / (fan_in.max(1) as f64).sqrt())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dense {
    pub weight: String,
    pub bias: String,
    pub input: usize,
    pub output: usize,
}

impl Dense {
    pub fn new(store: &mut ParameterStore, rng: &mut impl Rng, name: &str, input: usize, output: usize) -> Result<Self> {
        let weight = format!("{name}.weight");
        let bias = format!("{name}.bias");
        store.add(&weight, fan_in_uniform(rng, input, output, input))?;
        store.add(&bias, fan_in_uniform(rng, 1, output, input))?;
        Ok(Self {
            weight,
            bias,
            input,
            output,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParameterStore, x: Var) -> Result<Var> {
        let w = g.param(store, &self.weight)?;
        let b = g.param(store, &self.bias)?;
        g.dense(x, w, b)
    }

    /// Sets weights and bias to zero.
    pub fn zero(&self, store: &mut ParameterStore) -> Result<()> {
        store.get_mut(&self.weight)?.data_mut().fill(0.0);
        store.get_mut(&self.bias)?.data_mut().fill(0.0);
        Ok(())
    }
}

/// Gated recurrent unit.
///
/// `z = σ(x Wxz + h Whz + bz)`, `r = σ(x Wxr + h Whr + br)`,
/// `ĥ = tanh(x Wxh + (r ∘ h) Whh + bh)`, `h' = (1 - z) ∘ h + z ∘ ĥ`.
/// The input weights of all three gates are stored as one `input x 3H` matrix
/// so a whole sequence can be projected in a single product.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GruCell {
    pub input_weight: String,
    pub gate_weight: String,
    pub candidate_weight: String,
    pub bias: String,
    pub input: usize,
    pub hidden: usize,
}

impl GruCell {
    pub fn new(store: &mut ParameterStore, rng: &mut impl Rng, name: &str, input: usize, hidden: usize) -> Result<Self> {
        let cell = Self {
            input_weight: format!("{name}.wx"),
            gate_weight: format!("{name}.wh"),
            candidate_weight: format!("{name}.wc"),
            bias: format!("{name}.bias"),
            input,
            hidden,
        };
        let fan_in = input + hidden;
        store.add(&cell.input_weight, fan_in_uniform(rng, input, 3 * hidden, fan_in))?;
        store.add(&cell.gate_weight, fan_in_uniform(rng, hidden, 2 * hidden, fan_in))?;
        store.add(&cell.candidate_weight, fan_in_uniform(rng, hidden, hidden, fan_in))?;
        store.add(&cell.bias, Tensor::zeros(&[1, 3 * hidden]))?;
        Ok(cell)
    }

    /// `x Wx + b` for any number of rows.
    pub fn project(&self, g: &mut Graph, store: &ParameterStore, x: Var) -> Result<Var> {
        let w = g.param(store, &self.input_weight)?;
        let b = g.param(store, &self.bias)?;
        g.dense(x, w, b)
    }

    /// One recurrence from pre-projected inputs.
    pub fn step(&self, g: &mut Graph, store: &ParameterStore, xw: Var, h: Var) -> Result<Var> {
        let hd = self.hidden;
        if g.value(h).cols() != hd || g.value(xw).cols() != 3 * hd {
            return shape_err("gru_cell", format!("hidden {:?}, expected width {hd}", g.value(h).shape()));
        }
        let wh = g.param(store, &self.gate_weight)?;
        let wc = g.param(store, &self.candidate_weight)?;
        let hr = g.matmul(h, wh)?;
        let xz = g.slice_cols(xw, 0, hd)?;
        let xr = g.slice_cols(xw, hd, hd)?;
        let xc = g.slice_cols(xw, 2 * hd, hd)?;
        let hz = g.slice_cols(hr, 0, hd)?;
        let hrr = g.slice_cols(hr, hd, hd)?;
        let z = g.add(xz, hz)?;
        let z = g.sigmoid(z);
        let r = g.add(xr, hrr)?;
        let r = g.sigmoid(r);
        let rh = g.mul(r, h)?;
        let c = g.matmul(rh, wc)?;
        let c = g.add(xc, c)?;
        let cand = g.tanh(c);
        let delta = g.sub(cand, h)?;
        let delta = g.mul(z, delta)?;
        g.add(h, delta)
    }

    pub fn forward(&self, g: &mut Graph, store: &ParameterStore, x: Var, h: Var) -> Result<Var> {
        if g.value(x).cols() != self.input {
            return shape_err("gru_cell", format!("input width {} != {}", g.value(x).cols(), self.input));
        }
        let xw = self.project(g, store, x)?;
        self.step(g, store, xw, h)
    }
}

/// Long short-term memory cell with gates ordered input, forget, output, candidate.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LstmCell {
    pub input_weight: String,
    pub hidden_weight: String,
    pub bias: String,
    pub input: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new(store: &mut ParameterStore, rng: &mut impl Rng, name: &str, input: usize, hidden: usize) -> Result<Self> {
        let cell = Self {
            input_weight: format!("{name}.wx"),
            hidden_weight: format!("{name}.wh"),
            bias: format!("{name}.bias"),
            input,
            hidden,
        };
        let fan_in = input + hidden;
        store.add(&cell.input_weight, fan_in_uniform(rng, input, 4 * hidden, fan_in))?;
        store.add(&cell.hidden_weight, fan_in_uniform(rng, hidden, 4 * hidden, fan_in))?;
        store.add(&cell.bias, Tensor::zeros(&[1, 4 * hidden]))?;
        Ok(cell)
    }

    pub fn project(&self, g: &mut Graph, store: &ParameterStore, x: Var) -> Result<Var> {
        let w = g.param(store, &self.input_weight)?;
        let b = g.param(store, &self.bias)?;
        g.dense(x, w, b)
    }

    /// One recurrence from pre-projected inputs; returns `(h', c')`.
    pub fn step(&self, g: &mut Graph, store: &ParameterStore, xw: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let hd = self.hidden;
        if g.value(h).cols() != hd || g.value(c).cols() != hd || g.value(xw).cols() != 4 * hd {
            return shape_err("lstm_cell", format!("state widths must equal {hd}"));
        }
        let wh = g.param(store, &self.hidden_weight)?;
        let hw = g.matmul(h, wh)?;
        let pre = g.add(xw, hw)?;
        let i = g.slice_cols(pre, 0, hd)?;
        let i = g.sigmoid(i);
        let f = g.slice_cols(pre, hd, hd)?;
        let f = g.sigmoid(f);
        let o = g.slice_cols(pre, 2 * hd, hd)?;
        let o = g.sigmoid(o);
        let cand = g.slice_cols(pre, 3 * hd, hd)?;
        let cand = g.tanh(cand);
        let keep = g.mul(f, c)?;
        let write = g.mul(i, cand)?;
        let c_next = g.add(keep, write)?;
        let squashed = g.tanh(c_next);
        let h_next = g.mul(o, squashed)?;
        Ok((h_next, c_next))
    }

    pub fn forward(&self, g: &mut Graph, store: &ParameterStore, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        if g.value(x).cols() != self.input {
            return shape_err("lstm_cell", format!("input width {} != {}", g.value(x).cols(), self.input));
        }
        let xw = self.project(g, store, x)?;
        self.step(g, store, xw, h, c)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerNorm {
    pub gamma: String,
    pub beta: String,
    pub dim: usize,
}

impl LayerNorm {
    pub fn new(store: &mut ParameterStore, name: &str, dim: usize) -> Result<Self> {
        let ln = Self {
            gamma: format!("{name}.gamma"),
            beta: format!("{name}.beta"),
            dim,
        };
        store.add(&ln.gamma, Tensor::filled(&[1, dim], 1.0))?;
        store.add(&ln.beta, Tensor::zeros(&[1, dim]))?;
        Ok(ln)
    }

    pub fn forward(&self, g: &mut Graph, store: &ParameterStore, x: Var) -> Result<Var> {
        let gamma = g.param(store, &self.gamma)?;
        let beta = g.param(store, &self.beta)?;
        g.layer_norm(x, gamma, beta)
    }
}

/// Self-attention with query/key/value/output projections.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MultiHeadAttention {
    pub query: Dense,
    pub key: Dense,
    pub value: Dense,
    pub output: Dense,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParameterStore, rng: &mut impl Rng, name: &str, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(DiffError::HeadCount { dim, heads });
        }
        Ok(Self {
            query: Dense::new(store, rng, &format!("{name}.q"), dim, dim)?,
            key: Dense::new(store, rng, &format!("{name}.k"), dim, dim)?,
            value: Dense::new(store, rng, &format!("{name}.v"), dim, dim)?,
            output: Dense::new(store, rng, &format!("{name}.o"), dim, dim)?,
            heads,
        })
    }

    /// Returns `(output, attention node)`; the node's weights are readable via
    /// [`Graph::attention_weights`].
    pub fn forward(&self, g: &mut Graph, store: &ParameterStore, x: Var, groups: usize, seq: usize) -> Result<(Var, Var)> {
        let q = self.query.forward(g, store, x)?;
        let k = self.key.forward(g, store, x)?;
        let v = self.value.forward(g, store, x)?;
        let att = g.attention(q, k, v, groups, seq, self.heads)?;
        let out = self.output.forward(g, store, att)?;
        Ok((out, att))
    }
}

/// Causal dilated 1-D convolution over time-major rows; see [`Graph::causal_conv1d`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CausalConv1d {
    pub weight: String,
    pub bias: String,
    pub input: usize,
    pub output: usize,
    pub kernel: usize,
    pub dilation: usize,
}

impl CausalConv1d {
    pub fn new(
        store: &mut ParameterStore,
        rng: &mut impl Rng,
        name: &str,
        input: usize,
        output: usize,
        kernel: usize,
        dilation: usize,
    ) -> Result<Self> {
        let conv = Self {
            weight: format!("{name}.weight"),
            bias: format!("{name}.bias"),
            input,
            output,
            kernel,
            dilation,
        };
        store.add(&conv.weight, fan_in_uniform(rng, kernel * input, output, kernel * input))?;
        store.add(&conv.bias, fan_in_uniform(rng, 1, output, kernel * input))?;
        Ok(conv)
    }

    /// Frames consumed beyond the first output step.
    pub fn span(&self) -> usize {
        self.dilation * (self.kernel - 1)
    }

    pub fn forward(&self, g: &mut Graph, store: &ParameterStore, x: Var, batch: usize) -> Result<Var> {
        let w = g.param(store, &self.weight)?;
        let b = g.param(store, &self.bias)?;
        g.causal_conv1d(x, w, b, batch, self.kernel, self.dilation)
    }
}
