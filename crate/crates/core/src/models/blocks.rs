//! Row-layout helpers and composite layers shared by the architectures.
//!
//! Sequences are stored either time-major (row `t * batch + b`) or
//! sample-major (row `b * len + t`).

use diffcore::{Dense, Graph, GruCell, LayerNorm, LstmCell, MultiHeadAttention, ParameterStore, Var, LEAKY_SLOPE};
use rand::Rng;

use crate::error::Result;

fn gather_rows(g: &mut Graph, x: Var, src_rows: &[usize]) -> Result<Var> {
    let c = g.value(x).cols();
    let mut index = Vec::with_capacity(src_rows.len() * c);
    for &r in src_rows {
        index.extend(r * c..(r + 1) * c);
    }
    Ok(g.gather(x, src_rows.len(), c, index)?)
}

pub fn to_sample_major(g: &mut Graph, x: Var, len: usize, batch: usize) -> Result<Var> {
    let rows: Vec<usize> = (0..batch).flat_map(|b| (0..len).map(move |t| t * batch + b)).collect();
    gather_rows(g, x, &rows)
}

pub fn to_time_major(g: &mut Graph, x: Var, len: usize, batch: usize) -> Result<Var> {
    let rows: Vec<usize> = (0..len).flat_map(|t| (0..batch).map(move |b| b * len + t)).collect();
    gather_rows(g, x, &rows)
}

/// Row `t * batch + b` of the result is row `t * batch + perm[b]` of `x`.
pub fn permute_samples(g: &mut Graph, x: Var, perm: &[usize]) -> Result<Var> {
    let batch = perm.len();
    let len = g.value(x).rows() / batch;
    let rows: Vec<usize> = (0..len).flat_map(|t| perm.iter().map(move |&p| t * batch + p)).collect();
    gather_rows(g, x, &rows)
}

/// Repeats a `batch x c` matrix for `len` time steps in time-major order.
pub fn repeat_time_major(g: &mut Graph, x: Var, len: usize) -> Result<Var> {
    let batch = g.value(x).rows();
    let rows: Vec<usize> = (0..len).flat_map(|_| 0..batch).collect();
    gather_rows(g, x, &rows)
}

/// Tiles an `n x c` matrix `times` times vertically.
pub fn tile(g: &mut Graph, x: Var, times: usize) -> Result<Var> {
    let n = g.value(x).rows();
    let rows: Vec<usize> = (0..times).flat_map(|_| 0..n).collect();
    gather_rows(g, x, &rows)
}

pub fn lrelu_dense(g: &mut Graph, store: &ParameterStore, d: &Dense, x: Var) -> Result<Var> {
    let y = d.forward(g, store, x)?;
    Ok(g.leaky_relu(y, LEAKY_SLOPE))
}

#[derive(Clone, Copy, Debug)]
pub struct State {
    pub h: Var,
    pub c: Option<Var>,
}

#[derive(Clone, Debug)]
pub enum Cell {
    Gru(GruCell),
    Lstm(LstmCell),
}

impl Cell {
    pub fn new(
        store: &mut ParameterStore,
        rng: &mut impl Rng,
        name: &str,
        lstm: bool,
        input: usize,
        hidden: usize,
    ) -> Result<Self> {
        Ok(if lstm {
            Cell::Lstm(LstmCell::new(store, rng, name, input, hidden)?)
        } else {
            Cell::Gru(GruCell::new(store, rng, name, input, hidden)?)
        })
    }

    pub fn hidden(&self) -> usize {
        match self {
            Cell::Gru(c) => c.hidden,
            Cell::Lstm(c) => c.hidden,
        }
    }

    pub fn project(&self, g: &mut Graph, store: &ParameterStore, x: Var) -> Result<Var> {
        Ok(match self {
            Cell::Gru(c) => c.project(g, store, x)?,
            Cell::Lstm(c) => c.project(g, store, x)?,
        })
    }

    pub fn step(&self, g: &mut Graph, store: &ParameterStore, xw: Var, s: State) -> Result<State> {
        Ok(match self {
            Cell::Gru(c) => State {
                h: c.step(g, store, xw, s.h)?,
                c: None,
            },
            Cell::Lstm(c) => {
                let cell = s.c.expect("LSTM state carries a cell vector");
                let (h, c) = c.step(g, store, xw, s.h, cell)?;
                State { h, c: Some(c) }
            }
        })
    }

    /// Zero state for `batch` rows.
    pub fn zero_state(&self, g: &mut Graph, batch: usize) -> State {
        let hd = self.hidden();
        let h = g.constant(diffcore::Tensor::zeros(&[batch, hd]));
        let c = matches!(self, Cell::Lstm(_)).then(|| g.constant(diffcore::Tensor::zeros(&[batch, hd])));
        State { h, c }
    }
}

/// Pre-norm transformer block.
#[derive(Clone, Debug)]
pub struct Block {
    norm1: LayerNorm,
    attn: MultiHeadAttention,
    norm2: LayerNorm,
    fc1: Dense,
    fc2: Dense,
    drop_path: f64,
}

impl Block {
    pub fn new(
        store: &mut ParameterStore,
        rng: &mut impl Rng,
        name: &str,
        dim: usize,
        heads: usize,
        mlp_ratio: usize,
        drop_path: f64,
    ) -> Result<Self> {
        Ok(Self {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), dim)?,
            attn: MultiHeadAttention::new(store, rng, &format!("{name}.attn"), dim, heads)?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), dim)?,
            fc1: Dense::new(store, rng, &format!("{name}.fc1"), dim, mlp_ratio * dim)?,
            fc2: Dense::new(store, rng, &format!("{name}.fc2"), mlp_ratio * dim, dim)?,
            drop_path,
        })
    }

    /// `x` holds `groups` contiguous sequences of `seq` rows; returns the
    /// updated rows and the attention node.
    pub fn forward(&self, g: &mut Graph, store: &ParameterStore, x: Var, groups: usize, seq: usize) -> Result<(Var, Var)> {
        let y = self.norm1.forward(g, store, x)?;
        let (a, att) = self.attn.forward(g, store, y, groups, seq)?;
        let a = g.drop_path(a, self.drop_path, seq)?;
        let x = g.add(x, a)?;
        let y = self.norm2.forward(g, store, x)?;
        let y = lrelu_dense(g, store, &self.fc1, y)?;
        let y = self.fc2.forward(g, store, y)?;
        let y = g.drop_path(y, self.drop_path, seq)?;
        Ok((g.add(x, y)?, att))
    }
}

/// Stochastic-depth rate of block `i` of `depth`, rising linearly from 0 to `max`.
pub fn drop_path_rate(max: f64, i: usize, depth: usize) -> f64 {
    if depth <= 1 {
        0.0
    } else {
        max * i as f64 / (depth - 1) as f64
    }
}
