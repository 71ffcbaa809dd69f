//! Spatio-temporal graph network over the 78 landmarks.
//!
//! Node series are laid out time-major with the landmarks of one sample
//! contiguous: row `(t * batch + b) * 78 + j`. Every temporal convolution
//! therefore treats `batch * 78` node series as its batch, and graph
//! propagation mixes consecutive blocks of 78 rows.

use diffcore::{CausalConv1d, Dense, Graph, LayerNorm, ParameterStore, Tensor, Var, GATHER_ZERO};
use rand::Rng;

use super::config::ModelConfig;
use super::input::POSE_WIDTH;
use crate::error::Result;
use crate::skeleton::{MOTION_OFFSET, NUM_LANDMARKS, REL_OFFSET};

const NODE_FEATURES: usize = 6;

#[derive(Clone, Debug)]
struct Layer {
    filter: Vec<CausalConv1d>,
    gate: Vec<CausalConv1d>,
    skip: CausalConv1d,
    mix: Dense,
    norm: LayerNorm,
}

#[derive(Clone, Debug)]
pub(crate) struct Stgnn {
    start: Dense,
    skip_in: CausalConv1d,
    layers: Vec<Layer>,
    skip_out: CausalConv1d,
    end: Dense,
    head: Dense,
    nodes: String,
}

/// Input length after left zero padding up to the receptive field.
pub fn padded_len(cfg: &ModelConfig) -> usize {
    cfg.obs_len.max(receptive_field(cfg))
}

pub fn receptive_field(cfg: &ModelConfig) -> usize {
    let kmax = cfg.stgnn.kernels.iter().copied().max().unwrap_or(1);
    1 + cfg.stgnn.blocks * (kmax - 1)
}

impl Stgnn {
    pub fn new(cfg: &ModelConfig, store: &mut ParameterStore, rng: &mut impl Rng) -> Result<Self> {
        let s = &cfg.stgnn;
        let kmax = s.kernels.iter().copied().max().unwrap_or(1);
        let mut len = padded_len(cfg);
        let per_kernel = s.conv_channels / s.kernels.len();
        let start = Dense::new(store, rng, "stgnn.start", NODE_FEATURES, s.residual_channels)?;
        let skip_in = CausalConv1d::new(store, rng, "stgnn.skip_in", NODE_FEATURES, s.skip_channels, len, 1)?;
        let mut layers = Vec::new();
        for i in 0..s.blocks {
            let name = format!("stgnn.layer{i}");
            let mut inception = |kind: &str| {
                s.kernels
                    .iter()
                    .map(|&k| {
                        CausalConv1d::new(
                            store,
                            rng,
                            &format!("{name}.{kind}{k}"),
                            s.residual_channels,
                            per_kernel,
                            k,
                            1,
                        )
                    })
                    .collect::<diffcore::Result<Vec<_>>>()
            };
            let filter = inception("filter")?;
            let gate = inception("gate")?;
            len -= kmax - 1;
            let skip = CausalConv1d::new(store, rng, &format!("{name}.skip"), s.conv_channels, s.skip_channels, len, 1)?;
            let mix = Dense::new(
                store,
                rng,
                &format!("{name}.mixhop"),
                (s.mixhop_order + 1) * s.conv_channels,
                s.residual_channels,
            )?;
            let norm = LayerNorm::new(store, &format!("{name}.norm"), s.residual_channels)?;
            layers.push(Layer {
                filter,
                gate,
                skip,
                mix,
                norm,
            });
        }
        let skip_out = CausalConv1d::new(store, rng, "stgnn.skip_out", s.residual_channels, s.skip_channels, len, 1)?;
        let end = Dense::new(store, rng, "stgnn.end", s.skip_channels, s.end_channels)?;
        let head = Dense::new(store, rng, "stgnn.head", s.end_channels, 2 * cfg.train_horizon)?;
        let nodes = "stgnn.nodes".to_string();
        store.add(&nodes, diffcore::layers::uniform(rng, NUM_LANDMARKS, s.node_embedding, 1.0))?;
        Ok(Self {
            start,
            skip_in,
            layers,
            skip_out,
            end,
            head,
            nodes,
        })
    }

    pub fn head(&self) -> &Dense {
        &self.head
    }

    /// Row-normalised, non-negative adjacency from the node embeddings.
    pub fn adjacency(&self, g: &mut Graph, store: &ParameterStore) -> Result<Var> {
        let e = g.param(store, &self.nodes)?;
        let et = g.transpose(e)?;
        let a = g.matmul(e, et)?;
        let a = g.relu(a);
        Ok(g.softmax_rows(a))
    }

    /// `feats` holds `obs_len * batch` time-major normalised feature rows.
    /// Returns per-frame offsets, `batch x (horizon * 156)`.
    pub fn forward(&self, cfg: &ModelConfig, g: &mut Graph, store: &ParameterStore, feats: Var, batch: usize) -> Result<Var> {
        let s = &cfg.stgnn;
        let f = cfg.feature_len();
        let t = cfg.obs_len;
        let len = padded_len(cfg);
        let pad = len - t;
        let nodes = batch * NUM_LANDMARKS;
        let mut index = Vec::with_capacity(len * nodes * NODE_FEATURES);
        for step in 0..len {
            for b in 0..batch {
                for j in 0..NUM_LANDMARKS {
                    for c in 0..NODE_FEATURES {
                        index.push(if step < pad {
                            GATHER_ZERO
                        } else {
                            let row = (step - pad) * batch + b;
                            let col = if c < 3 { REL_OFFSET + 3 * j + c } else { MOTION_OFFSET + 3 * j + c - 3 };
                            row * f + col
                        });
                    }
                }
            }
        }
        let input = g.gather(feats, len * nodes, NODE_FEATURES, index)?;
        let adj = self.adjacency(g, store)?;
        let mut skip = self.skip_in.forward(g, store, input, nodes)?;
        let mut x = self.start.forward(g, store, input)?;
        let mut cur = len;
        for layer in &self.layers {
            let residual = x;
            let filter = inception(g, store, &layer.filter, x, nodes)?;
            let filter = g.tanh(filter);
            let gate = inception(g, store, &layer.gate, x, nodes)?;
            let gate = g.sigmoid(gate);
            let h = g.mul(filter, gate)?;
            let h = g.dropout(h, cfg.dropout)?;
            let next = g.value(h).rows() / nodes;
            let sk = layer.skip.forward(g, store, h, nodes)?;
            skip = g.add(skip, sk)?;
            let mut hops = vec![h];
            let mut prop = h;
            for _ in 0..s.mixhop_order {
                let mixed = g.node_mix(prop, adj)?;
                let mixed = g.scale(mixed, 1.0 - s.mixhop_retain);
                let kept = g.scale(h, s.mixhop_retain);
                prop = g.add(kept, mixed)?;
                hops.push(prop);
            }
            let cat = g.concat_cols(&hops)?;
            let y = layer.mix.forward(g, store, cat)?;
            let res = g.slice_rows(residual, (cur - next) * nodes, next * nodes)?;
            let y = g.add(y, res)?;
            x = layer.norm.forward(g, store, y)?;
            cur = next;
        }
        let sk = self.skip_out.forward(g, store, x, nodes)?;
        skip = g.add(skip, sk)?;
        let y = g.relu(skip);
        let y = self.end.forward(g, store, y)?;
        let y = g.relu(y);
        let disp = self.head.forward(g, store, y)?;
        let h = cfg.train_horizon;
        let mut index = Vec::with_capacity(batch * h * POSE_WIDTH);
        for b in 0..batch {
            for k in 0..h {
                for j in 0..NUM_LANDMARKS {
                    for d in 0..2 {
                        index.push((b * NUM_LANDMARKS + j) * 2 * h + 2 * k + d);
                    }
                }
            }
        }
        let disp = g.gather(disp, batch, h * POSE_WIDTH, index)?;
        if h == 1 {
            return Ok(disp);
        }
        let zeros = g.constant(Tensor::zeros(&[batch, POSE_WIDTH]));
        let head = g.slice_cols(disp, 0, (h - 1) * POSE_WIDTH)?;
        let shifted = g.concat_cols(&[zeros, head])?;
        Ok(g.sub(disp, shifted)?)
    }
}

/// Parallel temporal convolutions truncated to the shortest output and stacked
/// along channels.
fn inception(g: &mut Graph, store: &ParameterStore, convs: &[CausalConv1d], x: Var, nodes: usize) -> Result<Var> {
    let outs = convs
        .iter()
        .map(|c| c.forward(g, store, x, nodes))
        .collect::<diffcore::Result<Vec<_>>>()?;
    let shortest = outs.iter().map(|&o| g.value(o).rows()).min().unwrap_or(0);
    let mut parts = Vec::with_capacity(outs.len());
    for o in outs {
        let rows = g.value(o).rows();
        parts.push(g.slice_rows(o, rows - shortest, shortest)?);
    }
    Ok(g.concat_cols(&parts)?)
}
