use diffcore::{CausalConv1d, Dense, Graph, LayerNorm, ParameterStore, Tensor, Var, LEAKY_SLOPE};
use rand::Rng;

use super::blocks::{
    drop_path_rate, lrelu_dense, permute_samples, repeat_time_major, tile, to_sample_major, to_time_major, Block, Cell,
    State,
};
use super::config::{Architecture, Fusion, ModelConfig};
use super::input::{reconstruction_matrix, ModelInput, POSE_WIDTH};
use super::stgnn::Stgnn;
use crate::error::{config, data, Result};
use crate::fusion::{metadata_len, AUDIO_DIM, AUDIO_EMBED, METADATA_EMBED, TRANSCRIPT_DIM, TRANSCRIPT_EMBED};
use crate::skeleton::{MOTION_OFFSET, NUM_LANDMARKS, ROOT_OFFSET};

/// Output of one batched forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    /// `batch x (horizon * 156)` offsets in units of the normaliser's `out_scale`.
    pub offsets: Var,
    pub horizon: usize,
    /// Temporal self-attention nodes, one per transformer depth.
    pub temporal_attention: Vec<Var>,
    /// Spatial self-attention nodes of the spatio-temporal transformer.
    pub spatial_attention: Vec<Var>,
}

#[derive(Clone, Debug)]
struct Spatial {
    token: Dense,
    pos: String,
    blocks: Vec<Block>,
    norm: LayerNorm,
    frame: Dense,
}

#[derive(Clone, Debug)]
struct TransformerEncoder {
    spatial: Option<Spatial>,
    proj: Option<Dense>,
    pos: String,
    blocks: Vec<Block>,
    norm: LayerNorm,
    pool: String,
}

#[derive(Clone, Debug)]
enum Encoder {
    Recurrent(Cell),
    Tcn(Vec<(CausalConv1d, CausalConv1d)>),
    Transformer(TransformerEncoder),
    Stgnn(Stgnn),
}

#[derive(Clone, Debug)]
struct Decoder {
    cell: Cell,
    mlp: Vec<Dense>,
    head: Dense,
}

#[derive(Clone, Debug)]
pub(crate) struct Net {
    embed: Option<Dense>,
    early: Option<Dense>,
    metadata: Option<Dense>,
    transcript: Option<Dense>,
    audio: Option<Dense>,
    encoder: Encoder,
    decoder: Option<Decoder>,
    recon: Tensor,
}

/// Encoders that receive the partner's frames through the early-fusion projection.
fn uses_early_layer(cfg: &ModelConfig) -> bool {
    match cfg.fusion {
        Fusion::DyadicEarly => true,
        Fusion::DyadicInteractive => !matches!(cfg.arch, Architecture::Seq2seqGru | Architecture::Seq2seqLstm),
        _ => false,
    }
}

struct Encoded {
    init: State,
    per_step: Vec<Var>,
    temporal_attention: Vec<Var>,
    spatial_attention: Vec<Var>,
}

/// Observed features of the batch as time-major rows.
fn batch_features(cfg: &ModelConfig, g: &mut Graph, inputs: &[&ModelInput]) -> Var {
    let (t, b, f) = (cfg.obs_len, inputs.len(), cfg.feature_len());
    let mut rows = Vec::with_capacity(t * b * f);
    for step in 0..t {
        for inp in inputs {
            rows.extend_from_slice(&inp.features[step]);
        }
    }
    g.input(Tensor::matrix(t * b, f, rows))
}

struct StepExtras {
    /// `batch`-row inputs appended at every encoder and decoder step.
    per_step: Vec<Var>,
    /// Time-major per-frame encoder inputs.
    per_frame: Vec<Var>,
}

impl Net {
    pub fn new(cfg: &ModelConfig, store: &mut ParameterStore, rng: &mut impl Rng) -> Result<Net> {
        let f = cfg.feature_len();
        let e = cfg.embed_dim;
        if cfg.arch == Architecture::Stgnn {
            return Ok(Net {
                embed: None,
                early: None,
                metadata: None,
                transcript: None,
                audio: None,
                encoder: Encoder::Stgnn(Stgnn::new(cfg, store, rng)?),
                decoder: None,
                recon: reconstruction_matrix(&cfg.landmarks),
            });
        }
        let embed = Some(Dense::new(store, rng, "embed", f, e)?);
        let early = if uses_early_layer(cfg) {
            Some(Dense::new(store, rng, "early_fusion", 2 * e, e)?)
        } else {
            None
        };
        let m = cfg.modalities;
        let metadata = if m.metadata {
            Some(Dense::new(store, rng, "metadata", metadata_len(m.personality), METADATA_EMBED)?)
        } else {
            None
        };
        let transcript = if m.transcript {
            Some(Dense::new(store, rng, "transcript", TRANSCRIPT_DIM, TRANSCRIPT_EMBED)?)
        } else {
            None
        };
        let audio = if m.audio {
            Some(Dense::new(store, rng, "audio", AUDIO_DIM, AUDIO_EMBED)?)
        } else {
            None
        };
        let step_extra = metadata.as_ref().map_or(0, |_| METADATA_EMBED) + transcript.as_ref().map_or(0, |_| TRANSCRIPT_EMBED);
        let enc_in = e + step_extra + audio.as_ref().map_or(0, |_| AUDIO_EMBED);
        let hd = cfg.decoder_hidden();
        let lstm = cfg.arch.uses_lstm();
        let encoder = match cfg.arch {
            Architecture::Seq2seqGru | Architecture::Seq2seqLstm => {
                let exchange = if cfg.fusion == Fusion::DyadicInteractive { hd } else { 0 };
                Encoder::Recurrent(Cell::new(store, rng, "encoder", lstm, enc_in + exchange, hd)?)
            }
            Architecture::TcnGru | Architecture::TcnLstm => {
                let mut blocks = Vec::new();
                let mut cin = enc_in;
                for (i, &d) in cfg.tcn_dilations.iter().enumerate() {
                    let name = format!("tcn.{i}");
                    let a = CausalConv1d::new(store, rng, &format!("{name}.dilated"), cin, cfg.tcn_channels, cfg.tcn_kernel, d)?;
                    let b = CausalConv1d::new(store, rng, &format!("{name}.pointwise"), cfg.tcn_channels, cfg.tcn_channels, 1, 1)?;
                    blocks.push((a, b));
                    cin = cfg.tcn_channels;
                }
                Encoder::Tcn(blocks)
            }
            Architecture::TransformerT | Architecture::TransformerSt => {
                let spatial = if cfg.arch == Architecture::TransformerSt {
                    let ds = cfg.token_dim;
                    let token = Dense::new(store, rng, "spatial.token", 6, ds)?;
                    let pos = "spatial.pos".to_string();
                    store.add(&pos, diffcore::layers::uniform(rng, NUM_LANDMARKS, ds, 0.02))?;
                    let blocks = (0..cfg.depth)
                        .map(|i| {
                            let p = drop_path_rate(cfg.stochastic_depth, i, cfg.depth);
                            Block::new(store, rng, &format!("spatial.block{i}"), ds, cfg.heads, cfg.mlp_ratio, p)
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let norm = LayerNorm::new(store, "spatial.norm", ds)?;
                    let frame = Dense::new(store, rng, "spatial.frame", NUM_LANDMARKS * ds + f - ROOT_OFFSET, e)?;
                    Some(Spatial {
                        token,
                        pos,
                        blocks,
                        norm,
                        frame,
                    })
                } else {
                    None
                };
                let proj = if enc_in != e {
                    Some(Dense::new(store, rng, "temporal.proj", enc_in, e)?)
                } else {
                    None
                };
                let pos = "temporal.pos".to_string();
                store.add(&pos, diffcore::layers::uniform(rng, cfg.obs_len, e, 0.02))?;
                let blocks = (0..cfg.depth)
                    .map(|i| {
                        let p = drop_path_rate(cfg.stochastic_depth, i, cfg.depth);
                        Block::new(store, rng, &format!("temporal.block{i}"), e, cfg.heads, cfg.mlp_ratio, p)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let norm = LayerNorm::new(store, "temporal.norm", e)?;
                let pool = "temporal.pool".to_string();
                store.add(&pool, Tensor::zeros(&[1, cfg.obs_len]))?;
                Encoder::Transformer(TransformerEncoder {
                    spatial,
                    proj,
                    pos,
                    blocks,
                    norm,
                    pool,
                })
            }
            Architecture::Stgnn => unreachable!(),
        };
        let partner = if matches!(cfg.fusion, Fusion::DyadicLate | Fusion::DyadicInteractive) { hd } else { 0 };
        let cell = Cell::new(store, rng, "decoder", lstm, e + step_extra + partner, hd)?;
        let mut mlp = Vec::new();
        let mut width = hd;
        for (i, &w) in cfg.decoder_mlp.iter().enumerate() {
            mlp.push(Dense::new(store, rng, &format!("decoder.mlp{i}"), width, w)?);
            width = w;
        }
        let head = Dense::new(store, rng, "decoder.head", width, POSE_WIDTH)?;
        Ok(Net {
            embed,
            early,
            metadata,
            transcript,
            audio,
            encoder,
            decoder: Some(Decoder { cell, mlp, head }),
            recon: reconstruction_matrix(&cfg.landmarks),
        })
    }

    /// The layer producing the final offsets.
    pub fn head(&self) -> &Dense {
        match (&self.encoder, &self.decoder) {
            (Encoder::Stgnn(s), _) => s.head(),
            (_, Some(d)) => &d.head,
            _ => unreachable!("every architecture has an offset head"),
        }
    }

    pub fn forward(
        &self,
        cfg: &ModelConfig,
        out_scale: f64,
        g: &mut Graph,
        store: &ParameterStore,
        inputs: &[&ModelInput],
        partner: Option<&[usize]>,
        horizon: usize,
    ) -> Result<Forward> {
        let b = inputs.len();
        let t = cfg.obs_len;
        check_inputs(cfg, inputs, partner)?;
        if horizon == 0 {
            return config("horizon must be positive");
        }
        let perm = if cfg.fusion.is_dyadic() { partner } else { None };
        let feats = batch_features(cfg, g, inputs);
        if let Encoder::Stgnn(s) = &self.encoder {
            if horizon != cfg.train_horizon {
                return config(format!(
                    "the STGNN emits {} frames per call, {horizon} requested",
                    cfg.train_horizon
                ));
            }
            let offsets = s.forward(cfg, g, store, feats, b)?;
            return Ok(Forward {
                offsets,
                horizon,
                temporal_attention: Vec::new(),
                spatial_attention: Vec::new(),
            });
        }
        let enc = self.encode(cfg, g, store, inputs, perm, feats)?;
        let embed = self.embed.as_ref().expect("embedding layer");
        let last = g.slice_rows(feats, (t - 1) * b, b)?;
        let first = lrelu_dense(g, store, embed, last)?;
        let first = g.dropout(first, cfg.dropout)?;
        let offsets = self.decode(cfg, out_scale, g, store, inputs, perm, enc.init, first, &enc.per_step, horizon)?;
        Ok(Forward {
            offsets,
            horizon,
            temporal_attention: enc.temporal_attention,
            spatial_attention: enc.spatial_attention,
        })
    }

    /// The TCN encoder's output vector before it is split into decoder states.
    pub fn tcn_context(&self, cfg: &ModelConfig, g: &mut Graph, store: &ParameterStore, inputs: &[&ModelInput]) -> Result<Var> {
        if !matches!(self.encoder, Encoder::Tcn(_)) {
            return Err(crate::error::Error::Unsupported("not a TCN model".into()));
        }
        check_inputs(cfg, inputs, None)?;
        let feats = batch_features(cfg, g, inputs);
        let enc = self.encode(cfg, g, store, inputs, None, feats)?;
        match enc.init.c {
            Some(c) => Ok(g.concat_cols(&[enc.init.h, c])?),
            None => Ok(enc.init.h),
        }
    }

    pub fn stgnn(&self) -> Option<&Stgnn> {
        match &self.encoder {
            Encoder::Stgnn(s) => Some(s),
            _ => None,
        }
    }

    fn encode(
        &self,
        cfg: &ModelConfig,
        g: &mut Graph,
        store: &ParameterStore,
        inputs: &[&ModelInput],
        perm: Option<&[usize]>,
        feats: Var,
    ) -> Result<Encoded> {
        let b = inputs.len();
        let t = cfg.obs_len;
        let embed = self.embed.as_ref().expect("embedding layer");
        let mut spatial_attention = Vec::new();
        let mut emb = match &self.encoder {
            Encoder::Transformer(TransformerEncoder {
                spatial: Some(sp), ..
            }) => self.spatial_frames(cfg, g, store, sp, feats, t * b, &mut spatial_attention)?,
            _ => lrelu_dense(g, store, embed, feats)?,
        };
        emb = g.dropout(emb, cfg.dropout)?;
        if let (Some(early), Some(perm)) = (&self.early, perm) {
            let other = permute_samples(g, emb, perm)?;
            let joint = g.concat_cols(&[emb, other])?;
            emb = lrelu_dense(g, store, early, joint)?;
        }
        let extras = self.extras(g, store, inputs, t)?;
        let mut enc_parts = vec![emb];
        for &x in &extras.per_step {
            enc_parts.push(repeat_time_major(g, x, t)?);
        }
        enc_parts.extend(&extras.per_frame);
        let enc_in = if enc_parts.len() == 1 { emb } else { g.concat_cols(&enc_parts)? };

        let mut temporal_attention = Vec::new();
        let init = match &self.encoder {
            Encoder::Recurrent(cell) => {
                let exchange = perm.filter(|_| cfg.fusion == Fusion::DyadicInteractive);
                encode_recurrent(g, store, cell, enc_in, t, b, exchange)?
            }
            Encoder::Tcn(blocks) => {
                let mut x = enc_in;
                for (a, pw) in blocks {
                    let y = a.forward(g, store, x, b)?;
                    let y = g.leaky_relu(y, LEAKY_SLOPE);
                    let y = pw.forward(g, store, y, b)?;
                    let y = g.leaky_relu(y, LEAKY_SLOPE);
                    x = g.dropout(y, cfg.dropout)?;
                }
                let len = g.value(x).rows() / b;
                let ctx = g.slice_rows(x, (len - 1) * b, b)?;
                if cfg.arch.uses_lstm() {
                    let half = cfg.tcn_channels / 2;
                    State {
                        h: g.slice_cols(ctx, 0, half)?,
                        c: Some(g.slice_cols(ctx, half, half)?),
                    }
                } else {
                    State { h: ctx, c: None }
                }
            }
            Encoder::Transformer(tr) => {
                let mut x = match &tr.proj {
                    Some(p) => p.forward(g, store, enc_in)?,
                    None => enc_in,
                };
                x = to_sample_major(g, x, t, b)?;
                let pos = g.param(store, &tr.pos)?;
                let pos = tile(g, pos, b)?;
                x = g.add(x, pos)?;
                for blk in &tr.blocks {
                    let (y, att) = blk.forward(g, store, x, b, t)?;
                    temporal_attention.push(att);
                    x = y;
                }
                x = tr.norm.forward(g, store, x)?;
                let e = cfg.embed_dim;
                let x = to_time_major(g, x, t, b)?;
                let x = g.reshape(x, t, b * e)?;
                let w = g.param(store, &tr.pool)?;
                let w = g.softmax_rows(w);
                let pooled = g.matmul(w, x)?;
                State {
                    h: g.reshape(pooled, b, e)?,
                    c: None,
                }
            }
            Encoder::Stgnn(_) => unreachable!(),
        };

        Ok(Encoded {
            init,
            per_step: extras.per_step,
            temporal_attention,
            spatial_attention,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn spatial_frames(
        &self,
        cfg: &ModelConfig,
        g: &mut Graph,
        store: &ParameterStore,
        sp: &Spatial,
        feats: Var,
        frames: usize,
        attention: &mut Vec<Var>,
    ) -> Result<Var> {
        let f = cfg.feature_len();
        let mut index = Vec::with_capacity(frames * NUM_LANDMARKS * 6);
        for fr in 0..frames {
            for j in 0..NUM_LANDMARKS {
                for c in 0..3 {
                    index.push(fr * f + 3 * j + c);
                }
                for c in 0..3 {
                    index.push(fr * f + MOTION_OFFSET + 3 * j + c);
                }
            }
        }
        let tokens = g.gather(feats, frames * NUM_LANDMARKS, 6, index)?;
        let mut x = sp.token.forward(g, store, tokens)?;
        let pos = g.param(store, &sp.pos)?;
        let pos = tile(g, pos, frames)?;
        x = g.add(x, pos)?;
        for blk in &sp.blocks {
            let (y, att) = blk.forward(g, store, x, frames, NUM_LANDMARKS)?;
            attention.push(att);
            x = y;
        }
        x = sp.norm.forward(g, store, x)?;
        let flat = g.reshape(x, frames, NUM_LANDMARKS * cfg.token_dim)?;
        let global = g.slice_cols(feats, ROOT_OFFSET, f - ROOT_OFFSET)?;
        let joined = g.concat_cols(&[flat, global])?;
        lrelu_dense(g, store, &sp.frame, joined)
    }

    fn extras(&self, g: &mut Graph, store: &ParameterStore, inputs: &[&ModelInput], t: usize) -> Result<StepExtras> {
        let mut per_step = Vec::new();
        let mut per_frame = Vec::new();
        if let Some(d) = &self.metadata {
            let rows: Vec<f64> = inputs.iter().flat_map(|i| i.extras.metadata.clone().unwrap_or_default()).collect();
            let x = g.input(Tensor::matrix(inputs.len(), d.input, rows));
            per_step.push(lrelu_dense(g, store, d, x)?);
        }
        if let Some(d) = &self.transcript {
            let rows: Vec<f64> = inputs.iter().flat_map(|i| i.extras.transcript.clone().unwrap_or_default()).collect();
            let x = g.input(Tensor::matrix(inputs.len(), d.input, rows));
            per_step.push(lrelu_dense(g, store, d, x)?);
        }
        if let Some(d) = &self.audio {
            let mut rows = Vec::with_capacity(t * inputs.len() * d.input);
            for step in 0..t {
                for i in inputs {
                    rows.extend_from_slice(&i.extras.audio.as_ref().expect("checked")[step]);
                }
            }
            let x = g.input(Tensor::matrix(t * inputs.len(), d.input, rows));
            per_frame.push(lrelu_dense(g, store, d, x)?);
        }
        Ok(StepExtras { per_step, per_frame })
    }

    #[allow(clippy::too_many_arguments)]
    fn decode(
        &self,
        cfg: &ModelConfig,
        out_scale: f64,
        g: &mut Graph,
        store: &ParameterStore,
        inputs: &[&ModelInput],
        perm: Option<&[usize]>,
        init: State,
        first: Var,
        step_extras: &[Var],
        horizon: usize,
    ) -> Result<Var> {
        let dec = self.decoder.as_ref().expect("recurrent decoder");
        let embed = self.embed.as_ref().expect("embedding layer");
        let b = inputs.len();
        let f = cfg.feature_len();
        let flat = |sel: fn(&ModelInput) -> &Vec<f64>| inputs.iter().flat_map(|i| sel(i).iter().copied()).collect::<Vec<_>>();
        let scale = Tensor::matrix(b, f, flat(|i| &i.recon_scale));
        let bias = Tensor::matrix(b, f, flat(|i| &i.recon_bias));
        let recon = g.constant(self.recon.clone());
        let mut prev = g.constant(Tensor::matrix(b, POSE_WIDTH, flat(|i| &i.last_pose)));
        let mut before = prev;
        let partner_code = match (cfg.fusion, perm) {
            (Fusion::DyadicLate, Some(p)) => Some(permute_samples(g, init.h, p)?),
            _ => None,
        };
        let mut state = init;
        let mut outs = Vec::with_capacity(horizon);
        for k in 0..horizon {
            let x = if k == 0 {
                first
            } else {
                let pair = g.concat_cols(&[prev, before])?;
                let fv = g.matmul(pair, recon)?;
                let fv = g.mul_const(fv, scale.clone())?;
                let fv = g.add_const(fv, &bias)?;
                let x = lrelu_dense(g, store, embed, fv)?;
                g.dropout(x, cfg.dropout)?
            };
            let mut parts = vec![x];
            parts.extend_from_slice(step_extras);
            if let Some(code) = partner_code {
                parts.push(code);
            }
            if let (Fusion::DyadicInteractive, Some(p)) = (cfg.fusion, perm) {
                parts.push(permute_samples(g, state.h, p)?);
            }
            let xin = if parts.len() == 1 { x } else { g.concat_cols(&parts)? };
            let xw = dec.cell.project(g, store, xin)?;
            state = dec.cell.step(g, store, xw, state)?;
            let mut y = state.h;
            for d in &dec.mlp {
                y = lrelu_dense(g, store, d, y)?;
                y = g.dropout(y, cfg.dropout)?;
            }
            let out = dec.head.forward(g, store, y)?;
            outs.push(out);
            let step = g.scale(out, out_scale);
            before = prev;
            prev = g.add(prev, step)?;
        }
        Ok(g.concat_cols(&outs)?)
    }
}

fn encode_recurrent(
    g: &mut Graph,
    store: &ParameterStore,
    cell: &Cell,
    enc_in: Var,
    t: usize,
    b: usize,
    exchange: Option<&[usize]>,
) -> Result<State> {
    let mut state = cell.zero_state(g, b);
    match exchange {
        Some(p) => {
            for step in 0..t {
                let x = g.slice_rows(enc_in, step * b, b)?;
                let other = permute_samples(g, state.h, p)?;
                let xin = g.concat_cols(&[x, other])?;
                let xw = cell.project(g, store, xin)?;
                state = cell.step(g, store, xw, state)?;
            }
        }
        None => {
            let xw = cell.project(g, store, enc_in)?;
            for step in 0..t {
                let x = g.slice_rows(xw, step * b, b)?;
                state = cell.step(g, store, x, state)?;
            }
        }
    }
    Ok(state)
}

fn check_inputs(cfg: &ModelConfig, inputs: &[&ModelInput], partner: Option<&[usize]>) -> Result<()> {
    if inputs.is_empty() {
        return data("empty batch");
    }
    let f = cfg.feature_len();
    let m = cfg.modalities;
    for (i, inp) in inputs.iter().enumerate() {
        if inp.obs_len() != cfg.obs_len {
            return data(format!("input {i} has {} observed frames, model expects {}", inp.obs_len(), cfg.obs_len));
        }
        if inp.features.iter().any(|fv| fv.len() != f) || inp.recon_scale.len() != f || inp.recon_bias.len() != f {
            return data(format!("input {i} feature vectors do not have length {f}"));
        }
        if inp.last_pose.len() != POSE_WIDTH {
            return data(format!("input {i} last pose has {} values", inp.last_pose.len()));
        }
        let e = &inp.extras;
        if m.metadata && e.metadata.as_ref().map(Vec::len) != Some(metadata_len(m.personality)) {
            return data(format!("input {i} lacks a metadata vector of length {}", metadata_len(m.personality)));
        }
        if m.transcript && e.transcript.as_ref().map(Vec::len) != Some(TRANSCRIPT_DIM) {
            return data(format!("input {i} lacks a transcript embedding of length {TRANSCRIPT_DIM}"));
        }
        if m.audio {
            match &e.audio {
                Some(a) if a.len() == cfg.obs_len && a.iter().all(|r| r.len() == AUDIO_DIM) => {}
                _ => return data(format!("input {i} lacks {} audio frames of width {AUDIO_DIM}", cfg.obs_len)),
            }
        }
    }
    if cfg.fusion.is_dyadic() {
        let Some(p) = partner else {
            return config("dyadic fusion needs the partner of every sample");
        };
        if p.len() != inputs.len() || p.iter().any(|&j| j >= inputs.len()) {
            return data("partner indices do not match the batch");
        }
    }
    Ok(())
}
