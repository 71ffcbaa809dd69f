//! Forecasting networks built on `diffcore`.
//!
//! Every architecture maps a batch of observation windows to per-frame 2D
//! offsets of all 78 landmarks. Apart from the STGNN, which emits the whole
//! horizon at once, an encoder summarises the window into the initial state of
//! a recurrent decoder. Each decoder step embeds the previously reconstructed
//! frame (its features recomputed from the running pose), advances the cell and
//! emits the next offsets through a dense head. Offsets are regressed in units
//! of the normaliser's `out_scale`.

mod blocks;
mod config;
mod input;
mod network;
mod stgnn;

use std::path::Path;

use diffcore::{Graph, Mode, ParamCheckpoint, ParameterStore, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::{Architecture, Fusion, Modalities, ModelConfig, StgnnConfig};
pub use input::{reconstruction_matrix, Extras, ModelInput, Normalizer, Target, Window, POSE_WIDTH};
pub use network::Forward;
pub use stgnn::receptive_field as stgnn_receptive_field;

use crate::error::{data, Error, Result};
use crate::skeleton::{Point2, PoseSequence, NUM_LANDMARKS};

pub const CHECKPOINT_FORMAT: &str = "nvforecast-model";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub normalizer: Normalizer,
    pub store: ParameterStore,
    net: network::Net,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub normalizer: Normalizer,
    pub parameters: ParamCheckpoint,
}

impl Model {
    /// Freshly initialised weights drawn from `config.seed`.
    pub fn new(config: ModelConfig, normalizer: Normalizer) -> Result<Self> {
        config.validate()?;
        if normalizer.mean.len() != config.feature_len() || normalizer.inv_std.len() != config.feature_len() {
            return Err(Error::Config(format!(
                "normalizer covers {} features, model expects {}",
                normalizer.mean.len(),
                config.feature_len()
            )));
        }
        let mut store = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let net = network::Net::new(&config, &mut store, &mut rng)?;
        Ok(Self {
            config,
            normalizer,
            store,
            net,
        })
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }

    /// Sets the final offset layer to zero so every prediction is static.
    pub fn zero_head(&mut self) -> Result<()> {
        let head = self.net.head().clone();
        head.zero(&mut self.store)?;
        Ok(())
    }

    /// Batched forward pass. `partner[i]` is the index of sample `i`'s
    /// interlocutor inside the same batch; it is required by dyadic fusion and
    /// ignored otherwise.
    pub fn forward(
        &self,
        g: &mut Graph,
        inputs: &[&ModelInput],
        partner: Option<&[usize]>,
        horizon: usize,
    ) -> Result<Forward> {
        self.forward_with(&self.store, g, inputs, partner, horizon)
    }

    /// [`Model::forward`] with parameter values taken from `store`.
    pub fn forward_with(
        &self,
        store: &ParameterStore,
        g: &mut Graph,
        inputs: &[&ModelInput],
        partner: Option<&[usize]>,
        horizon: usize,
    ) -> Result<Forward> {
        self.net
            .forward(&self.config, self.normalizer.out_scale, g, store, inputs, partner, horizon)
    }

    /// Masked mean squared error of the scaled offsets.
    pub fn loss(&self, g: &mut Graph, fwd: &Forward, targets: &[&Target]) -> Result<Var> {
        let width = fwd.horizon * POSE_WIDTH;
        let mut t = Vec::with_capacity(targets.len() * width);
        let mut m = Vec::with_capacity(targets.len() * width);
        let s = self.normalizer.out_scale;
        for tg in targets {
            let tg = tg.truncated(fwd.horizon)?;
            t.extend(tg.offsets.iter().map(|o| o / s));
            m.extend(tg.mask);
        }
        let n = targets.len();
        Ok(g.masked_mse(fwd.offsets, Tensor::matrix(n, width, t), Tensor::matrix(n, width, m))?)
    }

    /// Offsets in pixels for `train_horizon` frames, evaluation mode.
    pub fn predict_offsets(&self, inputs: &[&ModelInput], partner: Option<&[usize]>) -> Result<Vec<Vec<Vec<Point2>>>> {
        let mut g = Graph::new(Mode::Eval, 0);
        let h = self.config.train_horizon;
        let fwd = self.forward(&mut g, inputs, partner, h)?;
        let out = g.value(fwd.offsets);
        let s = self.normalizer.out_scale;
        Ok((0..inputs.len())
            .map(|b| {
                let row = out.row_slice(b);
                (0..h)
                    .map(|k| {
                        (0..NUM_LANDMARKS)
                            .map(|l| {
                                let i = k * POSE_WIDTH + 2 * l;
                                [row[i] * s, row[i + 1] * s]
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect())
    }

    /// Predicted poses for `train_horizon` frames; landmarks of parts missing
    /// from the last observed frame are marked invalid.
    pub fn predict(&self, inputs: &[&ModelInput], partner: Option<&[usize]>) -> Result<Vec<PoseSequence>> {
        let offsets = self.predict_offsets(inputs, partner)?;
        inputs
            .iter()
            .zip(offsets)
            .map(|(inp, off)| {
                let last: Vec<Point2> = inp.last_pose.chunks(2).map(|c| [c[0], c[1]]).collect();
                let poses = crate::skeleton::apply_offsets(&last, &off)?;
                Ok(PoseSequence::with_mask(poses, &inp.pose_mask()))
            })
            .collect()
    }

    /// Mean attention received by each observed frame, averaged over depths,
    /// heads and querying frames; one profile per input.
    pub fn attention_profile(&self, inputs: &[&ModelInput], partner: Option<&[usize]>) -> Result<Vec<Vec<f64>>> {
        if !self.config.arch.is_transformer() {
            return Err(Error::Unsupported(format!(
                "{} has no temporal attention",
                self.config.arch.name()
            )));
        }
        let mut g = Graph::new(Mode::Eval, 0);
        let fwd = self.forward(&mut g, inputs, partner, 1)?;
        let t = self.config.obs_len;
        let heads = self.config.heads;
        let mut profiles = vec![vec![0.0; t]; inputs.len()];
        let n = (fwd.temporal_attention.len() * heads * t) as f64;
        for &att in &fwd.temporal_attention {
            let map = g.attention_weights(att).expect("attention node");
            for (b, prof) in profiles.iter_mut().enumerate() {
                for h in 0..heads {
                    for i in 0..t {
                        for (p, w) in prof.iter_mut().zip(map.row(b, h, i)) {
                            *p += w / n;
                        }
                    }
                }
            }
        }
        Ok(profiles)
    }

    /// The STGNN's learned adjacency matrix.
    pub fn adjacency(&self) -> Result<Tensor> {
        let s = self.net.stgnn().ok_or_else(|| Error::Unsupported("only the STGNN learns a graph".into()))?;
        let mut g = Graph::new(Mode::Eval, 0);
        let a = s.adjacency(&mut g, &self.store)?;
        Ok(g.value(a).clone())
    }

    /// Context vector of the TCN encoder for one batch (evaluation mode).
    pub fn tcn_context(&self, inputs: &[&ModelInput]) -> Result<Tensor> {
        let mut g = Graph::new(Mode::Eval, 0);
        let v = self.net.tcn_context(&self.config, &mut g, &self.store, inputs)?;
        Ok(g.value(v).clone())
    }

    pub fn to_checkpoint(&self) -> ModelCheckpoint {
        ModelCheckpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            normalizer: self.normalizer.clone(),
            parameters: self.store.to_checkpoint(),
        }
    }

    pub fn from_checkpoint(ckpt: &ModelCheckpoint) -> Result<Self> {
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return data(format!("unsupported checkpoint {} v{}", ckpt.format, ckpt.version));
        }
        let mut model = Model::new(ckpt.config.clone(), ckpt.normalizer.clone())?;
        model.store.load_values(&ckpt.parameters)?;
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_checkpoint())?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let ckpt: ModelCheckpoint =
            serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        Model::from_checkpoint(&ckpt)
    }
}
