//! Flat run configuration shared by every command.
//!
//! A config file is either a JSON object or `key = value` lines (`#` starts a
//! comment). Lists are comma separated. `auto` leaves an architecture
//! dependent value at its default. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nvforecast::models::{Architecture, Fusion, Modalities, ModelConfig, StgnnConfig};
use nvforecast::pipeline::{TrainConfig, OBS_LEN, PRED_LEN, STRIDE};
use nvforecast::skeleton::Region;
use nvforecast::synthgen::{DatasetSpec, Preset};
use nvforecast::{Error, Result};

/// Where a default comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    /// Value used for the published experiments.
    Published,
    /// Not reported; chosen for this implementation.
    Assumed,
    /// File handling and reproducibility plumbing.
    Tooling,
}

impl Provenance {
    pub fn label(self) -> &'static str {
        match self {
            Provenance::Published => "published",
            Provenance::Assumed => "assumed",
            Provenance::Tooling => "tooling",
        }
    }
}

pub struct KeyDoc {
    pub key: &'static str,
    pub provenance: Provenance,
    pub about: &'static str,
}

const fn doc(key: &'static str, provenance: Provenance, about: &'static str) -> KeyDoc {
    KeyDoc { key, provenance, about }
}

use Provenance::*;

pub const KEYS: &[KeyDoc] = &[
    doc("seed", Tooling, "seed for initialisation, batching, dropout and synthesis"),
    doc("data_dir", Tooling, "dataset directory"),
    doc("out_dir", Tooling, "output directory"),
    doc("split", Tooling, "split evaluated by eval and attention"),
    doc("arch", Published, "seq2seq-gru, seq2seq-lstm, tcn-gru, tcn-lstm, transformer-t, transformer-st or stgnn"),
    doc("fusion", Published, "monadic, dyadic-early, dyadic-late or dyadic-interactive"),
    doc("horizon", Published, "frames predicted per forward pass: 10 short-term, 50 long-term"),
    doc("obs_frames", Published, "observed frames the model sees: 100, 10, 5 or 2"),
    doc("pred_len", Published, "evaluated prediction window in frames"),
    doc("stride", Published, "frames between consecutive segments"),
    doc("filter_hands", Published, "drop segments whose hands reappear while predicting"),
    doc("embed_dim", Published, "skeleton embedding width"),
    doc("hidden", Published, "Seq2Seq recurrent width"),
    doc("decoder_mlp", Assumed, "dense widths before the offset head; auto picks per architecture"),
    doc("tcn_channels", Assumed, "TCN channel width"),
    doc("tcn_dilations", Published, "TCN dilation per layer"),
    doc("tcn_kernel", Published, "TCN kernel size"),
    doc("depth", Published, "transformer blocks"),
    doc("heads", Published, "attention heads"),
    doc("mlp_ratio", Published, "transformer feed-forward width multiple"),
    doc("stochastic_depth", Published, "drop-path rate of the last transformer block"),
    doc("token_dim", Assumed, "joint token width of the spatial transformer"),
    doc("dropout", Published, "dropout rate; auto picks per architecture"),
    doc("stgnn_blocks", Published, "STGNN layers"),
    doc("stgnn_kernels", Published, "STGNN inception kernel sizes"),
    doc("stgnn_mixhop_order", Published, "STGNN propagation depth"),
    doc("stgnn_mixhop_retain", Assumed, "share of the block input kept at every hop"),
    doc("stgnn_node_embedding", Published, "STGNN node embedding width"),
    doc("stgnn_conv_channels", Published, "STGNN convolution channels"),
    doc("stgnn_residual_channels", Published, "STGNN residual channels"),
    doc("stgnn_skip_channels", Published, "STGNN skip channels"),
    doc("stgnn_end_channels", Published, "STGNN output layer width"),
    doc("metadata", Published, "fuse session metadata"),
    doc("personality", Published, "include personality scores in the metadata"),
    doc("audio", Published, "fuse audio features"),
    doc("transcript", Published, "fuse transcript features"),
    doc("input_regions", Published, "regions fed to the model; others are zeroed"),
    doc("target_regions", Published, "regions in the training loss"),
    doc("max_epochs", Assumed, "epoch limit"),
    doc("batch_size", Published, "samples per batch; auto picks per architecture"),
    doc("patience", Published, "epochs without validation improvement before stopping"),
    doc("lr", Published, "AMSGrad learning rate"),
    doc("weight_decay", Published, "AMSGrad weight decay"),
    doc("beta1", Published, "AMSGrad first moment decay"),
    doc("beta2", Published, "AMSGrad second moment decay"),
    doc("eps", Assumed, "AMSGrad denominator offset"),
    doc("preset", Tooling, "synthetic preset: static, constant_velocity, conversational, noisy or coupled_nod"),
    doc("sessions", Tooling, "synthetic sessions"),
    doc("length", Tooling, "frames per synthetic session"),
    doc("synth_modalities", Tooling, "also synthesise audio and transcript features"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub split: String,
    pub arch: Architecture,
    pub fusion: Fusion,
    pub horizon: usize,
    pub obs_frames: usize,
    pub pred_len: usize,
    pub stride: usize,
    pub filter_hands: bool,
    pub embed_dim: usize,
    pub hidden: usize,
    pub decoder_mlp: Option<Vec<usize>>,
    pub tcn_channels: usize,
    pub tcn_dilations: Vec<usize>,
    pub tcn_kernel: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub stochastic_depth: f64,
    pub token_dim: usize,
    pub dropout: Option<f64>,
    pub stgnn: StgnnConfig,
    pub modalities: Modalities,
    pub input_regions: Vec<Region>,
    pub target_regions: Vec<Region>,
    pub max_epochs: usize,
    pub batch_size: Option<usize>,
    pub patience: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub preset: Preset,
    pub sessions: usize,
    pub length: usize,
    pub synth_modalities: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::new(Architecture::Seq2seqGru);
        let t = TrainConfig::for_arch(m.arch);
        Self {
            seed: 0,
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("runs"),
            split: "test".into(),
            arch: m.arch,
            fusion: m.fusion,
            horizon: m.train_horizon,
            obs_frames: OBS_LEN,
            pred_len: PRED_LEN,
            stride: STRIDE,
            filter_hands: true,
            embed_dim: m.embed_dim,
            hidden: m.hidden,
            decoder_mlp: None,
            tcn_channels: m.tcn_channels,
            tcn_dilations: m.tcn_dilations,
            tcn_kernel: m.tcn_kernel,
            depth: m.depth,
            heads: m.heads,
            mlp_ratio: m.mlp_ratio,
            stochastic_depth: m.stochastic_depth,
            token_dim: m.token_dim,
            dropout: None,
            stgnn: m.stgnn,
            modalities: m.modalities,
            input_regions: m.input_regions,
            target_regions: m.target_regions,
            max_epochs: t.max_epochs,
            batch_size: None,
            patience: t.patience,
            lr: t.optimizer.lr,
            weight_decay: t.optimizer.weight_decay,
            beta1: t.optimizer.beta1,
            beta2: t.optimizer.beta2,
            eps: t.optimizer.eps,
            preset: Preset::Conversational,
            sessions: 20,
            length: 1000,
            synth_modalities: false,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("`{key}` expects a number, got `{v}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("`{key}` expects true or false, got `{v}`"))),
    }
}

fn parse_list<T>(v: &str, mut item: impl FnMut(&str) -> Result<T>) -> Result<Vec<T>> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(&mut item).collect()
}

fn is_auto(v: &str) -> bool {
    v.trim() == "auto"
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn auto_or<T: ToString>(x: &Option<T>) -> String {
    x.as_ref().map(T::to_string).unwrap_or_else(|| "auto".into())
}

impl RunConfig {
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let s = &mut self.stgnn;
        match key {
            "seed" => self.seed = parse_num(key, v)?,
            "data_dir" => self.data_dir = PathBuf::from(v.trim()),
            "out_dir" => self.out_dir = PathBuf::from(v.trim()),
            "split" => self.split = v.trim().to_string(),
            "arch" => self.arch = Architecture::parse(v.trim())?,
            "fusion" => self.fusion = Fusion::parse(v.trim())?,
            "horizon" => self.horizon = parse_num(key, v)?,
            "obs_frames" => self.obs_frames = parse_num(key, v)?,
            "pred_len" => self.pred_len = parse_num(key, v)?,
            "stride" => self.stride = parse_num(key, v)?,
            "filter_hands" => self.filter_hands = parse_bool(key, v)?,
            "embed_dim" => self.embed_dim = parse_num(key, v)?,
            "hidden" => self.hidden = parse_num(key, v)?,
            "decoder_mlp" => {
                self.decoder_mlp = if is_auto(v) { None } else { Some(parse_list(v, |x| parse_num(key, x))?) }
            }
            "tcn_channels" => self.tcn_channels = parse_num(key, v)?,
            "tcn_dilations" => self.tcn_dilations = parse_list(v, |x| parse_num(key, x))?,
            "tcn_kernel" => self.tcn_kernel = parse_num(key, v)?,
            "depth" => self.depth = parse_num(key, v)?,
            "heads" => self.heads = parse_num(key, v)?,
            "mlp_ratio" => self.mlp_ratio = parse_num(key, v)?,
            "stochastic_depth" => self.stochastic_depth = parse_num(key, v)?,
            "token_dim" => self.token_dim = parse_num(key, v)?,
            "dropout" => self.dropout = if is_auto(v) { None } else { Some(parse_num(key, v)?) },
            "stgnn_blocks" => s.blocks = parse_num(key, v)?,
            "stgnn_kernels" => s.kernels = parse_list(v, |x| parse_num(key, x))?,
            "stgnn_mixhop_order" => s.mixhop_order = parse_num(key, v)?,
            "stgnn_mixhop_retain" => s.mixhop_retain = parse_num(key, v)?,
            "stgnn_node_embedding" => s.node_embedding = parse_num(key, v)?,
            "stgnn_conv_channels" => s.conv_channels = parse_num(key, v)?,
            "stgnn_residual_channels" => s.residual_channels = parse_num(key, v)?,
            "stgnn_skip_channels" => s.skip_channels = parse_num(key, v)?,
            "stgnn_end_channels" => s.end_channels = parse_num(key, v)?,
            "metadata" => self.modalities.metadata = parse_bool(key, v)?,
            "personality" => self.modalities.personality = parse_bool(key, v)?,
            "audio" => self.modalities.audio = parse_bool(key, v)?,
            "transcript" => self.modalities.transcript = parse_bool(key, v)?,
            "input_regions" => self.input_regions = parse_list(v, Region::parse)?,
            "target_regions" => self.target_regions = parse_list(v, Region::parse)?,
            "max_epochs" => self.max_epochs = parse_num(key, v)?,
            "batch_size" => self.batch_size = if is_auto(v) { None } else { Some(parse_num(key, v)?) },
            "patience" => self.patience = parse_num(key, v)?,
            "lr" => self.lr = parse_num(key, v)?,
            "weight_decay" => self.weight_decay = parse_num(key, v)?,
            "beta1" => self.beta1 = parse_num(key, v)?,
            "beta2" => self.beta2 = parse_num(key, v)?,
            "eps" => self.eps = parse_num(key, v)?,
            "preset" => self.preset = Preset::parse(v.trim())?,
            "sessions" => self.sessions = parse_num(key, v)?,
            "length" => self.length = parse_num(key, v)?,
            "synth_modalities" => self.synth_modalities = parse_bool(key, v)?,
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Every key with its current value, in documentation order.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let s = &self.stgnn;
        let m = &self.modalities;
        let regions = |r: &[Region]| r.iter().map(|r| r.name()).collect::<Vec<_>>().join(",");
        let values = [
            self.seed.to_string(),
            self.data_dir.display().to_string(),
            self.out_dir.display().to_string(),
            self.split.clone(),
            self.arch.name().into(),
            self.fusion.name().into(),
            self.horizon.to_string(),
            self.obs_frames.to_string(),
            self.pred_len.to_string(),
            self.stride.to_string(),
            self.filter_hands.to_string(),
            self.embed_dim.to_string(),
            self.hidden.to_string(),
            self.decoder_mlp.as_deref().map(join).unwrap_or_else(|| "auto".into()),
            self.tcn_channels.to_string(),
            join(&self.tcn_dilations),
            self.tcn_kernel.to_string(),
            self.depth.to_string(),
            self.heads.to_string(),
            self.mlp_ratio.to_string(),
            self.stochastic_depth.to_string(),
            self.token_dim.to_string(),
            auto_or(&self.dropout),
            s.blocks.to_string(),
            join(&s.kernels),
            s.mixhop_order.to_string(),
            s.mixhop_retain.to_string(),
            s.node_embedding.to_string(),
            s.conv_channels.to_string(),
            s.residual_channels.to_string(),
            s.skip_channels.to_string(),
            s.end_channels.to_string(),
            m.metadata.to_string(),
            m.personality.to_string(),
            m.audio.to_string(),
            m.transcript.to_string(),
            regions(&self.input_regions),
            regions(&self.target_regions),
            self.max_epochs.to_string(),
            auto_or(&self.batch_size),
            self.patience.to_string(),
            self.lr.to_string(),
            self.weight_decay.to_string(),
            self.beta1.to_string(),
            self.beta2.to_string(),
            self.eps.to_string(),
            self.preset.name().into(),
            self.sessions.to_string(),
            self.length.to_string(),
            self.synth_modalities.to_string(),
        ];
        KEYS.iter().map(|k| k.key).zip(values).collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let map: serde_json::Map<String, serde_json::Value> =
            self.pairs().into_iter().map(|(k, v)| (k.to_string(), v.into())).collect();
        serde_json::Value::Object(map)
    }

    /// Applies a config file on top of `self`.
    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        self.merge_text(&text)
    }

    pub fn merge_text(&mut self, text: &str) -> Result<()> {
        if text.trim_start().starts_with('{') {
            let obj: BTreeMap<String, serde_json::Value> =
                serde_json::from_str(text).map_err(|e| Error::Config(format!("config JSON: {e}")))?;
            for (k, v) in obj {
                let s = match v {
                    serde_json::Value::String(s) => s,
                    serde_json::Value::Array(xs) => xs
                        .iter()
                        .map(|x| x.as_str().map(str::to_string).unwrap_or_else(|| x.to_string()))
                        .collect::<Vec<_>>()
                        .join(","),
                    serde_json::Value::Null => "auto".into(),
                    other => other.to_string(),
                };
                self.set(&k, &s)?;
            }
            return Ok(());
        }
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("config line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("`{pair}` is not key=value")))?;
        self.set(k.trim(), v)
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        if ![100, 10, 5, 2].contains(&self.obs_frames) {
            return Err(Error::Config(format!("obs_frames must be 100, 10, 5 or 2, got {}", self.obs_frames)));
        }
        let mut m = ModelConfig::new(self.arch);
        m.obs_len = self.obs_frames;
        m.train_horizon = self.horizon;
        m.embed_dim = self.embed_dim;
        m.hidden = self.hidden;
        if let Some(d) = &self.decoder_mlp {
            m.decoder_mlp = d.clone();
        }
        m.tcn_channels = self.tcn_channels;
        m.tcn_dilations = self.tcn_dilations.clone();
        m.tcn_kernel = self.tcn_kernel;
        m.depth = self.depth;
        m.heads = self.heads;
        m.mlp_ratio = self.mlp_ratio;
        m.stochastic_depth = self.stochastic_depth;
        m.token_dim = self.token_dim;
        if let Some(d) = self.dropout {
            m.dropout = d;
        }
        m.stgnn = self.stgnn.clone();
        m.fusion = self.fusion;
        m.modalities = self.modalities;
        m.input_regions = self.input_regions.clone();
        m.target_regions = self.target_regions.clone();
        m.seed = self.seed;
        m.validate()?;
        Ok(m)
    }

    pub fn train_config(&self) -> TrainConfig {
        let mut t = TrainConfig::for_arch(self.arch);
        t.max_epochs = self.max_epochs;
        if let Some(b) = self.batch_size {
            t.batch_size = b;
        }
        t.patience = self.patience;
        t.optimizer.lr = self.lr;
        t.optimizer.weight_decay = self.weight_decay;
        t.optimizer.beta1 = self.beta1;
        t.optimizer.beta2 = self.beta2;
        t.optimizer.eps = self.eps;
        t.seed = self.seed;
        t
    }

    pub fn dataset_spec(&self) -> DatasetSpec {
        DatasetSpec {
            preset: self.preset,
            sessions: self.sessions,
            length: self.length,
            seed: self.seed,
            modalities: self.synth_modalities,
        }
    }
}

/// The key reference appended to `--help`.
pub fn key_help() -> String {
    let defaults = RunConfig::default().pairs();
    let width = KEYS.iter().map(|k| k.key.len()).max().unwrap_or(0);
    let mut s = String::from(
        "Config keys (--config FILE with JSON or key = value lines, or --set key=value):\n",
    );
    for (k, (_, default)) in KEYS.iter().zip(defaults) {
        s.push_str(&format!(
            "  {:width$}  [{}] {} (default: {default})\n",
            k.key,
            k.provenance.label(),
            k.about
        ));
    }
    s
}
