use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::skeleton::{LandmarkConfig, Region};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    Seq2seqGru,
    Seq2seqLstm,
    TcnGru,
    TcnLstm,
    TransformerT,
    TransformerSt,
    Stgnn,
}

impl Architecture {
    pub const ALL: [Architecture; 7] = [
        Architecture::Seq2seqGru,
        Architecture::Seq2seqLstm,
        Architecture::TcnGru,
        Architecture::TcnLstm,
        Architecture::TransformerT,
        Architecture::TransformerSt,
        Architecture::Stgnn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Seq2seqGru => "seq2seq-gru",
            Architecture::Seq2seqLstm => "seq2seq-lstm",
            Architecture::TcnGru => "tcn-gru",
            Architecture::TcnLstm => "tcn-lstm",
            Architecture::TransformerT => "transformer-t",
            Architecture::TransformerSt => "transformer-st",
            Architecture::Stgnn => "stgnn",
        }
    }

    pub fn parse(s: &str) -> Result<Architecture> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown architecture `{s}`")))
    }

    pub fn is_transformer(self) -> bool {
        matches!(self, Architecture::TransformerT | Architecture::TransformerSt)
    }

    pub fn uses_lstm(self) -> bool {
        matches!(self, Architecture::Seq2seqLstm | Architecture::TcnLstm)
    }

    /// Training batch size and dropout used for this family.
    pub fn default_batch_and_dropout(self) -> (usize, f64) {
        match self {
            Architecture::Seq2seqGru | Architecture::Seq2seqLstm => (512, 0.5),
            Architecture::TcnGru | Architecture::TcnLstm => (512, 0.25),
            Architecture::TransformerT | Architecture::TransformerSt => (32, 0.25),
            Architecture::Stgnn => (32, 0.3),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fusion {
    #[default]
    Monadic,
    DyadicEarly,
    DyadicLate,
    DyadicInteractive,
}

impl Fusion {
    pub fn name(self) -> &'static str {
        match self {
            Fusion::Monadic => "monadic",
            Fusion::DyadicEarly => "dyadic-early",
            Fusion::DyadicLate => "dyadic-late",
            Fusion::DyadicInteractive => "dyadic-interactive",
        }
    }

    pub fn parse(s: &str) -> Result<Fusion> {
        [Fusion::Monadic, Fusion::DyadicEarly, Fusion::DyadicLate, Fusion::DyadicInteractive]
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown fusion `{s}`")))
    }

    pub fn is_dyadic(self) -> bool {
        self != Fusion::Monadic
    }

    /// Encoders see the partner's frames.
    pub fn fuses_encoder(self) -> bool {
        matches!(self, Fusion::DyadicEarly | Fusion::DyadicInteractive)
    }
}

/// Extra inputs concatenated with the skeleton embedding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Modalities {
    pub metadata: bool,
    /// Include the five personality scores in the metadata vector.
    pub personality: bool,
    pub audio: bool,
    pub transcript: bool,
}

impl Modalities {
    pub fn any(&self) -> bool {
        self.metadata || self.audio || self.transcript
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StgnnConfig {
    pub blocks: usize,
    pub kernels: Vec<usize>,
    pub mixhop_order: usize,
    /// Share of the block input retained at every propagation hop.
    pub mixhop_retain: f64,
    pub node_embedding: usize,
    pub conv_channels: usize,
    pub residual_channels: usize,
    pub skip_channels: usize,
    pub end_channels: usize,
}

impl Default for StgnnConfig {
    fn default() -> Self {
        Self {
            blocks: 3,
            kernels: vec![2, 3, 9, 11],
            mixhop_order: 2,
            mixhop_retain: 0.05,
            node_embedding: 40,
            conv_channels: 32,
            residual_channels: 32,
            skip_channels: 64,
            end_channels: 128,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub arch: Architecture,
    pub landmarks: LandmarkConfig,
    pub obs_len: usize,
    /// Frames produced per forward pass (10 short-term, 50 long-term).
    pub train_horizon: usize,
    pub embed_dim: usize,
    /// Recurrent width of the Seq2Seq encoder and decoder.
    pub hidden: usize,
    /// Widths of the dense layers between the decoder cell and the offset head.
    pub decoder_mlp: Vec<usize>,
    pub tcn_channels: usize,
    pub tcn_dilations: Vec<usize>,
    pub tcn_kernel: usize,
    pub depth: usize,
    pub heads: usize,
    /// Feed-forward width of transformer blocks as a multiple of their width.
    pub mlp_ratio: usize,
    pub stochastic_depth: f64,
    /// Width of the joint tokens in the spatial transformer.
    pub token_dim: usize,
    pub stgnn: StgnnConfig,
    pub dropout: f64,
    pub fusion: Fusion,
    pub modalities: Modalities,
    /// Regions whose input slots are kept; the rest are masked to zero.
    pub input_regions: Vec<Region>,
    /// Regions that contribute to the training loss.
    pub target_regions: Vec<Region>,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(arch: Architecture) -> Self {
        let (_, dropout) = arch.default_batch_and_dropout();
        let decoder_mlp = match arch {
            Architecture::Seq2seqGru | Architecture::Seq2seqLstm => vec![1024, 1024],
            _ => vec![1024, 512],
        };
        Self {
            arch,
            landmarks: LandmarkConfig::default(),
            obs_len: 100,
            train_horizon: 10,
            embed_dim: 512,
            hidden: 1024,
            decoder_mlp,
            tcn_channels: 128,
            tcn_dilations: vec![1, 3, 9, 27, 59],
            tcn_kernel: 2,
            depth: 4,
            heads: 8,
            mlp_ratio: 2,
            stochastic_depth: 0.2,
            token_dim: 32,
            stgnn: StgnnConfig::default(),
            dropout,
            fusion: Fusion::Monadic,
            modalities: Modalities::default(),
            input_regions: Region::ALL.to_vec(),
            target_regions: Region::ALL.to_vec(),
            seed: 0,
        }
    }

    pub fn feature_len(&self) -> usize {
        self.landmarks.feature_len()
    }

    /// Frames consumed by the TCN encoder to produce one output step.
    pub fn tcn_receptive_field(&self) -> usize {
        1 + self.tcn_dilations.iter().sum::<usize>() * (self.tcn_kernel - 1)
    }

    /// Width of the recurrent decoder state.
    pub fn decoder_hidden(&self) -> usize {
        match self.arch {
            Architecture::Seq2seqGru | Architecture::Seq2seqLstm => self.hidden,
            Architecture::TcnGru => self.tcn_channels,
            Architecture::TcnLstm => self.tcn_channels / 2,
            Architecture::TransformerT | Architecture::TransformerSt => self.embed_dim,
            Architecture::Stgnn => 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.landmarks.validate()?;
        if self.obs_len == 0 {
            return config("obs_len must be positive");
        }
        if self.train_horizon == 0 {
            return config("train_horizon must be positive");
        }
        if self.embed_dim == 0 || self.hidden == 0 {
            return config("embed_dim and hidden must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..1.0).contains(&self.stochastic_depth) {
            return config("dropout rates must lie in [0, 1)");
        }
        if self.fusion.is_dyadic() && self.modalities.any() {
            return config("dyadic fusion cannot be combined with extra modalities");
        }
        if self.modalities.personality && !self.modalities.metadata {
            return config("personality scores require the metadata modality");
        }
        if self.input_regions.is_empty() || self.target_regions.is_empty() {
            return config("input_regions and target_regions must not be empty");
        }
        match self.arch {
            Architecture::TcnGru | Architecture::TcnLstm => {
                if self.tcn_kernel < 2 || self.tcn_dilations.is_empty() {
                    return config("the TCN needs a kernel of at least 2 and one dilation");
                }
                if self.arch == Architecture::TcnLstm && self.tcn_channels % 2 != 0 {
                    return config("tcn_channels must be even to split into LSTM hidden and cell states");
                }
                if self.obs_len < self.tcn_receptive_field() {
                    return config(format!(
                        "obs_len {} is shorter than the TCN receptive field {}",
                        self.obs_len,
                        self.tcn_receptive_field()
                    ));
                }
            }
            Architecture::TransformerT | Architecture::TransformerSt => {
                if self.heads == 0 || self.embed_dim % self.heads != 0 {
                    return config(format!("embed_dim {} is not divisible by {} heads", self.embed_dim, self.heads));
                }
                if self.arch == Architecture::TransformerSt && self.token_dim % self.heads != 0 {
                    return config(format!("token_dim {} is not divisible by {} heads", self.token_dim, self.heads));
                }
            }
            Architecture::Stgnn => {
                if self.fusion.is_dyadic() || self.modalities.any() {
                    return config("the STGNN supports neither dyadic fusion nor extra modalities");
                }
                let s = &self.stgnn;
                if s.blocks == 0 || s.kernels.is_empty() || s.kernels.contains(&0) {
                    return config("the STGNN needs at least one block and non-zero kernels");
                }
                if s.conv_channels % s.kernels.len() != 0 {
                    return config("stgnn conv_channels must split evenly across the inception kernels");
                }
            }
            _ => {}
        }
        Ok(())
    }
}
