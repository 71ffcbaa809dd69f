//! Segmentation, training, rollout and evaluation.

mod evaluate;
mod rollout;
mod segment;
mod train;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use evaluate::{evaluate, predict_segments, score, Evaluation, ModelPredictor, Predictor, SegmentReport};
pub use rollout::{frame_from_pose, freeze_after_n, model_window, rollout, Observed};
pub use segment::{
    filter_segments, hand_reappears, jitter_hands, metadata_path, modality_path, noisy_path, segment, segment_all, split_path,
    Dataset, DropReport, Segment, Source, OBS_LEN, PRED_LEN, STRIDE,
};
pub use train::{
    init_model, train, train_with, validation_loss, EpochRecord, History, Prepared, TrainConfig, TrainOutcome,
    TrainState,
};

use crate::metrics::MetricsReport;

/// What a command consumed and produced, enough to reproduce it.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub seed: u64,
    pub config: serde_json::Value,
    /// Input file name to SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub metrics: BTreeMap<String, MetricsReport>,
}
