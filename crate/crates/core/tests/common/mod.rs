#![allow(dead_code)]

use nvforecast::models::{Architecture, ModelConfig, StgnnConfig};
use nvforecast::skeleton::{Frame, LandmarkSet, Part, Point3, Quality};

/// A frame with every part present, landmark `l` at `pos(l)`.
pub fn frame_with(index: usize, pos: impl Fn(usize) -> Point3) -> Frame {
    let mut landmarks = LandmarkSet::default();
    for p in Part::ALL {
        *landmarks.part_mut(p) = Some(p.range().map(&pos).collect());
    }
    landmarks.gaze = Some(vec![[0.1, 0.2, -1.0], [0.15, 0.2, -1.0]]);
    Frame {
        frame_index: index,
        landmarks,
        quality: Quality::all(true),
    }
}

pub fn drop_part(frame: &mut Frame, p: Part) {
    *frame.landmarks.part_mut(p) = None;
    frame.quality.set(p, false);
}

/// Deterministic but irregular landmark layout.
pub fn scattered(l: usize, t: f64) -> Point3 {
    let a = l as f64;
    [100.0 + 7.0 * a + 3.0 * (0.3 * t + a).sin(), 200.0 + 2.0 * a + 0.5 * t, (a * 0.1).cos()]
}

/// `n` consecutive frames of the scattered layout shifted in time by `phase`.
pub fn moving_frames(n: usize, phase: f64) -> Vec<Frame> {
    (0..n).map(|t| frame_with(t, |l| scattered(l, t as f64 + phase))).collect()
}

/// Every architecture at a size that trains and checks gradients quickly.
pub fn tiny(arch: Architecture, obs_len: usize, horizon: usize) -> ModelConfig {
    let mut c = ModelConfig::new(arch);
    c.obs_len = obs_len;
    c.train_horizon = horizon;
    c.embed_dim = 8;
    c.hidden = 6;
    c.decoder_mlp = vec![6];
    c.tcn_channels = 6;
    c.tcn_dilations = vec![1, 2];
    c.depth = 1;
    c.heads = 2;
    c.token_dim = 4;
    c.stgnn = StgnnConfig {
        blocks: 2,
        kernels: vec![2, 3],
        mixhop_order: 2,
        mixhop_retain: 0.05,
        node_embedding: 3,
        conv_channels: 4,
        residual_channels: 4,
        skip_channels: 4,
        end_channels: 6,
    };
    c
}
