//! Observation windows, regression targets and feature normalisation.

use diffcore::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{data, Error, Result};
use crate::skeleton::{
    window_features, Frame, LandmarkConfig, Part, Point2, Region, MOTION_OFFSET, NUM_LANDMARKS, NUM_ROOTS,
    REL_OFFSET, ROOT_OFFSET,
};

/// Width of a flattened 2D pose.
pub const POSE_WIDTH: usize = 2 * NUM_LANDMARKS;

/// Optional non-skeletal inputs of one participant window.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Extras {
    pub metadata: Option<Vec<f64>>,
    pub transcript: Option<Vec<f64>>,
    /// `obs_len` rows of audio features.
    pub audio: Option<Vec<Vec<f64>>>,
}

/// Raw (unnormalised) observation of one participant.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub features: Vec<Vec<f64>>,
    pub last_pose: Vec<Point2>,
    /// Parts present in the last observed frame.
    pub present: [bool; NUM_ROOTS],
    /// Parts whose input slots survive masking.
    pub visible: [bool; NUM_ROOTS],
    /// Features that stay constant while decoding: relative depth and gaze.
    pub held: Vec<f64>,
    pub extras: Extras,
}

impl Window {
    /// Features of `obs` with regions outside `input_regions` zeroed.
    pub fn from_frames(obs: &[Frame], landmarks: &LandmarkConfig, input_regions: &[Region]) -> Result<Window> {
        let last = obs.last().ok_or_else(|| Error::Data("empty observation window".into()))?;
        let mut features = window_features(obs, landmarks);
        let hidden: Vec<Region> = Region::ALL.into_iter().filter(|r| !input_regions.contains(r)).collect();
        for fv in &mut features {
            for r in &hidden {
                for s in crate::skeleton::region_slots(*r) {
                    fv[s] = 0.0;
                }
            }
        }
        let present = last.presence();
        let visible = Part::ALL.map(|p| present[p.index()] && input_regions.contains(&p.region()));
        let fv = features.last().expect("non-empty window");
        let mut held = vec![0.0; fv.len()];
        for p in Part::ALL {
            if visible[p.index()] {
                for l in p.range() {
                    held[REL_OFFSET + 3 * l + 2] = fv[REL_OFFSET + 3 * l + 2];
                }
            }
        }
        let gaze = ROOT_OFFSET + 4 * NUM_ROOTS;
        for g in (gaze..fv.len()).step_by(6) {
            held[g..g + 3].copy_from_slice(&fv[g..g + 3]);
        }
        Ok(Window {
            features,
            last_pose: last.pose2d(),
            present,
            visible,
            held,
            extras: Extras::default(),
        })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

/// Future offsets in pixels with the loss mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Target {
    /// `horizon * 156` values, frame-major, `(x, y)` per landmark.
    pub offsets: Vec<f64>,
    pub mask: Vec<f64>,
}

impl Target {
    /// An offset counts when the landmark is valid at both ends of the step,
    /// its part is present in the last observed frame and it lies in `regions`.
    pub fn from_frames(last_obs: &Frame, future: &[Frame], regions: &[Region]) -> Target {
        let h = future.len();
        let mut offsets = vec![0.0; h * POSE_WIDTH];
        let mut mask = vec![0.0; h * POSE_WIDTH];
        let mut prev = last_obs;
        for (k, f) in future.iter().enumerate() {
            let (a, b) = (prev.pose2d(), f.pose2d());
            for p in Part::ALL {
                let ok = last_obs.present(p) && prev.valid(p) && f.valid(p) && regions.contains(&p.region());
                for l in p.range() {
                    for d in 0..2 {
                        let i = k * POSE_WIDTH + 2 * l + d;
                        if ok {
                            offsets[i] = b[l][d] - a[l][d];
                            mask[i] = 1.0;
                        }
                    }
                }
            }
            prev = f;
        }
        Target { offsets, mask }
    }

    pub fn horizon(&self) -> usize {
        self.offsets.len() / POSE_WIDTH
    }

    /// The first `horizon` frames.
    pub fn truncated(&self, horizon: usize) -> Result<Target> {
        if horizon > self.horizon() {
            return data(format!("target has {} frames, {horizon} requested", self.horizon()));
        }
        let n = horizon * POSE_WIDTH;
        Ok(Target {
            offsets: self.offsets[..n].to_vec(),
            mask: self.mask[..n].to_vec(),
        })
    }
}

/// Per-feature standardisation of model inputs and the scale of predicted offsets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
    /// Offsets are regressed in units of this many pixels.
    pub out_scale: f64,
}

const MIN_STD: f64 = 1e-6;

impl Normalizer {
    pub fn identity(feature_len: usize) -> Self {
        Self {
            mean: vec![0.0; feature_len],
            inv_std: vec![1.0; feature_len],
            out_scale: 1.0,
        }
    }

    /// Statistics over every observed frame and every masked target offset.
    /// Constant features keep unit scale; without usable offsets the scale is 1.
    pub fn fit(windows: &[&Window], targets: &[&Target]) -> Result<Self> {
        let first = windows.first().ok_or_else(|| Error::NoData("normalizer fit".into()))?;
        let f = first.features[0].len();
        let mut sum = vec![0.0; f];
        let mut sq = vec![0.0; f];
        let mut n = 0.0;
        for w in windows {
            for fv in &w.features {
                if fv.len() != f {
                    return data("feature vectors of different lengths");
                }
                for (i, v) in fv.iter().enumerate() {
                    sum[i] += v;
                    sq[i] += v * v;
                }
                n += 1.0;
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let inv_std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| {
                let var = (s / n - m * m).max(0.0);
                if var.sqrt() > MIN_STD {
                    1.0 / var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        let (mut se, mut cnt) = (0.0, 0.0);
        for t in targets {
            for (o, m) in t.offsets.iter().zip(&t.mask) {
                se += m * o * o;
                cnt += m;
            }
        }
        let rms = if cnt > 0.0 { (se / cnt).sqrt() } else { 0.0 };
        Ok(Self {
            mean,
            inv_std,
            out_scale: if rms > MIN_STD { rms } else { 1.0 },
        })
    }

    pub fn apply(&self, fv: &[f64]) -> Vec<f64> {
        fv.iter()
            .zip(&self.mean)
            .zip(&self.inv_std)
            .map(|((v, m), s)| (v - m) * s)
            .collect()
    }
}

/// A window ready for the network: normalised features plus the affine map
/// that turns reconstructed poses into normalised feature vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelInput {
    /// `obs_len` rows of normalised features.
    pub features: Vec<Vec<f64>>,
    /// Flattened last observed pose, `(x, y)` per landmark.
    pub last_pose: Vec<f64>,
    pub present: [bool; NUM_ROOTS],
    pub recon_scale: Vec<f64>,
    pub recon_bias: Vec<f64>,
    pub extras: Extras,
}

impl ModelInput {
    pub fn new(w: &Window, norm: &Normalizer) -> Result<Self> {
        let f = norm.mean.len();
        if w.features.iter().any(|fv| fv.len() != f) {
            return data(format!("window features do not have the normalizer's length {f}"));
        }
        let mut dynamic = vec![0.0; f];
        for p in Part::ALL {
            if !w.visible[p.index()] {
                continue;
            }
            for l in p.range() {
                for d in 0..2 {
                    dynamic[REL_OFFSET + 3 * l + d] = 1.0;
                    dynamic[MOTION_OFFSET + 3 * l + d] = 1.0;
                }
            }
            let r = ROOT_OFFSET + 4 * p.index();
            dynamic[r..r + 4].fill(1.0);
        }
        let recon_scale = dynamic.iter().zip(&norm.inv_std).map(|(m, s)| m * s).collect();
        let recon_bias = norm.apply(&w.held);
        Ok(Self {
            features: w.features.iter().map(|fv| norm.apply(fv)).collect(),
            last_pose: w.last_pose.iter().flat_map(|p| [p[0], p[1]]).collect(),
            present: w.present,
            recon_scale,
            recon_bias,
            extras: w.extras.clone(),
        })
    }

    pub fn obs_len(&self) -> usize {
        self.features.len()
    }

    /// Per-coordinate validity of predictions: parts present at the last frame.
    pub fn pose_mask(&self) -> Vec<bool> {
        (0..NUM_LANDMARKS).map(|l| self.present[Part::of_landmark(l).index()]).collect()
    }
}

/// Linear map from `[pose_k, pose_{k-1}]` (312 values) to the dynamic feature
/// slots of frame `k`: root-relative x/y, x/y offsets and root x, y, dx, dy.
pub fn reconstruction_matrix(landmarks: &LandmarkConfig) -> Tensor {
    let f = landmarks.feature_len();
    let mut m = Tensor::zeros(&[2 * POSE_WIDTH, f]);
    let data = m.data_mut();
    let mut put = |row: usize, col: usize, v: f64| data[row * f + col] += v;
    for p in Part::ALL {
        let start = p.range().start;
        let roots = landmarks.root_weights(p);
        let r = ROOT_OFFSET + 4 * p.index();
        for d in 0..2 {
            for &(i, wt) in &roots {
                let src = 2 * (start + i) + d;
                put(src, r + d, wt);
                put(src, r + 2 + d, wt);
                put(POSE_WIDTH + src, r + 2 + d, -wt);
                for l in p.range() {
                    put(src, REL_OFFSET + 3 * l + d, -wt);
                }
            }
            for l in p.range() {
                put(2 * l + d, REL_OFFSET + 3 * l + d, 1.0);
                put(2 * l + d, MOTION_OFFSET + 3 * l + d, 1.0);
                put(POSE_WIDTH + 2 * l + d, MOTION_OFFSET + 3 * l + d, -1.0);
            }
        }
    }
    m
}
