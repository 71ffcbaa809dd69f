use crate::baselines::Prediction2D;
use crate::error::{data, Error, Result};
use crate::models::{Extras, Model, ModelConfig, ModelInput, Window};
use crate::skeleton::{apply_offsets, Frame, Part, Point2, PoseSequence};

/// Observation frames and side inputs handed to a predictor.
#[derive(Clone, Copy, Debug)]
pub struct Observed<'a> {
    pub frames: &'a [Frame],
    pub extras: &'a Extras,
}

/// The model's window over the last `obs_len` frames of `frames`.
pub fn model_window(cfg: &ModelConfig, frames: &[Frame], extras: &Extras) -> Result<Window> {
    let t = cfg.obs_len;
    if frames.len() < t {
        return data(format!("{} observed frames, the model needs {t}", frames.len()));
    }
    let mut w = Window::from_frames(&frames[frames.len() - t..], &cfg.landmarks, &cfg.input_regions)?;
    w.extras = extras.clone();
    if let Some(a) = &extras.audio {
        if a.len() < t {
            return data(format!("{} audio frames, the model needs {t}", a.len()));
        }
        w.extras.audio = Some(a[a.len() - t..].to_vec());
    }
    Ok(w)
}

/// `template` moved to the 2D `pose`; depth, gaze, presence and quality are kept.
pub fn frame_from_pose(template: &Frame, pose: &[Point2], frame_index: usize) -> Frame {
    let mut f = template.clone();
    f.frame_index = frame_index;
    for p in Part::ALL {
        if let Some(points) = f.landmarks.part_mut(p) {
            for (q, xy) in points.iter_mut().zip(&pose[p.range()]) {
                q[0] = xy[0];
                q[1] = xy[1];
            }
        }
    }
    f
}

/// Predicts `total` frames `step` at a time, appending each chunk to the
/// observation and sliding the window forward before the next call.
pub fn rollout(
    model: &Model,
    obs: &[Observed],
    partner: Option<&[usize]>,
    total: usize,
    step: usize,
) -> Result<Vec<Prediction2D>> {
    let cfg = &model.config;
    if step == 0 || total == 0 || total % step != 0 {
        return Err(Error::Config(format!("rollout of {total} frames in steps of {step}")));
    }
    if step > cfg.train_horizon {
        return Err(Error::Config(format!(
            "rollout step {step} exceeds the trained horizon {}",
            cfg.train_horizon
        )));
    }
    if cfg.modalities.audio && step < total {
        return Err(Error::Unsupported(
            "an audio-fused model needs future audio and cannot be rolled out recurrently".into(),
        ));
    }
    let mut windows: Vec<Vec<Frame>> = Vec::with_capacity(obs.len());
    for o in obs {
        if o.frames.len() < cfg.obs_len {
            return data(format!("{} observed frames, the model needs {}", o.frames.len(), cfg.obs_len));
        }
        windows.push(o.frames[o.frames.len() - cfg.obs_len..].to_vec());
    }
    let masks: Vec<Vec<bool>> = windows.iter().map(|w| w.last().expect("non-empty").landmark_presence()).collect();
    let mut poses: Vec<Vec<Vec<Point2>>> = vec![Vec::with_capacity(total); obs.len()];
    while poses.first().map_or(0, Vec::len) < total {
        let mut inputs = Vec::with_capacity(obs.len());
        for (w, o) in windows.iter().zip(obs) {
            inputs.push(ModelInput::new(&model_window(cfg, w, o.extras)?, &model.normalizer)?);
        }
        let offsets = model.predict_offsets(&inputs.iter().collect::<Vec<_>>(), partner)?;
        for ((w, out), off) in windows.iter_mut().zip(&mut poses).zip(offsets) {
            let last = w.last().expect("non-empty").clone();
            let chunk = apply_offsets(&last.pose2d(), &off[..step])?;
            for (i, p) in chunk.iter().enumerate() {
                w.push(frame_from_pose(&last, p, last.frame_index + 1 + i));
            }
            w.drain(..step);
            out.extend(chunk);
        }
    }
    Ok(poses
        .into_iter()
        .zip(masks)
        .map(|(p, m)| PoseSequence::with_mask(p, &m))
        .collect())
}

/// Keeps the first `n` predicted frames and repeats frame `n` afterwards
/// (the last observed pose when `n = 0`).
pub fn freeze_after_n(pred: &Prediction2D, n: usize, last_obs: &[Point2]) -> Result<Prediction2D> {
    let h = pred.horizon();
    if n > h {
        return Err(Error::Config(format!("freeze after {n} frames of a {h}-frame prediction")));
    }
    if h == 0 {
        return Ok(pred.clone());
    }
    let (hold, valid) = if n == 0 {
        if last_obs.len() != pred.landmarks() {
            return data("last observed pose does not match the prediction");
        }
        (last_obs.to_vec(), pred.valid[0].clone())
    } else {
        (pred.poses[n - 1].clone(), pred.valid[n - 1].clone())
    };
    let mut out = pred.clone();
    for k in n..h {
        out.poses[k] = hold.clone();
        out.valid[k] = valid.clone();
    }
    Ok(out)
}
