use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::rollout::{freeze_after_n, rollout, Observed};
use super::segment::{Segment, Source};
use crate::baselines::{Baseline, Prediction2D};
use crate::error::{data, Error, Result};
use crate::metrics::{MetricSums, MetricsReport};
use crate::models::Model;
use crate::skeleton::PoseSequence;

/// Units handed to one predictor call.
const CHUNK: usize = 32;

pub trait Predictor: Sync {
    fn name(&self) -> String;

    /// Needs both members of a dyad in the same call.
    fn is_dyadic(&self) -> bool {
        false
    }

    /// One prediction of `horizon` frames per observation; `partner[i]`
    /// indexes the interlocutor of observation `i` for dyadic predictors.
    fn predict(&self, obs: &[Observed], partner: Option<&[usize]>, horizon: usize) -> Result<Vec<Prediction2D>>;
}

impl Predictor for Baseline {
    fn name(&self) -> String {
        Baseline::name(*self).to_string()
    }

    fn predict(&self, obs: &[Observed], _partner: Option<&[usize]>, horizon: usize) -> Result<Vec<Prediction2D>> {
        obs.iter().map(|o| Baseline::predict(*self, o.frames, horizon)).collect()
    }
}

/// A trained model run through [`rollout`] in chunks of `step` frames.
#[derive(Clone, Debug)]
pub struct ModelPredictor {
    pub model: Model,
    pub step: usize,
    pub label: String,
}

impl ModelPredictor {
    /// Short-term models roll out by their trained horizon.
    pub fn new(model: Model, label: impl Into<String>) -> Self {
        let step = model.config.train_horizon;
        Self {
            model,
            step,
            label: label.into(),
        }
    }
}

impl Predictor for ModelPredictor {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn is_dyadic(&self) -> bool {
        self.model.config.fusion.is_dyadic()
    }

    fn predict(&self, obs: &[Observed], partner: Option<&[usize]>, horizon: usize) -> Result<Vec<Prediction2D>> {
        rollout(&self.model, obs, partner, horizon, self.step.min(horizon))
    }
}

/// Predictions for every segment, fanned out over threads.
pub fn predict_segments(p: &dyn Predictor, segments: &[Segment], source: Source) -> Result<Vec<Prediction2D>> {
    let horizon = common_horizon(segments)?;
    let units: Vec<Vec<usize>> = if p.is_dyadic() {
        let mut u = Vec::new();
        for (i, s) in segments.iter().enumerate() {
            match s.partner {
                Some(j) if j > i => u.push(vec![i, j]),
                Some(_) => {}
                None => return data(format!("{}/{} has no partner segment", s.session_id, s.participant_id)),
            }
        }
        u
    } else {
        (0..segments.len()).map(|i| vec![i]).collect()
    };
    let observations: Vec<Vec<_>> = segments.par_iter().map(|s| s.observation(source)).collect();
    let chunks: Vec<Vec<(usize, Prediction2D)>> = units
        .par_chunks(CHUNK)
        .map(|chunk| {
            let idx: Vec<usize> = chunk.iter().flatten().copied().collect();
            let obs: Vec<Observed> = idx
                .iter()
                .map(|&i| Observed {
                    frames: &observations[i],
                    extras: &segments[i].extras,
                })
                .collect();
            let partner: Vec<usize> = (0..idx.len()).map(|k| if p.is_dyadic() { k ^ 1 } else { k }).collect();
            let preds = p.predict(&obs, Some(&partner), horizon)?;
            if preds.len() != idx.len() {
                return data(format!("{} returned {} predictions for {} inputs", p.name(), preds.len(), idx.len()));
            }
            Ok(idx.into_iter().zip(preds).collect())
        })
        .collect::<Result<_>>()?;
    let mut out: Vec<Option<Prediction2D>> = vec![None; segments.len()];
    for (i, pred) in chunks.into_iter().flatten() {
        out[i] = Some(pred);
    }
    Ok(out.into_iter().map(|p| p.expect("every segment predicted")).collect())
}

fn common_horizon(segments: &[Segment]) -> Result<usize> {
    let first = segments.first().ok_or_else(|| Error::NoData("no segments to evaluate".into()))?;
    let h = first.future.len();
    if segments.iter().any(|s| s.future.len() != h) {
        return data("segments have different prediction lengths");
    }
    Ok(h)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    pub session_id: String,
    pub participant_id: String,
    pub start: usize,
    pub report: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub name: String,
    pub report: MetricsReport,
    pub sums: MetricSums,
    pub segments: Vec<SegmentReport>,
}

/// Metrics of `preds` against the segments' ground truth, optionally frozen
/// after `freeze` frames.
pub fn score(name: &str, segments: &[Segment], preds: &[Prediction2D], freeze: Option<usize>) -> Result<Evaluation> {
    let horizon = common_horizon(segments)?;
    if preds.len() != segments.len() {
        return data(format!("{} predictions for {} segments", preds.len(), segments.len()));
    }
    let mut sums = MetricSums::new(horizon);
    let mut per = Vec::with_capacity(segments.len());
    for (s, p) in segments.iter().zip(preds) {
        let last = s.last_obs().pose2d();
        let p = match freeze {
            Some(n) => freeze_after_n(p, n, &last)?,
            None => p.clone(),
        };
        let gt = PoseSequence::from_frames(&s.future);
        let mut one = MetricSums::new(horizon);
        one.add(&p, &gt, &last)?;
        sums.merge(&one)?;
        per.push(SegmentReport {
            session_id: s.session_id.clone(),
            participant_id: s.participant_id.clone(),
            start: s.start,
            report: one.report(),
        });
    }
    Ok(Evaluation {
        name: name.to_string(),
        report: sums.report(),
        sums,
        segments: per,
    })
}

/// Runs `p` on every segment and scores it. In noisy mode the observations
/// come from the raw annotations, except for the last observed frame.
pub fn evaluate(p: &dyn Predictor, segments: &[Segment], noisy: bool) -> Result<Evaluation> {
    let source = if noisy { Source::Noisy } else { Source::Clean };
    let preds = predict_segments(p, segments, source)?;
    score(&p.name(), segments, &preds, None)
}
