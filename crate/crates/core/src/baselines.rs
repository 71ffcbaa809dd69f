//! Analytic forecasting baselines.
//!
//! Every baseline marks a landmark valid for the whole horizon iff its part is
//! present in the last observed frame; landmarks of absent parts repeat their
//! zero placeholder.

use serde::{Deserialize, Serialize};

use crate::error::{data, Error, Result};
use crate::skeleton::{Frame, Part, Point2, PoseSequence};

pub type Prediction2D = PoseSequence;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    ZeroVelocity,
    LinearProp,
    RtoMean,
    RtoMeanL,
}

impl Baseline {
    pub const ALL: [Baseline; 4] = [
        Baseline::ZeroVelocity,
        Baseline::LinearProp,
        Baseline::RtoMean,
        Baseline::RtoMeanL,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Baseline::ZeroVelocity => "zero-velocity",
            Baseline::LinearProp => "linear-prop",
            Baseline::RtoMean => "rto-mean",
            Baseline::RtoMeanL => "rto-mean-l",
        }
    }

    pub fn parse(s: &str) -> Result<Baseline> {
        Baseline::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown baseline `{s}`")))
    }

    pub fn predict(self, obs: &[Frame], horizon: usize) -> Result<Prediction2D> {
        match self {
            Baseline::ZeroVelocity => zero_velocity(obs, horizon),
            Baseline::LinearProp => linear_prop(obs, horizon),
            Baseline::RtoMean => rto_mean(obs, horizon, false),
            Baseline::RtoMeanL => rto_mean(obs, horizon, true),
        }
    }
}

fn last_frame(obs: &[Frame]) -> Result<&Frame> {
    obs.last().ok_or_else(|| Error::Data("empty observation window".into()))
}

/// Advances every landmark by its own per-frame velocity.
fn propagate(last: &Frame, velocity: &[Point2], horizon: usize) -> Prediction2D {
    let start = last.pose2d();
    let poses = (1..=horizon)
        .map(|k| {
            start
                .iter()
                .zip(velocity)
                .map(|(p, v)| [p[0] + k as f64 * v[0], p[1] + k as f64 * v[1]])
                .collect()
        })
        .collect();
    PoseSequence::with_mask(poses, &last.landmark_presence())
}

pub fn zero_velocity(obs: &[Frame], horizon: usize) -> Result<Prediction2D> {
    let last = last_frame(obs)?;
    let poses = vec![last.pose2d(); horizon];
    Ok(PoseSequence::with_mask(poses, &last.landmark_presence()))
}

fn part_mean(points: &[Point2]) -> Point2 {
    let n = points.len() as f64;
    let s = points.iter().fold([0.0, 0.0], |a, p| [a[0] + p[0], a[1] + p[1]]);
    [s[0] / n, s[1] / n]
}

/// Each part advances by the mean last-step velocity of its landmarks.
///
/// A part missing from either of the last two frames gets zero velocity.
pub fn linear_prop(obs: &[Frame], horizon: usize) -> Result<Prediction2D> {
    if obs.len() < 2 {
        return data(format!("linear propagation needs two observed frames, got {}", obs.len()));
    }
    let last = &obs[obs.len() - 1];
    let before = &obs[obs.len() - 2];
    let (now, then) = (last.pose2d(), before.pose2d());
    let mut velocity = vec![[0.0; 2]; now.len()];
    for p in Part::ALL {
        if !(last.present(p) && before.present(p)) {
            continue;
        }
        let steps: Vec<Point2> = p.range().map(|l| [now[l][0] - then[l][0], now[l][1] - then[l][1]]).collect();
        let v = part_mean(&steps);
        velocity[p.range()].fill(v);
    }
    Ok(propagate(last, &velocity, horizon))
}

/// Regression towards the observed mean pose, reached at frame `horizon`.
///
/// The mean averages only frames where the part is present. With
/// `per_landmark = false` the part translates rigidly by the difference of the
/// part centroids; otherwise every landmark heads to its own mean.
pub fn rto_mean(obs: &[Frame], horizon: usize, per_landmark: bool) -> Result<Prediction2D> {
    let last = last_frame(obs)?;
    if horizon == 0 {
        return Ok(PoseSequence::with_mask(Vec::new(), &last.landmark_presence()));
    }
    let now = last.pose2d();
    let mut velocity = vec![[0.0; 2]; now.len()];
    let h = horizon as f64;
    for p in Part::ALL {
        if !last.present(p) {
            continue;
        }
        let frames: Vec<Vec<Point2>> = obs.iter().filter(|f| f.present(p)).map(Frame::pose2d).collect();
        let n = frames.len() as f64;
        let mean: Vec<Point2> = p
            .range()
            .map(|l| {
                let s = frames.iter().fold([0.0, 0.0], |a, f| [a[0] + f[l][0], a[1] + f[l][1]]);
                [s[0] / n, s[1] / n]
            })
            .collect();
        if per_landmark {
            for (i, l) in p.range().enumerate() {
                velocity[l] = [(mean[i][0] - now[l][0]) / h, (mean[i][1] - now[l][1]) / h];
            }
        } else {
            let target = part_mean(&mean);
            let current = part_mean(&now[p.range()]);
            velocity[p.range()].fill([(target[0] - current[0]) / h, (target[1] - current[1]) / h]);
        }
    }
    Ok(propagate(last, &velocity, horizon))
}
