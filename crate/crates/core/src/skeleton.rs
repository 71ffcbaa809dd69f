//! Skeleton data, per-part roots, the per-frame feature vector and part masking.
//!
//! Landmarks are numbered 0..78 in part order: face (28), body (10), left hand
//! (20), right hand (20).
//!
//! Feature layout for `G` gaze vectors (496 values when `G = 2`):
//!
//! | range              | content                                            |
//! |--------------------|----------------------------------------------------|
//! | `0..234`           | landmark `l` minus its part root, xyz at `3l`       |
//! | `234..468`         | landmark `l` minus the same landmark one frame back |
//! | `468..484`         | per root (face, body, left, right): x, y, dx, dy    |
//! | `484..484 + 6G`    | per gaze vector: x, y, z, dx, dy, dz                |
//!
//! Parts that are absent leave their slots at zero.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{data, Error, Result};

pub const FACE_POINTS: usize = 28;
pub const BODY_POINTS: usize = 10;
pub const HAND_POINTS: usize = 20;
pub const NUM_LANDMARKS: usize = 78;
pub const NUM_ROOTS: usize = 4;
pub const DEFAULT_GAZE_VECTORS: usize = 2;

pub const REL_OFFSET: usize = 0;
pub const MOTION_OFFSET: usize = 3 * NUM_LANDMARKS;
pub const ROOT_OFFSET: usize = 6 * NUM_LANDMARKS;
pub const GAZE_OFFSET: usize = ROOT_OFFSET + 4 * NUM_ROOTS;

pub type Point3 = [f64; 3];
pub type Point2 = [f64; 2];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Part {
    Face,
    Body,
    LeftHand,
    RightHand,
}

impl Part {
    pub const ALL: [Part; 4] = [Part::Face, Part::Body, Part::LeftHand, Part::RightHand];

    pub fn len(self) -> usize {
        match self {
            Part::Face => FACE_POINTS,
            Part::Body => BODY_POINTS,
            Part::LeftHand | Part::RightHand => HAND_POINTS,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Landmark indices of this part.
    pub fn range(self) -> Range<usize> {
        let start = match self {
            Part::Face => 0,
            Part::Body => FACE_POINTS,
            Part::LeftHand => FACE_POINTS + BODY_POINTS,
            Part::RightHand => FACE_POINTS + BODY_POINTS + HAND_POINTS,
        };
        start..start + self.len()
    }

    pub fn of_landmark(l: usize) -> Part {
        match l {
            0..=27 => Part::Face,
            28..=37 => Part::Body,
            38..=57 => Part::LeftHand,
            _ => Part::RightHand,
        }
    }

    pub fn region(self) -> Region {
        match self {
            Part::Face => Region::Face,
            Part::Body => Region::Body,
            Part::LeftHand | Part::RightHand => Region::Hands,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Part::Face => "face",
            Part::Body => "body",
            Part::LeftHand => "left_hand",
            Part::RightHand => "right_hand",
        }
    }
}

/// Face, body, or both hands: the granularity of masking and per-part metrics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Face,
    Body,
    Hands,
}

impl Region {
    pub const ALL: [Region; 3] = [Region::Face, Region::Body, Region::Hands];

    pub fn parts(self) -> &'static [Part] {
        match self {
            Region::Face => &[Part::Face],
            Region::Body => &[Part::Body],
            Region::Hands => &[Part::LeftHand, Part::RightHand],
        }
    }

    pub fn contains(self, landmark: usize) -> bool {
        Part::of_landmark(landmark).region() == self
    }

    pub fn name(self) -> &'static str {
        match self {
            Region::Face => "face",
            Region::Body => "body",
            Region::Hands => "hands",
        }
    }

    pub fn parse(s: &str) -> Result<Region> {
        match s {
            "face" => Ok(Region::Face),
            "body" => Ok(Region::Body),
            "hands" => Ok(Region::Hands),
            other => Err(Error::Config(format!("unknown body region `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet {
    pub face: Option<Vec<Point3>>,
    pub body: Option<Vec<Point3>>,
    pub left_hand: Option<Vec<Point3>>,
    pub right_hand: Option<Vec<Point3>>,
    pub gaze: Option<Vec<Point3>>,
}

impl LandmarkSet {
    pub fn part(&self, p: Part) -> Option<&[Point3]> {
        match p {
            Part::Face => self.face.as_deref(),
            Part::Body => self.body.as_deref(),
            Part::LeftHand => self.left_hand.as_deref(),
            Part::RightHand => self.right_hand.as_deref(),
        }
    }

    pub fn part_mut(&mut self, p: Part) -> &mut Option<Vec<Point3>> {
        match p {
            Part::Face => &mut self.face,
            Part::Body => &mut self.body,
            Part::LeftHand => &mut self.left_hand,
            Part::RightHand => &mut self.right_hand,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for p in Part::ALL {
            if let Some(points) = self.part(p) {
                if points.len() != p.len() {
                    return data(format!("{} has {} points, expected {}", p.name(), points.len(), p.len()));
                }
                if points.iter().flatten().any(|v| !v.is_finite()) {
                    return data(format!("{} has non-finite coordinates", p.name()));
                }
            }
        }
        if let Some(g) = &self.gaze {
            if g.iter().flatten().any(|v| !v.is_finite()) {
                return data("gaze has non-finite components");
            }
        }
        Ok(())
    }
}

/// Per-part annotation quality; only meaningful for present parts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quality {
    pub face: bool,
    pub body: bool,
    pub left_hand: bool,
    pub right_hand: bool,
}

impl Quality {
    pub fn all(value: bool) -> Self {
        Self {
            face: value,
            body: value,
            left_hand: value,
            right_hand: value,
        }
    }

    pub fn get(&self, p: Part) -> bool {
        match p {
            Part::Face => self.face,
            Part::Body => self.body,
            Part::LeftHand => self.left_hand,
            Part::RightHand => self.right_hand,
        }
    }

    pub fn set(&mut self, p: Part, value: bool) {
        match p {
            Part::Face => self.face = value,
            Part::Body => self.body = value,
            Part::LeftHand => self.left_hand = value,
            Part::RightHand => self.right_hand = value,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub frame_index: usize,
    pub landmarks: LandmarkSet,
    pub quality: Quality,
}

impl Frame {
    pub fn present(&self, p: Part) -> bool {
        self.landmarks.part(p).is_some()
    }

    /// Present and correctly annotated.
    pub fn valid(&self, p: Part) -> bool {
        self.present(p) && self.quality.get(p)
    }

    pub fn presence(&self) -> [bool; NUM_ROOTS] {
        Part::ALL.map(|p| self.present(p))
    }

    /// 2D image coordinates of all 78 landmarks; absent parts read as zero.
    pub fn pose2d(&self) -> Vec<Point2> {
        let mut out = vec![[0.0; 2]; NUM_LANDMARKS];
        for p in Part::ALL {
            if let Some(points) = self.landmarks.part(p) {
                for (o, q) in out[p.range()].iter_mut().zip(points) {
                    *o = [q[0], q[1]];
                }
            }
        }
        out
    }

    pub fn landmark_presence(&self) -> Vec<bool> {
        (0..NUM_LANDMARKS).map(|l| self.present(Part::of_landmark(l))).collect()
    }

    pub fn landmark_validity(&self) -> Vec<bool> {
        (0..NUM_LANDMARKS).map(|l| self.valid(Part::of_landmark(l))).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.landmarks.validate()?;
        for p in Part::ALL {
            if self.quality.get(p) && !self.present(p) {
                return data(format!(
                    "frame {}: quality flag set for absent {}",
                    self.frame_index,
                    p.name()
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkeletonSequence {
    pub session_id: String,
    pub participant_id: String,
    pub frames: Vec<Frame>,
}

impl SkeletonSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return data(format!("{}/{} has no frames", self.session_id, self.participant_id));
        }
        for w in self.frames.windows(2) {
            if w[1].frame_index != w[0].frame_index + 1 {
                return data(format!(
                    "{}/{}: frame {} follows {}",
                    self.session_id, self.participant_id, w[1].frame_index, w[0].frame_index
                ));
            }
        }
        for f in &self.frames {
            f.validate()?;
        }
        Ok(())
    }
}

/// Which landmarks anchor each part, and how many gaze vectors a frame carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LandmarkConfig {
    pub eye_centers: [usize; 2],
    pub chest: usize,
    pub knuckle: usize,
    pub gaze_vectors: usize,
}

impl Default for LandmarkConfig {
    fn default() -> Self {
        Self {
            eye_centers: [0, 1],
            chest: 0,
            knuckle: 0,
            gaze_vectors: DEFAULT_GAZE_VECTORS,
        }
    }
}

impl LandmarkConfig {
    pub fn feature_len(&self) -> usize {
        GAZE_OFFSET + 6 * self.gaze_vectors
    }

    pub fn validate(&self) -> Result<()> {
        if self.eye_centers.iter().any(|&i| i >= FACE_POINTS) || self.chest >= BODY_POINTS || self.knuckle >= HAND_POINTS {
            return Err(Error::Config("root landmark index out of range".into()));
        }
        Ok(())
    }

    /// Root of a part as a linear combination of its own landmarks: (local index, weight).
    pub fn root_weights(&self, p: Part) -> Vec<(usize, f64)> {
        match p {
            Part::Face => vec![(self.eye_centers[0], 0.5), (self.eye_centers[1], 0.5)],
            Part::Body => vec![(self.chest, 1.0)],
            Part::LeftHand | Part::RightHand => vec![(self.knuckle, 1.0)],
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RootSet {
    pub roots: [Option<Point3>; NUM_ROOTS],
}

impl RootSet {
    pub fn get(&self, p: Part) -> Option<Point3> {
        self.roots[p.index()]
    }
}

pub fn compute_roots(frame: &Frame, cfg: &LandmarkConfig) -> RootSet {
    let mut roots = [None; NUM_ROOTS];
    for p in Part::ALL {
        if let Some(points) = frame.landmarks.part(p) {
            let mut r = [0.0; 3];
            for (i, w) in cfg.root_weights(p) {
                for d in 0..3 {
                    r[d] += w * points[i][d];
                }
            }
            roots[p.index()] = Some(r);
        }
    }
    RootSet { roots }
}

/// Feature vector of `frame`; offsets are taken against `prev` when given.
pub fn to_features(frame: &Frame, prev: Option<&Frame>, roots: &RootSet, cfg: &LandmarkConfig) -> Vec<f64> {
    let mut fv = vec![0.0; cfg.feature_len()];
    let prev_roots = prev.map(|f| compute_roots(f, cfg));
    for p in Part::ALL {
        let (Some(points), Some(root)) = (frame.landmarks.part(p), roots.get(p)) else {
            continue;
        };
        let before = prev.and_then(|f| f.landmarks.part(p));
        for (i, q) in points.iter().enumerate() {
            let l = p.range().start + i;
            for d in 0..3 {
                fv[REL_OFFSET + 3 * l + d] = q[d] - root[d];
                if let Some(b) = before {
                    fv[MOTION_OFFSET + 3 * l + d] = q[d] - b[i][d];
                }
            }
        }
        let r = ROOT_OFFSET + 4 * p.index();
        fv[r] = root[0];
        fv[r + 1] = root[1];
        if let Some(pr) = prev_roots.and_then(|rs| rs.get(p)) {
            fv[r + 2] = root[0] - pr[0];
            fv[r + 3] = root[1] - pr[1];
        }
    }
    if let Some(gaze) = &frame.landmarks.gaze {
        let before = prev.and_then(|f| f.landmarks.gaze.as_ref());
        for (i, v) in gaze.iter().take(cfg.gaze_vectors).enumerate() {
            let s = GAZE_OFFSET + 6 * i;
            fv[s..s + 3].copy_from_slice(v);
            if let Some(b) = before.and_then(|b| b.get(i)) {
                for d in 0..3 {
                    fv[s + 3 + d] = v[d] - b[d];
                }
            }
        }
    }
    fv
}

/// Features of consecutive frames; the first frame has zero offsets.
pub fn window_features(frames: &[Frame], cfg: &LandmarkConfig) -> Vec<Vec<f64>> {
    frames
        .iter()
        .enumerate()
        .map(|(t, f)| {
            let prev = if t == 0 { None } else { Some(&frames[t - 1]) };
            to_features(f, prev, &compute_roots(f, cfg), cfg)
        })
        .collect()
}

/// Global 2D landmark positions read back from a feature vector (relative + root).
pub fn global_positions(fv: &[f64]) -> Vec<Point2> {
    (0..NUM_LANDMARKS)
        .map(|l| {
            let r = ROOT_OFFSET + 4 * Part::of_landmark(l).index();
            [fv[3 * l] + fv[r], fv[3 * l + 1] + fv[r + 1]]
        })
        .collect()
}

/// Feature slots owned by a region: its landmarks' coordinates and offsets plus its roots.
pub fn region_slots(region: Region) -> Vec<usize> {
    let mut slots = Vec::new();
    for p in region.parts() {
        for l in p.range() {
            slots.extend(REL_OFFSET + 3 * l..REL_OFFSET + 3 * l + 3);
            slots.extend(MOTION_OFFSET + 3 * l..MOTION_OFFSET + 3 * l + 3);
        }
        let r = ROOT_OFFSET + 4 * p.index();
        slots.extend(r..r + 4);
    }
    slots
}

pub fn mask_part(fv: &[f64], region: Region) -> Vec<f64> {
    let mut out = fv.to_vec();
    for s in region_slots(region) {
        out[s] = 0.0;
    }
    out
}

/// `pose(k) = last + sum_{j<=k} offsets(j)`.
pub fn apply_offsets(last: &[Point2], offsets: &[Vec<Point2>]) -> Result<Vec<Vec<Point2>>> {
    if offsets.is_empty() {
        return data("apply_offsets needs at least one frame of offsets");
    }
    let mut cur = last.to_vec();
    let mut out = Vec::with_capacity(offsets.len());
    for (k, step) in offsets.iter().enumerate() {
        if step.len() != last.len() {
            return data(format!("offset frame {k} has {} landmarks, expected {}", step.len(), last.len()));
        }
        for (c, o) in cur.iter_mut().zip(step) {
            c[0] += o[0];
            c[1] += o[1];
        }
        out.push(cur.clone());
    }
    Ok(out)
}

/// Frame-to-frame differences of `poses`, the first taken against `last`.
pub fn offsets_of(last: &[Point2], poses: &[Vec<Point2>]) -> Vec<Vec<Point2>> {
    let mut prev = last;
    poses
        .iter()
        .map(|p| {
            let o = p.iter().zip(prev).map(|(a, b)| [a[0] - b[0], a[1] - b[1]]).collect();
            prev = p;
            o
        })
        .collect()
}

/// A sequence of 2D poses with per-frame, per-landmark validity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseSequence {
    pub poses: Vec<Vec<Point2>>,
    pub valid: Vec<Vec<bool>>,
}

impl PoseSequence {
    pub fn horizon(&self) -> usize {
        self.poses.len()
    }

    pub fn landmarks(&self) -> usize {
        self.poses.first().map_or(0, Vec::len)
    }

    /// Ground truth from future frames: valid where the part is present and well annotated.
    pub fn from_frames(frames: &[Frame]) -> Self {
        Self {
            poses: frames.iter().map(Frame::pose2d).collect(),
            valid: frames.iter().map(Frame::landmark_validity).collect(),
        }
    }

    /// Poses that all share one validity row.
    pub fn with_mask(poses: Vec<Vec<Point2>>, mask: &[bool]) -> Self {
        let valid = vec![mask.to_vec(); poses.len()];
        Self { poses, valid }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.landmarks();
        if self.valid.len() != self.poses.len()
            || self.poses.iter().any(|p| p.len() != n)
            || self.valid.iter().any(|v| v.len() != n)
        {
            return data("pose sequence has ragged frames");
        }
        Ok(())
    }
}
