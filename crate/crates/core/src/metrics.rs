//! Masked forecasting metrics.
//!
//! Frames are numbered from 1. An error pair `(k, l)` counts when both the
//! ground truth and the prediction mark landmark `l` valid at frame `k`.
//! Divergence measures motion inside the prediction alone: frame 1 is compared
//! with the last observed pose, frame `k > 1` with frame `k - 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{Point2, PoseSequence, Region};

/// Inclusive 1-based frame interval.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameRange {
    pub first: usize,
    pub last: usize,
}

impl FrameRange {
    pub const fn new(first: usize, last: usize) -> Self {
        Self { first, last }
    }

    pub const fn full(horizon: usize) -> Self {
        Self::new(1, horizon)
    }

    /// Clipped to `horizon`; `None` when nothing is left.
    pub fn within(self, horizon: usize) -> Option<FrameRange> {
        let last = self.last.min(horizon);
        (self.first >= 1 && self.first <= last).then_some(FrameRange::new(self.first, last))
    }

    fn check(self, horizon: usize) -> Result<()> {
        if self.first == 0 || self.first > self.last || self.last > horizon {
            return Err(Error::Config(format!(
                "frame range {}..={} outside horizon {horizon}",
                self.first, self.last
            )));
        }
        Ok(())
    }
}

pub const SHORT_TERM: FrameRange = FrameRange::new(1, 10);
pub const MID_TERM: FrameRange = FrameRange::new(11, 25);
pub const LONG_TERM: FrameRange = FrameRange::new(26, 50);

fn dist(a: Point2, b: Point2) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn check_shapes(pred: &PoseSequence, gt: &PoseSequence) -> Result<()> {
    pred.validate()?;
    gt.validate()?;
    if pred.horizon() != gt.horizon() || pred.landmarks() != gt.landmarks() {
        return Err(Error::Data(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.horizon(),
            pred.landmarks(),
            gt.horizon(),
            gt.landmarks()
        )));
    }
    Ok(())
}

/// Mean L2 error over valid pairs in `range` for landmarks accepted by `select`.
pub fn mpjpe_where(
    pred: &PoseSequence,
    gt: &PoseSequence,
    range: FrameRange,
    select: impl Fn(usize) -> bool,
) -> Result<f64> {
    check_shapes(pred, gt)?;
    range.check(pred.horizon())?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for k in range.first - 1..range.last {
        for l in 0..pred.landmarks() {
            if select(l) && gt.valid[k][l] && pred.valid[k][l] {
                sum += dist(pred.poses[k][l], gt.poses[k][l]);
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::NoData(format!("mpjpe over frames {}..={}", range.first, range.last)));
    }
    Ok(sum / n as f64)
}

pub fn mpjpe(pred: &PoseSequence, gt: &PoseSequence, range: FrameRange) -> Result<f64> {
    mpjpe_where(pred, gt, range, |_| true)
}

/// Error at the final predicted frame.
pub fn fde(pred: &PoseSequence, gt: &PoseSequence) -> Result<f64> {
    let h = pred.horizon();
    mpjpe(pred, gt, FrameRange::new(h, h))
}

pub fn divergence_where(
    pred: &PoseSequence,
    last_obs: &[Point2],
    range: FrameRange,
    select: impl Fn(usize) -> bool,
) -> Result<f64> {
    pred.validate()?;
    range.check(pred.horizon())?;
    if last_obs.len() != pred.landmarks() {
        return Err(Error::Data("last observed pose has the wrong landmark count".into()));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for k in range.first - 1..range.last {
        for l in 0..pred.landmarks() {
            let prev_ok = k == 0 || pred.valid[k - 1][l];
            if select(l) && pred.valid[k][l] && prev_ok {
                let before = if k == 0 { last_obs[l] } else { pred.poses[k - 1][l] };
                sum += dist(pred.poses[k][l], before);
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::NoData(format!("divergence over frames {}..={}", range.first, range.last)));
    }
    Ok(sum / n as f64)
}

pub fn divergence(pred: &PoseSequence, last_obs: &[Point2], range: FrameRange) -> Result<f64> {
    divergence_where(pred, last_obs, range, |_| true)
}

/// The nine metric values; `None` where no valid pair exists.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    pub mpjpe: Option<f64>,
    pub st: Option<f64>,
    pub mt: Option<f64>,
    pub lt: Option<f64>,
    pub fde: Option<f64>,
    pub div: Option<f64>,
    pub div_st: Option<f64>,
    pub div_mt: Option<f64>,
    pub div_lt: Option<f64>,
}

impl MetricValues {
    pub const NAMES: [&'static str; 9] = ["mpjpe", "st", "mt", "lt", "fde", "div", "div_st", "div_mt", "div_lt"];

    pub fn values(&self) -> [Option<f64>; 9] {
        [
            self.mpjpe,
            self.st,
            self.mt,
            self.lt,
            self.fde,
            self.div,
            self.div_st,
            self.div_mt,
            self.div_lt,
        ]
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub all: MetricValues,
    pub face: MetricValues,
    pub body: MetricValues,
    pub hands: MetricValues,
    /// Valid (frame, landmark) pairs behind `all.mpjpe`.
    pub error_pairs: u64,
    /// Valid (frame, landmark) pairs behind `all.div`.
    pub divergence_pairs: u64,
}

impl MetricsReport {
    pub fn region(&self, r: Region) -> &MetricValues {
        match r {
            Region::Face => &self.face,
            Region::Body => &self.body,
            Region::Hands => &self.hands,
        }
    }

    pub fn csv_header() -> String {
        let mut cols = vec!["model".to_string()];
        cols.extend(MetricValues::NAMES.iter().map(|s| s.to_string()));
        for r in Region::ALL {
            cols.extend(MetricValues::NAMES.iter().map(|s| format!("{s}_{}", r.name())));
        }
        cols.join(",")
    }

    pub fn csv_row(&self, model: &str) -> String {
        let mut cells = vec![model.to_string()];
        for v in [&self.all, &self.face, &self.body, &self.hands] {
            cells.extend(v.values().iter().map(|x| x.map(|x| x.to_string()).unwrap_or_default()));
        }
        cells.join(",")
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
struct Sum {
    total: f64,
    count: u64,
}

impl Sum {
    fn add(&mut self, x: f64) {
        self.total += x;
        self.count += 1;
    }
}

/// Per-frame, per-region sums from which reports over any set of segments
/// are formed; aggregation therefore weights segments by their valid counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSums {
    horizon: usize,
    err: Vec<[Sum; 3]>,
    div: Vec<[Sum; 3]>,
}

fn region_slot(landmark: usize) -> usize {
    match crate::skeleton::Part::of_landmark(landmark).region() {
        Region::Face => 0,
        Region::Body => 1,
        Region::Hands => 2,
    }
}

impl MetricSums {
    pub fn new(horizon: usize) -> Self {
        Self {
            horizon,
            err: vec![[Sum::default(); 3]; horizon],
            div: vec![[Sum::default(); 3]; horizon],
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Adds one predicted sequence of the full 78-landmark skeleton.
    pub fn add(&mut self, pred: &PoseSequence, gt: &PoseSequence, last_obs: &[Point2]) -> Result<()> {
        check_shapes(pred, gt)?;
        if pred.horizon() != self.horizon || last_obs.len() != pred.landmarks() {
            return Err(Error::Data(format!(
                "segment horizon {} does not match accumulator horizon {}",
                pred.horizon(),
                self.horizon
            )));
        }
        for k in 0..self.horizon {
            for l in 0..pred.landmarks() {
                let r = region_slot(l);
                if pred.valid[k][l] && gt.valid[k][l] {
                    self.err[k][r].add(dist(pred.poses[k][l], gt.poses[k][l]));
                }
                if pred.valid[k][l] && (k == 0 || pred.valid[k - 1][l]) {
                    let before = if k == 0 { last_obs[l] } else { pred.poses[k - 1][l] };
                    self.div[k][r].add(dist(pred.poses[k][l], before));
                }
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &MetricSums) -> Result<()> {
        if other.horizon != self.horizon {
            return Err(Error::Data("cannot merge metric sums of different horizons".into()));
        }
        for (a, b) in self.err.iter_mut().zip(&other.err).chain(self.div.iter_mut().zip(&other.div)) {
            for r in 0..3 {
                a[r].total += b[r].total;
                a[r].count += b[r].count;
            }
        }
        Ok(())
    }

    fn mean(rows: &[[Sum; 3]], range: FrameRange, regions: &[usize]) -> Option<f64> {
        let range = range.within(rows.len())?;
        let mut s = Sum::default();
        for row in &rows[range.first - 1..range.last] {
            for &r in regions {
                s.total += row[r].total;
                s.count += row[r].count;
            }
        }
        (s.count > 0).then(|| s.total / s.count as f64)
    }

    fn values(&self, regions: &[usize]) -> MetricValues {
        let h = self.horizon;
        let full = FrameRange::full(h);
        MetricValues {
            mpjpe: Self::mean(&self.err, full, regions),
            st: Self::mean(&self.err, SHORT_TERM, regions),
            mt: Self::mean(&self.err, MID_TERM, regions),
            lt: Self::mean(&self.err, LONG_TERM, regions),
            fde: Self::mean(&self.err, FrameRange::new(h, h), regions),
            div: Self::mean(&self.div, full, regions),
            div_st: Self::mean(&self.div, SHORT_TERM, regions),
            div_mt: Self::mean(&self.div, MID_TERM, regions),
            div_lt: Self::mean(&self.div, LONG_TERM, regions),
        }
    }

    pub fn report(&self) -> MetricsReport {
        let count = |rows: &[[Sum; 3]]| rows.iter().flatten().map(|s| s.count).sum();
        MetricsReport {
            all: self.values(&[0, 1, 2]),
            face: self.values(&[0]),
            body: self.values(&[1]),
            hands: self.values(&[2]),
            error_pairs: count(&self.err),
            divergence_pairs: count(&self.div),
        }
    }
}

/// All metrics of one prediction, overall and per region.
pub fn report(pred: &PoseSequence, gt: &PoseSequence, last_obs: &[Point2]) -> Result<MetricsReport> {
    let mut sums = MetricSums::new(pred.horizon());
    sums.add(pred, gt, last_obs)?;
    Ok(sums.report())
}
