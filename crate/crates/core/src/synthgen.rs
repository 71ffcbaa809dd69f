//! Deterministic synthetic dyadic sessions.
//!
//! Each participant follows a script of timed motion primitives that tiles the
//! session. Two seated skeletons face the camera in a 1280x720 image plane.
//! Anchor coordinates are multiples of 1/8 px and drift velocities are
//! multiples of 1/4 px/frame, so constant-velocity motion is exactly
//! representable and linear extrapolation of it is exact.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, data, Error, Result};
use crate::fusion::{MetadataRecord, ModalityFeatures, SessionMetadata, AUDIO_DIM, TRANSCRIPT_BLOCK, TRANSCRIPT_DIM};
use crate::io::{sha256_file, write_jsonl};
use crate::pipeline::{jitter_hands, metadata_path, modality_path, noisy_path, split_path, OBS_LEN, PRED_LEN};
use crate::skeleton::{Frame, LandmarkSet, Part, Point3, Quality, SkeletonSequence, NUM_LANDMARKS};

pub const IMAGE_WIDTH: f64 = 1280.0;
pub const IMAGE_HEIGHT: f64 = 720.0;
/// Default delay between a gesture of the first participant and the nod of the second.
pub const NOD_LAG: usize = 10;
pub const NOISE_RADIUS: f64 = 6.0;
pub const NOISE_FRACTION: f64 = 0.10;
pub const PARTICIPANTS: [&str; 2] = ["p0", "p1"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Static,
    ConstantVelocity,
    Conversational,
    /// Conversational sessions plus a copy with jittered hands.
    Noisy,
    CoupledNod,
}

impl Preset {
    pub const ALL: [Preset; 5] = [
        Preset::Static,
        Preset::ConstantVelocity,
        Preset::Conversational,
        Preset::Noisy,
        Preset::CoupledNod,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Static => "static",
            Preset::ConstantVelocity => "constant_velocity",
            Preset::Conversational => "conversational",
            Preset::Noisy => "noisy",
            Preset::CoupledNod => "coupled_nod",
        }
    }

    pub fn parse(s: &str) -> Result<Preset> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s || p.name().replace('_', "-") == s)
            .ok_or_else(|| Error::Config(format!("unknown preset `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Primitive {
    Hold,
    /// Parts translate at a constant velocity; the displacement persists.
    Drift { parts: Vec<Part>, velocity: [f64; 2] },
    /// Horizontal head and torso sway over whole periods.
    Sway { amplitude: f64, period: usize },
    /// A hand rises and returns.
    Gesture { part: Part, magnitude: f64 },
    /// The head dips and returns.
    Nod { amplitude: f64 },
    /// A hand leaves the image.
    HandOut { part: Part },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timed {
    pub start: usize,
    pub len: usize,
    pub primitive: Primitive,
}

impl Timed {
    fn end(&self) -> usize {
        self.start + self.len
    }
}

/// One timeline per participant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionScript {
    pub participants: [Vec<Timed>; 2],
}

impl MotionScript {
    pub fn validate(&self, length: usize) -> Result<()> {
        for (i, line) in self.participants.iter().enumerate() {
            let mut t = 0;
            for p in line {
                if p.start != t || p.len == 0 {
                    return data(format!("participant {i}: primitive at {} does not continue from {t}", p.start));
                }
                let finite = match &p.primitive {
                    Primitive::Drift { velocity, .. } => velocity.iter().all(|v| v.is_finite()),
                    Primitive::Sway { amplitude, period } => amplitude.is_finite() && *period > 0,
                    Primitive::Gesture { magnitude, .. } => magnitude.is_finite(),
                    Primitive::Nod { amplitude } => amplitude.is_finite(),
                    Primitive::Hold | Primitive::HandOut { .. } => true,
                };
                if !finite {
                    return data(format!("participant {i}: invalid primitive at {}", p.start));
                }
                t = p.end();
            }
            if t != length {
                return data(format!("participant {i}: script covers {t} of {length} frames"));
            }
        }
        Ok(())
    }

    /// Gesture onsets of `participant`.
    pub fn gesture_onsets(&self, participant: usize) -> Vec<usize> {
        self.participants[participant]
            .iter()
            .filter(|p| matches!(p.primitive, Primitive::Gesture { .. }))
            .map(|p| p.start)
            .collect()
    }

    pub fn nod_onsets(&self, participant: usize) -> Vec<usize> {
        self.participants[participant]
            .iter()
            .filter(|p| matches!(p.primitive, Primitive::Nod { .. }))
            .map(|p| p.start)
            .collect()
    }
}

fn snap(x: f64) -> f64 {
    (x * 8.0).round() / 8.0
}

/// Rest pose of participant `i`.
pub fn rest_pose(participant: usize) -> Vec<Point3> {
    let cx = if participant == 0 { 400.0 } else { 880.0 };
    let mut pose = Vec::with_capacity(NUM_LANDMARKS);
    let (hx, hy) = (cx, 200.0);
    // eye centres first, they anchor the face
    pose.push([hx - 18.0, hy - 10.0, 0.0]);
    pose.push([hx + 18.0, hy - 10.0, 0.0]);
    for i in 0..26 {
        let a = std::f64::consts::TAU * i as f64 / 26.0;
        pose.push([snap(hx + 42.0 * a.cos()), snap(hy + 52.0 * a.sin()), snap(0.1 * a.sin())]);
    }
    let body = [
        (0.0, 380.0),
        (0.0, 280.0),
        (-90.0, 320.0),
        (90.0, 320.0),
        (-120.0, 430.0),
        (120.0, 430.0),
        (-100.0, 520.0),
        (100.0, 520.0),
        (-50.0, 560.0),
        (50.0, 560.0),
    ];
    for (dx, y) in body {
        pose.push([cx + dx, y, 0.0]);
    }
    for side in [-1.0, 1.0] {
        let (kx, ky) = (cx + side * 90.0, 540.0);
        pose.push([kx, ky, 0.0]);
        for i in 1..20 {
            let finger = ((i - 1) / 4) as f64;
            let joint = ((i - 1) % 4) as f64 + 1.0;
            pose.push([snap(kx + side * (finger - 2.0) * 7.0), snap(ky + joint * 6.0), snap(-0.01 * joint)]);
        }
    }
    pose
}

fn face_and_body() -> Vec<Part> {
    vec![Part::Face, Part::Body]
}

/// Landmark displacement of one primitive `tau` frames after its start.
fn displacement(p: &Timed, tau: f64, part: Part) -> [f64; 2] {
    let phase = |period: f64| (std::f64::consts::TAU * tau / period).sin();
    let bump = (std::f64::consts::PI * tau / p.len as f64).sin();
    match &p.primitive {
        Primitive::Drift { parts, velocity } if parts.contains(&part) => {
            let e = tau.min(p.len as f64);
            [velocity[0] * e, velocity[1] * e]
        }
        Primitive::Sway { amplitude, period } if matches!(part, Part::Face | Part::Body) && tau < p.len as f64 => {
            let s = if part == Part::Face { 1.0 } else { 0.5 };
            [s * amplitude * phase(*period as f64), 0.0]
        }
        Primitive::Gesture { part: hand, magnitude } if *hand == part && tau < p.len as f64 => {
            [0.3 * magnitude * bump, -magnitude * bump]
        }
        Primitive::Nod { amplitude } if part == Part::Face && tau < p.len as f64 => [0.0, amplitude * bump],
        _ => [0.0, 0.0],
    }
}

/// Frames of one participant following `script`.
pub fn render(script: &[Timed], participant: usize, session_id: &str, length: usize) -> SkeletonSequence {
    let rest = rest_pose(participant);
    let gaze = if participant == 0 {
        vec![[0.25, 0.0, -1.0], [0.25, 0.0, -1.0]]
    } else {
        vec![[-0.25, 0.0, -1.0], [-0.25, 0.0, -1.0]]
    };
    let frames = (0..length)
        .map(|t| {
            let mut landmarks = LandmarkSet {
                gaze: Some(gaze.clone()),
                ..LandmarkSet::default()
            };
            let mut quality = Quality::all(true);
            for part in Part::ALL {
                let out = script.iter().any(|p| {
                    matches!(p.primitive, Primitive::HandOut { part: h } if h == part) && (p.start..p.end()).contains(&t)
                });
                if out {
                    quality.set(part, false);
                    continue;
                }
                let mut d = [0.0, 0.0];
                for p in script.iter().filter(|p| p.start <= t) {
                    let dd = displacement(p, (t - p.start) as f64, part);
                    d[0] += dd[0];
                    d[1] += dd[1];
                }
                let points = rest[part.range()].iter().map(|q| [q[0] + d[0], q[1] + d[1], q[2]]).collect();
                *landmarks.part_mut(part) = Some(points);
            }
            Frame {
                frame_index: t,
                landmarks,
                quality,
            }
        })
        .collect();
    SkeletonSequence {
        session_id: session_id.to_string(),
        participant_id: PARTICIPANTS[participant].to_string(),
        frames,
    }
}

fn push(line: &mut Vec<Timed>, len: usize, primitive: Primitive) {
    let start = line.last().map_or(0, Timed::end);
    line.push(Timed { start, len, primitive });
}

fn hold_until(line: &mut Vec<Timed>, t: usize) {
    let start = line.last().map_or(0, Timed::end);
    if t > start {
        push(line, t - start, Primitive::Hold);
    }
}

/// A random conversational primitive lasting at most `room` frames.
fn conversational(rng: &mut impl Rng, room: usize) -> (usize, Primitive) {
    let hand = *[Part::LeftHand, Part::RightHand].choose(rng).expect("two hands");
    let (len, p) = match rng.gen_range(0..10) {
        0 | 1 => (rng.gen_range(15..40), Primitive::Hold),
        2..=4 => {
            let period = rng.gen_range(30..60);
            (
                period * rng.gen_range(1..3),
                Primitive::Sway {
                    amplitude: rng.gen_range(4.0..9.0),
                    period,
                },
            )
        }
        5 | 6 => (
            rng.gen_range(20..40),
            Primitive::Gesture {
                part: hand,
                magnitude: rng.gen_range(15.0..35.0),
            },
        ),
        7 => (
            rng.gen_range(10..25),
            Primitive::Drift {
                parts: face_and_body(),
                velocity: [0.25 * rng.gen_range(-2..=2) as f64, 0.25 * rng.gen_range(-1..=1) as f64],
            },
        ),
        8 => (
            rng.gen_range(15..25),
            Primitive::Nod {
                amplitude: rng.gen_range(5.0..10.0),
            },
        ),
        _ => (rng.gen_range(20..60), Primitive::HandOut { part: hand }),
    };
    if len <= room {
        (len, p)
    } else {
        (room, Primitive::Hold)
    }
}

/// Fills a timeline with random primitives, placing a nod at every frame of
/// `nods` and truncating whatever would overlap it.
fn conversational_line(rng: &mut impl Rng, length: usize, nods: &[usize], nod_len: usize) -> Vec<Timed> {
    let mut line = Vec::new();
    let mut t = 0;
    let mut pending = nods.iter().copied().filter(|&n| n + nod_len <= length).peekable();
    while t < length {
        if pending.peek() == Some(&t) {
            pending.next();
            push(&mut line, nod_len, Primitive::Nod { amplitude: 8.0 });
            t += nod_len;
            continue;
        }
        let limit = pending.peek().copied().unwrap_or(length);
        let (len, p) = conversational(rng, limit - t);
        push(&mut line, len, p);
        t += len;
    }
    line
}

/// Gestures of participant 0 at random gaps.
fn gesture_line(rng: &mut impl Rng, length: usize, gap: std::ops::Range<usize>, len: usize) -> Vec<Timed> {
    let mut line = Vec::new();
    let mut t = rng.gen_range(gap.clone());
    while t + len <= length {
        hold_until(&mut line, t);
        push(
            &mut line,
            len,
            Primitive::Gesture {
                part: Part::RightHand,
                magnitude: 30.0,
            },
        );
        t += len + rng.gen_range(gap.clone());
    }
    hold_until(&mut line, length);
    line
}

pub const GESTURE_LEN: usize = 20;
pub const NOD_LEN: usize = 20;

pub fn script(preset: Preset, length: usize, rng: &mut impl Rng) -> MotionScript {
    let whole = |p: Primitive| vec![Timed { start: 0, len: length, primitive: p }];
    let participants = match preset {
        Preset::Static => [whole(Primitive::Hold), whole(Primitive::Hold)],
        Preset::ConstantVelocity => {
            // keep the drift within about 300 px across and 120 px down the session
            let kx = (1200 / length).min(4) as i32;
            let ky = (480 / length).min(2) as i32;
            let mut v = || [0.25 * rng.gen_range(-kx..=kx) as f64, 0.25 * rng.gen_range(-ky..=ky) as f64];
            let (a, b) = (v(), v());
            [
                whole(Primitive::Drift {
                    parts: Part::ALL.to_vec(),
                    velocity: a,
                }),
                whole(Primitive::Drift {
                    parts: Part::ALL.to_vec(),
                    velocity: b,
                }),
            ]
        }
        Preset::Conversational | Preset::Noisy => {
            let a = conversational_line(rng, length, &[], NOD_LEN);
            let nods: Vec<usize> = a
                .iter()
                .filter(|p| matches!(p.primitive, Primitive::Gesture { .. }))
                .map(|p| p.start + NOD_LAG)
                .collect();
            let b = conversational_line(rng, length, &nods, NOD_LEN);
            [a, b]
        }
        Preset::CoupledNod => {
            let a = gesture_line(rng, length, 30..90, GESTURE_LEN);
            let mut b = Vec::new();
            for t in a.iter().filter(|p| matches!(p.primitive, Primitive::Gesture { .. })).map(|p| p.start + NOD_LAG) {
                if t + NOD_LEN <= length {
                    hold_until(&mut b, t);
                    push(&mut b, NOD_LEN, Primitive::Nod { amplitude: 10.0 });
                }
            }
            hold_until(&mut b, length);
            [a, b]
        }
    };
    MotionScript { participants }
}

fn one_hot(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[rng.gen_range(0..n)] = 1.0;
    v
}

pub fn random_metadata(rng: &mut impl Rng) -> MetadataRecord {
    MetadataRecord {
        age: rng.gen_range(17..=75) as f64,
        gender: rng.gen_bool(0.5),
        country: one_hot(rng, 6),
        education: one_hot(rng, 7),
        big_five: Some((0..5).map(|_| rng.gen_range(-2.0..2.0)).collect()),
        language: one_hot(rng, 3),
        relationship: rng.gen_bool(0.5),
        mood: (0..8).map(|_| rng.gen_range(1..=5) as f64).collect(),
        fatigue: rng.gen_range(0..=10) as f64,
    }
}

/// Audio activity follows gestures; transcript blocks are random unit-scale vectors.
fn modality_features(script: &[Timed], length: usize, rng: &mut impl Rng) -> ModalityFeatures {
    let audio = (0..length)
        .map(|t| {
            let active = script.iter().any(|p| {
                matches!(p.primitive, Primitive::Gesture { .. } | Primitive::Nod { .. }) && (p.start..p.end()).contains(&t)
            });
            (0..AUDIO_DIM)
                .map(|i| if i == 0 { f64::from(u8::from(active)) } else { rng.gen_range(-0.1..0.1) })
                .collect()
        })
        .collect();
    let blocks = length.div_ceil(TRANSCRIPT_BLOCK);
    let transcript = (0..blocks)
        .map(|_| (0..TRANSCRIPT_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    ModalityFeatures {
        audio: Some(audio),
        transcript: Some(transcript),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Session {
    pub id: String,
    pub script: MotionScript,
    pub participants: Vec<SkeletonSequence>,
    pub noisy: Option<Vec<SkeletonSequence>>,
    pub metadata: SessionMetadata,
    pub modalities: Option<Vec<ModalityFeatures>>,
}

pub fn min_length() -> usize {
    OBS_LEN + PRED_LEN
}

/// One session; everything is drawn from `seed`.
pub fn generate_session(seed: u64, preset: Preset, length: usize, id: &str, with_modalities: bool) -> Result<Session> {
    if length < min_length() {
        return config(format!("sessions need at least {} frames, got {length}", min_length()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let script = script(preset, length, &mut rng);
    script.validate(length)?;
    let participants: Vec<SkeletonSequence> = (0..2).map(|i| render(&script.participants[i], i, id, length)).collect();
    let noisy = (preset == Preset::Noisy).then(|| {
        participants
            .iter()
            .map(|s| jitter_hands(s, NOISE_RADIUS, NOISE_FRACTION, &mut rng))
            .collect()
    });
    let metadata = SessionMetadata {
        session_id: id.to_string(),
        participants: PARTICIPANTS
            .iter()
            .map(|p| (p.to_string(), random_metadata(&mut rng)))
            .collect(),
    };
    let modalities = with_modalities.then(|| {
        (0..2)
            .map(|i| modality_features(&script.participants[i], length, &mut rng))
            .collect()
    });
    Ok(Session {
        id: id.to_string(),
        script,
        participants,
        noisy,
        metadata,
        modalities,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub preset: Preset,
    pub sessions: usize,
    pub length: usize,
    pub seed: u64,
    /// Also write audio and transcript features.
    pub modalities: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub spec: DatasetSpec,
    pub splits: BTreeMap<String, Vec<String>>,
    /// Relative path to SHA-256 of every written file.
    pub files: BTreeMap<String, String>,
}

pub const SPLITS: [&str; 3] = ["train", "val", "test"];

/// Session counts of the train/val/test splits: 20% each for validation and
/// testing (at least one), the rest for training.
pub fn split_sizes(n: usize) -> Result<[usize; 3]> {
    if n < 3 {
        return config(format!("a dataset needs at least 3 sessions, got {n}"));
    }
    let held = (n / 5).max(1);
    Ok([n - 2 * held, held, held])
}

/// Writes a dataset under `dir` and returns its manifest (also saved as
/// `manifest.json`).
pub fn make_dataset(spec: &DatasetSpec, dir: &Path) -> Result<DatasetManifest> {
    let sizes = split_sizes(spec.sessions)?;
    if spec.length < min_length() {
        return config(format!("sessions need at least {} frames, got {}", min_length(), spec.length));
    }
    std::fs::create_dir_all(dir.join("metadata"))?;
    if spec.modalities {
        std::fs::create_dir_all(dir.join("modalities"))?;
    }
    let mut master = ChaCha8Rng::seed_from_u64(spec.seed);
    let seeds: Vec<u64> = (0..spec.sessions).map(|_| master.gen()).collect();
    let mut order: Vec<usize> = (0..spec.sessions).collect();
    order.shuffle(&mut master);

    let mut files = BTreeMap::new();
    let mut splits = BTreeMap::new();
    let mut offset = 0;
    for (split, &size) in SPLITS.iter().zip(&sizes) {
        let mut ids: Vec<usize> = order[offset..offset + size].to_vec();
        ids.sort_unstable();
        offset += size;
        let mut clean = Vec::new();
        let mut noisy = Vec::new();
        let mut names = Vec::new();
        for i in ids {
            let id = format!("s{i:04}");
            let s = generate_session(seeds[i], spec.preset, spec.length, &id, spec.modalities)?;
            let meta = metadata_path(dir, &id);
            std::fs::write(&meta, serde_json::to_string(&s.metadata)?)?;
            files.insert(relative(dir, &meta), sha256_file(&meta)?);
            if let Some(feats) = &s.modalities {
                for (seq, f) in s.participants.iter().zip(feats) {
                    let path = modality_path(dir, &id, &seq.participant_id);
                    std::fs::write(&path, serde_json::to_string(f)?)?;
                    files.insert(relative(dir, &path), sha256_file(&path)?);
                }
            }
            clean.extend(s.participants);
            if let Some(n) = s.noisy {
                noisy.extend(n);
            }
            names.push(id);
        }
        let path = split_path(dir, split);
        write_jsonl(&path, &clean)?;
        files.insert(relative(dir, &path), sha256_file(&path)?);
        if spec.preset == Preset::Noisy {
            let path = noisy_path(dir, split);
            write_jsonl(&path, &noisy)?;
            files.insert(relative(dir, &path), sha256_file(&path)?);
        }
        splits.insert(split.to_string(), names);
    }
    let manifest = DatasetManifest {
        format: "nvforecast-synth".into(),
        spec: spec.clone(),
        splits,
        files,
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

fn relative(dir: &Path, path: &Path) -> String {
    path.strip_prefix(dir).unwrap_or(path).to_string_lossy().replace('\\', "/")
}
