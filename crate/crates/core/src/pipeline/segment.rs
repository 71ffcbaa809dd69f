use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{data, Error, Result};
use crate::fusion::{audio_window, encode_metadata, read_metadata, transcript_block, ModalityFeatures, SessionMetadata};
use crate::io::read_jsonl;
use crate::models::{Extras, Modalities};
use crate::skeleton::{Frame, Part, SkeletonSequence};

pub const OBS_LEN: usize = 100;
pub const PRED_LEN: usize = 50;
pub const STRIDE: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Clean,
    Noisy,
}

/// One observation/prediction window of one participant.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub session_id: String,
    pub participant_id: String,
    /// Position of the first observed frame within its sequence.
    pub start: usize,
    pub obs: Vec<Frame>,
    pub future: Vec<Frame>,
    /// Observation frames from the raw annotations, when available.
    pub noisy_obs: Option<Vec<Frame>>,
    /// Index of the interlocutor's segment in the same list.
    pub partner: Option<usize>,
    pub extras: Extras,
}

impl Segment {
    pub fn last_obs(&self) -> &Frame {
        self.obs.last().expect("segments are never empty")
    }

    /// Observation as seen in `source`; the last observed frame is always clean.
    pub fn observation(&self, source: Source) -> Vec<Frame> {
        match (source, &self.noisy_obs) {
            (Source::Noisy, Some(noisy)) => {
                let mut frames = noisy.clone();
                *frames.last_mut().expect("non-empty") = self.last_obs().clone();
                frames
            }
            _ => self.obs.clone(),
        }
    }
}

/// Windows starting at 0, stride, 2 stride, ... that fit entirely in `seq`.
pub fn segment(seq: &SkeletonSequence, obs_len: usize, pred_len: usize, stride: usize) -> Vec<Segment> {
    let span = obs_len + pred_len;
    if obs_len == 0 || pred_len == 0 || stride == 0 || seq.len() < span {
        return Vec::new();
    }
    (0..=seq.len() - span)
        .step_by(stride)
        .map(|start| Segment {
            session_id: seq.session_id.clone(),
            participant_id: seq.participant_id.clone(),
            start,
            obs: seq.frames[start..start + obs_len].to_vec(),
            future: seq.frames[start + obs_len..start + span].to_vec(),
            noisy_obs: None,
            partner: None,
            extras: Extras::default(),
        })
        .collect()
}

/// Segments of several sequences. Two participants of one session form a dyad,
/// and their segments at the same start are partners.
pub fn segment_all(seqs: &[SkeletonSequence], obs_len: usize, pred_len: usize, stride: usize) -> Vec<Segment> {
    let mut out: Vec<Segment> = Vec::new();
    for seq in seqs {
        out.extend(segment(seq, obs_len, pred_len, stride));
    }
    let mut index: BTreeMap<(&str, usize), Vec<usize>> = BTreeMap::new();
    for (i, s) in out.iter().enumerate() {
        index.entry((s.session_id.as_str(), s.start)).or_default().push(i);
    }
    let pairs: Vec<(usize, usize)> = index
        .values()
        .filter(|v| v.len() == 2)
        .map(|v| (v[0], v[1]))
        .collect();
    for (a, b) in pairs {
        out[a].partner = Some(b);
        out[b].partner = Some(a);
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DropReport {
    pub total: usize,
    pub dropped: usize,
}

impl DropReport {
    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.dropped as f64 / self.total as f64
        }
    }
}

/// A hand missing from the last observed frame that shows up while predicting.
pub fn hand_reappears(s: &Segment) -> bool {
    [Part::LeftHand, Part::RightHand]
        .into_iter()
        .any(|p| !s.last_obs().present(p) && s.future.iter().any(|f| f.present(p)))
}

/// Drops segments whose hand reappears during the prediction window. A dyad
/// is dropped as a whole so kept segments keep their partners.
pub fn filter_segments(segments: Vec<Segment>) -> (Vec<Segment>, DropReport) {
    let total = segments.len();
    let drop: Vec<bool> = (0..total)
        .map(|i| hand_reappears(&segments[i]) || segments[i].partner.is_some_and(|p| hand_reappears(&segments[p])))
        .collect();
    let mut new_index = vec![usize::MAX; total];
    let mut next = 0;
    for i in 0..total {
        if !drop[i] {
            new_index[i] = next;
            next += 1;
        }
    }
    let kept = segments
        .into_iter()
        .zip(&drop)
        .filter(|(_, d)| !**d)
        .map(|(mut s, _)| {
            s.partner = s.partner.map(|p| new_index[p]);
            s
        })
        .collect();
    (kept, DropReport { total, dropped: total - next })
}

/// Replaces the hand landmarks of a random `fraction` of frames with uniform
/// jitter of up to `radius` pixels around their position.
pub fn jitter_hands(seq: &SkeletonSequence, radius: f64, fraction: f64, rng: &mut impl Rng) -> SkeletonSequence {
    let mut out = seq.clone();
    for f in &mut out.frames {
        if !rng.gen_bool(fraction.clamp(0.0, 1.0)) {
            continue;
        }
        for p in [Part::LeftHand, Part::RightHand] {
            if let Some(points) = f.landmarks.part_mut(p) {
                for q in points.iter_mut() {
                    q[0] += rng.gen_range(-radius..=radius);
                    q[1] += rng.gen_range(-radius..=radius);
                }
            }
        }
    }
    out
}

/// One split of a dataset directory: `{split}.jsonl`, optionally
/// `{split}.noisy.jsonl`, `metadata/{session}.json` and `modalities/{session}.{participant}.json`.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub sequences: Vec<SkeletonSequence>,
    pub noisy: Option<Vec<SkeletonSequence>>,
    pub metadata: BTreeMap<String, SessionMetadata>,
    pub modalities: BTreeMap<(String, String), ModalityFeatures>,
}

pub fn split_path(dir: &Path, split: &str) -> PathBuf {
    dir.join(format!("{split}.jsonl"))
}

pub fn noisy_path(dir: &Path, split: &str) -> PathBuf {
    dir.join(format!("{split}.noisy.jsonl"))
}

pub fn metadata_path(dir: &Path, session: &str) -> PathBuf {
    dir.join("metadata").join(format!("{session}.json"))
}

pub fn modality_path(dir: &Path, session: &str, participant: &str) -> PathBuf {
    dir.join("modalities").join(format!("{session}.{participant}.json"))
}

impl Dataset {
    pub fn from_sequences(sequences: Vec<SkeletonSequence>) -> Self {
        Self {
            sequences,
            ..Self::default()
        }
    }

    /// Loads a split; `modalities` selects which side files are required.
    pub fn load(dir: &Path, split: &str, modalities: &Modalities) -> Result<Self> {
        let sequences = read_jsonl(&split_path(dir, split))?;
        let noisy_file = noisy_path(dir, split);
        let noisy = if noisy_file.exists() { Some(read_jsonl(&noisy_file)?) } else { None };
        let mut metadata = BTreeMap::new();
        if modalities.metadata {
            for s in &sequences {
                if !metadata.contains_key(&s.session_id) {
                    let m = read_metadata(&metadata_path(dir, &s.session_id))?;
                    metadata.insert(s.session_id.clone(), m);
                }
            }
        }
        let mut feats = BTreeMap::new();
        if modalities.audio || modalities.transcript {
            for s in &sequences {
                let path = modality_path(dir, &s.session_id, &s.participant_id);
                feats.insert((s.session_id.clone(), s.participant_id.clone()), ModalityFeatures::read(&path)?);
            }
        }
        Ok(Self {
            sequences,
            noisy,
            metadata,
            modalities: feats,
        })
    }

    /// Segments with their noisy observations and requested modality inputs.
    pub fn segments(&self, obs_len: usize, pred_len: usize, stride: usize, modalities: &Modalities) -> Result<Vec<Segment>> {
        let mut segs = segment_all(&self.sequences, obs_len, pred_len, stride);
        if let Some(noisy) = &self.noisy {
            for s in &mut segs {
                let seq = noisy
                    .iter()
                    .find(|n| n.session_id == s.session_id && n.participant_id == s.participant_id)
                    .ok_or_else(|| Error::Data(format!("no noisy copy of {}/{}", s.session_id, s.participant_id)))?;
                if seq.len() < s.start + obs_len {
                    return data(format!("noisy copy of {}/{} is too short", s.session_id, s.participant_id));
                }
                s.noisy_obs = Some(seq.frames[s.start..s.start + obs_len].to_vec());
            }
        }
        if modalities.any() {
            for s in &mut segs {
                s.extras = self.extras(s, modalities)?;
            }
        }
        Ok(segs)
    }

    fn extras(&self, s: &Segment, m: &Modalities) -> Result<Extras> {
        let mut extras = Extras::default();
        if m.metadata {
            let rec = self
                .metadata
                .get(&s.session_id)
                .and_then(|sm| sm.participants.get(&s.participant_id))
                .ok_or_else(|| Error::Data(format!("no metadata for {}/{}", s.session_id, s.participant_id)))?;
            extras.metadata = Some(encode_metadata(rec, m.personality)?);
        }
        if m.audio || m.transcript {
            let feats = self
                .modalities
                .get(&(s.session_id.clone(), s.participant_id.clone()))
                .ok_or_else(|| Error::Data(format!("no modality features for {}/{}", s.session_id, s.participant_id)))?;
            if m.audio {
                let audio = feats
                    .audio
                    .as_ref()
                    .ok_or_else(|| Error::Data(format!("{}/{} has no audio", s.session_id, s.participant_id)))?;
                let end = s.start + s.obs.len();
                if audio.len() < end {
                    return data(format!("audio of {}/{} ends at frame {}", s.session_id, s.participant_id, audio.len()));
                }
                extras.audio = Some(audio_window(&audio[s.start..end])?);
            }
            if m.transcript {
                let blocks = feats
                    .transcript
                    .as_ref()
                    .ok_or_else(|| Error::Data(format!("{}/{} has no transcript", s.session_id, s.participant_id)))?;
                let b = transcript_block(s.start + s.obs.len());
                let v = blocks
                    .get(b)
                    .ok_or_else(|| Error::Data(format!("{}/{} lacks transcript block {b}", s.session_id, s.participant_id)))?;
                extras.transcript = Some(v.clone());
            }
        }
        Ok(extras)
    }
}
