//! Participant metadata and precomputed audio/transcript features.
//!
//! The dyadic fusion layers themselves live in the model code; this module
//! owns the encodings of the extra modalities and their file formats.
//!
//! Metadata vector layout (in order): scaled age, gender flag, country one-hot
//! (6), education one-hot (7), optional big-five z-scores (5), language one-hot
//! (3), relationship flag, scaled mood (8), scaled fatigue, and one padding
//! slot held at zero. That is 34 values with personality and 29 without.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{data, Error, Result};

pub const AUDIO_DIM: usize = 128;
pub const TRANSCRIPT_DIM: usize = 768;
pub const METADATA_EMBED: usize = 16;
pub const AUDIO_EMBED: usize = 64;
pub const TRANSCRIPT_EMBED: usize = 64;
/// Observed frames at the end of a window whose audio is blanked.
pub const AUDIO_ZEROED_FRAMES: usize = 12;
/// Frames covered by one transcript embedding.
pub const TRANSCRIPT_BLOCK: usize = 50;

pub const MIN_AGE: f64 = 17.0;
pub const MAX_AGE: f64 = 75.0;

pub fn metadata_len(with_personality: bool) -> usize {
    if with_personality {
        34
    } else {
        29
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetadataRecord {
    pub age: f64,
    pub gender: bool,
    pub country: Vec<f64>,
    pub education: Vec<f64>,
    pub big_five: Option<Vec<f64>>,
    pub language: Vec<f64>,
    pub relationship: bool,
    /// Eight mood ratings on a 1 to 5 scale.
    pub mood: Vec<f64>,
    /// Fatigue on a 0 to 10 scale.
    pub fatigue: f64,
}

fn check_one_hot(name: &str, v: &[f64], len: usize) -> Result<()> {
    if v.len() != len || v.iter().any(|&x| x != 0.0 && x != 1.0) || v.iter().sum::<f64>() != 1.0 {
        return data(format!("{name} must be a one-hot vector of length {len}"));
    }
    Ok(())
}

fn check_range(name: &str, x: f64, lo: f64, hi: f64) -> Result<()> {
    if !(lo..=hi).contains(&x) {
        return data(format!("{name} {x} outside [{lo}, {hi}]"));
    }
    Ok(())
}

pub fn encode_metadata(rec: &MetadataRecord, with_personality: bool) -> Result<Vec<f64>> {
    check_range("age", rec.age, MIN_AGE, MAX_AGE)?;
    check_one_hot("country", &rec.country, 6)?;
    check_one_hot("education", &rec.education, 7)?;
    check_one_hot("language", &rec.language, 3)?;
    if rec.mood.len() != 8 {
        return data(format!("expected 8 mood ratings, got {}", rec.mood.len()));
    }
    for &m in &rec.mood {
        check_range("mood", m, 1.0, 5.0)?;
    }
    check_range("fatigue", rec.fatigue, 0.0, 10.0)?;
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    let mut v = Vec::with_capacity(metadata_len(with_personality));
    v.push((rec.age - MIN_AGE) / (MAX_AGE - MIN_AGE));
    v.push(flag(rec.gender));
    v.extend(&rec.country);
    v.extend(&rec.education);
    if with_personality {
        match &rec.big_five {
            Some(z) if z.len() == 5 && z.iter().all(|x| x.is_finite()) => v.extend(z),
            _ => return data("personality encoding needs five finite big-five scores"),
        }
    }
    v.extend(&rec.language);
    v.push(flag(rec.relationship));
    v.extend(rec.mood.iter().map(|m| (m - 1.0) / 4.0));
    v.push(rec.fatigue / 10.0);
    v.push(0.0);
    Ok(v)
}

/// Age in years from its encoded value.
pub fn decode_age(x: f64) -> f64 {
    MIN_AGE + x * (MAX_AGE - MIN_AGE)
}

/// Metadata of one session, keyed by participant id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionMetadata {
    pub session_id: String,
    pub participants: BTreeMap<String, MetadataRecord>,
}

pub fn read_metadata(path: &Path) -> Result<SessionMetadata> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Audio features of one observation window with the trailing frames blanked.
pub fn audio_window(frames: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if let Some(i) = frames.iter().position(|f| f.len() != AUDIO_DIM) {
        return data(format!("audio frame {i} has {} values, expected {AUDIO_DIM}", frames[i].len()));
    }
    let keep = frames.len().saturating_sub(AUDIO_ZEROED_FRAMES);
    Ok(frames
        .iter()
        .enumerate()
        .map(|(t, f)| if t < keep { f.clone() } else { vec![0.0; AUDIO_DIM] })
        .collect())
}

/// Index of the transcript block holding the first predicted frame.
pub fn transcript_block(first_predicted_frame: usize) -> usize {
    first_predicted_frame / TRANSCRIPT_BLOCK
}

/// Per-participant audio (one row per session frame) and transcript
/// embeddings (one row per block of 50 frames).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModalityFeatures {
    pub audio: Option<Vec<Vec<f64>>>,
    pub transcript: Option<Vec<Vec<f64>>>,
}

impl ModalityFeatures {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let m: Self = serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        if let Some(t) = &m.transcript {
            if let Some(i) = t.iter().position(|r| r.len() != TRANSCRIPT_DIM) {
                return data(format!("transcript block {i} does not have {TRANSCRIPT_DIM} values"));
            }
        }
        Ok(m)
    }
}
