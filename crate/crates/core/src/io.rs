//! JSON Lines dataset format.
//!
//! One object per frame:
//!
//! ```json
//! {"session_id":"s000","participant_id":"p0","frame_idx":0,
//!  "face":[[x,y,z],...],"body":[...],"left_hand":null,"right_hand":[...],
//!  "gaze":[[x,y,z],[x,y,z]],
//!  "quality":{"face":true,"body":true,"left_hand":false,"right_hand":true}}
//! ```
//!
//! A missing part is `null`. Lines of several participants may be mixed; frames
//! are grouped by `(session_id, participant_id)` in order of first appearance.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{Frame, LandmarkSet, Point3, Quality, SkeletonSequence};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameRecord {
    session_id: String,
    participant_id: String,
    frame_idx: usize,
    face: Option<Vec<Point3>>,
    body: Option<Vec<Point3>>,
    left_hand: Option<Vec<Point3>>,
    right_hand: Option<Vec<Point3>>,
    gaze: Option<Vec<Point3>>,
    quality: Quality,
}

pub fn parse_jsonl(reader: impl BufRead) -> Result<Vec<SkeletonSequence>> {
    let mut seqs: Vec<SkeletonSequence> = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: FrameRecord =
            serde_json::from_str(&line).map_err(|e| Error::Data(format!("line {}: {e}", n + 1)))?;
        let frame = Frame {
            frame_index: rec.frame_idx,
            landmarks: LandmarkSet {
                face: rec.face,
                body: rec.body,
                left_hand: rec.left_hand,
                right_hand: rec.right_hand,
                gaze: rec.gaze,
            },
            quality: rec.quality,
        };
        match seqs
            .iter_mut()
            .find(|s| s.session_id == rec.session_id && s.participant_id == rec.participant_id)
        {
            Some(s) => s.frames.push(frame),
            None => seqs.push(SkeletonSequence {
                session_id: rec.session_id,
                participant_id: rec.participant_id,
                frames: vec![frame],
            }),
        }
    }
    for s in &seqs {
        s.validate()?;
    }
    Ok(seqs)
}

pub fn read_jsonl(path: &Path) -> Result<Vec<SkeletonSequence>> {
    let file = File::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    parse_jsonl(BufReader::new(file))
}

pub fn write_jsonl_to(mut w: impl Write, seqs: &[SkeletonSequence]) -> Result<()> {
    for s in seqs {
        for f in &s.frames {
            let rec = FrameRecord {
                session_id: s.session_id.clone(),
                participant_id: s.participant_id.clone(),
                frame_idx: f.frame_index,
                face: f.landmarks.face.clone(),
                body: f.landmarks.body.clone(),
                left_hand: f.landmarks.left_hand.clone(),
                right_hand: f.landmarks.right_hand.clone(),
                gaze: f.landmarks.gaze.clone(),
                quality: f.quality,
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
    }
    Ok(())
}

pub fn write_jsonl(path: &Path, seqs: &[SkeletonSequence]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_jsonl_to(&mut w, seqs)?;
    w.flush()?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}
