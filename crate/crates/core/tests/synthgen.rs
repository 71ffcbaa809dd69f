use std::collections::BTreeSet;

use nvforecast::baselines::{linear_prop, zero_velocity};
use nvforecast::metrics::{divergence, mpjpe, FrameRange};
use nvforecast::models::Modalities;
use nvforecast::pipeline::{segment_all, Dataset, Source};
use nvforecast::skeleton::PoseSequence;
use nvforecast::synthgen::*;
use nvforecast::Error;
use proptest::prelude::*;

fn spec(preset: Preset, sessions: usize, length: usize, seed: u64) -> DatasetSpec {
    DatasetSpec {
        preset,
        sessions,
        length,
        seed,
        modalities: false,
    }
}

#[test]
fn static_sessions_are_solved_by_zero_velocity() {
    let s = generate_session(1, Preset::Static, 300, "s", false).unwrap();
    for seg in segment_all(&s.participants, 100, 50, 50) {
        let pred = zero_velocity(&seg.obs, 50).unwrap();
        let gt = PoseSequence::from_frames(&seg.future);
        assert_eq!(mpjpe(&pred, &gt, FrameRange::full(50)).unwrap(), 0.0);
    }
}

#[test]
fn constant_velocity_sessions_are_solved_by_linear_propagation() {
    for seed in 0..5 {
        let s = generate_session(seed, Preset::ConstantVelocity, 300, "s", false).unwrap();
        for seg in segment_all(&s.participants, 100, 50, 50) {
            let pred = linear_prop(&seg.obs, 50).unwrap();
            let gt = PoseSequence::from_frames(&seg.future);
            assert_eq!(mpjpe(&pred, &gt, FrameRange::full(50)).unwrap(), 0.0);
        }
    }
}

#[test]
fn coupled_nods_follow_gestures_by_the_lag() {
    for seed in 0..10 {
        let s = generate_session(seed, Preset::CoupledNod, 600, "s", false).unwrap();
        let gestures = s.script.gesture_onsets(0);
        let nods = s.script.nod_onsets(1);
        assert!(!gestures.is_empty());
        let expected: Vec<usize> = gestures
            .iter()
            .map(|g| g + NOD_LAG)
            .filter(|t| t + NOD_LEN <= 600)
            .collect();
        assert_eq!(nods, expected);
        assert!(s.script.gesture_onsets(1).is_empty() && s.script.nod_onsets(0).is_empty());
    }
}

#[test]
fn conversational_sessions_contain_coupled_nods() {
    let mut coupled = 0;
    for seed in 0..10 {
        let s = generate_session(seed, Preset::Conversational, 600, "s", false).unwrap();
        let nods: BTreeSet<usize> = s.script.nod_onsets(1).into_iter().collect();
        for g in s.script.gesture_onsets(0) {
            if g + NOD_LAG + NOD_LEN <= 600 {
                assert!(nods.contains(&(g + NOD_LAG)), "seed {seed} gesture {g}");
                coupled += 1;
            }
        }
    }
    assert!(coupled > 10);
}

#[test]
fn conversational_motion_has_plausible_speed() {
    let s = generate_session(4, Preset::Conversational, 1000, "s", false).unwrap();
    let seq = &s.participants[0];
    let gt = PoseSequence::from_frames(&seq.frames[1..]);
    let d = divergence(&gt, &seq.frames[0].pose2d(), FrameRange::full(999)).unwrap();
    assert!((0.05..3.0).contains(&d), "{d}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn sessions_are_valid_and_scripts_tile(seed in any::<u64>(), p in 0usize..5, length in 150usize..1200) {
        let preset = Preset::ALL[p];
        let s = generate_session(seed, preset, length, "s", false).unwrap();
        prop_assert!(s.script.validate(length).is_ok());
        for seq in s.participants.iter().chain(s.noisy.iter().flatten()) {
            prop_assert_eq!(seq.len(), length);
            prop_assert!(seq.validate().is_ok());
            for f in &seq.frames {
                prop_assert!(f.landmarks.part(nvforecast::skeleton::Part::Face).is_some());
                for q in f.landmarks.face.iter().flatten() {
                    prop_assert!(q[0] > 0.0 && q[0] < IMAGE_WIDTH && q[1] > 0.0 && q[1] < IMAGE_HEIGHT);
                }
            }
        }
        prop_assert_eq!(s.noisy.is_some(), preset == Preset::Noisy);
        prop_assert_eq!(&generate_session(seed, preset, length, "s", false).unwrap(), &s);
    }
}

#[test]
fn datasets_split_six_two_two_and_hash_reproducibly() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let sp = spec(Preset::Conversational, 10, 160, 7);
    let ma = make_dataset(&sp, a.path()).unwrap();
    let mb = make_dataset(&sp, b.path()).unwrap();
    assert_eq!(ma, mb);
    let sizes: Vec<usize> = SPLITS.iter().map(|s| ma.splits[*s].len()).collect();
    assert_eq!(sizes, [6, 2, 2]);
    let all: BTreeSet<&String> = ma.splits.values().flatten().collect();
    assert_eq!(all.len(), 10);
    for (name, hash) in &ma.files {
        assert_eq!(std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap());
        assert_eq!(hash.len(), 64);
    }
    let other = make_dataset(&spec(Preset::Conversational, 10, 160, 8), b.path()).unwrap();
    assert_ne!(other.files, ma.files);

    let train = Dataset::load(a.path(), "train", &Modalities::default()).unwrap();
    assert_eq!(train.sequences.len(), 12);
    assert_eq!(split_sizes(3).unwrap(), [1, 1, 1]);
    assert!(matches!(split_sizes(2), Err(Error::Config(_))));
    assert!(matches!(make_dataset(&spec(Preset::Static, 5, 100, 0), a.path()), Err(Error::Config(_))));
    assert!(matches!(Preset::parse("wobbly"), Err(Error::Config(_))));
    assert_eq!(Preset::parse("coupled-nod").unwrap(), Preset::CoupledNod);
}

#[test]
fn modality_and_noisy_files_load_back_into_segments() {
    let dir = tempfile::tempdir().unwrap();
    let mut sp = spec(Preset::Noisy, 3, 200, 11);
    sp.modalities = true;
    make_dataset(&sp, dir.path()).unwrap();
    let m = Modalities {
        metadata: true,
        personality: true,
        audio: true,
        transcript: true,
    };
    let ds = Dataset::load(dir.path(), "test", &m).unwrap();
    let segs = ds.segments(100, 50, 50, &m).unwrap();
    assert_eq!(segs.len(), 2 * 2);
    for s in &segs {
        assert_eq!(s.extras.metadata.as_ref().unwrap().len(), 34);
        assert_eq!(s.extras.transcript.as_ref().unwrap().len(), 768);
        let audio = s.extras.audio.as_ref().unwrap();
        assert_eq!(audio.len(), 100);
        assert!(audio[88..].iter().flatten().all(|&x| x == 0.0));
        assert!(audio[..88].iter().flatten().any(|&x| x != 0.0));
        let noisy = s.observation(Source::Noisy);
        assert_eq!(noisy.last(), s.obs.last());
    }
    assert!(segs.iter().any(|s| s.observation(Source::Noisy) != s.obs));
    assert!(Dataset::load(dir.path(), "nope", &m).is_err());
}
