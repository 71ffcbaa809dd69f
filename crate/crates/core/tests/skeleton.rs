mod common;

use common::{drop_part, frame_with, scattered};
use nvforecast::io::{parse_jsonl, write_jsonl_to};
use nvforecast::skeleton::*;
use proptest::prelude::*;

#[test]
fn face_root_is_the_eye_midpoint() {
    let mut f = frame_with(0, |_| [0.0; 3]);
    let face = f.landmarks.face.as_mut().unwrap();
    face[0] = [10.0, 10.0, 0.0];
    face[1] = [20.0, 10.0, 0.0];
    let roots = compute_roots(&f, &LandmarkConfig::default());
    assert_eq!(roots.get(Part::Face), Some([15.0, 10.0, 0.0]));
    assert_eq!(roots.get(Part::Body), Some([0.0; 3]));
}

#[test]
fn absent_parts_have_no_root_and_zero_slots() {
    let cfg = LandmarkConfig::default();
    let mut f = frame_with(1, |l| scattered(l, 1.0));
    drop_part(&mut f, Part::LeftHand);
    drop_part(&mut f, Part::RightHand);
    drop_part(&mut f, Part::Face);
    let roots = compute_roots(&f, &cfg);
    assert!(roots.get(Part::LeftHand).is_none() && roots.get(Part::RightHand).is_none());
    let prev = frame_with(0, |l| scattered(l, 0.0));
    let fv = to_features(&f, Some(&prev), &roots, &cfg);
    for s in region_slots(Region::Face).into_iter().chain(region_slots(Region::Hands)) {
        assert_eq!(fv[s], 0.0);
    }
}

#[test]
fn default_layout_has_496_slots() {
    let cfg = LandmarkConfig::default();
    let f = frame_with(0, |l| scattered(l, 0.0));
    assert_eq!(to_features(&f, None, &compute_roots(&f, &cfg), &cfg).len(), 496);
    assert_eq!(cfg.feature_len(), 468 + 16 + 12);
}

#[test]
fn static_frames_have_zero_offsets_and_self_relative_root() {
    let cfg = LandmarkConfig::default();
    let f = frame_with(0, |l| scattered(l, 0.0));
    let fv = to_features(&f, Some(&f), &compute_roots(&f, &cfg), &cfg);
    assert!(fv[MOTION_OFFSET..ROOT_OFFSET].iter().all(|x| *x == 0.0));
    for r in 0..4 {
        assert_eq!(fv[ROOT_OFFSET + 4 * r + 2], 0.0);
        assert_eq!(fv[ROOT_OFFSET + 4 * r + 3], 0.0);
    }
    // body landmark 0 is the chest root
    let l = Part::Body.range().start;
    assert_eq!(&fv[3 * l..3 * l + 3], &[0.0, 0.0, 0.0]);
}

#[test]
fn face_mask_zeroes_exactly_172_slots() {
    // 28 landmarks x (3 relative + 3 offset) + one root x (x, y, dx, dy)
    let expected = 28 * 6 + 4;
    assert_eq!(region_slots(Region::Face).len(), expected);
    let fv: Vec<f64> = (0..496).map(|i| i as f64 + 1.0).collect();
    let masked = mask_part(&fv, Region::Face);
    assert_eq!(masked.iter().filter(|x| **x == 0.0).count(), expected);
}

#[test]
fn masking_everything_leaves_only_gaze() {
    let cfg = LandmarkConfig::default();
    let f = frame_with(3, |l| scattered(l, 3.0));
    let prev = frame_with(2, |l| scattered(l, 2.0));
    let mut fv = to_features(&f, Some(&prev), &compute_roots(&f, &cfg), &cfg);
    for r in Region::ALL {
        fv = mask_part(&fv, r);
    }
    assert!(fv[..GAZE_OFFSET].iter().all(|x| *x == 0.0));
    assert!(fv[GAZE_OFFSET..].iter().any(|x| *x != 0.0));
}

#[test]
fn apply_offsets_examples() {
    let last = vec![[1.0, 2.0], [3.0, 4.0]];
    let zero = vec![vec![[0.0; 2]; 2]; 4];
    assert!(apply_offsets(&last, &zero).unwrap().iter().all(|p| *p == last));

    let step = vec![vec![[1.0, 0.0]; 2]; 3];
    let poses = apply_offsets(&last, &step).unwrap();
    for (k, p) in poses.iter().enumerate() {
        assert_eq!(p[0], [1.0 + (k + 1) as f64, 2.0]);
    }

    let back_and_forth = vec![vec![[2.5, -1.0]; 2], vec![[-2.5, 1.0]; 2]];
    assert_eq!(apply_offsets(&last, &back_and_forth).unwrap()[1], last);

    assert!(apply_offsets(&last, &[vec![[0.0; 2]; 3]]).is_err());
    assert!(apply_offsets(&last, &[]).is_err());
}

#[test]
fn jsonl_round_trip() {
    let mut frames: Vec<Frame> = (0..3).map(|t| frame_with(t, |l| scattered(l, t as f64))).collect();
    drop_part(&mut frames[1], Part::RightHand);
    frames[2].quality.face = false;
    let seq = SkeletonSequence {
        session_id: "s1".into(),
        participant_id: "p0".into(),
        frames,
    };
    let mut buf = Vec::new();
    write_jsonl_to(&mut buf, std::slice::from_ref(&seq)).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.lines().next().unwrap().contains("\"frame_idx\":0"));
    assert!(text.lines().nth(1).unwrap().contains("\"right_hand\":null"));
    let back = parse_jsonl(buf.as_slice()).unwrap();
    assert_eq!(back, vec![seq]);
}

#[test]
fn invalid_sequences_are_rejected() {
    let mut f = frame_with(0, |l| scattered(l, 0.0));
    f.landmarks.body.as_mut().unwrap().pop();
    assert!(f.validate().is_err());

    let mut f = frame_with(0, |l| scattered(l, 0.0));
    *f.landmarks.part_mut(Part::Face) = None;
    assert!(f.validate().is_err(), "quality on an absent part");

    let seq = SkeletonSequence {
        session_id: "s".into(),
        participant_id: "p".into(),
        frames: vec![frame_with(0, |l| scattered(l, 0.0)), frame_with(2, |l| scattered(l, 0.0))],
    };
    assert!(seq.validate().is_err());
}

proptest! {
    #[test]
    fn features_recover_global_2d_positions(seed in 0.0f64..100.0, absent in prop::collection::vec(any::<bool>(), 4)) {
        let cfg = LandmarkConfig::default();
        let mut f = frame_with(1, |l| scattered(l, seed));
        for (p, a) in Part::ALL.iter().zip(&absent) {
            if *a { drop_part(&mut f, *p); }
        }
        let fv = to_features(&f, None, &compute_roots(&f, &cfg), &cfg);
        let back = global_positions(&fv);
        let pose = f.pose2d();
        for p in Part::ALL {
            if f.present(p) {
                for l in p.range() {
                    prop_assert!((back[l][0] - pose[l][0]).abs() < 1e-9);
                    prop_assert!((back[l][1] - pose[l][1]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn offsets_reconstruct_the_sequence(seed in 0.0f64..50.0, h in 1usize..12) {
        let last: Vec<Point2> = (0..NUM_LANDMARKS).map(|l| { let p = scattered(l, seed); [p[0], p[1]] }).collect();
        let truth: Vec<Vec<Point2>> = (1..=h)
            .map(|k| (0..NUM_LANDMARKS).map(|l| { let p = scattered(l, seed + k as f64); [p[0], p[1]] }).collect())
            .collect();
        let rebuilt = apply_offsets(&last, &offsets_of(&last, &truth)).unwrap();
        for (a, b) in rebuilt.iter().zip(&truth) {
            for (x, y) in a.iter().zip(b) {
                prop_assert!((x[0] - y[0]).abs() < 1e-9 && (x[1] - y[1]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn masking_is_idempotent_and_commutes(values in prop::collection::vec(-10.0f64..10.0, 496), a in 0usize..3, b in 0usize..3) {
        let (ra, rb) = (Region::ALL[a], Region::ALL[b]);
        let once = mask_part(&values, ra);
        prop_assert_eq!(mask_part(&once, ra), once.clone());
        prop_assert_eq!(mask_part(&once, rb), mask_part(&mask_part(&values, rb), ra));
        // untouched slots keep their values
        let owned = region_slots(ra);
        for i in 0..496 {
            if !owned.contains(&i) { prop_assert_eq!(once[i], values[i]); }
        }
    }
}
