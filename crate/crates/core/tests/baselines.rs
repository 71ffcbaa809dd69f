mod common;

use common::{drop_part, frame_with, scattered};
use nvforecast::baselines::*;
use nvforecast::metrics::{divergence, mpjpe, FrameRange, SHORT_TERM, MID_TERM, LONG_TERM};
use nvforecast::skeleton::{Frame, Part, PoseSequence, NUM_LANDMARKS};
use proptest::prelude::*;

fn moving(len: usize, v: [f64; 2]) -> Vec<Frame> {
    (0..len)
        .map(|t| {
            frame_with(t, |l| {
                let p = scattered(l, 0.0);
                [p[0] + v[0] * t as f64, p[1] + v[1] * t as f64, p[2]]
            })
        })
        .collect()
}

#[test]
fn zero_velocity_repeats_the_last_pose() {
    let obs = moving(20, [0.3, -0.2]);
    let pred = zero_velocity(&obs, 50).unwrap();
    assert_eq!(pred.horizon(), 50);
    assert!(pred.poses.iter().all(|p| *p == obs[19].pose2d()));
    let last = obs[19].pose2d();
    for r in [FrameRange::full(50), SHORT_TERM, MID_TERM, LONG_TERM] {
        assert_eq!(divergence(&pred, &last, r).unwrap(), 0.0);
    }
    assert!(zero_velocity(&[], 5).is_err());
}

#[test]
fn zero_velocity_on_unit_drift() {
    let obs = moving(10, [0.0, 0.0]);
    let gt_frames: Vec<Frame> = (1..=50)
        .map(|k| frame_with(9 + k, |l| {
            let p = scattered(l, 0.0);
            [p[0] + k as f64, p[1], p[2]]
        }))
        .collect();
    let gt = PoseSequence::from_frames(&gt_frames);
    let pred = zero_velocity(&obs, 50).unwrap();
    assert!((mpjpe(&pred, &gt, FrameRange::full(50)).unwrap() - 25.5).abs() < 1e-12);
}

#[test]
fn linear_prop_averages_part_velocities() {
    let mut obs = moving(2, [0.0, 0.0]);
    let body = Part::Body.range();
    // give two body landmarks velocities (2,0) and (0,2), the rest stay still
    {
        let pts = obs[1].landmarks.body.as_mut().unwrap();
        pts[0][0] += 2.0;
        pts[1][1] += 2.0;
    }
    let pred = linear_prop(&obs, 3).unwrap();
    let start = obs[1].pose2d();
    let v = [2.0 / 10.0, 2.0 / 10.0];
    for k in 1..=3 {
        for l in body.clone() {
            let expected = [start[l][0] + k as f64 * v[0], start[l][1] + k as f64 * v[1]];
            assert!((pred.poses[k - 1][l][0] - expected[0]).abs() < 1e-12);
            assert!((pred.poses[k - 1][l][1] - expected[1]).abs() < 1e-12);
        }
    }
    assert!(linear_prop(&obs[..1], 3).is_err());
}

#[test]
fn static_observation_makes_every_baseline_zero_velocity() {
    let obs = moving(30, [0.0, 0.0]);
    let zv = zero_velocity(&obs, 50).unwrap();
    for b in Baseline::ALL {
        let p = b.predict(&obs, 50).unwrap();
        for (a, z) in p.poses.iter().zip(&zv.poses) {
            for (x, y) in a.iter().zip(z) {
                assert!((x[0] - y[0]).abs() < 1e-9 && (x[1] - y[1]).abs() < 1e-9, "{}", b.name());
            }
        }
    }
}

#[test]
fn linear_prop_is_exact_on_constant_velocity() {
    let frames = moving(150, [0.25, -0.125]);
    let pred = linear_prop(&frames[..100], 50).unwrap();
    let gt = PoseSequence::from_frames(&frames[100..]);
    assert!(mpjpe(&pred, &gt, FrameRange::full(50)).unwrap() < 1e-9);
}

#[test]
fn rto_mean_l_ends_at_the_landmark_means() {
    let frames: Vec<Frame> = (0..40).map(|t| frame_with(t, |l| scattered(l, t as f64))).collect();
    let pred = rto_mean(&frames, 50, true).unwrap();
    for l in 0..NUM_LANDMARKS {
        let mx = frames.iter().map(|f| f.pose2d()[l][0]).sum::<f64>() / 40.0;
        let my = frames.iter().map(|f| f.pose2d()[l][1]).sum::<f64>() / 40.0;
        assert!((pred.poses[49][l][0] - mx).abs() < 1e-9);
        assert!((pred.poses[49][l][1] - my).abs() < 1e-9);
    }
}

#[test]
fn rto_mean_translates_parts_rigidly() {
    let frames: Vec<Frame> = (0..40).map(|t| frame_with(t, |l| scattered(l, t as f64))).collect();
    let pred = rto_mean(&frames, 50, false).unwrap();
    let last = frames[39].pose2d();
    for p in Part::ALL {
        let shift = |k: usize, l: usize| [pred.poses[k][l][0] - last[l][0], pred.poses[k][l][1] - last[l][1]];
        for k in [0, 24, 49] {
            let s0 = shift(k, p.range().start);
            for l in p.range() {
                let s = shift(k, l);
                assert!((s[0] - s0[0]).abs() < 1e-9 && (s[1] - s0[1]).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn rto_mean_uses_only_frames_where_the_part_is_visible() {
    let mut frames = moving(4, [0.0, 0.0]);
    for f in frames.iter_mut().take(2) {
        for p in f.landmarks.left_hand.as_mut().unwrap() {
            p[0] += 1000.0;
        }
    }
    drop_part(&mut frames[0], Part::LeftHand);
    // visible frames: one shifted by 1000, two at rest
    let pred = rto_mean(&frames, 10, true).unwrap();
    let l = Part::LeftHand.range().start;
    let rest = frames[3].pose2d()[l][0];
    assert!((pred.poses[9][l][0] - (rest + 1000.0 / 3.0)).abs() < 1e-9);
}

#[test]
fn absent_parts_stay_invalid() {
    let mut obs = moving(5, [1.0, 0.0]);
    drop_part(&mut obs[4], Part::RightHand);
    for b in Baseline::ALL {
        let p = b.predict(&obs, 7).unwrap();
        for row in &p.valid {
            for l in 0..NUM_LANDMARKS {
                assert_eq!(row[l], Part::of_landmark(l) != Part::RightHand);
            }
        }
    }
}

proptest! {
    #[test]
    fn linear_prop_divergence_is_constant_speed(vx in -2.0f64..2.0, vy in -2.0f64..2.0) {
        let obs = moving(5, [vx, vy]);
        let pred = linear_prop(&obs, 50).unwrap();
        let last = obs[4].pose2d();
        let speed = vx.hypot(vy);
        for r in [SHORT_TERM, MID_TERM, LONG_TERM] {
            prop_assert!((divergence(&pred, &last, r).unwrap() - speed).abs() < 1e-9);
        }
    }

    #[test]
    fn baselines_are_deterministic(seed in 0.0f64..10.0) {
        let frames: Vec<Frame> = (0..12).map(|t| frame_with(t, |l| scattered(l, seed + t as f64))).collect();
        for b in Baseline::ALL {
            prop_assert_eq!(b.predict(&frames, 20).unwrap(), b.predict(&frames, 20).unwrap());
        }
    }
}
