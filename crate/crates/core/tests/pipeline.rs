mod common;

use common::{drop_part, frame_with, moving_frames, scattered, tiny};
use nvforecast::baselines::{zero_velocity, Baseline};
use nvforecast::metrics::{divergence, FrameRange};
use nvforecast::models::{Architecture, Extras, Fusion, Model, Normalizer};
use nvforecast::pipeline::*;
use nvforecast::skeleton::{Frame, Part, PoseSequence, SkeletonSequence};
use nvforecast::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn sequence(session: &str, participant: &str, frames: Vec<Frame>) -> SkeletonSequence {
    SkeletonSequence {
        session_id: session.into(),
        participant_id: participant.into(),
        frames,
    }
}

fn static_frames(n: usize) -> Vec<Frame> {
    (0..n).map(|t| frame_with(t, |l| scattered(l, 0.0))).collect()
}

fn drifting_frames(n: usize, v: [f64; 2]) -> Vec<Frame> {
    (0..n)
        .map(|t| {
            frame_with(t, |l| {
                let p = scattered(l, 0.0);
                [p[0] + v[0] * t as f64, p[1] + v[1] * t as f64, p[2]]
            })
        })
        .collect()
}

#[test]
fn segment_counts_follow_the_stride() {
    let starts = |n: usize| {
        segment(&sequence("s", "a", static_frames(n)), 100, 50, 50)
            .iter()
            .map(|s| s.start)
            .collect::<Vec<_>>()
    };
    assert_eq!(starts(250), vec![0, 50, 100]);
    assert_eq!(starts(149), Vec::<usize>::new());
    assert_eq!(starts(150), vec![0]);
    let s = &segment(&sequence("s", "a", static_frames(250)), 100, 50, 50)[2];
    assert_eq!(s.obs.len(), 100);
    assert_eq!(s.future.len(), 50);
    assert_eq!(s.obs[0].frame_index, 100);
    assert_eq!(s.future[0].frame_index, 200);
}

#[test]
fn dyad_segments_are_partners() {
    let seqs = vec![
        sequence("s0", "a", static_frames(200)),
        sequence("s0", "b", static_frames(200)),
        sequence("s1", "a", static_frames(200)),
    ];
    let segs = segment_all(&seqs, 100, 50, 50);
    assert_eq!(segs.len(), 6);
    for (i, s) in segs.iter().enumerate() {
        match s.partner {
            Some(p) => {
                assert_eq!(segs[p].partner, Some(i));
                assert_eq!(segs[p].session_id, s.session_id);
                assert_eq!(segs[p].start, s.start);
                assert_ne!(segs[p].participant_id, s.participant_id);
            }
            None => assert_eq!(s.session_id, "s1"),
        }
    }
}

#[test]
fn segments_with_reappearing_hands_are_dropped_with_their_partner() {
    let mut reappearing = static_frames(150);
    for f in &mut reappearing[..103] {
        drop_part(f, Part::LeftHand);
    }
    let mut absent = static_frames(150);
    for f in &mut absent {
        drop_part(f, Part::RightHand);
    }
    let seqs = vec![
        sequence("s0", "a", reappearing),
        sequence("s0", "b", static_frames(150)),
        sequence("s1", "a", absent),
        sequence("s2", "a", static_frames(150)),
    ];
    let segs = segment_all(&seqs, 100, 50, 50);
    assert!(hand_reappears(&segs[0]) && !hand_reappears(&segs[1]) && !hand_reappears(&segs[2]));
    let (kept, report) = filter_segments(segs);
    assert_eq!(report.total, 4);
    assert_eq!(report.dropped, 2);
    assert_eq!(report.fraction(), 0.5);
    let ids: Vec<&str> = kept.iter().map(|s| s.session_id.as_str()).collect();
    assert_eq!(ids, ["s1", "s2"]);
    assert!(kept.iter().all(|s| s.partner.is_none()));
}

#[test]
fn filtering_keeps_partner_links_consistent() {
    let seqs: Vec<SkeletonSequence> = (0..3)
        .flat_map(|i| {
            let mut a = static_frames(150);
            if i == 1 {
                for f in &mut a[..100] {
                    drop_part(f, Part::RightHand);
                }
            }
            [sequence(&format!("s{i}"), "a", a), sequence(&format!("s{i}"), "b", static_frames(150))]
        })
        .collect();
    let (kept, report) = filter_segments(segment_all(&seqs, 100, 50, 50));
    assert_eq!(report.dropped, 2);
    assert_eq!(kept.len(), 4);
    for (i, s) in kept.iter().enumerate() {
        let p = s.partner.unwrap();
        assert_eq!(kept[p].partner, Some(i));
        assert_eq!(kept[p].session_id, s.session_id);
    }
}

#[test]
fn hand_jitter_touches_only_hands_on_the_requested_share() {
    let seq = sequence("s", "a", static_frames(400));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let noisy = jitter_hands(&seq, 5.0, 0.1, &mut rng);
    let mut touched = 0;
    for (a, b) in seq.frames.iter().zip(&noisy.frames) {
        assert_eq!(a.landmarks.face, b.landmarks.face);
        assert_eq!(a.landmarks.body, b.landmarks.body);
        if a != b {
            touched += 1;
            for p in [Part::LeftHand, Part::RightHand] {
                for (x, y) in a.landmarks.part(p).unwrap().iter().zip(b.landmarks.part(p).unwrap()) {
                    assert!((x[0] - y[0]).abs() <= 5.0 && (x[1] - y[1]).abs() <= 5.0 && x[2] == y[2]);
                }
            }
        }
    }
    assert!((20..=60).contains(&touched), "{touched}");
    let again = jitter_hands(&seq, 5.0, 0.1, &mut ChaCha8Rng::seed_from_u64(3));
    assert_eq!(again, noisy);
    assert_eq!(jitter_hands(&seq, 5.0, 0.0, &mut rng), seq);
}

#[test]
fn noisy_observations_keep_the_last_frame_clean() {
    let seq = sequence("s", "a", moving_frames(150, 0.0));
    let mut ds = Dataset::from_sequences(vec![seq.clone()]);
    ds.noisy = Some(vec![jitter_hands(&seq, 4.0, 1.0, &mut ChaCha8Rng::seed_from_u64(1))]);
    let segs = ds.segments(100, 50, 50, &Default::default()).unwrap();
    let clean = segs[0].observation(Source::Clean);
    let noisy = segs[0].observation(Source::Noisy);
    assert_eq!(clean, seq.frames[..100]);
    assert_eq!(noisy.last(), clean.last());
    assert_ne!(noisy[98], clean[98]);
}

#[test]
fn freeze_after_zero_is_zero_velocity() {
    let obs = moving_frames(5, 0.0);
    let future = moving_frames(12, 5.0);
    let pred = PoseSequence::from_frames(&future[..10]);
    let frozen = freeze_after_n(&pred, 0, &obs[4].pose2d()).unwrap();
    assert_eq!(frozen, zero_velocity(&obs, 10).unwrap());
    assert_eq!(freeze_after_n(&pred, 10, &obs[4].pose2d()).unwrap(), pred);
    assert!(matches!(freeze_after_n(&pred, 11, &obs[4].pose2d()), Err(Error::Config(_))));
}

proptest! {
    #[test]
    fn frozen_tail_has_no_divergence(n in 0usize..12, phase in 0.0f64..50.0) {
        let obs = moving_frames(3, phase);
        let pred = PoseSequence::from_frames(&moving_frames(12, phase + 3.0));
        let last = obs[2].pose2d();
        let frozen = freeze_after_n(&pred, n, &last).unwrap();
        prop_assert_eq!(&frozen.poses[..n], &pred.poses[..n]);
        if n < 12 {
            prop_assert_eq!(divergence(&frozen, &last, FrameRange::new(n + 1, 12)).unwrap(), 0.0);
        }
    }
}

fn observed<'a>(frames: &'a [Vec<Frame>], extras: &'a Extras) -> Vec<Observed<'a>> {
    frames.iter().map(|f| Observed { frames: f, extras }).collect()
}

fn trained_normalizer(obs: &[Vec<Frame>], h: usize) -> Normalizer {
    let cfg = tiny(Architecture::Seq2seqGru, 6, h);
    let segs: Vec<Segment> = obs
        .iter()
        .map(|o| Segment {
            session_id: "s".into(),
            participant_id: "a".into(),
            start: 0,
            obs: o[..6].to_vec(),
            future: o[6..].to_vec(),
            noisy_obs: None,
            partner: None,
            extras: Extras::default(),
        })
        .collect();
    Prepared::new(&cfg, &segs).unwrap().normalizer().unwrap()
}

#[test]
fn zero_head_rollout_is_zero_velocity_for_every_architecture() {
    let frames: Vec<Vec<Frame>> = (0..2).map(|i| moving_frames(10, 2.5 * i as f64)).collect();
    let norm = trained_normalizer(&frames, 4);
    let obs: Vec<Vec<Frame>> = frames.iter().map(|f| f[..6].to_vec()).collect();
    let none = Extras::default();
    let inputs = observed(&obs, &none);
    for arch in Architecture::ALL {
        for fusion in [Fusion::Monadic, Fusion::DyadicInteractive] {
            if arch == Architecture::Stgnn && fusion.is_dyadic() {
                continue;
            }
            let mut cfg = tiny(arch, 6, 4);
            cfg.fusion = fusion;
            let mut model = Model::new(cfg, norm.clone()).unwrap();
            model.zero_head().unwrap();
            let preds = rollout(&model, &inputs, Some(&[1, 0]), 12, 4).unwrap();
            for (p, o) in preds.iter().zip(&obs) {
                assert_eq!(p, &zero_velocity(o, 12).unwrap(), "{} {}", arch.name(), fusion.name());
            }
        }
    }
}

#[test]
fn rollout_slides_the_window_over_its_own_predictions() {
    let frames = vec![moving_frames(14, 0.0)];
    let norm = trained_normalizer(&frames, 4);
    let model = Model::new(tiny(Architecture::TransformerT, 6, 4), norm).unwrap();
    let obs = vec![frames[0][..6].to_vec()];
    let whole = rollout(&model, &observed(&obs, &Extras::default()), None, 8, 4).unwrap();
    let first = rollout(&model, &observed(&obs, &Extras::default()), None, 4, 4).unwrap();
    assert_eq!(whole[0].poses[..4], first[0].poses[..]);

    // the second call sees the last two observed frames and the four predicted ones
    let last = obs[0][5].clone();
    let mut window = obs[0][4..].to_vec();
    for (i, p) in first[0].poses.iter().enumerate() {
        window.push(frame_from_pose(&last, p, 6 + i));
    }
    let second = rollout(&model, &observed(&[window], &Extras::default()), None, 4, 4).unwrap();
    assert_eq!(whole[0].poses[4..], second[0].poses[..]);

    // a single call when the step covers the whole horizon
    let single = rollout(&model, &observed(&obs, &Extras::default()), None, 4, 4).unwrap();
    let direct = model
        .predict(&[&nvforecast::models::ModelInput::new(&model_window(&model.config, &obs[0], &Extras::default()).unwrap(), &model.normalizer).unwrap()], None)
        .unwrap();
    assert_eq!(single, direct);

    assert!(matches!(rollout(&model, &observed(&obs, &Extras::default()), None, 10, 4), Err(Error::Config(_))));
    assert!(matches!(rollout(&model, &observed(&obs, &Extras::default()), None, 10, 5), Err(Error::Config(_))));
}

#[test]
fn audio_models_cannot_roll_out_recurrently() {
    let frames = vec![moving_frames(10, 0.0)];
    let norm = trained_normalizer(&frames, 4);
    let mut cfg = tiny(Architecture::Seq2seqGru, 6, 4);
    cfg.modalities.audio = true;
    let model = Model::new(cfg, norm).unwrap();
    let extras = Extras {
        audio: Some(vec![vec![0.1; 128]; 6]),
        ..Extras::default()
    };
    let obs = vec![frames[0][..6].to_vec()];
    assert!(matches!(rollout(&model, &observed(&obs, &extras), None, 8, 4), Err(Error::Unsupported(_))));
    assert_eq!(rollout(&model, &observed(&obs, &extras), None, 4, 4).unwrap()[0].horizon(), 4);
}

fn segments_of(seqs: Vec<SkeletonSequence>, obs: usize, pred: usize) -> Vec<Segment> {
    segment_all(&seqs, obs, pred, pred)
}

fn quick_config(arch: Architecture, seed: u64) -> TrainConfig {
    let mut t = TrainConfig::for_arch(arch);
    t.batch_size = 4;
    t.max_epochs = 6;
    t.seed = seed;
    t
}

#[test]
fn first_batch_loss_is_finite_and_positive() {
    let segs = segments_of(vec![sequence("s", "a", moving_frames(60, 0.0))], 6, 4);
    let model = init_model(&tiny(Architecture::Seq2seqGru, 6, 4), &segs).unwrap();
    let prep = Prepared::new(&model.config, &segs).unwrap();
    let inputs: Vec<_> = prep
        .windows
        .iter()
        .map(|w| nvforecast::models::ModelInput::new(w, &model.normalizer).unwrap())
        .collect();
    let loss = validation_loss(&model, &inputs, &prep, 4).unwrap();
    assert!(loss.is_finite() && loss > 0.0);
}

#[test]
fn training_fits_a_repeated_constant_velocity_segment() {
    let seq = sequence("s", "a", drifting_frames(10, [1.5, -0.5]));
    let segs: Vec<Segment> = (0..4).flat_map(|_| segments_of(vec![seq.clone()], 6, 4)).collect();
    let mut mc = tiny(Architecture::Seq2seqGru, 6, 4);
    mc.dropout = 0.0;
    let model = init_model(&mc, &segs).unwrap();
    let mut cfg = quick_config(Architecture::Seq2seqGru, 1);
    cfg.max_epochs = 50;
    cfg.patience = 50;
    cfg.optimizer.lr = 1e-2;
    let out = train(model, &segs, &segs, &cfg).unwrap();
    let h = &out.history.epochs;
    assert_eq!(h.len(), 50);
    assert!(h[49].train_loss < 0.1 * h[0].train_loss, "{} -> {}", h[0].train_loss, h[49].train_loss);
}

#[test]
fn training_is_deterministic_and_returns_the_best_epoch() {
    let seqs: Vec<SkeletonSequence> = (0..3)
        .flat_map(|i| {
            let s = format!("s{i}");
            [sequence(&s, "a", moving_frames(40, i as f64)), sequence(&s, "b", moving_frames(40, 10.0 + i as f64))]
        })
        .collect();
    let train_segs = &segments_of(seqs, 6, 4);
    let val_segs = segment_all(&[sequence("v", "a", moving_frames(40, 7.0)), sequence("v", "b", moving_frames(40, 3.0))], 6, 4, 4);
    for fusion in [Fusion::Monadic, Fusion::DyadicLate] {
        let mut mc = tiny(Architecture::TcnGru, 6, 4);
        mc.fusion = fusion;
        let run = || {
            let model = init_model(&mc, train_segs).unwrap();
            train(model, train_segs, &val_segs, &quick_config(Architecture::TcnGru, 9)).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.model.to_json().unwrap(), b.model.to_json().unwrap());
        assert_eq!(a.history.to_csv(), b.history.to_csv());
        assert!(a.history.epochs.iter().all(|e| a.best_val <= e.val_loss));
        let best = a.history.epochs.iter().find(|e| e.epoch == a.best_epoch).unwrap();
        assert_eq!(best.val_loss, a.best_val);
        // the returned weights are the best epoch's
        let prep = Prepared::new(&a.model.config, &val_segs).unwrap();
        let inputs: Vec<_> = prep
            .windows
            .iter()
            .map(|w| nvforecast::models::ModelInput::new(w, &a.model.normalizer).unwrap())
            .collect();
        assert_eq!(validation_loss(&a.model, &inputs, &prep, 4).unwrap(), a.best_val);
    }
}

#[test]
fn early_stopping_honours_patience() {
    let segs = segments_of(vec![sequence("s", "a", moving_frames(40, 0.0))], 6, 4);
    let model = init_model(&tiny(Architecture::Seq2seqGru, 6, 4), &segs).unwrap();
    let mut cfg = quick_config(Architecture::Seq2seqGru, 2);
    cfg.max_epochs = 200;
    cfg.patience = 3;
    // a learning rate of zero never improves on the first epoch
    cfg.optimizer.lr = 0.0;
    let out = train(model, &segs, &segs, &cfg).unwrap();
    assert_eq!(out.history.epochs.len(), 4);
    assert_eq!(out.best_epoch, 1);
}

#[test]
fn training_rejects_empty_splits_and_divergence() {
    let segs = segments_of(vec![sequence("s", "a", moving_frames(40, 0.0))], 6, 4);
    let model = init_model(&tiny(Architecture::Seq2seqGru, 6, 4), &segs).unwrap();
    let cfg = quick_config(Architecture::Seq2seqGru, 0);
    assert!(matches!(train(model.clone(), &segs, &[], &cfg), Err(Error::NoData(_))));
    assert!(matches!(init_model(&model.config, &[]), Err(Error::NoData(_))));
    let mut wild = cfg.clone();
    wild.optimizer.lr = 1e300;
    assert!(matches!(train(model, &segs, &segs, &wild), Err(Error::Numeric(_))));
}

#[test]
fn zero_velocity_on_static_data_scores_zero() {
    let seqs = vec![sequence("s0", "a", static_frames(300)), sequence("s0", "b", static_frames(300))];
    let segs = segment_all(&seqs, 100, 50, 50);
    let ev = evaluate(&Baseline::ZeroVelocity, &segs, false).unwrap();
    let v = ev.report.all;
    for x in [v.mpjpe, v.st, v.mt, v.lt, v.fde, v.div] {
        assert_eq!(x, Some(0.0));
    }
    assert_eq!(ev.segments.len(), segs.len());
}

#[test]
fn noisy_mode_without_noise_matches_clean_mode() {
    let seqs = vec![sequence("s0", "a", moving_frames(200, 0.0))];
    let mut ds = Dataset::from_sequences(seqs.clone());
    ds.noisy = Some(seqs);
    let segs = ds.segments(100, 50, 50, &Default::default()).unwrap();
    for b in Baseline::ALL {
        assert_eq!(evaluate(&b, &segs, true).unwrap(), evaluate(&b, &segs, false).unwrap());
    }
}

#[test]
fn aggregate_is_the_count_weighted_mean_of_segments() {
    let mut frames = moving_frames(400, 0.0);
    for f in &mut frames[170..260] {
        drop_part(f, Part::LeftHand);
    }
    for f in &mut frames[300..320] {
        f.quality.set(Part::Face, false);
    }
    let segs = segment_all(&[sequence("s", "a", frames)], 100, 50, 50);
    let ev = evaluate(&Baseline::LinearProp, &segs, false).unwrap();
    let (mut num, mut den) = (0.0, 0.0);
    for s in &ev.segments {
        if let Some(m) = s.report.all.mpjpe {
            num += m * s.report.error_pairs as f64;
            den += s.report.error_pairs as f64;
        }
    }
    assert!((ev.report.all.mpjpe.unwrap() - num / den).abs() < 1e-9);
    assert!(matches!(evaluate(&Baseline::LinearProp, &[], false), Err(Error::NoData(_))));
}

#[test]
fn model_evaluation_runs_dyads_together() {
    let seqs = vec![sequence("s0", "a", moving_frames(120, 0.0)), sequence("s0", "b", moving_frames(120, 9.0))];
    let segs = segment_all(&seqs, 6, 12, 12);
    let mut mc = tiny(Architecture::Seq2seqGru, 6, 4);
    mc.fusion = Fusion::DyadicLate;
    let mut model = init_model(&mc, &segs).unwrap();
    model.zero_head().unwrap();
    let p = ModelPredictor::new(model, "zeroed");
    assert_eq!(p.step, 4);
    let ev = evaluate(&p, &segs, false).unwrap();
    assert_eq!(ev.report, evaluate(&Baseline::ZeroVelocity, &segs, false).unwrap().report);
    let lone = segment_all(&seqs[..1], 6, 12, 12);
    assert!(matches!(evaluate(&p, &lone, false), Err(Error::Data(_))));
}
