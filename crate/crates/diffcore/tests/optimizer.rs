use diffcore::{AmsGrad, Gradients, ParameterStore, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn two_step_scalar_trace_matches_hand_recurrence() {
    let opt = AmsGrad::default();
    let mut store = ParameterStore::new();
    store.add("w", Tensor::scalar(0.5)).unwrap();
    let mut grads = Gradients::new();
    grads.insert("w".into(), Tensor::scalar(1.0));

    // written out independently of the implementation
    let (lr, wd, b1, b2, eps) = (1e-4, 1e-3, 0.9, 0.999, 1e-8);
    let mut theta: f64 = 0.5;
    let (mut m, mut v, mut vmax) = (0.0f64, 0.0f64, 0.0f64);
    for t in 1..=2 {
        let g = 1.0 + wd * theta;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        vmax = vmax.max(v);
        let mhat = m / (1.0 - b1.powi(t));
        let vhat = vmax / (1.0 - b2.powi(t));
        theta -= lr * mhat / (vhat.sqrt() + eps);

        opt.step(&mut store, &grads).unwrap();
        assert!((store.get("w").unwrap().item() - theta).abs() < 1e-12);
        assert!((store.first_moment("w").unwrap().item() - m).abs() < 1e-12);
        assert!((store.max_second_moment("w").unwrap().item() - vmax).abs() < 1e-12);
    }
    assert_eq!(store.step_count(), 2);
}

#[test]
fn max_second_moment_never_decreases() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParameterStore::new();
    store.add("a", Tensor::from_fn(3, 4, |_, _| rng.gen_range(-1.0..1.0))).unwrap();
    store.add("b", Tensor::row(vec![0.0; 5])).unwrap();
    let opt = AmsGrad::default();
    let mut prev: Vec<Vec<f64>> = vec![vec![0.0; 12], vec![0.0; 5]];
    for step in 0..100 {
        let mut grads = Gradients::new();
        // bursts followed by quiet steps make the raw second moment shrink
        let scale = if step % 10 < 3 { 10.0 } else { 0.01 };
        grads.insert("a".into(), Tensor::from_fn(3, 4, |_, _| scale * rng.gen_range(-1.0..1.0)));
        grads.insert("b".into(), Tensor::from_fn(1, 5, |_, _| scale * rng.gen_range(-1.0..1.0)));
        opt.step(&mut store, &grads).unwrap();
        for (i, name) in ["a", "b"].iter().enumerate() {
            let now = store.max_second_moment(name).unwrap().data().to_vec();
            let raw = store.second_moment(name).unwrap().data();
            for j in 0..now.len() {
                assert!(now[j] >= prev[i][j]);
                assert!(now[j] >= raw[j]);
            }
            prev[i] = now;
        }
    }
}

proptest! {
    #[test]
    fn memoryless_amsgrad_is_sign_scaled_sgd(theta in -5.0f64..5.0, g in -100.0f64..100.0, lr in 1e-5f64..1.0) {
        let opt = AmsGrad { lr, weight_decay: 0.0, beta1: 0.0, beta2: 0.0, eps: 1e-8 };
        let mut store = ParameterStore::new();
        store.add("x", Tensor::scalar(theta)).unwrap();
        let mut grads = Gradients::new();
        grads.insert("x".into(), Tensor::scalar(g));
        opt.step(&mut store, &grads).unwrap();
        let expected = theta - lr * g / (g.abs() + 1e-8);
        prop_assert!((store.get("x").unwrap().item() - expected).abs() < 1e-12);
    }
}
