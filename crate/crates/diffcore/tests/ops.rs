use diffcore::{CausalConv1d, DiffError, Graph, GruCell, LstmCell, Mode, ParameterStore, Tensor, LEAKY_SLOPE};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn zeroed(store: &mut ParameterStore) {
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for n in names {
        store.get_mut(&n).unwrap().data_mut().fill(0.0);
    }
}

#[test]
fn dense_identity_and_zero_input() {
    let mut g = Graph::eval();
    let x = g.constant(Tensor::matrix(2, 2, vec![1.0, -2.0, 3.5, 4.0]));
    let eye = g.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]));
    let zero_b = g.constant(Tensor::row(vec![0.0, 0.0]));
    let y = g.dense(x, eye, zero_b).unwrap();
    assert_eq!(g.value(y), g.value(x));

    let z = g.constant(Tensor::zeros(&[1, 2]));
    let w = g.constant(Tensor::matrix(2, 3, vec![1.0; 6]));
    let b = g.constant(Tensor::row(vec![0.5, -1.0, 2.0]));
    let y = g.dense(z, w, b).unwrap();
    assert_eq!(g.value(y).data(), &[0.5, -1.0, 2.0]);

    let bad = g.constant(Tensor::matrix(3, 3, vec![0.0; 9]));
    assert!(matches!(g.dense(x, bad, b), Err(DiffError::Shape { .. })));
}

#[test]
fn leaky_relu_values() {
    let mut g = Graph::eval();
    let x = g.constant(Tensor::row(vec![2.0, -2.0, 0.0]));
    let y = g.leaky_relu(x, LEAKY_SLOPE);
    assert_eq!(g.value(y).data(), &[2.0, -0.02, 0.0]);
    let near = g.constant(Tensor::row(vec![-1e-12, 1e-12]));
    let y = g.leaky_relu(near, LEAKY_SLOPE);
    assert!(g.value(y).max_abs() <= 1e-12);
}

#[test]
fn gru_with_zero_weights_halves_the_state() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParameterStore::new();
    let cell = GruCell::new(&mut store, &mut rng, "gru", 2, 3).unwrap();
    zeroed(&mut store);
    let mut g = Graph::eval();
    let x = g.constant(Tensor::row(vec![0.3, -0.9]));
    let h = g.constant(Tensor::row(vec![1.0, -4.0, 0.5]));
    let h1 = cell.forward(&mut g, &store, x, h).unwrap();
    assert_eq!(g.value(h1).data(), &[0.5, -2.0, 0.25]);
    let h0 = g.constant(Tensor::zeros(&[1, 3]));
    let h1 = cell.forward(&mut g, &store, x, h0).unwrap();
    assert_eq!(g.value(h1).data(), &[0.0, 0.0, 0.0]);
    let wide = g.constant(Tensor::zeros(&[1, 4]));
    assert!(cell.forward(&mut g, &store, x, wide).is_err());
}

#[test]
fn lstm_with_zero_weights_has_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParameterStore::new();
    let cell = LstmCell::new(&mut store, &mut rng, "lstm", 2, 2).unwrap();
    zeroed(&mut store);
    let mut g = Graph::eval();
    let x = g.constant(Tensor::row(vec![1.0, 2.0]));
    let h = g.constant(Tensor::zeros(&[1, 2]));
    let c0 = g.constant(Tensor::zeros(&[1, 2]));
    let (h1, c1) = cell.forward(&mut g, &store, x, h, c0).unwrap();
    assert_eq!(g.value(h1).data(), &[0.0, 0.0]);
    assert_eq!(g.value(c1).data(), &[0.0, 0.0]);

    let c = g.constant(Tensor::row(vec![2.0, -0.6]));
    let (h1, c1) = cell.forward(&mut g, &store, x, h, c).unwrap();
    for (i, cv) in [2.0f64, -0.6].iter().enumerate() {
        assert!((g.value(c1).data()[i] - 0.5 * cv).abs() < 1e-15);
        assert!((g.value(h1).data()[i] - 0.5 * (0.5 * cv).tanh()).abs() < 1e-15);
    }
}

fn conv_output(x: &[f64], kernel_taps: &[f64], dilation: usize) -> Result<Vec<f64>, DiffError> {
    let mut g = Graph::eval();
    let xv = g.constant(Tensor::matrix(x.len(), 1, x.to_vec()));
    let w = g.constant(Tensor::matrix(kernel_taps.len(), 1, kernel_taps.to_vec()));
    let b = g.constant(Tensor::scalar(0.0));
    let y = g.causal_conv1d(xv, w, b, 1, kernel_taps.len(), dilation)?;
    Ok(g.value(y).data().to_vec())
}

#[test]
fn causal_conv_examples() {
    assert_eq!(conv_output(&[1.0, 2.0, 3.0], &[1.0, 1.0], 1).unwrap(), vec![3.0, 5.0]);
    assert_eq!(conv_output(&[1.0, 2.0, 3.0], &[2.0], 1).unwrap(), vec![2.0, 4.0, 6.0]);
    // K=2, D=3 on four frames: one output mixing frames 0 and 3
    assert_eq!(conv_output(&[1.0, 10.0, 100.0, 1000.0], &[1.0, 2.0], 3).unwrap(), vec![2001.0]);
    assert!(matches!(
        conv_output(&[1.0, 2.0, 3.0], &[1.0, 1.0], 3),
        Err(DiffError::TooShort { len: 3, required: 4 })
    ));
}

#[test]
fn causal_conv_never_reads_the_future() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParameterStore::new();
    let conv = CausalConv1d::new(&mut store, &mut rng, "c", 2, 3, 3, 2).unwrap();
    let (len, batch) = (12, 2);
    let base = Tensor::from_fn(len * batch, 2, |r, c| ((r * 7 + c * 3) % 5) as f64 - 2.0);
    let run = |x: Tensor| {
        let mut g = Graph::eval();
        let xv = g.constant(x);
        let y = conv.forward(&mut g, &store, xv, batch).unwrap();
        g.value(y).clone()
    };
    let reference = run(base.clone());
    let span = conv.span();
    for t in 0..len {
        let mut x = base.clone();
        for s in 0..batch {
            x.data_mut()[(t * batch + s) * 2] += 1.0;
        }
        let out = run(x);
        // output step o is aligned with input step o + span
        for o in 0..len - span {
            let changed = out.row_slice(o * batch) != reference.row_slice(o * batch);
            if o + span < t {
                assert!(!changed, "output {o} saw input {t}");
            }
        }
    }
}

#[test]
fn attention_special_cases() {
    // equal keys give uniform weights, so the output is the mean of the values
    let mut g = Graph::eval();
    let q = g.constant(Tensor::from_fn(3, 2, |r, c| (r + c) as f64));
    let k = g.constant(Tensor::filled(&[3, 2], 0.7));
    let v = g.constant(Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 9.0]));
    let out = g.attention(q, k, v, 1, 3, 1).unwrap();
    for r in 0..3 {
        assert!((g.value(out).at(r, 0) - 3.0).abs() < 1e-12);
        assert!((g.value(out).at(r, 1) - 5.0).abs() < 1e-12);
    }
    let w = g.attention_weights(out).unwrap();
    assert!((w.get(0, 0, 1, 2) - 1.0 / 3.0).abs() < 1e-15);

    // a single position attends to itself with weight one
    let q = g.constant(Tensor::row(vec![0.3, -2.0]));
    let v = g.constant(Tensor::row(vec![4.0, 5.0]));
    let out = g.attention(q, q, v, 1, 1, 2).unwrap();
    assert_eq!(g.value(out).data(), &[4.0, 5.0]);
    assert_eq!(g.attention_weights(out).unwrap().row(0, 1, 0), &[1.0]);

    assert!(matches!(g.attention(q, q, v, 1, 1, 3), Err(DiffError::HeadCount { .. })));
}

#[test]
fn masked_mse_examples() {
    let mut g = Graph::eval();
    let p = g.constant(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
    let same = g.masked_mse(p, g.value(p).clone(), Tensor::filled(&[2, 2], 1.0)).unwrap();
    assert_eq!(g.value(same).item(), 0.0);
    let target = Tensor::matrix(2, 2, vec![1.0, 5.0, 0.0, 0.0]);
    let mask = Tensor::matrix(2, 2, vec![0.0, 1.0, 0.0, 0.0]);
    let one = g.masked_mse(p, target.clone(), mask).unwrap();
    assert_eq!(g.value(one).item(), 9.0);
    assert!(matches!(
        g.masked_mse(p, target, Tensor::zeros(&[2, 2])),
        Err(DiffError::EmptyMask)
    ));
}

#[test]
fn dropout_is_identity_in_evaluation() {
    let x = Tensor::from_fn(4, 5, |r, c| (r * 5 + c) as f64);
    let mut g = Graph::eval();
    let v = g.constant(x.clone());
    let d = g.dropout(v, 0.5).unwrap();
    let d = g.drop_path(d, 0.5, 2).unwrap();
    assert_eq!(g.value(d), &x);

    let mut g = Graph::new(Mode::Train, 1);
    let v = g.constant(Tensor::filled(&[8, 3], 1.0));
    let d = g.drop_path(v, 0.5, 2).unwrap();
    for block in g.value(d).data().chunks(6) {
        assert!(block.iter().all(|x| *x == block[0]));
        assert!(block[0] == 0.0 || block[0] == 2.0);
    }
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(values in prop::collection::vec(-30.0f64..30.0, 12)) {
        let mut g = Graph::eval();
        let x = g.constant(Tensor::matrix(3, 4, values));
        let s = g.softmax_rows(x);
        for r in 0..3 {
            let total: f64 = g.value(s).row_slice(r).iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_rows_sum_to_one(values in prop::collection::vec(-5.0f64..5.0, 48), heads in 1usize..3) {
        let mut g = Graph::eval();
        let q = g.constant(Tensor::matrix(6, 4, values[..24].to_vec()));
        let k = g.constant(Tensor::matrix(6, 4, values[24..].to_vec()));
        let out = g.attention(q, k, k, 2, 3, heads * 2).unwrap();
        let w = g.attention_weights(out).unwrap();
        for grp in 0..2 {
            for h in 0..heads * 2 {
                for i in 0..3 {
                    let total: f64 = w.row(grp, h, i).iter().sum();
                    prop_assert!((total - 1.0).abs() < 1e-12);
                }
            }
        }
    }
}
