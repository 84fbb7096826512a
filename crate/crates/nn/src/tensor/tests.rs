use super::*;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn matmul_shape_and_values() {
    let store = ParameterStore::new(Precision::F64);
    let mut g = Graph::new(Precision::F64);
    let a = g.value_node(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    let b = g.value_node(3, 4, (0..12).map(|x| x as f64).collect()).unwrap();
    let c = g.matmul(a, b).unwrap();
    assert_eq!((g.rows(c), g.cols(c)), (2, 4));
    g.evaluate(&store).unwrap();
    // First row: [1,2,3] . columns of b.
    assert_eq!(g.value(c)[0], 1.0 * 0.0 + 2.0 * 4.0 + 3.0 * 8.0);
    assert_eq!(g.value(c)[7], 4.0 * 3.0 + 5.0 * 7.0 + 6.0 * 11.0);
}

#[test]
fn matmul_rejects_bad_shapes_at_construction() {
    let mut g = Graph::new(Precision::F64);
    let a = g.value_node(2, 3, vec![0.0; 6]).unwrap();
    let b = g.value_node(2, 3, vec![0.0; 6]).unwrap();
    assert!(matches!(g.matmul(a, b), Err(TensorError::Shape(_))));
}

#[test]
fn softmax_of_equal_logits_is_uniform() {
    let store = ParameterStore::new(Precision::F64);
    let mut g = Graph::new(Precision::F64);
    let x = g.value_node(1, 5, vec![1.7; 5]).unwrap();
    let s = g.softmax_rows(x);
    g.evaluate(&store).unwrap();
    for v in g.value(s) {
        assert!((v - 0.2).abs() < 1e-12);
    }
}

#[test]
fn hard_tanh_clips_to_unit_interval() {
    let store = ParameterStore::new(Precision::F64);
    let mut g = Graph::new(Precision::F64);
    let x = g.value_node(1, 3, vec![1.7, -0.2, 0.4]).unwrap();
    let y = g.hard_tanh01(x);
    g.evaluate(&store).unwrap();
    assert_eq!(g.value(y), &[1.0, 0.0, 0.4]);
}

#[test]
fn backward_of_square_matches_hand_derivative() {
    let store = ParameterStore::new(Precision::F64);
    let mut g = Graph::new(Precision::F64);
    let x = g.value_node(1, 1, vec![3.0]).unwrap();
    let y = g.mul(x, x).unwrap();
    let loss = g.sum_all(y);
    g.evaluate(&store).unwrap();
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x), &[6.0]);
}

#[test]
fn mse_gradient_is_zero_at_target() {
    let store = ParameterStore::new(Precision::F64);
    let mut g = Graph::new(Precision::F64);
    let pred = g.value_node(2, 2, vec![0.3, -0.7, 1.1, 0.0]).unwrap();
    let target = g.value_node(2, 2, vec![0.3, -0.7, 1.1, 0.0]).unwrap();
    let loss = g.mse(pred, target).unwrap();
    g.evaluate(&store).unwrap();
    g.backward(loss).unwrap();
    assert!(g.grad(pred).iter().all(|&v| v == 0.0));
}

#[test]
fn backward_requires_scalar_loss() {
    let store = ParameterStore::new(Precision::F64);
    let mut g = Graph::new(Precision::F64);
    let x = g.value_node(2, 2, vec![1.0; 4]).unwrap();
    let y = g.relu(x);
    g.evaluate(&store).unwrap();
    assert!(matches!(g.backward(y), Err(TensorError::Usage(_))));
}

#[test]
fn nan_poisoning_reports_node_name() {
    let store = ParameterStore::new(Precision::F64);
    let mut g = Graph::new(Precision::F64);
    let x = g.value_node(1, 2, vec![1.0, 0.0]).unwrap();
    let inv = g.value_node(1, 2, vec![0.0, 0.0]).unwrap();
    // 1/0 style poisoning via 0 * inf is easiest to stage with tanh'd
    // division; here we inject NaN directly through a value node product.
    let bad = g.value_node(1, 2, vec![f64::NAN, 1.0]).unwrap();
    g.set_label(bad, "poison");
    let _ = (x, inv);
    match g.evaluate(&store) {
        Err(TensorError::NonFinite(name)) => assert!(name.contains("poison"), "{name}"),
        other => panic!("expected NonFinite, got {other:?}"),
    }
}

/// Every primitive under a single loss, checked against central differences.
#[test]
fn primitive_suite_matches_finite_differences() {
    let mut store = ParameterStore::new(Precision::F64);
    let mut r = rng(11);
    store.add_param("w", 4, 3, Init::XavierUniform, &mut r);
    store.add_param("b", 1, 3, Init::XavierUniform, &mut r);
    store.add_param("gain", 1, 3, Init::XavierUniform, &mut r);
    store.add_param("mixer", 3, 4, Init::XavierUniform, &mut r);

    let err = gradient_check(&store, 1, |g, s| {
        let w = g.param(s, "w")?;
        let b = g.param(s, "b")?;
        let gain = g.param(s, "gain")?;
        let mixer = g.param(s, "mixer")?;
        let x = g.value_node(
            5,
            4,
            vec![
                0.3, -1.2, 0.8, 0.1, 0.5, 0.9, -0.3, 0.2, -0.7, 0.4, 1.3, -0.2, 0.6, -0.5, 0.2,
                0.7, -0.1, 1.1, -0.9, 0.3,
            ],
        )?;
        let h = g.matmul(x, w)?;
        let h = g.add_bias(h, b)?;
        let h = g.scale_rows(h, gain)?;
        let t = g.tanh(h);
        let rl = g.relu(h);
        let sg = g.sigmoid(h);
        let ht = g.hard_tanh01(h);
        let sm = g.softmax_rows(h);
        let ln = g.layer_norm_rows(h);
        let cat = g.concat_cols(&[t, rl])?;
        let cat2 = g.concat_rows(&[sg, ht])?;
        let sl = g.slice_cols(cat, 1, 4)?;
        let sl2 = g.slice_rows(cat2, 2, 7)?;
        let tr = g.transpose(sl);
        let back = g.matmul(ln, mixer)?;
        let idx = Arc::new(vec![0usize, 2, 2, 1, 4]);
        let gathered = g.gather_rows(sm, idx)?;
        let segs = Arc::new(vec![1usize, 0, 1, 0, 1]);
        let seg = g.segment_sum_rows(gathered, segs, 2)?;
        let su = g.sum_all(tr);
        let me = g.mean_all(sl2);
        let s1 = g.sum_all(back);
        let s2 = g.sum_all(seg);
        let a = g.add(su, me)?;
        let b2 = g.add(s1, s2)?;
        let diff = g.sub(a, b2)?;
        let sq = g.mul(diff, diff)?;
        Ok(g.scale(sq, 0.5))
    })
    .unwrap();
    assert!(err < 1e-7, "max relative error {err}");
}

#[test]
fn attention_and_bce_match_finite_differences() {
    let mut store = ParameterStore::new(Precision::F64);
    let mut r = rng(5);
    store.add_param("wq", 4, 6, Init::XavierUniform, &mut r);
    store.add_param("wk", 4, 6, Init::XavierUniform, &mut r);
    store.add_param("wv", 4, 6, Init::XavierUniform, &mut r);
    store.add_param("head", 6, 1, Init::XavierUniform, &mut r);

    let err = gradient_check(&store, 2, |g, s| {
        let x = g.value_node(
            3,
            4,
            vec![0.2, -0.4, 0.7, 0.1, -0.3, 0.5, 0.9, -0.8, 0.6, 0.3, -0.2, 0.4],
        )?;
        let q = {
            let w = g.param(s, "wq")?;
            g.matmul(x, w)?
        };
        let k = {
            let w = g.param(s, "wk")?;
            g.matmul(x, w)?
        };
        let v = {
            let w = g.param(s, "wv")?;
            g.matmul(x, w)?
        };
        let ctx = g.attention(q, k, v)?;
        let head = g.param(s, "head")?;
        let logits = g.matmul(ctx, head)?;
        let targets = g.value_node(3, 1, vec![1.0, 0.0, 1.0])?;
        g.bce_with_logits_mean(logits, targets)
    })
    .unwrap();
    assert!(err < 1e-6, "max relative error {err}");
}

#[test]
fn two_layer_mlp_gradient_matches_finite_differences() {
    let mut store = ParameterStore::new(Precision::F64);
    let mut r = rng(3);
    store.add_param("w1", 6, 16, Init::XavierUniform, &mut r);
    store.add_param("b1", 1, 16, Init::XavierUniform, &mut r);
    store.add_param("w2", 16, 2, Init::XavierUniform, &mut r);
    store.add_param("b2", 1, 2, Init::XavierUniform, &mut r);
    use rand::Rng as _;
    let x: Vec<f64> = (0..8 * 6).map(|_| r.random_range(-1.0..1.0)).collect();
    let y: Vec<f64> = (0..8 * 2).map(|_| r.random_range(-1.0..1.0)).collect();

    let err = gradient_check(&store, 4, move |g, s| {
        let xin = g.value_node(8, 6, x.clone())?;
        let target = g.value_node(8, 2, y.clone())?;
        let w1 = g.param(s, "w1")?;
        let b1 = g.param(s, "b1")?;
        let w2 = g.param(s, "w2")?;
        let b2 = g.param(s, "b2")?;
        let h = g.matmul(xin, w1)?;
        let h = g.add_bias(h, b1)?;
        let h = g.relu(h);
        let o = g.matmul(h, w2)?;
        let o = g.add_bias(o, b2)?;
        g.mse(o, target)
    })
    .unwrap();
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn adam_first_step_approximates_signed_gradient() {
    let mut store = ParameterStore::new(Precision::F64);
    store.insert(
        "w",
        Tensor {
            rows: 1,
            cols: 3,
            data: vec![1.0, -2.0, 0.5],
        },
    );
    let mut grads = GradMap::new();
    grads.insert("w".into(), vec![0.3, -0.7, 0.001]);
    let lr = 0.01;
    store.optimizer_step(&grads, &Optimizer::adam(lr)).unwrap();
    let w = &store.get("w").unwrap().data;
    assert!((w[0] - (1.0 - lr)).abs() < 1e-6, "w0 {}", w[0]);
    assert!((w[1] - (-2.0 + lr)).abs() < 1e-6);
    assert!((w[2] - (0.5 - lr)).abs() < 1e-4);
}

#[test]
fn sgd_with_zero_momentum_is_plain_sgd() {
    let mut store = ParameterStore::new(Precision::F64);
    store.insert(
        "w",
        Tensor {
            rows: 1,
            cols: 2,
            data: vec![1.0, 1.0],
        },
    );
    let mut grads = GradMap::new();
    grads.insert("w".into(), vec![0.5, -0.25]);
    store
        .optimizer_step(&grads, &Optimizer::sgd_momentum(0.1, 0.0))
        .unwrap();
    store
        .optimizer_step(&grads, &Optimizer::sgd_momentum(0.1, 0.0))
        .unwrap();
    let w = &store.get("w").unwrap().data;
    assert!((w[0] - (1.0 - 2.0 * 0.1 * 0.5)).abs() < 1e-12);
    assert!((w[1] - (1.0 + 2.0 * 0.1 * 0.25)).abs() < 1e-12);
}

#[test]
fn adam_converges_on_quadratic() {
    // Independent oracle: run the analytic recurrence on f(w) = (w-1)^2.
    let mut store = ParameterStore::new(Precision::F64);
    store.insert(
        "w",
        Tensor {
            rows: 1,
            cols: 1,
            data: vec![0.0],
        },
    );
    let opt = Optimizer::adam(0.1);
    for _ in 0..200 {
        let w = store.get("w").unwrap().data[0];
        let mut grads = GradMap::new();
        grads.insert("w".into(), vec![2.0 * (w - 1.0)]);
        store.optimizer_step(&grads, &opt).unwrap();
    }
    let w = store.get("w").unwrap().data[0];
    assert!((w - 1.0).abs() < 1e-2, "w = {w}");
    assert_eq!(store.step(), 200);
}

#[test]
fn optimizer_rejects_missing_or_unknown_gradients() {
    let mut store = ParameterStore::new(Precision::F64);
    store.insert("w", Tensor::zeros(1, 1));
    store.insert("v", Tensor::zeros(1, 1));
    let mut grads = GradMap::new();
    grads.insert("w".into(), vec![1.0]);
    assert!(matches!(
        store.optimizer_step(&grads, &Optimizer::adam(0.1)),
        Err(TensorError::Usage(_))
    ));
    grads.insert("v".into(), vec![1.0]);
    grads.insert("ghost".into(), vec![1.0]);
    assert!(matches!(
        store.optimizer_step(&grads, &Optimizer::adam(0.1)),
        Err(TensorError::Usage(_))
    ));
}

#[test]
fn f32_mode_rounds_values_through_f32() {
    let store = ParameterStore::new(Precision::F32);
    let mut g = Graph::new(Precision::F32);
    let x = g.value_node(1, 1, vec![0.1]).unwrap();
    let y = g.scale(x, 3.0);
    g.evaluate(&store).unwrap();
    assert_eq!(g.value(y)[0], (0.1f64 as f32 * 3.0f32) as f64);
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let mut store = ParameterStore::new(Precision::F32);
    let mut r = rng(9);
    store.add_param("layer.w", 7, 5, Init::XavierUniform, &mut r);
    store.add_param("layer.b", 1, 5, Init::XavierUniform, &mut r);
    // Give it optimizer state and a step count.
    let grads: GradMap = store
        .names()
        .map(|n| {
            let t = store.get(n).unwrap();
            (n.to_string(), vec![0.125; t.data.len()])
        })
        .collect();
    store.optimizer_step(&grads, &Optimizer::adam(0.01)).unwrap();

    let mut bytes = Vec::new();
    write_checkpoint(&store, &mut bytes).unwrap();
    assert_eq!(&bytes[..8], CHECKPOINT_MAGIC);
    let back = read_checkpoint(&mut bytes.as_slice()).unwrap();
    assert_eq!(store, back);

    let mut bytes2 = Vec::new();
    write_checkpoint(&back, &mut bytes2).unwrap();
    assert_eq!(bytes, bytes2);
}

#[test]
fn checkpoint_rejects_bad_magic() {
    let mut bytes = Vec::new();
    write_checkpoint(&ParameterStore::new(Precision::F32), &mut bytes).unwrap();
    bytes[0] = b'X';
    assert!(read_checkpoint(&mut bytes.as_slice()).is_err());
}

#[test]
fn sinusoidal_table_has_unit_amplitude_pairs() {
    let table = sinusoidal_encoding_table(4, 8);
    for t in 0..4 {
        for i in (0..8).step_by(2) {
            let s = table[t * 8 + i];
            let c = table[t * 8 + i + 1];
            assert!((s * s + c * c - 1.0).abs() < 1e-12);
        }
    }
    // Time zero encodes as (sin 0, cos 0) pairs.
    assert_eq!(table[0], 0.0);
    assert_eq!(table[1], 1.0);
}
