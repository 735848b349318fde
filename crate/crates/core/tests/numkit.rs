mod common;

use common::gradcheck;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use recorrect::numkit::{Array, AttentionLayout, Dropout, NumError, Tape, Var};

fn rand_array(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Array<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-1.0..1.0) * scale).collect();
    Array::new(shape, data).unwrap()
}

#[test]
fn sum_gradient_is_all_ones() {
    let mut t = Tape::<f32>::new();
    let v = t.leaf(Array::from_vec(vec![0.3, -2.0, 5.0]));
    let s = t.sum(v);
    let g = t.backward(s).unwrap();
    assert_eq!(g.get(v).unwrap(), &[1.0, 1.0, 1.0]);
}

#[test]
fn dot_gradient_is_twice_input() {
    let mut t = Tape::<f32>::new();
    let v = t.leaf(Array::from_vec(vec![1.0, 2.0]));
    let d = t.dot(v, v).unwrap();
    let g = t.backward(d).unwrap();
    assert_eq!(g.get(v).unwrap(), &[2.0, 4.0]);
}

#[test]
fn cross_entropy_gradient_is_p_minus_onehot() {
    let mut t = Tape::<f64>::new();
    let z = t.leaf(Array::new(&[1, 2], vec![0.0, 0.0]).unwrap());
    let l = t.cross_entropy(z, &[Some(0)], 0.0).unwrap();
    assert!((t.value(l).data()[0] - 2f64.ln()).abs() < 1e-12);
    let g = t.backward(l).unwrap();
    assert_eq!(g.get(z).unwrap(), &[-0.5, 0.5]);
}

#[test]
fn non_scalar_loss_is_rejected() {
    let mut t = Tape::<f32>::new();
    let v = t.leaf(Array::from_vec(vec![1.0, 2.0]));
    assert!(matches!(t.backward(v), Err(NumError::NotScalar { .. })));
}

#[test]
fn shape_mismatch_is_rejected() {
    let mut t = Tape::<f32>::new();
    let a = t.leaf(Array::zeros(&[2, 3]));
    let b = t.leaf(Array::zeros(&[2, 3]));
    let c = t.leaf(Array::zeros(&[3]));
    assert!(t.matmul(a, b).is_err());
    assert!(t.add(a, c).is_err());
    assert!(t.add_row(a, a).is_err());
    assert!(t.gather(a, &[5]).is_err());
}

#[test]
fn dropout_is_identity_in_eval_and_seeded_in_train() {
    let mut t = Tape::<f32>::new();
    let x = t.leaf(Array::full(&[4, 8], 1.0));
    let eval = Dropout { p: 0.5, seed: 1, train: false };
    assert_eq!(t.dropout(x, eval), x);
    let train = Dropout { p: 0.5, seed: 1, train: true };
    let a = t.dropout(x, train);
    let b = t.dropout(x, train);
    assert_eq!(t.value(a), t.value(b));
    assert!(t.value(a).data().iter().all(|&v| v == 0.0 || v == 2.0));
    let c = t.dropout(x, Dropout { seed: 2, ..train });
    assert_ne!(t.value(a), t.value(c));
}

#[test]
fn primitives_keep_values_finite() {
    let mut t = Tape::<f32>::new();
    let x = t.leaf(Array::new(&[1, 3], vec![1000.0, -1000.0, 0.0]).unwrap());
    let s = t.softmax_rows(x).unwrap();
    assert!(t.value(s).all_finite());
    let l = t.cross_entropy(x, &[Some(1)], 0.1).unwrap();
    assert!(t.value(l).all_finite());
}

#[test]
fn attention_masks_padding_and_future() {
    // One sequence, keys 2 of 3 valid; causal: query 0 only sees key 0.
    let mut t = Tape::<f64>::new();
    let q = t.leaf(Array::full(&[3, 2], 0.5));
    let k = t.leaf(Array::full(&[3, 2], 0.5));
    let v = t.leaf(Array::new(&[3, 2], vec![1.0, 1.0, 3.0, 3.0, 100.0, 100.0]).unwrap());
    let layout = AttentionLayout {
        batch: 1,
        q_len: 3,
        k_len: 3,
        heads: 1,
        key_lengths: vec![2],
        causal: true,
    };
    let o = t.attention(q, k, v, layout, Dropout::off()).unwrap();
    let out = t.value(o).data();
    assert_eq!(&out[0..2], &[1.0, 1.0]);
    assert_eq!(&out[2..4], &[2.0, 2.0]);
    assert_eq!(&out[4..6], &[2.0, 2.0]);
}

fn transformer_block(t: &mut Tape<f64>, v: &[Var], dropout: Dropout, causal: bool) -> Var {
    // v: x[4,6] w[6,6] b[6] gain[6] bias[6] table[5,6] wout[6,5]
    let ids = [0usize, 3, 3, 1];
    let emb = t.gather(v[5], &ids).unwrap();
    let x = t.add(v[0], emb).unwrap();
    let q = t.matmul(x, v[1]).unwrap();
    let q = t.add_row(q, v[2]).unwrap();
    let layout = AttentionLayout {
        batch: 2,
        q_len: 2,
        k_len: 2,
        heads: 2,
        key_lengths: vec![2, 1],
        causal,
    };
    let a = t.attention(q, x, x, layout, dropout).unwrap();
    let a = t.dropout(a, dropout);
    let h = t.add(x, a).unwrap();
    let h = t.layer_norm(h, v[3], v[4], 1e-5).unwrap();
    let h = t.gelu(h);
    let h = t.scale(h, 0.7);
    let logits = t.matmul(h, v[6]).unwrap();
    let tied = t.matmul_bt(h, v[5]).unwrap();
    let logits = t.add(logits, tied).unwrap();
    t.cross_entropy(logits, &[Some(1), None, Some(4), Some(0)], 0.1).unwrap()
}

fn block_leaves(rng: &mut ChaCha8Rng) -> Vec<Array<f64>> {
    vec![
        rand_array(rng, &[4, 6], 1.0),
        rand_array(rng, &[6, 6], 0.5),
        rand_array(rng, &[6], 0.5),
        Array::from_f64(&[6], &[1.0, 0.8, 1.2, 1.1, 0.9, 1.0]).unwrap(),
        rand_array(rng, &[6], 0.2),
        rand_array(rng, &[5, 6], 0.5),
        rand_array(rng, &[6, 5], 0.5),
    ]
}

#[test]
fn composite_block_passes_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let leaves = block_leaves(&mut rng);
    for causal in [false, true] {
        let err = gradcheck(&leaves, 1e-3, &|t, v| transformer_block(t, v, Dropout::off(), causal));
        assert!(err < 1e-4, "causal={causal} err={err}");
    }
    // a fixed dropout mask is a constant multiplier, so gradients still check
    let d = Dropout { p: 0.3, seed: 11, train: true };
    let err = gradcheck(&leaves, 1e-3, &|t, v| transformer_block(t, v, d, false));
    assert!(err < 1e-4, "dropout err={err}");
}

#[derive(Debug, Clone, Copy)]
enum Prim {
    MatMul,
    MatMulBt,
    Mul,
    AddRow,
    Gelu,
    LayerNorm,
    Softmax,
    Scale,
}

fn apply(t: &mut Tape<f64>, p: Prim, x: Var, params: &[Var]) -> Var {
    match p {
        Prim::MatMul => t.matmul(x, params[0]).unwrap(),
        Prim::MatMulBt => t.matmul_bt(x, params[0]).unwrap(),
        Prim::Mul => t.mul(x, x).unwrap(),
        Prim::AddRow => t.add_row(x, params[1]).unwrap(),
        Prim::Gelu => t.gelu(x),
        Prim::LayerNorm => t.layer_norm(x, params[2], params[1], 1e-5).unwrap(),
        Prim::Softmax => t.softmax_rows(x).unwrap(),
        Prim::Scale => t.scale(x, -1.3),
    }
}

fn prim_strategy() -> impl Strategy<Value = Prim> {
    prop_oneof![
        Just(Prim::MatMul),
        Just(Prim::MatMulBt),
        Just(Prim::Mul),
        Just(Prim::AddRow),
        Just(Prim::Gelu),
        Just(Prim::LayerNorm),
        Just(Prim::Softmax),
        Just(Prim::Scale),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn random_graphs_pass_gradcheck(ops in prop::collection::vec(prim_strategy(), 1..5), seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // x[3,4], square w[4,4], bias[4], gain[4], target weights[3,4]
        let leaves = vec![
            rand_array(&mut rng, &[3, 4], 1.0),
            rand_array(&mut rng, &[4, 4], 0.7),
            rand_array(&mut rng, &[4], 0.5),
            Array::from_f64(&[4], &[1.0, 1.3, 0.7, 0.9]).unwrap(),
            rand_array(&mut rng, &[3, 4], 1.0),
        ];
        let ops2 = ops.clone();
        let build = move |t: &mut Tape<f64>, v: &[Var]| {
            let mut x = v[0];
            for &p in &ops2 {
                x = apply(t, p, x, &v[1..4]);
            }
            let y = t.mul(x, v[4]).unwrap();
            t.sum(y)
        };
        let err = gradcheck(&leaves, 1e-3, &build);
        prop_assert!(err < 1e-4, "ops={:?} err={}", ops, err);
    }

    #[test]
    fn evaluation_is_bit_deterministic(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let leaves: Vec<Array<f32>> = block_leaves(&mut rng).iter().map(|a| a.cast()).collect();
        let run = || {
            let mut t = Tape::<f32>::new();
            let v: Vec<Var> = leaves.iter().map(|a| t.leaf(a.clone())).collect();
            let x = t.matmul(v[0], v[1]).unwrap();
            let x = t.layer_norm(x, v[3], v[4], 1e-5).unwrap();
            let x = t.dropout(x, Dropout { p: 0.2, seed, train: true });
            let l = t.matmul(x, v[6]).unwrap();
            let l = t.cross_entropy(l, &[Some(0), Some(1), Some(2), Some(3)], 0.1).unwrap();
            let g = t.backward(l).unwrap();
            (t.value(l).clone(), g.get(v[1]).unwrap().to_vec())
        };
        prop_assert_eq!(run(), run());
    }
}
