use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::finite_diff::{central_diff, max_rel_err};
use super::{NumericsError, Tape, Tensor, Var};

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect()
}

/// Check the tape gradient of `build` (mapping one leaf to a scalar)
/// against central finite differences, over several random draws.
fn check_grad(shape: &[usize], seed: u64, trials: usize, build: impl Fn(&Tape, Var) -> Var) {
    let n: usize = shape.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..trials {
        let x0 = rand_vec(&mut rng, n);
        let mut eval = |x: &[f64]| -> f64 {
            let tape = Tape::new();
            let leaf = tape.leaf(Tensor::new(shape.to_vec(), x.to_vec()).unwrap());
            let loss = build(&tape, leaf);
            tape.value(loss).item().unwrap()
        };
        let numeric = central_diff(&mut eval, &x0, 1e-5);
        let tape = Tape::new();
        let leaf = tape.leaf(Tensor::new(shape.to_vec(), x0.clone()).unwrap());
        let loss = build(&tape, leaf);
        let store = tape.backward(loss).unwrap();
        let analytic = store.grad(leaf, shape);
        let err = max_rel_err(analytic.data(), &numeric);
        assert!(err <= 1e-4, "gradient mismatch: rel err {err}");
    }
}

#[test]
fn matmul_identity() {
    let tape = Tape::new();
    let i = tape.leaf(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    let b = tape.leaf(Tensor::matrix(2, 2, vec![3.0, 4.0, 5.0, 6.0]).unwrap());
    let c = tape.matmul(i, b).unwrap();
    assert_eq!(tape.value(c).data(), &[3.0, 4.0, 5.0, 6.0]);
}

#[test]
fn matmul_hand_case() {
    let tape = Tape::new();
    let a = tape.leaf(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
    let b = tape.leaf(Tensor::matrix(2, 1, vec![3.0, 4.0]).unwrap());
    let c = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(c).data(), &[11.0]);
}

#[test]
fn matmul_matches_triple_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = rand_vec(&mut rng, 12);
    let b = rand_vec(&mut rng, 8);
    // scalar triple-loop reference
    let mut expect = vec![0.0; 6];
    for i in 0..3 {
        for j in 0..2 {
            for k in 0..4 {
                expect[i * 2 + j] += a[i * 4 + k] * b[k * 2 + j];
            }
        }
    }
    let tape = Tape::new();
    let va = tape.leaf(Tensor::matrix(3, 4, a).unwrap());
    let vb = tape.leaf(Tensor::matrix(4, 2, b).unwrap());
    let c = tape.matmul(va, vb).unwrap();
    for (got, want) in tape.value(c).data().iter().zip(&expect) {
        assert!((got - want).abs() <= 1e-12);
    }
}

#[test]
fn matmul_shape_mismatch_reports_both_shapes() {
    let tape = Tape::new();
    let a = tape.leaf(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap());
    let b = tape.leaf(Tensor::matrix(2, 2, vec![0.0; 4]).unwrap());
    let err = tape.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
}

#[test]
fn sigmoid_basics() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![0.0, 3.7, -3.7, 100.0, -100.0]));
    let y = tape.value(tape.sigmoid(x).unwrap());
    let d = y.data();
    assert_eq!(d[0], 0.5);
    assert!((d[1] + d[2] - 1.0).abs() < 1e-15, "sigmoid(x)+sigmoid(-x)=1");
    assert!(d[3] > 1.0 - 1e-12 && d[3] <= 1.0 && d[3].is_finite());
    assert!(d[4] >= 0.0 && d[4] < 1e-12);
}

#[test]
fn softmax_uniform_and_shift_invariance() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![0.0, 0.0, 0.0]));
    let y = tape.value(tape.softmax_rows(x).unwrap());
    for v in y.data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    let a = tape.leaf(Tensor::vector(vec![0.3, -1.2, 2.0]));
    let b = tape.leaf(Tensor::vector(vec![0.3 + 7.5, -1.2 + 7.5, 2.0 + 7.5]));
    let ya = tape.value(tape.softmax_rows(a).unwrap());
    let yb = tape.value(tape.softmax_rows(b).unwrap());
    for (p, q) in ya.data().iter().zip(yb.data()) {
        assert!((p - q).abs() < 1e-12);
    }
}

#[test]
fn softmax_extreme_logits_stable() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![1000.0, 0.0]));
    let y = tape.value(tape.softmax_rows(x).unwrap());
    assert!(y.all_finite());
    assert!((y.data()[0] - 1.0).abs() < 1e-12);
    assert!(y.data()[1] < 1e-12);
    assert!((y.data().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
}

#[test]
fn backward_linear_case() {
    // loss = sum(W x) with x fixed => dL/dW_ij = x_j
    let tape = Tape::new();
    let w = tape.leaf(Tensor::matrix(2, 3, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap());
    let x = tape.constant(Tensor::matrix(3, 1, vec![2.0, -1.0, 0.5]).unwrap());
    let y = tape.matmul(w, x).unwrap();
    let loss = tape.sum_all(y).unwrap();
    let store = tape.backward(loss).unwrap();
    let g = store.grad(w, &[2, 3]);
    assert_eq!(g.data(), &[2.0, -1.0, 0.5, 2.0, -1.0, 0.5]);
}

#[test]
fn backward_disconnected_param_gets_zero_grad() {
    let tape = Tape::new();
    let used = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
    let unused = tape.leaf(Tensor::vector(vec![3.0]));
    let loss = tape.sum_all(used).unwrap();
    let store = tape.backward(loss).unwrap();
    assert!(!store.has_grad(unused));
    assert_eq!(store.grad(unused, &[1]).data(), &[0.0]);
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
    assert!(matches!(
        tape.backward(x),
        Err(NumericsError::Contract(_))
    ));
}

#[test]
fn tape_linearity_of_backward() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let data = rand_vec(&mut rng, 6);
    let build = |tape: &Tape, x: Var| {
        let s = tape.sigmoid(x).unwrap();
        let t = tape.tanh(x).unwrap();
        (tape.sum_all(s).unwrap(), tape.sum_all(t).unwrap())
    };
    // combined
    let tape = Tape::new();
    let x = tape.leaf(Tensor::vector(data.clone()));
    let (l1, l2) = build(&tape, x);
    let both = tape.add(l1, l2).unwrap();
    let g_both = tape.backward(both).unwrap().grad(x, &[6]);
    // separate
    let tape2 = Tape::new();
    let x2 = tape2.leaf(Tensor::vector(data));
    let (m1, m2) = build(&tape2, x2);
    let g1 = tape2.backward(m1).unwrap().grad(x2, &[6]);
    let g2 = tape2.backward(m2).unwrap().grad(x2, &[6]);
    for i in 0..6 {
        assert!((g_both.data()[i] - (g1.data()[i] + g2.data()[i])).abs() < 1e-15);
    }
}

#[test]
fn forward_and_grad_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let tape = Tape::new();
        let x = tape.leaf(Tensor::matrix(3, 3, rand_vec(&mut rng, 9)).unwrap());
        let y = tape.leaf(Tensor::matrix(3, 3, rand_vec(&mut rng, 9)).unwrap());
        let z = tape.matmul(x, y).unwrap();
        let s = tape.sigmoid(z).unwrap();
        let loss = tape.sum_all(s).unwrap();
        let g = tape.backward(loss).unwrap().grad(x, &[3, 3]);
        (tape.value(loss).item().unwrap(), g.into_data())
    };
    assert_eq!(run(), run());
}

#[test]
fn relu_definition() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![-3.0, 2.0, 0.0]));
    let y = tape.value(tape.relu(x).unwrap());
    assert_eq!(y.data(), &[0.0, 2.0, 0.0]);
}

#[test]
fn gather_rows_identity_table() {
    let tape = Tape::new();
    let eye = tape.leaf(
        Tensor::matrix(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap(),
    );
    let y = tape.value(tape.gather_rows(eye, &[2, 0]).unwrap());
    assert_eq!(y.shape(), &[2, 3]);
    assert_eq!(y.data(), &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
}

#[test]
fn gather_rows_out_of_range_names_id() {
    let tape = Tape::new();
    let t = tape.leaf(Tensor::matrix(2, 2, vec![0.0; 4]).unwrap());
    let err = tape.gather_rows(t, &[1, 5]).unwrap_err();
    assert!(err.to_string().contains('5'), "{err}");
}

#[test]
fn concat_cols_shape_arithmetic() {
    let tape = Tape::new();
    let a = tape.leaf(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
    let b = tape.leaf(Tensor::matrix(1, 3, vec![3.0, 4.0, 5.0]).unwrap());
    let c = tape.value(tape.concat_cols(a, b).unwrap());
    assert_eq!(c.shape(), &[1, 5]);
    assert_eq!(c.data(), &[1.0, 2.0, 3.0, 4.0, 5.0]);
}

#[test]
fn nan_check_flags_offending_op() {
    let tape = Tape::new().with_nan_check(true);
    let x = tape.leaf(Tensor::vector(vec![-1.0]));
    let err = tape.log(x).unwrap_err();
    assert!(matches!(err, NumericsError::NonFinite("log")));
}

// Per-op finite-difference sweeps, 20 random trials each.

#[test]
fn grad_add_mul_sub() {
    check_grad(&[2, 3], 11, 20, |t, x| {
        let y = t.mul(x, x).unwrap();
        let z = t.add(y, x).unwrap();
        let w = t.sub(z, x).unwrap();
        t.sum_all(w).unwrap()
    });
}

#[test]
fn grad_matmul() {
    check_grad(&[3, 4], 12, 20, |t, x| {
        let k = t.constant(Tensor::matrix(4, 2, (0..8).map(|i| 0.3 * i as f64 - 1.0).collect()).unwrap());
        let y = t.matmul(x, k).unwrap();
        let s = t.sigmoid(y).unwrap();
        t.sum_all(s).unwrap()
    });
}

#[test]
fn grad_unary_chain() {
    check_grad(&[5], 13, 20, |t, x| {
        let a = t.tanh(x).unwrap();
        let b = t.sigmoid(a).unwrap();
        let c = t.relu(b).unwrap();
        let d = t.affine_const(c, 1.0, 0.5).unwrap();
        let e = t.log(d).unwrap();
        t.sum_all(e).unwrap()
    });
}

#[test]
fn grad_softmax() {
    check_grad(&[2, 4], 14, 20, |t, x| {
        let p = t.softmax_rows(x).unwrap();
        let sq = t.mul(p, p).unwrap();
        t.sum_all(sq).unwrap()
    });
}

#[test]
fn grad_layer_norm() {
    check_grad(&[3, 4], 15, 20, |t, x| {
        let gain = t.constant(Tensor::vector(vec![1.1, 0.9, 1.3, 0.7]));
        let bias = t.constant(Tensor::vector(vec![0.1, -0.2, 0.0, 0.3]));
        let y = t.layer_norm(x, gain, bias, 1e-12).unwrap();
        let s = t.sigmoid(y).unwrap();
        t.sum_all(s).unwrap()
    });
}

#[test]
fn grad_layer_norm_gain_bias() {
    // x fixed, differentiate the affine parameters
    check_grad(&[4], 16, 20, |t, gb| {
        let x = t.constant(Tensor::matrix(2, 2, vec![0.4, -1.0, 2.0, 0.1]).unwrap());
        let gain = t.slice_vec(gb, 0, 2).unwrap();
        let bias = t.slice_vec(gb, 2, 4).unwrap();
        let y = t.layer_norm(x, gain, bias, 1e-12).unwrap();
        let s = t.tanh(y).unwrap();
        t.sum_all(s).unwrap()
    });
}

#[test]
fn grad_broadcast_ops() {
    check_grad(&[3, 2], 17, 20, |t, x| {
        let b = t.constant(Tensor::vector(vec![0.2, -0.4]));
        let p = t.constant(Tensor::vector(vec![0.1, 0.9, 0.5]));
        let y = t.add_row_bias(x, b).unwrap();
        let z = t.mul_col(p, y).unwrap();
        t.sum_all(z).unwrap()
    });
    // and through the per-row scalar itself
    check_grad(&[3], 18, 20, |t, p| {
        let sp = t.sigmoid(p).unwrap();
        let x = t.constant(Tensor::matrix(3, 2, vec![1.0, -2.0, 0.5, 0.7, -0.1, 2.2]).unwrap());
        let y = t.mul_col(sp, x).unwrap();
        t.sum_all(y).unwrap()
    });
}

#[test]
fn grad_structure_ops() {
    check_grad(&[4, 3], 19, 20, |t, x| {
        let top = t.slice_rows(x, 0, 2).unwrap();
        let bottom = t.slice_rows(x, 2, 4).unwrap();
        let cat = t.concat_cols(top, bottom).unwrap();
        let r0 = t.row(cat, 0).unwrap();
        let r1 = t.row(cat, 1).unwrap();
        let stacked = t.concat_rows(&[r0, r1, r0]).unwrap();
        let tr = t.transpose(stacked).unwrap();
        let s = t.tanh(tr).unwrap();
        t.sum_all(s).unwrap()
    });
}

#[test]
fn grad_gather_rows() {
    check_grad(&[4, 3], 20, 20, |t, table| {
        let g = t.gather_rows(table, &[1, 3, 1, 0]).unwrap();
        let s = t.sigmoid(g).unwrap();
        t.sum_all(s).unwrap()
    });
}

#[test]
fn grad_fused_losses() {
    check_grad(&[4], 21, 20, |t, logits| {
        t.bce_with_logits_sum(logits, &[1.0, 0.0, 1.0, 0.0], &[true, true, false, true])
            .unwrap()
    });
    check_grad(&[3, 5], 22, 20, |t, logits| {
        t.softmax_xent_sum(logits, &[2, 0, 4], &[true, false, true])
            .unwrap()
    });
}

#[test]
fn fused_bce_matches_composed_route() {
    // independent algebraic route: -[t log p + (1-t) log(1-p)] via explicit ops
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..10 {
        let logits = rand_vec(&mut rng, 5);
        let targets: Vec<f64> = (0..5).map(|_| f64::from(rng.gen_bool(0.5))).collect();
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(logits.clone()));
        let fused = tape
            .bce_with_logits_sum(x, &targets, &[true; 5])
            .unwrap();
        let p = tape.sigmoid(x).unwrap();
        let logp = tape.log(p).unwrap();
        let q = tape.affine_const(p, -1.0, 1.0).unwrap();
        let logq = tape.log(q).unwrap();
        let tv = tape.constant(Tensor::vector(targets.clone()));
        let tc = tape.affine_const(tv, -1.0, 1.0).unwrap();
        let a = tape.mul(tv, logp).unwrap();
        let b = tape.mul(tc, logq).unwrap();
        let s = tape.add(a, b).unwrap();
        let tot = tape.sum_all(s).unwrap();
        let composed = -tape.value(tot).item().unwrap();
        let got = tape.value(fused).item().unwrap();
        assert!((got - composed).abs() < 1e-10, "{got} vs {composed}");
    }
}
