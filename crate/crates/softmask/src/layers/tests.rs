use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::numerics::finite_diff::max_rel_err;

fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    let data = (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::matrix(r, c, data).unwrap()
}

use super::oracles::{encoder_oracle_1head, gru_oracle};

fn zero_gru(d: usize, h: usize) -> GruCellParams {
    GruCellParams {
        wz: Tensor::zeros(&[d, h]),
        uz: Tensor::zeros(&[h, h]),
        bz: Tensor::zeros(&[h]),
        wr: Tensor::zeros(&[d, h]),
        ur: Tensor::zeros(&[h, h]),
        br: Tensor::zeros(&[h]),
        wh: Tensor::zeros(&[d, h]),
        uh: Tensor::zeros(&[h, h]),
        bh: Tensor::zeros(&[h]),
    }
}

fn run_gru_step(p: &GruCellParams, prev: Vec<f64>, input: Vec<f64>) -> Vec<f64> {
    let tape = Tape::new();
    let mut b = ParamBinder::new(&tape);
    let cell = p.bind(&mut b, "gru");
    let pv = tape.constant(Tensor::matrix(1, prev.len(), prev).unwrap());
    let xv = tape.constant(Tensor::matrix(1, input.len(), input).unwrap());
    let out = gru_step(&tape, &cell, pv, xv).unwrap();
    tape.value(out).into_data()
}

#[test]
fn gru_zero_params_halves_hidden() {
    let p = zero_gru(2, 3);
    let out = run_gru_step(&p, vec![0.4, -1.0, 2.0], vec![1.0, 1.0]);
    assert_eq!(out, vec![0.2, -0.5, 1.0]);
}

#[test]
fn gru_all_zero_fixed_point() {
    let p = zero_gru(2, 3);
    let out = run_gru_step(&p, vec![0.0; 3], vec![0.0; 2]);
    assert_eq!(out, vec![0.0; 3]);
}

#[test]
fn gru_matches_scalar_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let mut init_rng = ChaCha8Rng::seed_from_u64(rng.gen());
        let mut init = Initializer::new(&mut init_rng);
        let p = GruCellParams::new(3, 4, &mut init);
        let prev: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let input: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let got = run_gru_step(&p, prev.clone(), input.clone());
        let want = gru_oracle(&p, &prev, &input);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12, "{g} vs {w}");
        }
    }
}

fn run_bi_gru(fwd: &GruCellParams, bwd: &GruCellParams, inputs: &Tensor) -> Tensor {
    let tape = Tape::new();
    let mut b = ParamBinder::new(&tape);
    let bf = fwd.bind(&mut b, "fwd");
    let bb = bwd.bind(&mut b, "bwd");
    let x = tape.constant(inputs.clone());
    let out = bi_gru(&tape, x, &bf, &bb).unwrap();
    tape.value(out)
}

#[test]
fn bi_gru_single_token() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut init = Initializer::new(&mut rng);
    let fwd = GruCellParams::new(2, 3, &mut init);
    let bwd = GruCellParams::new(2, 3, &mut init);
    let x = vec![0.3, -0.8];
    let out = run_bi_gru(&fwd, &bwd, &Tensor::matrix(1, 2, x.clone()).unwrap());
    assert_eq!(out.shape(), &[1, 6]);
    let f = gru_oracle(&fwd, &[0.0; 3], &x);
    let b = gru_oracle(&bwd, &[0.0; 3], &x);
    for (i, want) in f.iter().chain(&b).enumerate() {
        assert!((out.data()[i] - want).abs() < 1e-12);
    }
}

#[test]
fn bi_gru_palindrome_symmetry() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut init = Initializer::new(&mut rng);
    let cell = GruCellParams::new(2, 3, &mut init);
    // palindromic input, shared parameters in both directions
    let rows = vec![
        vec![0.5, -0.2],
        vec![1.0, 0.7],
        vec![0.5, -0.2],
    ];
    let x = Tensor::from_rows(&rows).unwrap();
    let out = run_bi_gru(&cell, &cell, &x);
    let n = 3;
    let h = 3;
    for i in 0..n {
        let j = n - 1 - i;
        for k in 0..h {
            // forward half of row i equals backward half of mirrored row
            let fwd_ik = out.at(i, k);
            let bwd_jk = out.at(j, h + k);
            assert!((fwd_ik - bwd_jk).abs() < 1e-12);
        }
    }
}

#[test]
fn bi_gru_matches_unrolled_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut init = Initializer::new(&mut rng);
    let fwd = GruCellParams::new(2, 4, &mut init);
    let bwd = GruCellParams::new(2, 4, &mut init);
    let x = rand_matrix(&mut rng, 3, 2);
    let out = run_bi_gru(&fwd, &bwd, &x);
    let mut hf = vec![0.0; 4];
    let mut expect_f = Vec::new();
    for i in 0..3 {
        hf = gru_oracle(&fwd, &hf, x.row_slice(i));
        expect_f.push(hf.clone());
    }
    let mut hb = vec![0.0; 4];
    let mut expect_b = vec![vec![]; 3];
    for i in (0..3).rev() {
        hb = gru_oracle(&bwd, &hb, x.row_slice(i));
        expect_b[i] = hb.clone();
    }
    for i in 0..3 {
        for k in 0..4 {
            assert!((out.at(i, k) - expect_f[i][k]).abs() < 1e-12);
            assert!((out.at(i, 4 + k) - expect_b[i][k]).abs() < 1e-12);
        }
    }
}

#[test]
fn bi_gru_rejects_empty() {
    let tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut init = Initializer::new(&mut rng);
    let p = GruCellParams::new(2, 2, &mut init);
    let mut b = ParamBinder::new(&tape);
    let bf = p.bind(&mut b, "f");
    let bb = p.bind(&mut b, "b");
    let x = tape.constant(Tensor::vector(vec![1.0]));
    assert!(bi_gru(&tape, x, &bf, &bb).is_err());
}

fn run_embed(tables: &EmbeddingTables, ids: &[usize]) -> Result<Tensor, NumericsError> {
    let tape = Tape::new();
    let mut b = ParamBinder::new(&tape);
    let bt = tables.bind(&mut b, "embed");
    let out = embed(&tape, &bt, ids)?;
    Ok(tape.value(out))
}

#[test]
fn embed_zero_tables_gives_zero() {
    let tables = EmbeddingTables {
        word: Tensor::zeros(&[5, 3]),
        position: Tensor::zeros(&[4, 3]),
        segment: Tensor::zeros(&[2, 3]),
        mask_row_id: 2,
    };
    let out = run_embed(&tables, &[1, 4, 0]).unwrap();
    assert!(out.data().iter().all(|v| *v == 0.0));
}

#[test]
fn embed_matches_scalar_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut init = Initializer::new(&mut rng);
    let tables = EmbeddingTables::new(6, 3, 8, 2, &mut init);
    let ids = [5, 0, 3, 3];
    let out = run_embed(&tables, &ids).unwrap();
    for (i, id) in ids.iter().enumerate() {
        for c in 0..3 {
            let want =
                tables.word.at(*id, c) + tables.position.at(i, c) + tables.segment.at(0, c);
            assert!((out.at(i, c) - want).abs() < 1e-15);
        }
    }
}

#[test]
fn embed_rejects_overlong_sequence() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut init = Initializer::new(&mut rng);
    let tables = EmbeddingTables::new(6, 3, 2, 2, &mut init);
    let err = run_embed(&tables, &[0, 1, 2]).unwrap_err();
    assert!(err.to_string().contains("maximum"), "{err}");
}

#[test]
fn layer_norm_constant_row_maps_to_bias() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::matrix(1, 4, vec![3.0; 4]).unwrap());
    let gain = tape.leaf(Tensor::vector(vec![2.0; 4]));
    let bias = tape.leaf(Tensor::vector(vec![0.7; 4]));
    let y = tape.value(tape.layer_norm(x, gain, bias, LAYER_NORM_EPS).unwrap());
    for v in y.data() {
        assert!((v - 0.7).abs() < 1e-6, "constant row normalizes to ~0 before affine");
    }
}

#[test]
fn layer_norm_already_normalized_row() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::matrix(1, 2, vec![1.0, -1.0]).unwrap());
    let gain = tape.leaf(Tensor::vector(vec![1.0, 1.0]));
    let bias = tape.leaf(Tensor::vector(vec![0.0, 0.0]));
    let y = tape.value(tape.layer_norm(x, gain, bias, LAYER_NORM_EPS).unwrap());
    assert!((y.data()[0] - 1.0).abs() < 1e-10);
    assert!((y.data()[1] + 1.0).abs() < 1e-10);
}

#[test]
fn layer_norm_row_statistics() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let row: Vec<f64> = (0..16).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let tape = Tape::new();
    let x = tape.leaf(Tensor::matrix(1, 16, row).unwrap());
    let gain = tape.leaf(Tensor::vector(vec![1.0; 16]));
    let bias = tape.leaf(Tensor::vector(vec![0.0; 16]));
    let y = tape.value(tape.layer_norm(x, gain, bias, LAYER_NORM_EPS).unwrap());
    let mean: f64 = y.data().iter().sum::<f64>() / 16.0;
    let var: f64 = y.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 16.0;
    assert!(mean.abs() <= 1e-10);
    assert!((var - 1.0).abs() <= 1e-6);
}

fn run_encoder_block(p: &EncoderBlockParams, x: &Tensor) -> Tensor {
    let tape = Tape::new();
    let mut b = ParamBinder::new(&tape);
    let bp = p.bind(&mut b, "blk");
    let xv = tape.constant(x.clone());
    let out = encoder_block(&tape, &bp, xv).unwrap();
    tape.value(out)
}

#[test]
fn encoder_block_matches_scalar_attention_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut init = Initializer::new(&mut rng);
    let p = EncoderBlockParams::new(4, 1, 6, &mut init);
    let x = rand_matrix(&mut rng, 2, 4);
    let got = run_encoder_block(&p, &x);
    let want = encoder_oracle_1head(&p, &x);
    for i in 0..2 {
        for c in 0..4 {
            assert!(
                (got.at(i, c) - want[i][c]).abs() < 1e-10,
                "({i},{c}): {} vs {}",
                got.at(i, c),
                want[i][c]
            );
        }
    }
}

#[test]
fn encoder_block_single_token_matches_oracle() {
    // one token: attention weights collapse to [[1]]
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut init = Initializer::new(&mut rng);
    let p = EncoderBlockParams::new(4, 1, 4, &mut init);
    let x = rand_matrix(&mut rng, 1, 4);
    let got = run_encoder_block(&p, &x);
    let want = encoder_oracle_1head(&p, &x);
    for c in 0..4 {
        assert!((got.at(0, c) - want[0][c]).abs() < 1e-10);
    }
}

#[test]
fn encoder_block_is_permutation_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut init = Initializer::new(&mut rng);
    let p = EncoderBlockParams::new(4, 2, 8, &mut init);
    let x = rand_matrix(&mut rng, 3, 4);
    let perm = [2usize, 0, 1];
    let permuted = Tensor::from_rows(
        &perm.iter().map(|i| x.row_slice(*i).to_vec()).collect::<Vec<_>>(),
    )
    .unwrap();
    let out = run_encoder_block(&p, &x);
    let out_p = run_encoder_block(&p, &permuted);
    for (new_row, old_row) in perm.iter().enumerate() {
        for c in 0..4 {
            assert!((out_p.at(new_row, c) - out.at(*old_row, c)).abs() < 1e-10);
        }
    }
}

#[test]
fn encoder_block_preserves_shape() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let mut init = Initializer::new(&mut rng);
    let p = EncoderBlockParams::new(6, 3, 12, &mut init);
    for n in [1usize, 2, 5] {
        let x = rand_matrix(&mut rng, n, 6);
        assert_eq!(run_encoder_block(&p, &x).shape(), &[n, 6]);
    }
}

#[test]
fn attention_rows_are_probability_vectors() {
    // re-derive the attention matrix through the public ops
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let tape = Tape::new();
    let x = tape.leaf(rand_matrix(&mut rng, 4, 4));
    let wq = tape.leaf(rand_matrix(&mut rng, 4, 2));
    let wk = tape.leaf(rand_matrix(&mut rng, 4, 2));
    let q = tape.matmul(x, wq).unwrap();
    let k = tape.matmul(x, wk).unwrap();
    let kt = tape.transpose(k).unwrap();
    let s = tape.scale(tape.matmul(q, kt).unwrap(), 1.0 / 2.0_f64.sqrt()).unwrap();
    let a = tape.value(tape.softmax_rows(s).unwrap());
    for r in 0..4 {
        let row = a.row_slice(r);
        assert!(row.iter().all(|p| *p >= 0.0));
        assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
}

/// Finite-difference check of every parameter in a bound group against
/// the tape gradients, via the named-grads map.
fn fd_check_params<P: ParamGroup + Clone>(
    params: &P,
    loss_of: impl Fn(&P) -> f64,
    grads: &std::collections::BTreeMap<String, Tensor>,
) {
    let mut names: Vec<(String, usize)> = Vec::new();
    params.visit("p", &mut |name, t| names.push((name.to_string(), t.len())));
    for (name, len) in &names {
        for idx in 0..*len {
            let eps = 1e-5;
            let perturbed = |delta: f64| {
                let mut p2 = params.clone();
                p2.visit_mut("p", &mut |n, t| {
                    if n == name {
                        t.data_mut()[idx] += delta;
                    }
                });
                loss_of(&p2)
            };
            let numeric = (perturbed(eps) - perturbed(-eps)) / (2.0 * eps);
            let analytic = grads[name].data()[idx];
            let err = max_rel_err(&[analytic], &[numeric]);
            assert!(err <= 1e-4, "{name}[{idx}]: {analytic} vs {numeric}");
        }
    }
}

#[test]
fn gru_parameter_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut init = Initializer::new(&mut rng);
    let params = GruCellParams::new(2, 3, &mut init);
    let prev = vec![0.3, -0.7, 0.2];
    let input = vec![0.9, -0.4];
    let loss_of = |p: &GruCellParams| {
        let tape = Tape::new();
        let mut b = ParamBinder::new(&tape);
        let cell = p.bind(&mut b, "p");
        let pv = tape.constant(Tensor::matrix(1, 3, prev.clone()).unwrap());
        let xv = tape.constant(Tensor::matrix(1, 2, input.clone()).unwrap());
        let out = gru_step(&tape, &cell, pv, xv).unwrap();
        let s = tape.sigmoid(out).unwrap();
        tape.value(tape.sum_all(s).unwrap()).item().unwrap()
    };
    let tape = Tape::new();
    let mut b = ParamBinder::new(&tape);
    let cell = params.bind(&mut b, "p");
    let pv = tape.constant(Tensor::matrix(1, 3, prev.clone()).unwrap());
    let xv = tape.constant(Tensor::matrix(1, 2, input.clone()).unwrap());
    let out = gru_step(&tape, &cell, pv, xv).unwrap();
    let s = tape.sigmoid(out).unwrap();
    let loss = tape.sum_all(s).unwrap();
    let grads = b.grads(&tape.backward(loss).unwrap());
    fd_check_params(&params, loss_of, &grads);
}

#[test]
fn encoder_parameter_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let mut init = Initializer::new(&mut rng);
    let params = EncoderBlockParams::new(4, 2, 4, &mut init);
    let x = rand_matrix(&mut rng, 2, 4);
    let loss_of = |p: &EncoderBlockParams| {
        let tape = Tape::new();
        let mut b = ParamBinder::new(&tape);
        let blk = p.bind(&mut b, "p");
        let xv = tape.constant(x.clone());
        let out = encoder_block(&tape, &blk, xv).unwrap();
        let s = tape.tanh(out).unwrap();
        tape.value(tape.sum_all(s).unwrap()).item().unwrap()
    };
    let tape = Tape::new();
    let mut b = ParamBinder::new(&tape);
    let blk = params.bind(&mut b, "p");
    let xv = tape.constant(x.clone());
    let out = encoder_block(&tape, &blk, xv).unwrap();
    let s = tape.tanh(out).unwrap();
    let loss = tape.sum_all(s).unwrap();
    let grads = b.grads(&tape.backward(loss).unwrap());
    fd_check_params(&params, loss_of, &grads);
}

#[test]
fn embedding_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut init = Initializer::new(&mut rng);
    let params = EmbeddingTables::new(5, 3, 4, 2, &mut init);
    let ids = [4usize, 2, 2];
    let loss_of = |p: &EmbeddingTables| {
        let tape = Tape::new();
        let mut b = ParamBinder::new(&tape);
        let t = p.bind(&mut b, "p");
        let out = embed(&tape, &t, &ids).unwrap();
        let s = tape.sigmoid(out).unwrap();
        tape.value(tape.sum_all(s).unwrap()).item().unwrap()
    };
    let tape = Tape::new();
    let mut b = ParamBinder::new(&tape);
    let t = params.bind(&mut b, "p");
    let out = embed(&tape, &t, &ids).unwrap();
    let s = tape.sigmoid(out).unwrap();
    let loss = tape.sum_all(s).unwrap();
    let grads = b.grads(&tape.backward(loss).unwrap());
    fd_check_params(&params, loss_of, &grads);
}
