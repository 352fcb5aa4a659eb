//! The reverse-mode tape underneath everything: build a small graph,
//! backpropagate, and cross-check the gradients with central finite
//! differences.
//!
//! Run with: cargo run --example autodiff

use softmask::numerics::finite_diff::{central_diff, max_rel_err};
use softmask::numerics::{Tape, Tensor};

fn main() -> anyhow::Result<()> {
    // f(w, b) = sum(sigmoid(x·w + b)) for a fixed 3×2 input.
    let x = Tensor::matrix(3, 2, vec![0.5, -1.0, 2.0, 0.3, -0.7, 1.1])?;
    let w0 = vec![0.2, -0.4];
    let b0 = vec![0.1];

    let tape = Tape::new();
    let xv = tape.constant(x.clone());
    let w = tape.leaf(Tensor::matrix(2, 1, w0.clone())?);
    let b = tape.leaf(Tensor::vector(b0.clone()));
    let z = tape.add_row_bias(tape.matmul(xv, w)?, b)?;
    let y = tape.sigmoid(z)?;
    let loss = tape.sum_all(y)?;
    println!("loss = {:.6}", tape.value(loss).item()?);

    let grads = tape.backward(loss)?;
    let gw = grads.grad(w, &[2, 1]);
    let gb = grads.grad(b, &[1]);
    println!("dL/dw = {:?}", gw.data());
    println!("dL/db = {:?}", gb.data());

    // Same function as a plain closure over the flattened parameters, so
    // finite differences can referee the tape.
    let mut f = |p: &[f64]| -> f64 {
        let tape = Tape::new();
        let xv = tape.constant(x.clone());
        let w = tape.leaf(Tensor::matrix(2, 1, p[..2].to_vec()).unwrap());
        let b = tape.leaf(Tensor::vector(vec![p[2]]));
        let z = tape.add_row_bias(tape.matmul(xv, w).unwrap(), b).unwrap();
        let y = tape.sigmoid(z).unwrap();
        tape.value(tape.sum_all(y).unwrap()).item().unwrap()
    };
    let mut flat = w0.clone();
    flat.extend_from_slice(&b0);
    let numeric = central_diff(&mut f, &flat, 1e-5);

    let mut analytic = gw.data().to_vec();
    analytic.extend_from_slice(gb.data());
    let err = max_rel_err(&analytic, &numeric);
    println!("max relative error vs finite differences: {err:.3e}");
    anyhow::ensure!(err <= 1e-4, "gradient check failed");
    Ok(())
}
