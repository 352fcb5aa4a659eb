//! Scalar reference implementations used by tests only. These stay
//! independent of the tape: plain loops over plain floats.

use super::{EncoderBlockParams, GruCellParams, LAYER_NORM_EPS};
use crate::numerics::Tensor;

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Scalar reference for the documented GRU recurrence.
pub(crate) fn gru_oracle(p: &GruCellParams, prev: &[f64], input: &[f64]) -> Vec<f64> {
    let h = p.hidden();
    let d = input.len();
    let lin = |w: &Tensor, x: &[f64], u: &Tensor, s: &[f64], b: &Tensor, j: usize| {
        let mut acc = b.data()[j];
        for i in 0..d {
            acc += x[i] * w.at(i, j);
        }
        for i in 0..h {
            acc += s[i] * u.at(i, j);
        }
        acc
    };
    let mut out = vec![0.0; h];
    for j in 0..h {
        let z = sigmoid(lin(&p.wz, input, &p.uz, prev, &p.bz, j));
        let r_all: Vec<f64> = (0..h)
            .map(|k| sigmoid(lin(&p.wr, input, &p.ur, prev, &p.br, k)))
            .collect();
        let rh: Vec<f64> = (0..h).map(|k| r_all[k] * prev[k]).collect();
        let cand = lin(&p.wh, input, &p.uh, &rh, &p.bh, j).tanh();
        out[j] = (1.0 - z) * prev[j] + z * cand;
    }
    out
}

pub(crate) fn matvec(m: &Tensor, row: &[f64]) -> Vec<f64> {
    (0..m.cols())
        .map(|j| (0..m.rows()).map(|i| row[i] * m.at(i, j)).sum())
        .collect()
}

/// Scalar single-head attention + post-norm block.
pub(crate) fn encoder_oracle_1head(p: &EncoderBlockParams, x: &Tensor) -> Vec<Vec<f64>> {
    let n = x.rows();
    let d = x.cols();
    let dh = p.wq[0].cols();
    let f = p.b1.len();
    let q: Vec<Vec<f64>> = (0..n).map(|i| matvec(&p.wq[0], x.row_slice(i))).collect();
    let k: Vec<Vec<f64>> = (0..n).map(|i| matvec(&p.wk[0], x.row_slice(i))).collect();
    let v: Vec<Vec<f64>> = (0..n).map(|i| matvec(&p.wv[0], x.row_slice(i))).collect();
    let scale = 1.0 / (dh as f64).sqrt();
    let ln = |row: &[f64], gain: &Tensor, bias: &Tensor| -> Vec<f64> {
        let m: f64 = row.iter().sum::<f64>() / row.len() as f64;
        let var: f64 = row.iter().map(|u| (u - m) * (u - m)).sum::<f64>() / row.len() as f64;
        let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        row.iter()
            .enumerate()
            .map(|(c, u)| (u - m) * is * gain.data()[c] + bias.data()[c])
            .collect()
    };
    let mut out = Vec::new();
    for i in 0..n {
        let mut scores: Vec<f64> = (0..n)
            .map(|j| {
                let mut s = 0.0;
                for t in 0..dh {
                    s += q[i][t] * k[j][t];
                }
                s * scale
            })
            .collect();
        let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for s in scores.iter_mut() {
            *s = (*s - mx).exp();
            z += *s;
        }
        for s in scores.iter_mut() {
            *s /= z;
        }
        let mut head = vec![0.0; dh];
        for j in 0..n {
            for t in 0..dh {
                head[t] += scores[j] * v[j][t];
            }
        }
        let proj = matvec(&p.wo, &head);
        let res1: Vec<f64> = (0..d).map(|c| x.at(i, c) + proj[c]).collect();
        let n1 = ln(&res1, &p.ln1_gain, &p.ln1_bias);
        let mut hid = matvec(&p.w1, &n1);
        for (c, h) in hid.iter_mut().enumerate().take(f) {
            *h = (*h + p.b1.data()[c]).max(0.0);
        }
        let mut back = matvec(&p.w2, &hid);
        for (c, bk) in back.iter_mut().enumerate() {
            *bk += p.b2.data()[c] + n1[c];
        }
        out.push(ln(&back, &p.ln2_gain, &p.ln2_bias));
    }
    out
}
