//! Neural building blocks: embeddings, GRU cell / Bi-GRU, transformer
//! encoder block with multi-head self-attention, layer norm.
//!
//! Parameter bundles own plain [`Tensor`]s. For a forward pass the
//! bundle is bound onto a tape (producing `Bound*` mirrors holding
//! [`Var`]s) so gradients can be collected by parameter name afterwards.

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::numerics::{GradStore, NumericsError, Tape, Tensor, Var};

pub const LAYER_NORM_EPS: f64 = 1e-12;

/// Registers named parameter leaves on a tape so their gradients can be
/// read back as a name → tensor map after backward.
pub struct ParamBinder<'t> {
    tape: &'t Tape,
    entries: Vec<(String, Var, Vec<usize>)>,
}

impl<'t> ParamBinder<'t> {
    pub fn new(tape: &'t Tape) -> Self {
        ParamBinder {
            tape,
            entries: Vec::new(),
        }
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn leaf(&mut self, name: impl Into<String>, t: &Tensor) -> Var {
        let var = self.tape.leaf(t.clone());
        self.entries
            .push((name.into(), var, t.shape().to_vec()));
        var
    }

    /// Gradients for every bound parameter; unreachable ones are zeros.
    pub fn grads(&self, store: &GradStore) -> BTreeMap<String, Tensor> {
        self.entries
            .iter()
            .map(|(name, var, shape)| (name.clone(), store.grad(*var, shape)))
            .collect()
    }

    pub fn var(&self, name: &str) -> Option<Var> {
        self.entries
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, v, _)| *v)
    }
}

/// BERT-style initialization: normal(0, 0.02) weights, zero biases,
/// unit layer-norm gains.
pub struct Initializer<'r> {
    rng: &'r mut ChaCha8Rng,
    dist: Normal<f64>,
}

impl<'r> Initializer<'r> {
    pub fn new(rng: &'r mut ChaCha8Rng) -> Self {
        Initializer {
            rng,
            dist: Normal::new(0.0, 0.02).expect("valid normal"),
        }
    }

    pub fn normal(&mut self, shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.dist.sample(self.rng)).collect();
        Tensor::new(shape.to_vec(), data).expect("shape/data consistent")
    }

    pub fn zeros(&mut self, shape: &[usize]) -> Tensor {
        Tensor::zeros(shape)
    }

    pub fn ones(&mut self, shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new(shape.to_vec(), vec![1.0; n]).expect("shape/data consistent")
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        self.rng
    }
}

/// Visitor over named parameter tensors; the traversal order is fixed
/// and shared by checkpointing and the optimizer.
pub trait ParamGroup {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor));
}

// ---------------------------------------------------------------------
// Embeddings

/// Word + learned position + segment tables. Single-segment inputs use
/// segment row 0 throughout; the segment table is retained for fidelity
/// to the BERT input construction.
#[derive(Clone, Debug)]
pub struct EmbeddingTables {
    pub word: Tensor,     // V×d
    pub position: Tensor, // L_max×d
    pub segment: Tensor,  // 2×d
    pub mask_row_id: usize,
}

impl EmbeddingTables {
    pub fn new(vocab: usize, width: usize, l_max: usize, mask_row_id: usize, init: &mut Initializer) -> Self {
        assert!(mask_row_id < vocab, "mask row {mask_row_id} outside vocab {vocab}");
        EmbeddingTables {
            word: init.normal(&[vocab, width]),
            position: init.normal(&[l_max, width]),
            segment: init.normal(&[2, width]),
            mask_row_id,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.word.rows()
    }

    pub fn width(&self) -> usize {
        self.word.cols()
    }

    pub fn l_max(&self) -> usize {
        self.position.rows()
    }

    pub fn bind<'t>(&self, b: &mut ParamBinder<'t>, prefix: &str) -> BoundEmbeddings {
        BoundEmbeddings {
            word: b.leaf(format!("{prefix}.word"), &self.word),
            position: b.leaf(format!("{prefix}.position"), &self.position),
            segment: b.leaf(format!("{prefix}.segment"), &self.segment),
            mask_row_id: self.mask_row_id,
            l_max: self.l_max(),
        }
    }
}

impl ParamGroup for EmbeddingTables {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&format!("{prefix}.word"), &self.word);
        f(&format!("{prefix}.position"), &self.position);
        f(&format!("{prefix}.segment"), &self.segment);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&format!("{prefix}.word"), &mut self.word);
        f(&format!("{prefix}.position"), &mut self.position);
        f(&format!("{prefix}.segment"), &mut self.segment);
    }
}

pub struct BoundEmbeddings {
    pub word: Var,
    pub position: Var,
    pub segment: Var,
    pub mask_row_id: usize,
    pub l_max: usize,
}

/// Input embedding: word_table[id] + position_table[i] + segment_table[0].
pub fn embed(tape: &Tape, tables: &BoundEmbeddings, ids: &[usize]) -> Result<Var, NumericsError> {
    let n = ids.len();
    if n == 0 {
        return Err(NumericsError::Contract("embed: empty sequence".into()));
    }
    if n > tables.l_max {
        return Err(NumericsError::Contract(format!(
            "embed: sequence length {} exceeds maximum {}",
            n, tables.l_max
        )));
    }
    let words = tape.gather_rows(tables.word, ids)?;
    let positions: Vec<usize> = (0..n).collect();
    let pos = tape.gather_rows(tables.position, &positions)?;
    let seg = tape.gather_rows(tables.segment, &vec![0; n])?;
    let wp = tape.add(words, pos)?;
    tape.add(wp, seg)
}

/// The [MASK] embedding at each of n positions: word_table[mask_row] +
/// position_table[i] + segment_table[0]. Soft masking interpolates only
/// in the word-identity component; position and segment are shared.
pub fn mask_embedding(tape: &Tape, tables: &BoundEmbeddings, n: usize) -> Result<Var, NumericsError> {
    embed(tape, tables, &vec![tables.mask_row_id; n])
}

// ---------------------------------------------------------------------
// GRU

/// Gate parameters of one GRU cell. Gate convention (enforced by the
/// scalar oracle in the tests):
///   z = σ(x·Wz + h·Uz + bz)
///   r = σ(x·Wr + h·Ur + br)
///   h̃ = tanh(x·Wh + (r∘h)·Uh + bh)      (reset applied inside the candidate)
///   h' = (1−z)∘h + z∘h̃
#[derive(Clone, Debug)]
pub struct GruCellParams {
    pub wz: Tensor,
    pub uz: Tensor,
    pub bz: Tensor,
    pub wr: Tensor,
    pub ur: Tensor,
    pub br: Tensor,
    pub wh: Tensor,
    pub uh: Tensor,
    pub bh: Tensor,
}

impl GruCellParams {
    pub fn new(input: usize, hidden: usize, init: &mut Initializer) -> Self {
        GruCellParams {
            wz: init.normal(&[input, hidden]),
            uz: init.normal(&[hidden, hidden]),
            bz: init.zeros(&[hidden]),
            wr: init.normal(&[input, hidden]),
            ur: init.normal(&[hidden, hidden]),
            br: init.zeros(&[hidden]),
            wh: init.normal(&[input, hidden]),
            uh: init.normal(&[hidden, hidden]),
            bh: init.zeros(&[hidden]),
        }
    }

    pub fn hidden(&self) -> usize {
        self.wz.cols()
    }

    pub fn bind<'t>(&self, b: &mut ParamBinder<'t>, prefix: &str) -> BoundGruCell {
        BoundGruCell {
            wz: b.leaf(format!("{prefix}.wz"), &self.wz),
            uz: b.leaf(format!("{prefix}.uz"), &self.uz),
            bz: b.leaf(format!("{prefix}.bz"), &self.bz),
            wr: b.leaf(format!("{prefix}.wr"), &self.wr),
            ur: b.leaf(format!("{prefix}.ur"), &self.ur),
            br: b.leaf(format!("{prefix}.br"), &self.br),
            wh: b.leaf(format!("{prefix}.wh"), &self.wh),
            uh: b.leaf(format!("{prefix}.uh"), &self.uh),
            bh: b.leaf(format!("{prefix}.bh"), &self.bh),
            hidden: self.hidden(),
        }
    }
}

impl ParamGroup for GruCellParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        for (n, t) in [
            ("wz", &self.wz),
            ("uz", &self.uz),
            ("bz", &self.bz),
            ("wr", &self.wr),
            ("ur", &self.ur),
            ("br", &self.br),
            ("wh", &self.wh),
            ("uh", &self.uh),
            ("bh", &self.bh),
        ] {
            f(&format!("{prefix}.{n}"), t);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (n, t) in [
            ("wz", &mut self.wz),
            ("uz", &mut self.uz),
            ("bz", &mut self.bz),
            ("wr", &mut self.wr),
            ("ur", &mut self.ur),
            ("br", &mut self.br),
            ("wh", &mut self.wh),
            ("uh", &mut self.uh),
            ("bh", &mut self.bh),
        ] {
            f(&format!("{prefix}.{n}"), t);
        }
    }
}

pub struct BoundGruCell {
    pub wz: Var,
    pub uz: Var,
    pub bz: Var,
    pub wr: Var,
    pub ur: Var,
    pub br: Var,
    pub wh: Var,
    pub uh: Var,
    pub bh: Var,
    pub hidden: usize,
}

/// One GRU recurrence step; `prev` is 1×h, `input` is 1×d.
pub fn gru_step(tape: &Tape, cell: &BoundGruCell, prev: Var, input: Var) -> Result<Var, NumericsError> {
    let gate = |w: Var, u: Var, b: Var| -> Result<Var, NumericsError> {
        let xi = tape.matmul(input, w)?;
        let hi = tape.matmul(prev, u)?;
        let s = tape.add(xi, hi)?;
        tape.add_row_bias(s, b)
    };
    let z = tape.sigmoid(gate(cell.wz, cell.uz, cell.bz)?)?;
    let r = tape.sigmoid(gate(cell.wr, cell.ur, cell.br)?)?;
    let rh = tape.mul(r, prev)?;
    let cand_pre = {
        let xi = tape.matmul(input, cell.wh)?;
        let hi = tape.matmul(rh, cell.uh)?;
        let s = tape.add(xi, hi)?;
        tape.add_row_bias(s, cell.bh)?
    };
    let cand = tape.tanh(cand_pre)?;
    let keep = tape.affine_const(z, -1.0, 1.0)?; // 1 - z
    let a = tape.mul(keep, prev)?;
    let b = tape.mul(z, cand)?;
    tape.add(a, b)
}

/// Bidirectional GRU over an n×d input; row i of the n×2h output is the
/// forward hidden after tokens 1..i concatenated with the backward
/// hidden after tokens n..i. Initial hiddens are zero.
pub fn bi_gru(
    tape: &Tape,
    inputs: Var,
    fwd: &BoundGruCell,
    bwd: &BoundGruCell,
) -> Result<Var, NumericsError> {
    let shape = tape.shape_of(inputs);
    if shape.len() != 2 || shape[0] == 0 {
        return Err(NumericsError::Contract(format!(
            "bi_gru: nonempty n×d input required, got {:?}",
            shape
        )));
    }
    let n = shape[0];
    let mut fwd_states = Vec::with_capacity(n);
    let mut h = tape.constant(Tensor::zeros(&[1, fwd.hidden]));
    for i in 0..n {
        let x = tape.row(inputs, i)?;
        h = gru_step(tape, fwd, h, x)?;
        fwd_states.push(h);
    }
    let mut bwd_states = vec![None; n];
    let mut hb = tape.constant(Tensor::zeros(&[1, bwd.hidden]));
    for i in (0..n).rev() {
        let x = tape.row(inputs, i)?;
        hb = gru_step(tape, bwd, hb, x)?;
        bwd_states[i] = Some(hb);
    }
    let f = tape.concat_rows(&fwd_states)?;
    let b = tape.concat_rows(&bwd_states.into_iter().map(|v| v.unwrap()).collect::<Vec<_>>())?;
    tape.concat_cols(f, b)
}

// ---------------------------------------------------------------------
// Transformer encoder block

/// One post-layer-norm encoder block: LN(x + MultiHead(x)) then
/// LN(· + FFN(·)), scaled dot-product attention with per-head
/// projections.
#[derive(Clone, Debug)]
pub struct EncoderBlockParams {
    pub wq: Vec<Tensor>, // per head, d×(d/heads)
    pub wk: Vec<Tensor>,
    pub wv: Vec<Tensor>,
    pub wo: Tensor, // d×d
    pub w1: Tensor, // d×f
    pub b1: Tensor, // f
    pub w2: Tensor, // f×d
    pub b2: Tensor, // d
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
}

impl EncoderBlockParams {
    pub fn new(width: usize, heads: usize, ffn: usize, init: &mut Initializer) -> Self {
        assert!(heads > 0 && width % heads == 0, "head count {heads} must divide width {width}");
        assert!(ffn >= width, "FFN width {ffn} below model width {width}");
        let dh = width / heads;
        let per_head = |init: &mut Initializer| (0..heads).map(|_| init.normal(&[width, dh])).collect();
        EncoderBlockParams {
            wq: per_head(init),
            wk: per_head(init),
            wv: per_head(init),
            wo: init.normal(&[width, width]),
            w1: init.normal(&[width, ffn]),
            b1: init.zeros(&[ffn]),
            w2: init.normal(&[ffn, width]),
            b2: init.zeros(&[width]),
            ln1_gain: init.ones(&[width]),
            ln1_bias: init.zeros(&[width]),
            ln2_gain: init.ones(&[width]),
            ln2_bias: init.zeros(&[width]),
        }
    }

    pub fn heads(&self) -> usize {
        self.wq.len()
    }

    pub fn bind<'t>(&self, b: &mut ParamBinder<'t>, prefix: &str) -> BoundEncoderBlock {
        let bind_heads = |b: &mut ParamBinder<'t>, name: &str, ts: &[Tensor]| {
            ts.iter()
                .enumerate()
                .map(|(i, t)| b.leaf(format!("{prefix}.{name}{i}"), t))
                .collect()
        };
        BoundEncoderBlock {
            wq: bind_heads(b, "wq", &self.wq),
            wk: bind_heads(b, "wk", &self.wk),
            wv: bind_heads(b, "wv", &self.wv),
            wo: b.leaf(format!("{prefix}.wo"), &self.wo),
            w1: b.leaf(format!("{prefix}.w1"), &self.w1),
            b1: b.leaf(format!("{prefix}.b1"), &self.b1),
            w2: b.leaf(format!("{prefix}.w2"), &self.w2),
            b2: b.leaf(format!("{prefix}.b2"), &self.b2),
            ln1_gain: b.leaf(format!("{prefix}.ln1_gain"), &self.ln1_gain),
            ln1_bias: b.leaf(format!("{prefix}.ln1_bias"), &self.ln1_bias),
            ln2_gain: b.leaf(format!("{prefix}.ln2_gain"), &self.ln2_gain),
            ln2_bias: b.leaf(format!("{prefix}.ln2_bias"), &self.ln2_bias),
        }
    }
}

impl ParamGroup for EncoderBlockParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        for (name, ts) in [("wq", &self.wq), ("wk", &self.wk), ("wv", &self.wv)] {
            for (i, t) in ts.iter().enumerate() {
                f(&format!("{prefix}.{name}{i}"), t);
            }
        }
        for (n, t) in [
            ("wo", &self.wo),
            ("w1", &self.w1),
            ("b1", &self.b1),
            ("w2", &self.w2),
            ("b2", &self.b2),
            ("ln1_gain", &self.ln1_gain),
            ("ln1_bias", &self.ln1_bias),
            ("ln2_gain", &self.ln2_gain),
            ("ln2_bias", &self.ln2_bias),
        ] {
            f(&format!("{prefix}.{n}"), t);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (name, ts) in [
            ("wq", &mut self.wq),
            ("wk", &mut self.wk),
            ("wv", &mut self.wv),
        ] {
            for (i, t) in ts.iter_mut().enumerate() {
                f(&format!("{prefix}.{name}{i}"), t);
            }
        }
        for (n, t) in [
            ("wo", &mut self.wo),
            ("w1", &mut self.w1),
            ("b1", &mut self.b1),
            ("w2", &mut self.w2),
            ("b2", &mut self.b2),
            ("ln1_gain", &mut self.ln1_gain),
            ("ln1_bias", &mut self.ln1_bias),
            ("ln2_gain", &mut self.ln2_gain),
            ("ln2_bias", &mut self.ln2_bias),
        ] {
            f(&format!("{prefix}.{n}"), t);
        }
    }
}

pub struct BoundEncoderBlock {
    pub wq: Vec<Var>,
    pub wk: Vec<Var>,
    pub wv: Vec<Var>,
    pub wo: Var,
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub ln1_gain: Var,
    pub ln1_bias: Var,
    pub ln2_gain: Var,
    pub ln2_bias: Var,
}

/// Scaled dot-product attention for one head; scale is 1/√d_head.
fn attention_head(tape: &Tape, x: Var, wq: Var, wk: Var, wv: Var) -> Result<Var, NumericsError> {
    let q = tape.matmul(x, wq)?;
    let k = tape.matmul(x, wk)?;
    let v = tape.matmul(x, wv)?;
    let dh = tape.shape_of(wq)[1];
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let scaled = tape.scale(scores, 1.0 / (dh as f64).sqrt())?;
    let attn = tape.softmax_rows(scaled)?;
    tape.matmul(attn, v)
}

pub fn encoder_block(tape: &Tape, block: &BoundEncoderBlock, x: Var) -> Result<Var, NumericsError> {
    let mut heads = Vec::with_capacity(block.wq.len());
    for i in 0..block.wq.len() {
        heads.push(attention_head(tape, x, block.wq[i], block.wk[i], block.wv[i])?);
    }
    let mut cat = heads[0];
    for h in &heads[1..] {
        cat = tape.concat_cols(cat, *h)?;
    }
    let proj = tape.matmul(cat, block.wo)?;
    let res1 = tape.add(x, proj)?;
    let normed1 = tape.layer_norm(res1, block.ln1_gain, block.ln1_bias, LAYER_NORM_EPS)?;
    let h1 = tape.matmul(normed1, block.w1)?;
    let h1b = tape.add_row_bias(h1, block.b1)?;
    let h1r = tape.relu(h1b)?;
    let h2 = tape.matmul(h1r, block.w2)?;
    let h2b = tape.add_row_bias(h2, block.b2)?;
    let res2 = tape.add(normed1, h2b)?;
    tape.layer_norm(res2, block.ln2_gain, block.ln2_bias, LAYER_NORM_EPS)
}

#[cfg(test)]
pub(crate) mod oracles;
#[cfg(test)]
mod tests;
