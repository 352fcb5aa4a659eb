//! The detection–correction architecture: a Bi-GRU detector produces a
//! per-position error probability, which interpolates each input
//! embedding toward the [MASK] embedding (soft masking) before a
//! transformer-encoder corrector predicts the output character at every
//! position. Training optimizes λ·L_c + (1−λ)·L_d end-to-end; the soft
//! mask is the differentiable coupling that lets the correction loss
//! reach the detector.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::layers::{
    self, bi_gru, embed, encoder_block, BoundEncoderBlock, BoundEmbeddings, BoundGruCell,
    EmbeddingTables, EncoderBlockParams, GruCellParams, Initializer, ParamBinder, ParamGroup,
};
use crate::numerics::{NumericsError, Tape, Tensor, Var};
use crate::vocab::{MASK_ID, PAD_ID, UNK_ID};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// How detector output drives the masking of input embeddings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskingMode {
    /// Convex interpolation weighted by the error probability; the
    /// differentiable default.
    Soft,
    /// Binary masking when the error probability exceeds the threshold.
    /// Non-differentiable: the correction loss does not reach the
    /// detector, which still trains from the detection loss.
    Hard { threshold: f64 },
    /// Error probabilities drawn uniformly at random (ablation).
    Random,
    /// No masking at all; plain encoder fine-tuning. Trains without the
    /// detection loss.
    NoDetector,
    /// Gold error positions are masked and predictions are restricted to
    /// those positions, excluding the observed character. Upper bound.
    ForceOracle,
}

impl MaskingMode {
    pub fn label(&self) -> String {
        match self {
            MaskingMode::Soft => "soft".into(),
            MaskingMode::Hard { threshold } => format!("hard({threshold})"),
            MaskingMode::Random => "random".into(),
            MaskingMode::NoDetector => "none".into(),
            MaskingMode::ForceOracle => "force".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub width: usize,
    pub encoder_layers: usize,
    pub heads: usize,
    pub ffn_width: usize,
    pub gru_hidden: usize,
    pub l_max: usize,
    pub lambda: f64,
    pub mode: MaskingMode,
    pub residual_connection: bool,
}

impl ModelConfig {
    /// Desk-scale defaults. (A full-scale run of the architecture would
    /// use a 12-layer, 768-wide encoder, GRU hidden 256, lr 2e-5 and
    /// batch 320; at toy sizes larger steps and smaller stacks train
    /// far better.)
    pub fn desk_default(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            width: 64,
            encoder_layers: 2,
            heads: 4,
            ffn_width: 256,
            gru_hidden: 64,
            l_max: 64,
            lambda: 0.8,
            mode: MaskingMode::Soft,
            residual_connection: true,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.heads == 0 || self.width % self.heads != 0 {
            return Err(ModelError::Config(format!(
                "head count {} must divide width {}",
                self.heads, self.width
            )));
        }
        if self.ffn_width < self.width {
            return Err(ModelError::Config(format!(
                "FFN width {} below model width {}",
                self.ffn_width, self.width
            )));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(ModelError::Config(format!(
                "lambda {} outside [0, 1]",
                self.lambda
            )));
        }
        if let MaskingMode::Hard { threshold } = self.mode {
            if !(threshold > 0.0 && threshold < 1.0) {
                return Err(ModelError::Config(format!(
                    "hard-mask threshold {threshold} outside (0, 1)"
                )));
            }
        }
        if self.vocab_size <= crate::vocab::NUM_SPECIALS {
            return Err(ModelError::Config(format!(
                "vocab size {} leaves no real characters",
                self.vocab_size
            )));
        }
        Ok(())
    }
}

/// Bi-GRU plus the affine + sigmoid error-probability head.
#[derive(Clone, Debug)]
pub struct DetectorParams {
    pub fwd: GruCellParams,
    pub bwd: GruCellParams,
    pub w_d: Tensor, // 2h×1
    pub b_d: Tensor, // 1
}

impl DetectorParams {
    fn new(width: usize, hidden: usize, init: &mut Initializer) -> Self {
        DetectorParams {
            fwd: GruCellParams::new(width, hidden, init),
            bwd: GruCellParams::new(width, hidden, init),
            w_d: init.normal(&[2 * hidden, 1]),
            b_d: init.zeros(&[1]),
        }
    }
}

impl ParamGroup for DetectorParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.fwd.visit(&format!("{prefix}.fwd"), f);
        self.bwd.visit(&format!("{prefix}.bwd"), f);
        f(&format!("{prefix}.w_d"), &self.w_d);
        f(&format!("{prefix}.b_d"), &self.b_d);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.fwd.visit_mut(&format!("{prefix}.fwd"), f);
        self.bwd.visit_mut(&format!("{prefix}.bwd"), f);
        f(&format!("{prefix}.w_d"), &mut self.w_d);
        f(&format!("{prefix}.b_d"), &mut self.b_d);
    }
}

/// Encoder stack plus the per-position output projection.
#[derive(Clone, Debug)]
pub struct CorrectorParams {
    pub blocks: Vec<EncoderBlockParams>,
    pub w_out: Tensor, // d×V
    pub b_out: Tensor, // V
}

impl CorrectorParams {
    fn new(config: &ModelConfig, init: &mut Initializer) -> Self {
        CorrectorParams {
            blocks: (0..config.encoder_layers)
                .map(|_| EncoderBlockParams::new(config.width, config.heads, config.ffn_width, init))
                .collect(),
            w_out: init.normal(&[config.width, config.vocab_size]),
            b_out: init.zeros(&[config.vocab_size]),
        }
    }
}

impl ParamGroup for CorrectorParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&format!("{prefix}.block{i}"), f);
        }
        f(&format!("{prefix}.w_out"), &self.w_out);
        f(&format!("{prefix}.b_out"), &self.b_out);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&format!("{prefix}.block{i}"), f);
        }
        f(&format!("{prefix}.w_out"), &mut self.w_out);
        f(&format!("{prefix}.b_out"), &mut self.b_out);
    }
}

#[derive(Clone, Debug)]
pub struct SoftMaskModel {
    pub config: ModelConfig,
    pub embeddings: EmbeddingTables,
    pub detector: DetectorParams,
    pub corrector: CorrectorParams,
}

impl ParamGroup for SoftMaskModel {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        let p = |s: &str| {
            if prefix.is_empty() {
                s.to_string()
            } else {
                format!("{prefix}.{s}")
            }
        };
        self.embeddings.visit(&p("embeddings"), f);
        self.detector.visit(&p("detector"), f);
        self.corrector.visit(&p("corrector"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        let p = |s: &str| {
            if prefix.is_empty() {
                s.to_string()
            } else {
                format!("{prefix}.{s}")
            }
        };
        self.embeddings.visit_mut(&p("embeddings"), f);
        self.detector.visit_mut(&p("detector"), f);
        self.corrector.visit_mut(&p("corrector"), f);
    }
}

/// Tape-bound mirror of the full parameter set.
pub struct BoundModel {
    pub embeddings: BoundEmbeddings,
    pub det_fwd: BoundGruCell,
    pub det_bwd: BoundGruCell,
    pub det_w: Var,
    pub det_b: Var,
    pub blocks: Vec<BoundEncoderBlock>,
    pub w_out: Var,
    pub b_out: Var,
}

/// Everything the training step needs from one forward pass.
pub struct ForwardVars {
    pub det_logits: Var,  // n, pre-sigmoid
    pub error_probs: Var, // n
    pub embeddings: Var,  // n×d, the input embedding e
    pub soft_masked: Var, // n×d, e'
    pub logits: Var,      // n×V
}

/// Forward outputs as plain tensors.
#[derive(Clone, Debug)]
pub struct ModelOutput {
    pub error_probs: Vec<f64>,
    pub correction_logits: Tensor,     // n×V
    pub soft_masked_embeddings: Tensor, // n×d
}

/// The connector: rowwise convex combination of the input embedding
/// and the [MASK] embedding, weighted by the error probability.
pub fn soft_mask(tape: &Tape, e: Var, e_mask: Var, p: Var) -> Result<Var, NumericsError> {
    let pv = tape.value(p);
    if pv.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(NumericsError::Contract(format!(
            "soft_mask: probabilities outside [0, 1]: {:?}",
            pv.data()
        )));
    }
    let masked = tape.mul_col(p, e_mask)?;
    let inv = tape.affine_const(p, -1.0, 1.0)?;
    let kept = tape.mul_col(inv, e)?;
    tape.add(masked, kept)
}

impl SoftMaskModel {
    pub fn new(config: ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self, ModelError> {
        config.validate()?;
        let mut init = Initializer::new(rng);
        let embeddings = EmbeddingTables::new(
            config.vocab_size,
            config.width,
            config.l_max,
            MASK_ID,
            &mut init,
        );
        let detector = DetectorParams::new(config.width, config.gru_hidden, &mut init);
        let corrector = CorrectorParams::new(&config, &mut init);
        // detection head consumes exactly the Bi-GRU output width
        debug_assert_eq!(detector.w_d.rows(), 2 * config.gru_hidden);
        Ok(SoftMaskModel {
            config,
            embeddings,
            detector,
            corrector,
        })
    }

    pub fn bind<'t>(&self, b: &mut ParamBinder<'t>) -> BoundModel {
        BoundModel {
            embeddings: self.embeddings.bind(b, "embeddings"),
            det_fwd: self.detector.fwd.bind(b, "detector.fwd"),
            det_bwd: self.detector.bwd.bind(b, "detector.bwd"),
            det_w: b.leaf("detector.w_d", &self.detector.w_d),
            det_b: b.leaf("detector.b_d", &self.detector.b_d),
            blocks: self
                .corrector
                .blocks
                .iter()
                .enumerate()
                .map(|(i, blk)| blk.bind(b, &format!("corrector.block{i}")))
                .collect(),
            w_out: b.leaf("corrector.w_out", &self.corrector.w_out),
            b_out: b.leaf("corrector.b_out", &self.corrector.b_out),
        }
    }

    /// Detector: embeddings → Bi-GRU → affine → (logits, sigmoid).
    pub fn detect(
        &self,
        tape: &Tape,
        bound: &BoundModel,
        embeddings: Var,
    ) -> Result<(Var, Var), ModelError> {
        let hidden = bi_gru(tape, embeddings, &bound.det_fwd, &bound.det_bwd)?;
        let affine = tape.matmul(hidden, bound.det_w)?;
        let biased = tape.add_row_bias(affine, bound.det_b)?;
        let logits = tape.flatten(biased)?;
        let probs = tape.sigmoid(logits)?;
        Ok((logits, probs))
    }

    /// Corrector: encoder stack over e', optional residual with e, then
    /// the output projection.
    pub fn correct(
        &self,
        tape: &Tape,
        bound: &BoundModel,
        e_prime: Var,
        e: Var,
    ) -> Result<Var, ModelError> {
        let mut h = e_prime;
        for blk in &bound.blocks {
            h = encoder_block(tape, blk, h)?;
        }
        let h_prime = if self.config.residual_connection {
            tape.add(h, e)?
        } else {
            h
        };
        let proj = tape.matmul(h_prime, bound.w_out)?;
        Ok(tape.add_row_bias(proj, bound.b_out)?)
    }

    /// Full forward pass on an existing tape. `gold_labels` is required
    /// in ForceOracle mode; `rng` is required in Random mode.
    pub fn forward_on_tape(
        &self,
        tape: &Tape,
        bound: &BoundModel,
        ids: &[usize],
        gold_labels: Option<&[u8]>,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ForwardVars, ModelError> {
        if ids.is_empty() {
            return Err(ModelError::Contract("forward: empty input".into()));
        }
        if ids.len() > self.config.l_max {
            return Err(ModelError::Contract(format!(
                "forward: length {} exceeds maximum {}",
                ids.len(),
                self.config.l_max
            )));
        }
        let n = ids.len();
        let e = embed(tape, &bound.embeddings, ids)?;
        let (det_logits, error_probs) = self.detect(tape, bound, e)?;

        let e_prime = match self.config.mode {
            MaskingMode::Soft => {
                let e_mask = layers::mask_embedding(tape, &bound.embeddings, n)?;
                soft_mask(tape, e, e_mask, error_probs)?
            }
            MaskingMode::Hard { threshold } => {
                // straight-through: the binarized probabilities enter the
                // graph as constants, so no correction gradient reaches
                // the detector
                let pv = tape.value(error_probs);
                let binary: Vec<f64> = pv
                    .data()
                    .iter()
                    .map(|p| if *p > threshold { 1.0 } else { 0.0 })
                    .collect();
                let pc = tape.constant(Tensor::vector(binary));
                let e_mask = layers::mask_embedding(tape, &bound.embeddings, n)?;
                soft_mask(tape, e, e_mask, pc)?
            }
            MaskingMode::Random => {
                let rng = rng.ok_or_else(|| {
                    ModelError::Contract("random masking mode requires an RNG".into())
                })?;
                let draws: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
                let pc = tape.constant(Tensor::vector(draws));
                let e_mask = layers::mask_embedding(tape, &bound.embeddings, n)?;
                soft_mask(tape, e, e_mask, pc)?
            }
            MaskingMode::NoDetector => e,
            MaskingMode::ForceOracle => {
                let g = gold_labels.ok_or_else(|| {
                    ModelError::Contract("force-oracle mode requires gold error labels".into())
                })?;
                if g.len() != n {
                    return Err(ModelError::Contract(format!(
                        "gold labels length {} does not match input length {n}",
                        g.len()
                    )));
                }
                let pc = tape.constant(Tensor::vector(
                    g.iter().map(|v| f64::from(*v)).collect(),
                ));
                let e_mask = layers::mask_embedding(tape, &bound.embeddings, n)?;
                soft_mask(tape, e, e_mask, pc)?
            }
        };

        let logits = self.correct(tape, bound, e_prime, e)?;
        Ok(ForwardVars {
            det_logits,
            error_probs,
            embeddings: e,
            soft_masked: e_prime,
            logits,
        })
    }

    /// Forward pass on a fresh tape, returning plain tensors.
    pub fn forward(
        &self,
        ids: &[usize],
        gold_labels: Option<&[u8]>,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ModelOutput, ModelError> {
        let tape = Tape::new();
        let mut binder = ParamBinder::new(&tape);
        let bound = self.bind(&mut binder);
        let fwd = self.forward_on_tape(&tape, &bound, ids, gold_labels, rng)?;
        Ok(ModelOutput {
            error_probs: tape.value(fwd.error_probs).into_data(),
            correction_logits: tape.value(fwd.logits),
            soft_masked_embeddings: tape.value(fwd.soft_masked),
        })
    }

    /// Joint loss L = λ·L_c + (1−λ)·L_d over non-padding positions.
    /// NoDetector mode trains on L_c alone (the baseline has no
    /// detection output); L_d is still returned for reporting.
    pub fn loss_on_tape(
        &self,
        tape: &Tape,
        fwd: &ForwardVars,
        ids: &[usize],
        gold: &[usize],
        gold_labels: &[u8],
        lambda: f64,
    ) -> Result<(Var, Var, Var), ModelError> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(ModelError::Contract(format!("lambda {lambda} outside [0, 1]")));
        }
        if gold.len() != ids.len() || gold_labels.len() != ids.len() {
            return Err(ModelError::Contract(format!(
                "loss: lengths disagree ({} ids, {} gold, {} labels)",
                ids.len(),
                gold.len(),
                gold_labels.len()
            )));
        }
        let mask: Vec<bool> = ids.iter().map(|id| *id != PAD_ID).collect();
        let targets: Vec<f64> = gold_labels.iter().map(|g| f64::from(*g)).collect();
        let l_d = tape.bce_with_logits_sum(fwd.det_logits, &targets, &mask)?;
        let l_c = tape.softmax_xent_sum(fwd.logits, gold, &mask)?;
        let total = match self.config.mode {
            MaskingMode::NoDetector => tape.scale(l_c, 1.0)?,
            _ => {
                let wc = tape.scale(l_c, lambda)?;
                let wd = tape.scale(l_d, 1.0 - lambda)?;
                tape.add(wc, wd)?
            }
        };
        Ok((total, l_d, l_c))
    }

    /// Corrected sequence plus error probabilities. Argmax over the full
    /// vocabulary with [UNK] excluded; ties break toward the lowest id.
    /// ForceOracle mode copies the input everywhere except gold error
    /// positions, where the observed character is also excluded.
    pub fn predict(
        &self,
        ids: &[usize],
        gold_labels: Option<&[u8]>,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Vec<usize>, Vec<f64>), ModelError> {
        let output = self.forward(ids, gold_labels, rng)?;
        let logits = &output.correction_logits;
        let v = logits.cols();
        let mut out = Vec::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if self.config.mode == MaskingMode::ForceOracle {
                let g = gold_labels.expect("forward already checked oracle labels");
                if g[i] == 0 {
                    out.push(*id);
                    continue;
                }
                out.push(argmax_excluding(logits.row_slice(i), v, &[UNK_ID, *id]));
            } else {
                out.push(argmax_excluding(logits.row_slice(i), v, &[UNK_ID]));
            }
        }
        debug_assert_eq!(out.len(), ids.len());
        Ok((out, output.error_probs))
    }
}

fn argmax_excluding(row: &[f64], v: usize, excluded: &[usize]) -> usize {
    let mut best = usize::MAX;
    let mut best_val = f64::NEG_INFINITY;
    for j in 0..v {
        if excluded.contains(&j) {
            continue;
        }
        if row[j] > best_val {
            best_val = row[j];
            best = j;
        }
    }
    best
}
