//! Optimization: Adam, masked-language-model pretraining of the
//! corrector, end-to-end joint fine-tuning, and binary checkpoints.
//!
//! Determinism contract: (seed, config, data) fully determine every
//! parameter at every step. Batches cycle through the data in a fixed
//! order derived from the step counter, and all randomness flows
//! through one checkpointable ChaCha stream, so resuming from a
//! checkpoint reproduces uninterrupted training step for step.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::ExamplePair;
use crate::eval::{evaluate, EvalError, MetricsReport};
use crate::layers::{ParamBinder, ParamGroup};
use crate::model::{ModelConfig, ModelError, SoftMaskModel};
use crate::numerics::{NumericsError, Tape, Tensor};
use crate::vocab::{Vocabulary, MASK_ID, NUM_SPECIALS};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("non-finite gradient in parameter {name} at step {step}")]
    NonFiniteGradient { name: String, step: u64 },
    #[error("checkpoint header corrupt: {0}")]
    CorruptHeader(String),
    #[error("checkpoint tensor {name} truncated")]
    TruncatedTensor { name: String },
    #[error("checkpoint format version {found} not supported (expected {expected})")]
    UnknownVersion { found: u32, expected: u32 },
    #[error("checkpoint/model mismatch: {0}")]
    Incompatible(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("dev evaluation failed: {0}")]
    Eval(String),
}

impl From<EvalError> for TrainError {
    fn from(e: EvalError) -> Self {
        TrainError::Eval(e.to_string())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Drop training pairs with no errors (x == y) before training.
    pub filter_unchanged: bool,
}

impl TrainConfig {
    pub fn desk_default(seed: u64) -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 32,
            epochs: 3,
            seed,
            filter_unchanged: false,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(TrainError::Contract(format!("learning rate {} not positive", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Contract("batch size 0".into()));
        }
        if self.epochs == 0 {
            return Err(TrainError::Contract("epoch count 0".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------
// Adam

/// Bias-corrected Adam with per-parameter moment accumulators, keyed by
/// the parameter names from the [`ParamGroup`] traversal.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// One update over every parameter the group exposes. Parameters
    /// without a gradient entry are left untouched; a non-finite
    /// gradient aborts, naming the parameter.
    pub fn apply(
        &mut self,
        params: &mut dyn ParamGroup,
        grads: &BTreeMap<String, Tensor>,
    ) -> Result<(), TrainError> {
        self.step += 1;
        let t = self.step;
        let bc1 = 1.0 - self.beta1.powi(t as i32);
        let bc2 = 1.0 - self.beta2.powi(t as i32);
        let (lr, b1, b2, eps) = (self.lr, self.beta1, self.beta2, self.eps);
        let mut failure: Option<TrainError> = None;
        let m = &mut self.m;
        let v = &mut self.v;
        params.visit_mut("", &mut |name, tensor| {
            if failure.is_some() {
                return;
            }
            let Some(grad) = grads.get(name) else {
                return;
            };
            if grad.shape() != tensor.shape() {
                failure = Some(TrainError::Contract(format!(
                    "gradient shape {:?} does not match parameter {name} {:?}",
                    grad.shape(),
                    tensor.shape()
                )));
                return;
            }
            if !grad.all_finite() {
                failure = Some(TrainError::NonFiniteGradient {
                    name: name.to_string(),
                    step: t,
                });
                return;
            }
            let m_t = m
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(tensor.shape()));
            let v_t = v
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(tensor.shape()));
            let data = tensor.data_mut();
            let md = m_t.data_mut();
            let vd = v_t.data_mut();
            for i in 0..data.len() {
                let g = grad.data()[i];
                md[i] = b1 * md[i] + (1.0 - b1) * g;
                vd[i] = b2 * vd[i] + (1.0 - b2) * g * g;
                let m_hat = md[i] / bc1;
                let v_hat = vd[i] / bc2;
                data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        });
        match failure {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}

// ---------------------------------------------------------------------
// gradient accumulation

/// Mean joint-loss gradients over a batch, one forward/backward per
/// sentence. Returns (gradients, mean total, mean detection, mean
/// correction loss).
pub fn batch_gradients(
    model: &SoftMaskModel,
    batch: &[&ExamplePair],
    rng: &mut ChaCha8Rng,
) -> Result<(BTreeMap<String, Tensor>, f64, f64, f64), TrainError> {
    if batch.is_empty() {
        return Err(TrainError::Contract("empty batch".into()));
    }
    let mut acc: BTreeMap<String, Tensor> = BTreeMap::new();
    let (mut total, mut total_d, mut total_c) = (0.0, 0.0, 0.0);
    for pair in batch {
        let tape = Tape::new();
        let mut binder = ParamBinder::new(&tape);
        let bound = model.bind(&mut binder);
        let fwd = model.forward_on_tape(&tape, &bound, &pair.x, Some(&pair.g), Some(rng))?;
        let (loss, l_d, l_c) =
            model.loss_on_tape(&tape, &fwd, &pair.x, &pair.y, &pair.g, model.config.lambda)?;
        total += tape.value(loss).item()?;
        total_d += tape.value(l_d).item()?;
        total_c += tape.value(l_c).item()?;
        let grads = binder.grads(&tape.backward(loss)?);
        for (name, g) in grads {
            match acc.get_mut(&name) {
                Some(sum) => {
                    let sd = sum.data_mut();
                    for (a, b) in sd.iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
                None => {
                    acc.insert(name, g);
                }
            }
        }
    }
    let scale = 1.0 / batch.len() as f64;
    for g in acc.values_mut() {
        for v in g.data_mut() {
            *v *= scale;
        }
    }
    Ok((acc, total * scale, total_d * scale, total_c * scale))
}

// ---------------------------------------------------------------------
// training loop

/// Model + optimizer + RNG + step counter: the complete resumable
/// training state.
pub struct Trainer {
    pub model: SoftMaskModel,
    pub opt: AdamState,
    pub rng: ChaCha8Rng,
    pub step: u64,
}

impl Trainer {
    pub fn new(model: SoftMaskModel, lr: f64, seed: u64) -> Self {
        Trainer {
            model,
            opt: AdamState::new(lr),
            rng: ChaCha8Rng::seed_from_u64(seed),
            step: 0,
        }
    }

    /// Indices of the batch for a given step: fixed-order cycling, so
    /// the batch sequence is a pure function of the step counter.
    fn batch_indices(step: u64, batch_size: usize, n: usize) -> Vec<usize> {
        (0..batch_size)
            .map(|j| ((step as usize) * batch_size + j) % n)
            .collect()
    }

    /// Run `steps` joint-loss updates; returns the mean total loss per
    /// step.
    pub fn train_steps(
        &mut self,
        pairs: &[ExamplePair],
        batch_size: usize,
        steps: u64,
    ) -> Result<Vec<f64>, TrainError> {
        if pairs.is_empty() {
            return Err(TrainError::Contract("no training pairs".into()));
        }
        if batch_size == 0 {
            return Err(TrainError::Contract("batch size 0".into()));
        }
        let mut losses = Vec::with_capacity(steps as usize);
        for _ in 0..steps {
            let idx = Self::batch_indices(self.step, batch_size, pairs.len());
            let batch: Vec<&ExamplePair> = idx.iter().map(|i| &pairs[*i]).collect();
            let (grads, loss, _, _) = batch_gradients(&self.model, &batch, &mut self.rng)?;
            self.opt.apply(&mut self.model, &grads)?;
            self.step += 1;
            losses.push(loss);
        }
        Ok(losses)
    }
}

#[derive(Clone, Debug)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_train_loss: f64,
    pub dev: MetricsReport,
}

#[derive(Clone, Debug)]
pub struct FinetuneReport {
    pub history: Vec<EpochRecord>,
    pub best_model: SoftMaskModel,
    pub best_epoch: usize,
    pub best_correction_f1: f64,
}

/// End-to-end fine-tuning of the joint objective. Scores the dev set
/// after every epoch and keeps the parameters with the best dev
/// correction F1. The passed model is left in its final (not best)
/// state so training can be continued.
pub fn finetune(
    model: &mut SoftMaskModel,
    train_pairs: &[ExamplePair],
    dev_pairs: &[ExamplePair],
    tc: &TrainConfig,
) -> Result<FinetuneReport, TrainError> {
    tc.validate()?;
    model.config.validate()?;
    if dev_pairs.is_empty() {
        return Err(TrainError::Contract("no dev pairs".into()));
    }
    let filtered: Vec<ExamplePair>;
    let pairs: &[ExamplePair] = if tc.filter_unchanged {
        filtered = train_pairs.iter().filter(|p| p.has_error()).cloned().collect();
        &filtered
    } else {
        train_pairs
    };
    if pairs.is_empty() {
        return Err(TrainError::Contract("no training pairs".into()));
    }
    let steps_per_epoch = (pairs.len() as u64).div_ceil(tc.batch_size as u64);
    let mut trainer = Trainer::new(model.clone(), tc.lr, tc.seed);
    let mut history = Vec::with_capacity(tc.epochs);
    let mut best: Option<(usize, f64, SoftMaskModel)> = None;
    for epoch in 0..tc.epochs {
        let losses = trainer.train_steps(pairs, tc.batch_size, steps_per_epoch)?;
        let mean_train_loss = losses.iter().sum::<f64>() / losses.len() as f64;
        // dev scoring uses its own stream so it cannot perturb training
        let mut dev_rng = ChaCha8Rng::seed_from_u64(tc.seed ^ 0xdeed_0d0d);
        let dev = evaluate(&trainer.model, dev_pairs, &mut dev_rng)?;
        let f1 = dev.correction.f1;
        log::info!(
            "epoch {epoch}: train loss {mean_train_loss:.4}, dev correction F1 {f1:.4}"
        );
        if best.as_ref().map_or(true, |(_, b, _)| f1 > *b) {
            best = Some((epoch, f1, trainer.model.clone()));
        }
        history.push(EpochRecord {
            epoch,
            mean_train_loss,
            dev,
        });
    }
    *model = trainer.model;
    let (best_epoch, best_correction_f1, best_model) = best.expect("at least one epoch");
    Ok(FinetuneReport {
        history,
        best_model,
        best_epoch,
        best_correction_f1,
    })
}

// ---------------------------------------------------------------------
// MLM pretraining

/// Masked-language-model pretraining of embeddings + corrector on clean
/// sentences: 15% of positions are selected; of those, 80% become
/// [MASK], 10% a random character, 10% stay unchanged. The loss is the
/// mean cross-entropy over selected positions. Detector parameters
/// receive zero gradient and are untouched.
pub fn mlm_pretrain(
    model: &mut SoftMaskModel,
    sentences: &[Vec<usize>],
    steps: u64,
    batch_size: usize,
    lr: f64,
    seed: u64,
) -> Result<Vec<f64>, TrainError> {
    if steps == 0 {
        return Err(TrainError::Contract("step count 0".into()));
    }
    if batch_size == 0 {
        return Err(TrainError::Contract("batch size 0".into()));
    }
    if sentences.is_empty() || sentences.iter().any(|s| s.is_empty()) {
        return Err(TrainError::Contract("empty corpus or empty sentence".into()));
    }
    let vocab_size = model.config.vocab_size;
    let mut trainer = Trainer::new(model.clone(), lr, seed);
    let mut losses = Vec::with_capacity(steps as usize);
    for _ in 0..steps {
        let idx = Trainer::batch_indices(trainer.step, batch_size, sentences.len());
        let mut acc: BTreeMap<String, Tensor> = BTreeMap::new();
        let mut loss_sum = 0.0;
        let mut selected_total = 0usize;
        for &i in &idx {
            let gold = &sentences[i];
            let mut corrupted = gold.clone();
            let mut selected = vec![false; gold.len()];
            let mut any = false;
            for (j, slot) in corrupted.iter_mut().enumerate() {
                if trainer.rng.gen::<f64>() < 0.15 {
                    selected[j] = true;
                    any = true;
                    let u = trainer.rng.gen::<f64>();
                    if u < 0.8 {
                        *slot = MASK_ID;
                    } else if u < 0.9 {
                        *slot = trainer.rng.gen_range(NUM_SPECIALS..vocab_size);
                    } // else keep
                }
            }
            if !any {
                // always learn from something
                let j = trainer.rng.gen_range(0..gold.len());
                selected[j] = true;
                corrupted[j] = MASK_ID;
            }
            let n_sel = selected.iter().filter(|s| **s).count();
            selected_total += n_sel;

            let tape = Tape::new();
            let mut binder = ParamBinder::new(&tape);
            let bound = trainer.model.bind(&mut binder);
            let e = crate::layers::embed(&tape, &bound.embeddings, &corrupted)?;
            let logits = trainer.model.correct(&tape, &bound, e, e)?;
            let loss_sum_var = tape.softmax_xent_sum(logits, gold, &selected)?;
            let loss = tape.scale(loss_sum_var, 1.0 / n_sel as f64)?;
            loss_sum += tape.value(loss).item()?;
            let grads = binder.grads(&tape.backward(loss)?);
            for (name, g) in grads {
                match acc.get_mut(&name) {
                    Some(sum) => {
                        for (a, b) in sum.data_mut().iter_mut().zip(g.data()) {
                            *a += b;
                        }
                    }
                    None => {
                        acc.insert(name, g);
                    }
                }
            }
        }
        debug_assert!(selected_total > 0);
        let scale = 1.0 / idx.len() as f64;
        for g in acc.values_mut() {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
        trainer.opt.apply(&mut trainer.model, &acc)?;
        trainer.step += 1;
        losses.push(loss_sum * scale);
    }
    *model = trainer.model;
    Ok(losses)
}

// ---------------------------------------------------------------------
// checkpoints

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SMCHKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamMeta {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
}

/// JSON header of a checkpoint file; tensors follow as binary records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    /// Vocabulary characters in id order (specials implied).
    pub vocab_chars: String,
    pub step: u64,
    pub rng_seed: Vec<u8>,
    /// ChaCha word position, decimal (too wide for a JSON number).
    pub rng_word_pos: String,
    pub adam: Option<AdamMeta>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    /// Snapshot the complete training state.
    pub fn of_trainer(trainer: &Trainer, vocab: &Vocabulary) -> Self {
        let mut tensors = BTreeMap::new();
        trainer.model.visit("", &mut |name, t| {
            tensors.insert(name.to_string(), t.clone());
        });
        for (name, t) in &trainer.opt.m {
            tensors.insert(format!("adam.m.{name}"), t.clone());
        }
        for (name, t) in &trainer.opt.v {
            tensors.insert(format!("adam.v.{name}"), t.clone());
        }
        Checkpoint {
            meta: CheckpointMeta {
                config: trainer.model.config.clone(),
                vocab_chars: vocab.chars().iter().collect(),
                step: trainer.step,
                rng_seed: trainer.rng.get_seed().to_vec(),
                rng_word_pos: trainer.rng.get_word_pos().to_string(),
                adam: Some(AdamMeta {
                    lr: trainer.opt.lr,
                    beta1: trainer.opt.beta1,
                    beta2: trainer.opt.beta2,
                    eps: trainer.opt.eps,
                    step: trainer.opt.step,
                }),
            },
            tensors,
        }
    }

    /// Model-only snapshot (no optimizer state), for finished models.
    pub fn of_model(model: &SoftMaskModel, vocab: &Vocabulary, seed: u64) -> Self {
        let trainer = Trainer::new(model.clone(), 1.0, seed);
        let mut ckpt = Self::of_trainer(&trainer, vocab);
        ckpt.meta.adam = None;
        ckpt.tensors.retain(|name, _| !name.starts_with("adam."));
        ckpt
    }

    /// Rebuild the model; errors name any missing or misshapen tensor.
    pub fn restore_model(&self) -> Result<(SoftMaskModel, Vocabulary), TrainError> {
        let mut seed_rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = SoftMaskModel::new(self.meta.config.clone(), &mut seed_rng)?;
        let mut failure: Option<String> = None;
        model.visit_mut("", &mut |name, t| {
            if failure.is_some() {
                return;
            }
            match self.tensors.get(name) {
                None => failure = Some(format!("missing tensor {name}")),
                Some(saved) if saved.shape() != t.shape() => {
                    failure = Some(format!(
                        "tensor {name}: saved shape {:?}, expected {:?}",
                        saved.shape(),
                        t.shape()
                    ))
                }
                Some(saved) => *t = saved.clone(),
            }
        });
        if let Some(msg) = failure {
            return Err(TrainError::Incompatible(msg));
        }
        let vocab = Vocabulary::from_chars(self.meta.vocab_chars.chars());
        if vocab.size() != self.meta.config.vocab_size {
            return Err(TrainError::Incompatible(format!(
                "vocabulary size {} does not match config vocab size {}",
                vocab.size(),
                self.meta.config.vocab_size
            )));
        }
        Ok((model, vocab))
    }

    /// Rebuild the full training state (requires optimizer metadata).
    pub fn restore_trainer(&self) -> Result<(Trainer, Vocabulary), TrainError> {
        let (model, vocab) = self.restore_model()?;
        let adam = self.meta.adam.clone().ok_or_else(|| {
            TrainError::Incompatible("checkpoint has no optimizer state".into())
        })?;
        let mut opt = AdamState::new(adam.lr);
        opt.beta1 = adam.beta1;
        opt.beta2 = adam.beta2;
        opt.eps = adam.eps;
        opt.step = adam.step;
        for (name, t) in &self.tensors {
            if let Some(p) = name.strip_prefix("adam.m.") {
                opt.m.insert(p.to_string(), t.clone());
            } else if let Some(p) = name.strip_prefix("adam.v.") {
                opt.v.insert(p.to_string(), t.clone());
            }
        }
        let seed: [u8; 32] = self
            .meta
            .rng_seed
            .as_slice()
            .try_into()
            .map_err(|_| TrainError::Incompatible("RNG seed is not 32 bytes".into()))?;
        let word_pos: u128 = self
            .meta
            .rng_word_pos
            .parse()
            .map_err(|_| TrainError::Incompatible("unreadable RNG position".into()))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_word_pos(word_pos);
        Ok((
            Trainer {
                model,
                opt,
                rng,
                step: self.meta.step,
            },
            vocab,
        ))
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        let mut out: Vec<u8> = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let meta = serde_json::to_vec(&self.meta)
            .map_err(|e| TrainError::Contract(format!("unserializable header: {e}")))?;
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        for (name, t) in &self.tensors {
            let bytes = name.as_bytes();
            out.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
            out.extend_from_slice(bytes);
            out.extend_from_slice(&(t.shape().len() as u64).to_le_bytes());
            for d in t.shape() {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut f = fs::File::create(path)?;
        f.write_all(&out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let bytes = fs::read(path)?;
        let mut at = 0usize;
        let take = |at: &mut usize, n: usize, what: &str| -> Result<&[u8], TrainError> {
            if *at + n > bytes.len() {
                return Err(TrainError::CorruptHeader(format!("{what} cut short")));
            }
            let s = &bytes[*at..*at + n];
            *at += n;
            Ok(s)
        };
        let magic = take(&mut at, CHECKPOINT_MAGIC.len(), "magic")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(TrainError::CorruptHeader("magic bytes do not match".into()));
        }
        let version = u32::from_le_bytes(take(&mut at, 4, "version")?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(TrainError::UnknownVersion {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let meta_len = u64::from_le_bytes(take(&mut at, 8, "header length")?.try_into().unwrap());
        let meta_bytes = take(&mut at, meta_len as usize, "header")?;
        let meta: CheckpointMeta = serde_json::from_slice(meta_bytes)
            .map_err(|e| TrainError::CorruptHeader(format!("unreadable header JSON: {e}")))?;
        let mut tensors = BTreeMap::new();
        while at < bytes.len() {
            let name_len =
                u64::from_le_bytes(take(&mut at, 8, "tensor name length")?.try_into().unwrap());
            let name = String::from_utf8(take(&mut at, name_len as usize, "tensor name")?.to_vec())
                .map_err(|_| TrainError::CorruptHeader("tensor name is not UTF-8".into()))?;
            let trunc = |_| TrainError::TruncatedTensor { name: name.clone() };
            let rank =
                u64::from_le_bytes(take(&mut at, 8, "rank").map_err(trunc)?.try_into().unwrap());
            let mut shape = Vec::with_capacity(rank as usize);
            for _ in 0..rank {
                shape.push(u64::from_le_bytes(
                    take(&mut at, 8, "dims").map_err(trunc)?.try_into().unwrap(),
                ) as usize);
            }
            let count: usize = shape.iter().product();
            let mut data = Vec::with_capacity(count);
            for _ in 0..count {
                data.push(f64::from_le_bytes(
                    take(&mut at, 8, "payload").map_err(trunc)?.try_into().unwrap(),
                ));
            }
            let t = Tensor::new(shape, data)
                .map_err(|_| TrainError::TruncatedTensor { name: name.clone() })?;
            tensors.insert(name, t);
        }
        Ok(Checkpoint { meta, tensors })
    }
}

/// Gradient-coupling probe: detector-parameter gradient norm from the
/// correction loss alone. Nonzero exactly when the masking mode is
/// differentiable (soft).
pub fn detector_coupling_norm(
    model: &SoftMaskModel,
    pair: &ExamplePair,
    rng: &mut ChaCha8Rng,
) -> Result<f64, TrainError> {
    let tape = Tape::new();
    let mut binder = ParamBinder::new(&tape);
    let bound = model.bind(&mut binder);
    let fwd = model.forward_on_tape(&tape, &bound, &pair.x, Some(&pair.g), Some(rng))?;
    let (_, _, l_c) =
        model.loss_on_tape(&tape, &fwd, &pair.x, &pair.y, &pair.g, model.config.lambda)?;
    let grads = binder.grads(&tape.backward(l_c)?);
    Ok(grads
        .iter()
        .filter(|(name, _)| name.starts_with("detector."))
        .flat_map(|(_, t)| t.data().iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt())
}
