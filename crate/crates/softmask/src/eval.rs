//! Sentence-level scoring plus the two experiment drivers: the
//! masking-mode ablation matrix and the λ sweep.
//!
//! A sentence only scores for detection when the predicted
//! error-position set (positions where output ≠ input) equals the gold
//! set exactly, and for correction when the whole output equals gold.
//! The four outcome counts partition the sentences, so TP+FP+FN+TN = N.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::ExamplePair;
use crate::model::{MaskingMode, ModelError, SoftMaskModel};
use crate::train::{finetune, TrainConfig, TrainError};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("sentence {index}: input length {input}, gold length {gold}, output length {output}")]
    LengthMismatch {
        index: usize,
        input: usize,
        gold: usize,
        output: usize,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// One scored sentence: what the model saw, what it should have
/// produced, and what it produced.
#[derive(Clone, Debug)]
pub struct SentenceOutcome {
    pub input: Vec<usize>,
    pub gold: Vec<usize>,
    pub output: Vec<usize>,
}

/// Sentence counts and the derived rates for one channel (detection or
/// correction).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelMetrics {
    pub acc: f64,
    pub prec: f64,
    pub rec: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl ChannelMetrics {
    fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        let total = tp + fp + fn_ + tn;
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let prec = ratio(tp, tp + fp);
        let rec = ratio(tp, tp + fn_);
        let f1 = if prec + rec > 0.0 {
            2.0 * prec * rec / (prec + rec)
        } else {
            0.0
        };
        ChannelMetrics {
            acc: ratio(tp + tn, total),
            prec,
            rec,
            f1,
            tp,
            fp,
            fn_,
            tn,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mode: String,
    pub sentences: usize,
    pub detection: ChannelMetrics,
    pub correction: ChannelMetrics,
}

/// Sentence-level scoring. Detection outcomes by gold error set G and
/// predicted set P = {i : output_i ≠ input_i}: TP iff G ≠ ∅ and P = G,
/// TN iff both empty, FP iff G = ∅ and P ≠ ∅, FN otherwise. Correction
/// replaces the set comparison with full-sentence equality against gold.
pub fn score(outcomes: &[SentenceOutcome], mode: &str) -> Result<MetricsReport, EvalError> {
    if outcomes.is_empty() {
        return Err(EvalError::Contract("score: no sentences".into()));
    }
    let (mut dtp, mut dfp, mut dfn, mut dtn) = (0, 0, 0, 0);
    let (mut ctp, mut cfp, mut cfn, mut ctn) = (0, 0, 0, 0);
    for (index, o) in outcomes.iter().enumerate() {
        if o.gold.len() != o.input.len() || o.output.len() != o.input.len() {
            return Err(EvalError::LengthMismatch {
                index,
                input: o.input.len(),
                gold: o.gold.len(),
                output: o.output.len(),
            });
        }
        let has_error = o.gold.iter().zip(&o.input).any(|(g, x)| g != x);
        let sets_match = o
            .input
            .iter()
            .zip(&o.gold)
            .zip(&o.output)
            .all(|((x, g), y)| (x != g) == (x != y));
        match (has_error, sets_match) {
            (true, true) => dtp += 1,
            (false, true) => dtn += 1,
            (false, false) => dfp += 1,
            (true, false) => dfn += 1,
        }
        let exact = o.output == o.gold;
        match (has_error, exact) {
            (true, true) => ctp += 1,
            (false, true) => ctn += 1,
            (false, false) => cfp += 1,
            (true, false) => cfn += 1,
        }
    }
    Ok(MetricsReport {
        mode: mode.to_string(),
        sentences: outcomes.len(),
        detection: ChannelMetrics::from_counts(dtp, dfp, dfn, dtn),
        correction: ChannelMetrics::from_counts(ctp, cfp, cfn, ctn),
    })
}

/// Run the model over held-out pairs and score the outputs. The RNG is
/// consumed only in random-masking mode.
pub fn evaluate(
    model: &SoftMaskModel,
    pairs: &[ExamplePair],
    rng: &mut ChaCha8Rng,
) -> Result<MetricsReport, EvalError> {
    let mut outcomes = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let (output, _) = model.predict(&pair.x, Some(&pair.g), Some(rng))?;
        outcomes.push(SentenceOutcome {
            input: pair.x.clone(),
            gold: pair.y.clone(),
            output,
        });
    }
    score(&outcomes, &model.config.mode.label())
}

// ---------------------------------------------------------------------
// Ablation matrix

/// One ablation variant: a display name plus config overrides.
#[derive(Clone, Debug)]
pub struct AblationRow {
    pub name: String,
    pub mode: MaskingMode,
    pub residual_connection: bool,
}

/// The standard eight-row matrix: soft masking, soft without the
/// residual connection, three hard-mask thresholds, random masking,
/// plain encoder fine-tuning, and the gold-position upper bound.
pub fn default_ablation() -> Vec<AblationRow> {
    let row = |name: &str, mode: MaskingMode, residual_connection: bool| AblationRow {
        name: name.to_string(),
        mode,
        residual_connection,
    };
    vec![
        row("soft", MaskingMode::Soft, true),
        row("soft-no-residual", MaskingMode::Soft, false),
        row("hard(0.95)", MaskingMode::Hard { threshold: 0.95 }, true),
        row("hard(0.9)", MaskingMode::Hard { threshold: 0.9 }, true),
        row("hard(0.7)", MaskingMode::Hard { threshold: 0.7 }, true),
        row("random", MaskingMode::Random, true),
        row("none", MaskingMode::NoDetector, true),
        row("force (upper bound)", MaskingMode::ForceOracle, true),
    ]
}

/// Train and score every ablation row from one shared initialization,
/// so differences come from the masking strategy alone.
pub fn run_ablation(
    rows: &[AblationRow],
    base: &SoftMaskModel,
    train_pairs: &[ExamplePair],
    dev_pairs: &[ExamplePair],
    eval_pairs: &[ExamplePair],
    tc: &TrainConfig,
) -> Result<Vec<(String, MetricsReport)>, EvalError> {
    let mut out = Vec::with_capacity(rows.len());
    for row in rows {
        let mut model = base.clone();
        model.config.mode = row.mode;
        model.config.residual_connection = row.residual_connection;
        let run = finetune(&mut model, train_pairs, dev_pairs, tc)?;
        let mut rng = ChaCha8Rng::seed_from_u64(tc.seed ^ 0x5eed_ea11);
        let mut report = evaluate(&run.best_model, eval_pairs, &mut rng)?;
        report.mode = row.name.clone();
        out.push((row.name.clone(), report));
    }
    Ok(out)
}

// ---------------------------------------------------------------------
// λ sweep

pub const DEFAULT_LAMBDA_GRID: [f64; 4] = [0.2, 0.5, 0.8, 1.0];

/// Train once per λ from the same initialization; the winner is the λ
/// with the best held-out correction F1.
pub fn lambda_sweep(
    lambdas: &[f64],
    base: &SoftMaskModel,
    train_pairs: &[ExamplePair],
    dev_pairs: &[ExamplePair],
    eval_pairs: &[ExamplePair],
    tc: &TrainConfig,
) -> Result<(Vec<(f64, MetricsReport)>, f64), EvalError> {
    if lambdas.is_empty() {
        return Err(EvalError::Contract("lambda sweep: empty grid".into()));
    }
    let mut out = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(EvalError::Contract(format!("lambda {lambda} outside [0, 1]")));
        }
        let mut model = base.clone();
        model.config.lambda = lambda;
        let run = finetune(&mut model, train_pairs, dev_pairs, tc)?;
        let mut rng = ChaCha8Rng::seed_from_u64(tc.seed ^ 0x5eed_ea11);
        let mut report = evaluate(&run.best_model, eval_pairs, &mut rng)?;
        report.mode = format!("lambda={lambda}");
        out.push((lambda, report));
    }
    let best = out
        .iter()
        .max_by(|a, b| {
            a.1.correction
                .f1
                .partial_cmp(&b.1.correction.f1)
                .expect("finite F1")
        })
        .map(|(l, _)| *l)
        .expect("nonempty sweep");
    Ok((out, best))
}

// ---------------------------------------------------------------------
// rendering

/// Aligned plain-text table, one row per report.
pub fn render_table(reports: &[(String, MetricsReport)]) -> String {
    let mut width = "variant".len();
    for (name, _) in reports {
        width = width.max(name.chars().count());
    }
    let mut s = format!(
        "{:<w$}  {:>7} {:>7} {:>7} {:>7}  {:>7} {:>7} {:>7} {:>7}\n",
        "variant",
        "d.acc",
        "d.prec",
        "d.rec",
        "d.f1",
        "c.acc",
        "c.prec",
        "c.rec",
        "c.f1",
        w = width
    );
    for (name, r) in reports {
        s.push_str(&format!(
            "{:<w$}  {:>7.4} {:>7.4} {:>7.4} {:>7.4}  {:>7.4} {:>7.4} {:>7.4} {:>7.4}\n",
            name,
            r.detection.acc,
            r.detection.prec,
            r.detection.rec,
            r.detection.f1,
            r.correction.acc,
            r.correction.prec,
            r.correction.rec,
            r.correction.f1,
            w = width
        ));
    }
    s
}
