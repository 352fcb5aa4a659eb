//! λ sweep for the joint loss λ·L_correction + (1−λ)·L_detection: train
//! once per grid value from a shared initialization and report the best
//! held-out correction F1.
//!
//! Run with: cargo run --release --example lambda_sweep

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use softmask::datagen::{
    corrupt_corpus, synth_corpus, ConfusionTable, CorruptionPolicy, GrammarSpec,
};
use softmask::eval::{lambda_sweep, DEFAULT_LAMBDA_GRID};
use softmask::train::TrainConfig;
use softmask::{ModelConfig, SoftMaskModel, Vocabulary};

fn main() -> anyhow::Result<()> {
    let lines = synth_corpus(1400, &GrammarSpec::default_toy(), 51)?;
    let vocab = Vocabulary::build(lines.iter())?;
    let mut table_rng = ChaCha8Rng::seed_from_u64(2);
    let table = ConfusionTable::synthesize(&vocab, 1, 4, &mut table_rng);
    let policy = CorruptionPolicy { seed: 8, ..CorruptionPolicy::default() };
    let encoded: Vec<Vec<usize>> = lines.iter().map(|l| vocab.encode(l)).collect();
    let (pairs, _) = corrupt_corpus(&encoded, vocab.size(), &table, &policy)?;
    let (train, rest) = pairs.split_at(1000);
    let (dev, test) = rest.split_at(200);

    let config = ModelConfig {
        width: 32,
        encoder_layers: 1,
        heads: 2,
        ffn_width: 64,
        gru_hidden: 32,
        ..ModelConfig::desk_default(vocab.size())
    };
    let mut init_rng = ChaCha8Rng::seed_from_u64(1);
    let base = SoftMaskModel::new(config, &mut init_rng)?;

    let tc = TrainConfig { lr: 2e-3, epochs: 1, ..TrainConfig::desk_default(19) };
    let (rows, best) = lambda_sweep(&DEFAULT_LAMBDA_GRID, &base, train, dev, test, &tc)?;
    for (lambda, r) in &rows {
        println!(
            "λ = {lambda:<4} detection F1 {:.4}  correction F1 {:.4}",
            r.detection.f1, r.correction.f1
        );
    }
    println!("best λ by correction F1: {best}");
    Ok(())
}
