//! End-to-end: synthesize data, fine-tune the joint detector–corrector
//! loss for a couple of epochs, and correct fresh corrupted sentences,
//! printing the detector's per-position error probabilities.
//!
//! Run with: cargo run --release --example train_and_correct

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use softmask::datagen::{
    corrupt_corpus, synth_corpus, ConfusionTable, CorruptionPolicy, GrammarSpec,
};
use softmask::eval::evaluate;
use softmask::train::{finetune, TrainConfig};
use softmask::{ModelConfig, SoftMaskModel, Vocabulary};

fn main() -> anyhow::Result<()> {
    let spec = GrammarSpec::default_toy();
    let lines = synth_corpus(2400, &spec, 11)?;
    let vocab = Vocabulary::build(lines.iter())?;
    let mut table_rng = ChaCha8Rng::seed_from_u64(3);
    let table = ConfusionTable::synthesize(&vocab, 1, 4, &mut table_rng);
    let policy = CorruptionPolicy { seed: 5, ..CorruptionPolicy::default() };
    let encoded: Vec<Vec<usize>> = lines.iter().map(|l| vocab.encode(l)).collect();
    let (pairs, _) = corrupt_corpus(&encoded, vocab.size(), &table, &policy)?;
    let (train, rest) = pairs.split_at(2000);
    let (dev, test) = rest.split_at(200);

    // Small model so the example stays fast; desk_default is the full size.
    let config = ModelConfig {
        width: 32,
        encoder_layers: 1,
        heads: 2,
        ffn_width: 64,
        gru_hidden: 32,
        ..ModelConfig::desk_default(vocab.size())
    };
    let mut init_rng = ChaCha8Rng::seed_from_u64(1);
    let mut model = SoftMaskModel::new(config, &mut init_rng)?;

    let tc = TrainConfig { lr: 2e-3, epochs: 2, ..TrainConfig::desk_default(17) };
    let report = finetune(&mut model, train, dev, &tc)?;
    for rec in &report.history {
        println!(
            "epoch {}: train loss {:.4}, dev correction F1 {:.4}",
            rec.epoch, rec.mean_train_loss, rec.dev.correction.f1
        );
    }

    let mut eval_rng = ChaCha8Rng::seed_from_u64(99);
    let metrics = evaluate(&report.best_model, test, &mut eval_rng)?;
    println!(
        "test: detection F1 {:.4}, correction F1 {:.4}",
        metrics.detection.f1, metrics.correction.f1
    );

    for pair in test.iter().filter(|p| p.has_error()).take(3) {
        let (output, probs) = report.best_model.predict(&pair.x, None, None)?;
        println!("in  : {}", vocab.decode(&pair.x));
        println!("out : {}", vocab.decode(&output));
        println!("gold: {}", vocab.decode(&pair.y));
        let flagged: Vec<(usize, f64)> = probs
            .iter()
            .enumerate()
            .filter(|(_, p)| **p > 0.5)
            .map(|(i, p)| (i, (*p * 1000.0).round() / 1000.0))
            .collect();
        println!("detector p > 0.5 at {flagged:?}");
    }
    Ok(())
}
