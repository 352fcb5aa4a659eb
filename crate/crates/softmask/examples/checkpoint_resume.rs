//! Checkpointing and exact resume: a run saved at step k and resumed
//! reproduces the uninterrupted run bit for bit, because the checkpoint
//! carries the parameters, the Adam moments, and the RNG stream position.
//!
//! Run with: cargo run --example checkpoint_resume

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use softmask::datagen::{
    corrupt_corpus, synth_corpus, ConfusionTable, CorruptionPolicy, GrammarSpec,
};
use softmask::layers::ParamGroup;
use softmask::train::{Checkpoint, Trainer};
use softmask::{ModelConfig, SoftMaskModel, Vocabulary};

fn main() -> anyhow::Result<()> {
    let lines = synth_corpus(200, &GrammarSpec::default_toy(), 61)?;
    let vocab = Vocabulary::build(lines.iter())?;
    let mut table_rng = ChaCha8Rng::seed_from_u64(2);
    let table = ConfusionTable::synthesize(&vocab, 1, 4, &mut table_rng);
    let policy = CorruptionPolicy { seed: 1, ..CorruptionPolicy::default() };
    let encoded: Vec<Vec<usize>> = lines.iter().map(|l| vocab.encode(l)).collect();
    let (pairs, _) = corrupt_corpus(&encoded, vocab.size(), &table, &policy)?;

    let config = ModelConfig {
        width: 16,
        encoder_layers: 1,
        heads: 2,
        ffn_width: 32,
        gru_hidden: 8,
        ..ModelConfig::desk_default(vocab.size())
    };
    let mut init_rng = ChaCha8Rng::seed_from_u64(1);
    let model = SoftMaskModel::new(config, &mut init_rng)?;

    // Uninterrupted: 20 steps straight through.
    let mut straight = Trainer::new(model.clone(), 1e-3, 23);
    straight.train_steps(&pairs, 8, 20)?;

    // Interrupted: 10 steps, save, reload, 10 more.
    let mut first = Trainer::new(model, 1e-3, 23);
    first.train_steps(&pairs, 8, 10)?;
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("mid.ckpt");
    Checkpoint::of_trainer(&first, &vocab).save(&path)?;
    let (mut resumed, _vocab) = Checkpoint::load(&path)?.restore_trainer()?;
    resumed.train_steps(&pairs, 8, 10)?;

    let mut max_diff = 0.0f64;
    straight.model.visit("", &mut |name, t| {
        let mut other = None;
        resumed.model.visit("", &mut |n2, t2| {
            if n2 == name {
                other = Some(t2.clone());
            }
        });
        for (a, b) in t.data().iter().zip(other.unwrap().data()) {
            max_diff = max_diff.max((a - b).abs());
        }
    });
    println!("max |straight − resumed| over all parameters: {max_diff:e}");
    anyhow::ensure!(max_diff == 0.0, "resume must be bit-exact");
    println!("resume is bit-exact");
    Ok(())
}
