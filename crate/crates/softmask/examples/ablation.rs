//! The masking-mode ablation matrix: every variant trains from one
//! shared initialization under the same budget, so the table isolates
//! what the masking strategy itself contributes.
//!
//! Run with: cargo run --release --example ablation

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use softmask::datagen::{
    corrupt_corpus, synth_corpus, ConfusionTable, CorruptionPolicy, GrammarSpec,
};
use softmask::eval::{default_ablation, render_table, run_ablation};
use softmask::train::TrainConfig;
use softmask::{ModelConfig, SoftMaskModel, Vocabulary};

fn main() -> anyhow::Result<()> {
    let lines = synth_corpus(1400, &GrammarSpec::default_toy(), 31)?;
    let vocab = Vocabulary::build(lines.iter())?;
    let mut table_rng = ChaCha8Rng::seed_from_u64(2);
    let table = ConfusionTable::synthesize(&vocab, 1, 4, &mut table_rng);
    let policy = CorruptionPolicy { seed: 6, ..CorruptionPolicy::default() };
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

    let tc = TrainConfig { lr: 2e-3, epochs: 1, ..TrainConfig::desk_default(13) };
    let rows = default_ablation();
    println!("training {} variants × {} pairs ...", rows.len(), train.len());
    let results = run_ablation(&rows, &base, train, dev, test, &tc)?;
    print!("{}", render_table(&results));
    Ok(())
}
