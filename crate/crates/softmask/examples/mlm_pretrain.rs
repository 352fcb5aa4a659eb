//! Masked-language-model pretraining of the corrector on clean text:
//! 15% of positions selected, 80/10/10 mask/random/keep, loss averaged
//! over the selected positions only. The detector is untouched.
//!
//! Run with: cargo run --release --example mlm_pretrain

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use softmask::datagen::{synth_corpus, GrammarSpec};
use softmask::train::mlm_pretrain;
use softmask::{ModelConfig, SoftMaskModel, Vocabulary};

fn main() -> anyhow::Result<()> {
    let lines = synth_corpus(1500, &GrammarSpec::default_toy(), 21)?;
    let vocab = Vocabulary::build(lines.iter())?;
    let sentences: Vec<Vec<usize>> = lines.iter().map(|l| vocab.encode(l)).collect();

    let config = ModelConfig {
        width: 32,
        encoder_layers: 1,
        heads: 2,
        ffn_width: 64,
        gru_hidden: 32,
        ..ModelConfig::desk_default(vocab.size())
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut model = SoftMaskModel::new(config, &mut rng)?;

    // An untrained model predicts near-uniformly, so the first batches
    // sit near ln(vocab) ≈ 4.1 nats and fall from there.
    let losses = mlm_pretrain(&mut model, &sentences, 300, 16, 1e-3, 8)?;
    println!("ln(vocab) = {:.3}", (vocab.size() as f64).ln());
    for (step, loss) in losses.iter().enumerate() {
        if step % 50 == 0 || step + 1 == losses.len() {
            println!("step {step:>4}: masked-position loss {loss:.4}");
        }
    }
    anyhow::ensure!(
        losses.last().unwrap() < &losses[0],
        "pretraining should reduce the loss"
    );
    Ok(())
}
