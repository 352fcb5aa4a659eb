//! Synthetic training data from scratch: a toy template grammar, a
//! character confusion table, and corruption of clean sentences into
//! (corrupted, gold) pairs with per-position error labels.
//!
//! Run with: cargo run --example synthesize_data

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use softmask::datagen::{
    corrupt_corpus, synth_corpus, ConfusionTable, CorruptionPolicy, GrammarSpec,
};
use softmask::Vocabulary;

fn main() -> anyhow::Result<()> {
    let spec = GrammarSpec::default_toy();
    let lines = synth_corpus(1000, &spec, 42)?;
    println!("corpus: {} sentences, e.g. {:?}", lines.len(), &lines[..3]);

    let vocab = Vocabulary::build(lines.iter())?;
    println!("vocabulary: {} ids (incl. specials)", vocab.size());

    let mut table_rng = ChaCha8Rng::seed_from_u64(7);
    let table = ConfusionTable::synthesize(&vocab, 1, 4, &mut table_rng);
    let sample = vocab.id_of(vocab.chars()[0]);
    println!(
        "confusion sets per char: 1–4, e.g. {:?} -> {:?}",
        vocab.char_of(sample),
        table
            .substitutes(sample)
            .iter()
            .map(|(id, w)| (vocab.char_of(*id), *w))
            .collect::<Vec<_>>()
    );

    // 15% of positions replaced; 80% of replacements from the confusion
    // table, 20% uniform random.
    let policy = CorruptionPolicy { seed: 9, ..CorruptionPolicy::default() };
    let encoded: Vec<Vec<usize>> = lines.iter().map(|l| vocab.encode(l)).collect();
    let (pairs, stats) = corrupt_corpus(&encoded, vocab.size(), &table, &policy)?;

    println!(
        "replaced {}/{} eligible positions ({:.3}); {} from table, {} random",
        stats.replaced,
        stats.eligible,
        stats.replaced as f64 / stats.eligible as f64,
        stats.from_table,
        stats.from_random,
    );
    let with_errors = pairs.iter().filter(|p| p.has_error()).count();
    println!("{with_errors}/{} pairs contain at least one error", pairs.len());

    for pair in pairs.iter().filter(|p| p.has_error()).take(3) {
        println!("  in : {}", vocab.decode(&pair.x));
        println!("  out: {}", vocab.decode(&pair.y));
        println!("  g  : {:?}", pair.g);
    }
    Ok(())
}
