use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::vocab::{PAD_ID, NUM_SPECIALS};

fn toy_vocab() -> Vocabulary {
    Vocabulary::build(["abcdefghij"]).unwrap()
}

fn full_table(vocab: &Vocabulary) -> ConfusionTable {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    ConfusionTable::synthesize(vocab, 1, 4, &mut rng)
}

#[test]
fn zero_rate_leaves_input_untouched() {
    let vocab = toy_vocab();
    let policy = CorruptionPolicy {
        replace_rate: 0.0,
        ..Default::default()
    };
    let clean = vocab.encode("abcabc");
    let mut rng = policy.rng_for_sentence(0);
    let (pair, stats) = corrupt(&clean, vocab.size(), &full_table(&vocab), &policy, &mut rng).unwrap();
    assert_eq!(pair.x, pair.y);
    assert!(pair.g.iter().all(|g| *g == 0));
    assert_eq!(stats.replaced, 0);
}

#[test]
fn full_rate_singleton_table_is_deterministic() {
    let vocab = toy_vocab();
    let mut table = ConfusionTable::new(vocab.size());
    for id in NUM_SPECIALS..vocab.size() {
        let sub = if id + 1 < vocab.size() { id + 1 } else { NUM_SPECIALS };
        table.insert(id, sub, 1.0).unwrap();
    }
    let policy = CorruptionPolicy {
        replace_rate: 1.0,
        confusion_share: 1.0,
        random_share: 0.0,
        ..Default::default()
    };
    let clean = vocab.encode("abc");
    let mut rng = policy.rng_for_sentence(0);
    let (pair, _) = corrupt(&clean, vocab.size(), &table, &policy, &mut rng).unwrap();
    let expect: Vec<usize> = clean
        .iter()
        .map(|id| if id + 1 < vocab.size() { id + 1 } else { NUM_SPECIALS })
        .collect();
    assert_eq!(pair.x, expect);
    assert!(pair.g.iter().all(|g| *g == 1));
}

#[test]
fn replacement_count_within_three_sigma_of_binomial() {
    let vocab = toy_vocab();
    let table = full_table(&vocab);
    let policy = CorruptionPolicy::default();
    let sentences: Vec<Vec<usize>> = (0..100).map(|_| vocab.encode(&"abcdefghij".repeat(10))).collect();
    let (_, stats) = corrupt_corpus(&sentences, vocab.size(), &table, &policy).unwrap();
    assert_eq!(stats.eligible, 10_000);
    let mean = 1500.0;
    let sigma = (10_000.0_f64 * 0.15 * 0.85).sqrt(); // ≈ 35.7
    let got = stats.replaced as f64;
    assert!(
        (got - mean).abs() <= 3.0 * sigma,
        "replaced {got} outside 3σ of {mean}"
    );
}

#[test]
fn table_vs_random_split_within_three_sigma() {
    let vocab = toy_vocab();
    let table = full_table(&vocab);
    let policy = CorruptionPolicy {
        replace_rate: 0.5,
        ..Default::default()
    };
    let sentences: Vec<Vec<usize>> = (0..200).map(|_| vocab.encode(&"abcdefghij".repeat(5))).collect();
    let (_, stats) = corrupt_corpus(&sentences, vocab.size(), &table, &policy).unwrap();
    let n = stats.replaced as f64;
    let sigma = (n * 0.8 * 0.2).sqrt();
    assert!(
        (stats.from_table as f64 - 0.8 * n).abs() <= 3.0 * sigma,
        "table share {} of {n} outside 3σ",
        stats.from_table
    );
}

#[test]
fn specials_are_never_replaced() {
    let vocab = toy_vocab();
    let table = full_table(&vocab);
    let policy = CorruptionPolicy {
        replace_rate: 1.0,
        ..Default::default()
    };
    let mut clean = vocab.encode("abc");
    clean.insert(1, PAD_ID);
    let mut rng = policy.rng_for_sentence(0);
    let (pair, stats) = corrupt(&clean, vocab.size(), &table, &policy, &mut rng).unwrap();
    assert_eq!(pair.x[1], PAD_ID);
    assert_eq!(stats.eligible, 3);
}

#[test]
fn missing_table_entry_falls_back_to_random() {
    let vocab = toy_vocab();
    let empty = ConfusionTable::new(vocab.size());
    let policy = CorruptionPolicy {
        replace_rate: 1.0,
        confusion_share: 1.0,
        random_share: 0.0,
        ..Default::default()
    };
    let clean = vocab.encode("abcdef");
    let mut rng = policy.rng_for_sentence(0);
    let (pair, stats) = corrupt(&clean, vocab.size(), &empty, &policy, &mut rng).unwrap();
    assert_eq!(stats.table_fallbacks, 6);
    assert_eq!(stats.from_random, 6);
    assert!(pair.g.iter().all(|g| *g == 1));
}

#[test]
fn exact_count_mode_replaces_rounded_count() {
    let vocab = toy_vocab();
    let table = full_table(&vocab);
    let policy = CorruptionPolicy {
        replace_rate: 0.2,
        exact_count: true,
        ..Default::default()
    };
    let clean = vocab.encode(&"abcdefghij".repeat(2)); // 20 eligible
    for s in 0..10 {
        let mut rng = policy.rng_for_sentence(s);
        let (pair, _) = corrupt(&clean, vocab.size(), &table, &policy, &mut rng).unwrap();
        assert_eq!(pair.g.iter().filter(|g| **g == 1).count(), 4);
    }
}

#[test]
fn invalid_policy_rejected() {
    let bad_rate = CorruptionPolicy {
        replace_rate: 1.5,
        ..Default::default()
    };
    assert!(bad_rate.validate().is_err());
    let bad_shares = CorruptionPolicy {
        confusion_share: 0.8,
        random_share: 0.3,
        ..Default::default()
    };
    assert!(bad_shares.validate().is_err());
}

#[test]
fn corruption_is_order_independent() {
    let vocab = toy_vocab();
    let table = full_table(&vocab);
    let policy = CorruptionPolicy::default();
    let s0 = vocab.encode("abcdefghij");
    let s1 = vocab.encode("jihgfedcba");
    let mut r0 = policy.rng_for_sentence(7);
    let (direct, _) = corrupt(&s1, vocab.size(), &table, &policy, &mut r0).unwrap();
    // same sentence index gives the same result regardless of what else ran
    let _ = corrupt_corpus(&[s0], vocab.size(), &table, &policy).unwrap();
    let mut r1 = policy.rng_for_sentence(7);
    let (again, _) = corrupt(&s1, vocab.size(), &table, &policy, &mut r1).unwrap();
    assert_eq!(direct, again);
}

#[test]
fn grammar_is_deterministic_per_seed() {
    let spec = GrammarSpec::default_toy();
    assert_eq!(
        synth_corpus(50, &spec, 3).unwrap(),
        synth_corpus(50, &spec, 3).unwrap()
    );
    assert_ne!(
        synth_corpus(50, &spec, 3).unwrap(),
        synth_corpus(50, &spec, 4).unwrap()
    );
}

#[test]
fn single_template_grammar_matches_pattern() {
    let spec = GrammarSpec {
        openers: vec!["ab".into()],
        closers: vec!["cd".into()],
        middles: vec!["xy".into()],
        min_middles: 2,
        max_middles: 2,
        separator: Some(' '),
    };
    for s in synth_corpus(20, &spec, 1).unwrap() {
        assert_eq!(s, "ab xy xy cd");
    }
}

#[test]
fn opener_closer_agreement_holds_in_every_sentence() {
    let spec = GrammarSpec::default_toy();
    for s in synth_corpus(500, &spec, 11).unwrap() {
        let words: Vec<&str> = s.split(' ').collect();
        let first = words.first().unwrap();
        let last = words.last().unwrap();
        let idx = spec
            .openers
            .iter()
            .position(|o| o == first)
            .expect("sentence starts with an opener");
        assert_eq!(last, &spec.closers[idx], "agreement violated in `{s}`");
        for w in &words[1..words.len() - 1] {
            assert!(spec.middles.iter().any(|m| m == w), "unexpected middle `{w}`");
        }
    }
}

#[test]
fn confusion_tsv_round_trip() {
    let vocab = toy_vocab();
    let table = full_table(&vocab);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("confusion.tsv");
    table.save_tsv(&path, &vocab).unwrap();
    let loaded = ConfusionTable::load_tsv(&path, &vocab).unwrap();
    assert_eq!(table, loaded);
}

#[test]
fn jsonl_round_trip_rederives_labels() {
    let vocab = toy_vocab();
    let pairs = vec![
        ExamplePair::new(vocab.encode("abd"), vocab.encode("abc")).unwrap(),
        ExamplePair::new(vocab.encode("fgh"), vocab.encode("fgh")).unwrap(),
    ];
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pairs.jsonl");
    save_pairs_jsonl(&path, &pairs, &vocab).unwrap();
    let loaded = load_pairs_jsonl(&path, &vocab).unwrap();
    assert_eq!(pairs, loaded);
    assert_eq!(loaded[0].g, vec![0, 0, 1]);
}

#[test]
fn example_pair_rejects_length_mismatch() {
    assert!(ExamplePair::new(vec![4, 5], vec![4]).is_err());
}

proptest! {
    #[test]
    fn corruption_invariants_hold(seed in 0u64..1000, rate in 0.0f64..1.0) {
        let vocab = toy_vocab();
        let table = full_table(&vocab);
        let policy = CorruptionPolicy { replace_rate: rate, seed, ..Default::default() };
        let clean = vocab.encode("abcdefghijabcdefghij");
        let mut rng = policy.rng_for_sentence(0);
        let (pair, _) = corrupt(&clean, vocab.size(), &table, &policy, &mut rng).unwrap();
        prop_assert_eq!(pair.x.len(), pair.y.len());
        prop_assert_eq!(&pair.y, &clean);
        for i in 0..pair.len() {
            prop_assert_eq!(pair.g[i] == 1, pair.x[i] != pair.y[i]);
            prop_assert!(!Vocabulary::is_special(pair.x[i]));
        }
    }
}
