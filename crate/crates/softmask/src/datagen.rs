//! Synthetic corpora and corruption: confusion tables, the corruption
//! policy (15% replacement, 80/20 table-vs-random split), a small
//! template grammar with long-range agreement, and the on-disk formats
//! (one sentence per line, confusion TSV, example JSONL).

use std::io::{BufRead, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::vocab::{Vocabulary, NUM_SPECIALS};

#[derive(Debug, thiserror::Error)]
pub enum DatagenError {
    #[error("invalid policy: {0}")]
    Policy(String),
    #[error("length mismatch: x has {x} characters, y has {y}")]
    LengthMismatch { x: usize, y: usize },
    #[error("parse error in {file} line {line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Vocab(#[from] crate::vocab::VocabError),
}

// ---------------------------------------------------------------------
// Confusion table

/// Per-character substitution candidates with positive weights.
/// No character maps to itself.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfusionTable {
    entries: Vec<Vec<(usize, f64)>>, // indexed by character id
}

impl ConfusionTable {
    pub fn new(vocab_size: usize) -> Self {
        ConfusionTable {
            entries: vec![Vec::new(); vocab_size],
        }
    }

    pub fn insert(&mut self, id: usize, sub: usize, weight: f64) -> Result<(), DatagenError> {
        if id == sub {
            return Err(DatagenError::Policy(format!(
                "confusion entry maps character id {id} to itself"
            )));
        }
        if weight <= 0.0 {
            return Err(DatagenError::Policy(format!(
                "confusion weight {weight} for id {id} is not positive"
            )));
        }
        if id >= self.entries.len() || sub >= self.entries.len() {
            return Err(DatagenError::Policy(format!(
                "confusion ids ({id}, {sub}) outside vocab of {}",
                self.entries.len()
            )));
        }
        self.entries[id].push((sub, weight));
        Ok(())
    }

    pub fn substitutes(&self, id: usize) -> &[(usize, f64)] {
        self.entries.get(id).map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn vocab_size(&self) -> usize {
        self.entries.len()
    }

    /// Weighted draw of a substitute for `id`, or None when the table
    /// has no entry for it.
    pub fn draw(&self, id: usize, rng: &mut ChaCha8Rng) -> Option<usize> {
        let subs = self.substitutes(id);
        if subs.is_empty() {
            return None;
        }
        let total: f64 = subs.iter().map(|(_, w)| w).sum();
        let mut mark = rng.gen_range(0.0..total);
        for (sub, w) in subs {
            if mark < *w {
                return Some(*sub);
            }
            mark -= w;
        }
        Some(subs.last().unwrap().0)
    }

    /// Seeded synthetic table: every non-special character receives
    /// between `min_subs` and `max_subs` distinct substitutes with unit
    /// weights. A desk-scale stand-in for a homophone table.
    pub fn synthesize(
        vocab: &Vocabulary,
        min_subs: usize,
        max_subs: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let v = vocab.size();
        let mut table = ConfusionTable::new(v);
        for id in NUM_SPECIALS..v {
            let k = rng.gen_range(min_subs..=max_subs);
            let mut chosen = Vec::new();
            while chosen.len() < k.min(v - NUM_SPECIALS - 1) {
                let cand = rng.gen_range(NUM_SPECIALS..v);
                if cand != id && !chosen.contains(&cand) {
                    chosen.push(cand);
                }
            }
            for sub in chosen {
                table.insert(id, sub, 1.0).expect("synthesized entry valid");
            }
        }
        table
    }

    /// TSV: `char<TAB>sub1:weight1,sub2:weight2,...`
    pub fn save_tsv(&self, path: &Path, vocab: &Vocabulary) -> Result<(), DatagenError> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for (id, subs) in self.entries.iter().enumerate() {
            if subs.is_empty() {
                continue;
            }
            let c = match vocab.char_of(id) {
                Some(c) => c,
                None => continue,
            };
            let rendered: Vec<String> = subs
                .iter()
                .filter_map(|(s, w)| vocab.char_of(*s).map(|sc| format!("{sc}:{w}")))
                .collect();
            writeln!(out, "{c}\t{}", rendered.join(","))?;
        }
        Ok(())
    }

    pub fn load_tsv(path: &Path, vocab: &Vocabulary) -> Result<Self, DatagenError> {
        let file = std::fs::File::open(path)?;
        let mut table = ConfusionTable::new(vocab.size());
        for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |message: String| DatagenError::Parse {
                file: path.display().to_string(),
                line: lineno + 1,
                message,
            };
            let (head, rest) = line
                .split_once('\t')
                .ok_or_else(|| parse_err("missing tab separator".into()))?;
            let mut head_chars = head.chars();
            let c = head_chars
                .next()
                .ok_or_else(|| parse_err("empty character field".into()))?;
            if head_chars.next().is_some() {
                return Err(parse_err(format!("expected one character, got `{head}`")));
            }
            let id = vocab.id_of(c);
            for item in rest.split(',') {
                let (sc, w) = item
                    .split_once(':')
                    .ok_or_else(|| parse_err(format!("malformed entry `{item}`")))?;
                let mut sc_chars = sc.chars();
                let sub_char = sc_chars
                    .next()
                    .ok_or_else(|| parse_err("empty substitute".into()))?;
                if sc_chars.next().is_some() {
                    return Err(parse_err(format!("expected one character, got `{sc}`")));
                }
                let weight: f64 = w
                    .parse()
                    .map_err(|e| parse_err(format!("bad weight `{w}`: {e}")))?;
                table
                    .insert(id, vocab.id_of(sub_char), weight)
                    .map_err(|e| parse_err(e.to_string()))?;
            }
        }
        Ok(table)
    }
}

// ---------------------------------------------------------------------
// Corruption

/// How clean text is corrupted into training pairs.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CorruptionPolicy {
    /// Per-position replacement probability.
    pub replace_rate: f64,
    /// Of the replacements, the fraction drawn from the confusion table.
    pub confusion_share: f64,
    /// The remainder, drawn uniformly from the non-special vocabulary.
    pub random_share: f64,
    pub seed: u64,
    /// Replace an exact count (rate × eligible, rounded) per sentence
    /// instead of per-position Bernoulli draws.
    pub exact_count: bool,
}

impl Default for CorruptionPolicy {
    fn default() -> Self {
        CorruptionPolicy {
            replace_rate: 0.15,
            confusion_share: 0.8,
            random_share: 0.2,
            seed: 0,
            exact_count: false,
        }
    }
}

impl CorruptionPolicy {
    pub fn validate(&self) -> Result<(), DatagenError> {
        if !(0.0..=1.0).contains(&self.replace_rate) {
            return Err(DatagenError::Policy(format!(
                "replace_rate {} outside [0, 1]",
                self.replace_rate
            )));
        }
        if (self.confusion_share + self.random_share - 1.0).abs() > 1e-12 {
            return Err(DatagenError::Policy(format!(
                "confusion_share {} + random_share {} must equal 1",
                self.confusion_share, self.random_share
            )));
        }
        if !(0.0..=1.0).contains(&self.confusion_share) {
            return Err(DatagenError::Policy(format!(
                "confusion_share {} outside [0, 1]",
                self.confusion_share
            )));
        }
        Ok(())
    }

    /// Independent per-sentence RNG stream, so corruption results do not
    /// depend on processing order.
    pub fn rng_for_sentence(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index.wrapping_add(1));
        rng
    }
}

/// A corrupted/gold sequence pair with derived error labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ExamplePair {
    pub x: Vec<usize>,
    pub y: Vec<usize>,
    pub g: Vec<u8>, // 1 where x differs from y
}

impl ExamplePair {
    pub fn new(x: Vec<usize>, y: Vec<usize>) -> Result<Self, DatagenError> {
        if x.len() != y.len() {
            return Err(DatagenError::LengthMismatch { x: x.len(), y: y.len() });
        }
        let g = x
            .iter()
            .zip(&y)
            .map(|(a, b)| u8::from(a != b))
            .collect();
        Ok(ExamplePair { x, y, g })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn has_error(&self) -> bool {
        self.g.iter().any(|v| *v == 1)
    }
}

/// Tallies over one or more corruption runs.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CorruptionStats {
    pub eligible: u64,
    pub replaced: u64,
    pub from_table: u64,
    pub from_random: u64,
    pub table_fallbacks: u64,
}

impl std::ops::AddAssign for CorruptionStats {
    fn add_assign(&mut self, o: Self) {
        self.eligible += o.eligible;
        self.replaced += o.replaced;
        self.from_table += o.from_table;
        self.from_random += o.from_random;
        self.table_fallbacks += o.table_fallbacks;
    }
}

fn random_replacement(
    original: usize,
    vocab_size: usize,
    rng: &mut ChaCha8Rng,
) -> usize {
    // uniform over non-special ids excluding the original
    loop {
        let cand = rng.gen_range(NUM_SPECIALS..vocab_size);
        if cand != original {
            return cand;
        }
    }
}

/// Corrupt one clean id sequence per the policy. Special tokens are
/// never replaced. Confusion draws for characters missing from the
/// table fall back to a random draw (counted in the stats and logged).
pub fn corrupt(
    clean: &[usize],
    vocab_size: usize,
    table: &ConfusionTable,
    policy: &CorruptionPolicy,
    rng: &mut ChaCha8Rng,
) -> Result<(ExamplePair, CorruptionStats), DatagenError> {
    policy.validate()?;
    let mut stats = CorruptionStats::default();
    let eligible: Vec<usize> = clean
        .iter()
        .enumerate()
        .filter(|(_, id)| !Vocabulary::is_special(**id))
        .map(|(i, _)| i)
        .collect();
    stats.eligible = eligible.len() as u64;

    let chosen: Vec<usize> = if policy.exact_count {
        let want = (policy.replace_rate * eligible.len() as f64).round() as usize;
        let mut pool = eligible.clone();
        // partial Fisher-Yates
        for i in 0..want.min(pool.len()) {
            let j = rng.gen_range(i..pool.len());
            pool.swap(i, j);
        }
        let mut picked = pool[..want.min(pool.len())].to_vec();
        picked.sort_unstable();
        picked
    } else {
        eligible
            .iter()
            .copied()
            .filter(|_| rng.gen::<f64>() < policy.replace_rate)
            .collect()
    };

    let mut x = clean.to_vec();
    for i in chosen {
        let original = clean[i];
        let use_table = rng.gen::<f64>() < policy.confusion_share;
        let replacement = if use_table {
            match table.draw(original, rng) {
                Some(sub) => {
                    stats.from_table += 1;
                    sub
                }
                None => {
                    stats.table_fallbacks += 1;
                    stats.from_random += 1;
                    log::warn!(
                        "character id {original} missing from confusion table; falling back to random replacement"
                    );
                    random_replacement(original, vocab_size, rng)
                }
            }
        } else {
            stats.from_random += 1;
            random_replacement(original, vocab_size, rng)
        };
        x[i] = replacement;
        stats.replaced += 1;
    }
    let pair = ExamplePair::new(x, clean.to_vec())?;
    Ok((pair, stats))
}

/// Corrupt a whole corpus with per-sentence RNG streams.
pub fn corrupt_corpus(
    sentences: &[Vec<usize>],
    vocab_size: usize,
    table: &ConfusionTable,
    policy: &CorruptionPolicy,
) -> Result<(Vec<ExamplePair>, CorruptionStats), DatagenError> {
    let mut pairs = Vec::with_capacity(sentences.len());
    let mut stats = CorruptionStats::default();
    for (i, s) in sentences.iter().enumerate() {
        let mut rng = policy.rng_for_sentence(i as u64);
        let (pair, st) = corrupt(s, vocab_size, table, policy, &mut rng)?;
        stats += st;
        pairs.push(pair);
    }
    Ok((pairs, stats))
}

// ---------------------------------------------------------------------
// Synthetic grammar

/// A small stochastic template language: an opener word, one or more
/// middle words, and the closer word paired with the opener. The
/// opener–closer pairing is the long-range agreement that makes context
/// genuinely disambiguating.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct GrammarSpec {
    pub openers: Vec<String>,
    pub closers: Vec<String>, // closers[i] agrees with openers[i]
    pub middles: Vec<String>,
    pub min_middles: usize,
    pub max_middles: usize,
    pub separator: Option<char>,
}

impl GrammarSpec {
    /// Default toy language: 14 four-character words over 56 distinct
    /// characters plus a space separator, vocabulary ≈ 60 with specials.
    pub fn default_toy() -> Self {
        let words = |ws: &[&str]| ws.iter().map(|s| s.to_string()).collect();
        GrammarSpec {
            openers: words(&["abcd", "efgh", "ijkl", "mnop"]),
            closers: words(&["qrst", "uvwx", "yzAB", "CDEF"]),
            middles: words(&["GHIJ", "KLMN", "OPQR", "STUV", "WXYZ", "0123"]),
            min_middles: 1,
            max_middles: 3,
            separator: Some(' '),
        }
    }

    pub fn validate(&self) -> Result<(), DatagenError> {
        if self.openers.is_empty() || self.middles.is_empty() {
            return Err(DatagenError::Policy("grammar needs openers and middles".into()));
        }
        if self.openers.len() != self.closers.len() {
            return Err(DatagenError::Policy(format!(
                "grammar has {} openers but {} closers",
                self.openers.len(),
                self.closers.len()
            )));
        }
        if self.min_middles == 0 || self.min_middles > self.max_middles {
            return Err(DatagenError::Policy(format!(
                "invalid middle count range {}..={}",
                self.min_middles, self.max_middles
            )));
        }
        Ok(())
    }

    pub fn generate(&self, rng: &mut ChaCha8Rng) -> String {
        let pair = rng.gen_range(0..self.openers.len());
        let count = rng.gen_range(self.min_middles..=self.max_middles);
        let mut parts = vec![self.openers[pair].as_str()];
        for _ in 0..count {
            parts.push(self.middles[rng.gen_range(0..self.middles.len())].as_str());
        }
        parts.push(self.closers[pair].as_str());
        match self.separator {
            Some(sep) => parts.join(&sep.to_string()),
            None => parts.concat(),
        }
    }
}

/// Reproducible clean-sentence set for a given seed.
pub fn synth_corpus(size: usize, spec: &GrammarSpec, seed: u64) -> Result<Vec<String>, DatagenError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..size).map(|_| spec.generate(&mut rng)).collect())
}

// ---------------------------------------------------------------------
// On-disk example pairs

#[derive(Serialize, Deserialize)]
struct JsonPair {
    x: String,
    y: String,
}

/// JSON Lines, one `{"x": ..., "y": ...}` object per pair; g is derived
/// on load.
pub fn save_pairs_jsonl(
    path: &Path,
    pairs: &[ExamplePair],
    vocab: &Vocabulary,
) -> Result<(), DatagenError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for p in pairs {
        let record = JsonPair {
            x: vocab.decode(&p.x),
            y: vocab.decode(&p.y),
        };
        serde_json::to_writer(&mut out, &record).map_err(std::io::Error::from)?;
        writeln!(out)?;
    }
    Ok(())
}

pub fn load_pairs_jsonl(path: &Path, vocab: &Vocabulary) -> Result<Vec<ExamplePair>, DatagenError> {
    let file = std::fs::File::open(path)?;
    let mut pairs = Vec::new();
    for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: JsonPair = serde_json::from_str(&line).map_err(|e| DatagenError::Parse {
            file: path.display().to_string(),
            line: lineno + 1,
            message: e.to_string(),
        })?;
        pairs.push(ExamplePair::new(vocab.encode(&record.x), vocab.encode(&record.y))?);
    }
    Ok(pairs)
}

pub fn save_lines(path: &Path, lines: &[String]) -> Result<(), DatagenError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for l in lines {
        writeln!(out, "{l}")?;
    }
    Ok(())
}

pub fn load_lines(path: &Path) -> Result<Vec<String>, DatagenError> {
    let file = std::fs::File::open(path)?;
    let mut lines = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line?;
        if !line.is_empty() {
            lines.push(line);
        }
    }
    Ok(lines)
}

#[cfg(test)]
mod tests;
