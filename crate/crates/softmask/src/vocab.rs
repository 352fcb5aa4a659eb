//! Character vocabulary with reserved special tokens.

use std::collections::HashMap;

#[derive(Debug, thiserror::Error)]
pub enum VocabError {
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
}

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const MASK_ID: usize = 2;
pub const CLS_ID: usize = 3; // reserved, unused by single-sentence inputs
pub const NUM_SPECIALS: usize = 4;

pub const SPECIAL_NAMES: [&str; NUM_SPECIALS] = ["[PAD]", "[UNK]", "[MASK]", "[CLS]"];

/// Bidirectional character ↔ id map. Ids 0..3 are reserved for the
/// special tokens; real characters start at 4, ordered by descending
/// corpus frequency with ties broken by codepoint.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    chars: Vec<char>, // index = id - NUM_SPECIALS
    ids: HashMap<char, usize>,
}

impl Vocabulary {
    /// Frequency-ordered vocabulary over every character in the corpus.
    pub fn build<I, S>(lines: I) -> Result<Self, VocabError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut freq: HashMap<char, u64> = HashMap::new();
        let mut any = false;
        for line in lines {
            for c in line.as_ref().chars() {
                any = true;
                *freq.entry(c).or_insert(0) += 1;
            }
        }
        if !any {
            return Err(VocabError::EmptyCorpus);
        }
        let mut entries: Vec<(char, u64)> = freq.into_iter().collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        Ok(Self::from_chars(entries.into_iter().map(|(c, _)| c)))
    }

    /// Vocabulary from an explicit character order (ids assigned 4, 5, …).
    pub fn from_chars(chars: impl IntoIterator<Item = char>) -> Self {
        let chars: Vec<char> = chars.into_iter().collect();
        let ids = chars
            .iter()
            .enumerate()
            .map(|(i, c)| (*c, i + NUM_SPECIALS))
            .collect();
        Vocabulary { chars, ids }
    }

    /// Total id count including the specials.
    pub fn size(&self) -> usize {
        self.chars.len() + NUM_SPECIALS
    }

    pub fn is_special(id: usize) -> bool {
        id < NUM_SPECIALS
    }

    pub fn id_of(&self, c: char) -> usize {
        self.ids.get(&c).copied().unwrap_or(UNK_ID)
    }

    /// Character for an id; specials and out-of-range ids have none.
    pub fn char_of(&self, id: usize) -> Option<char> {
        if id < NUM_SPECIALS {
            None
        } else {
            self.chars.get(id - NUM_SPECIALS).copied()
        }
    }

    /// Unknown characters map to [UNK].
    pub fn encode(&self, s: &str) -> Vec<usize> {
        s.chars().map(|c| self.id_of(c)).collect()
    }

    /// Special or out-of-range ids render as U+FFFD so the output length
    /// always matches the input length.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|id| self.char_of(*id).unwrap_or('\u{FFFD}'))
            .collect()
    }

    /// Characters in id order (for serialization).
    pub fn chars(&self) -> &[char] {
        &self.chars
    }
}
