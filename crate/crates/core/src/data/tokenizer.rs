//! Word-level toy tokenizer.
//!
//! Text is lowercased and split on Unicode whitespace; each word maps to one
//! id, so masking a token always masks a whole word.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const MASK: usize = 2;
const SPECIALS: [&str; 3] = ["<pad>", "<unk>", "<mask>"];
pub const NUM_SPECIALS: usize = SPECIALS.len();

pub const DEFAULT_VOCAB_SIZE: usize = 4096;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(words: Vec<String>) -> Self {
        let index = words
            .iter()
            .enumerate()
            .skip(NUM_SPECIALS)
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Self { words, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.words
    }
}

pub fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(str::to_lowercase)
}

impl Vocab {
    /// Special tokens, then every `required` word, then the most frequent
    /// remaining words (ties broken alphabetically) up to `max_size` entries.
    pub fn build<'a>(
        texts: impl IntoIterator<Item = &'a str>,
        required: &[&str],
        max_size: usize,
    ) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for t in texts {
            for w in words(t) {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut list: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut seen: std::collections::HashSet<String> = list.iter().cloned().collect();
        for r in required {
            for w in words(r) {
                if seen.insert(w.clone()) {
                    list.push(w);
                }
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        for (w, _) in ranked {
            if list.len() >= max_size {
                break;
            }
            if seen.insert(w.clone()) {
                list.push(w);
            }
        }
        Self::from(list)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn tokenize(&self, text: &str) -> Vec<usize> {
        words(text).map(|w| self.id(&w).unwrap_or(UNK)).collect()
    }

    pub fn detokenize(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&i| self.word(i).unwrap_or(SPECIALS[UNK]))
            .collect::<Vec<_>>()
            .join(" ")
    }
}
