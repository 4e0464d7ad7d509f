use std::collections::HashMap;

use super::PairExample;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Token ↔ index map with `PAD = 0` and `UNK = 1` reserved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::from_tokens(Vec::<String>::new())
    }
}

impl Vocab {
    /// Builds from the non-reserved tokens in index order (index 2 onward).
    /// Reserved names and repeats are dropped.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Self {
            tokens: vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()],
            index: HashMap::new(),
        };
        for t in tokens {
            let t = t.into();
            if t == PAD_TOKEN || t == UNK_TOKEN || v.index.contains_key(&t) {
                continue;
            }
            v.index.insert(t.clone(), v.tokens.len());
            v.tokens.push(t);
        }
        v
    }

    /// Counts tokens and keeps those seen at least `min_count` times,
    /// ordered by descending frequency then lexicographically.
    pub fn from_counts<'a, I>(sentences: I, min_count: usize) -> Self
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let min_count = min_count.max(1);
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for s in sentences {
            for t in s {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> = counts.into_iter().filter(|&(_, c)| c >= min_count).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        Self::from_tokens(kept.into_iter().map(|(t, _)| t))
    }

    /// Index of `token`, or `UNK`.
    pub fn get(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn lookup(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Size including the two reserved slots.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() == 2
    }

    /// Non-reserved tokens in index order.
    pub fn corpus_tokens(&self) -> &[String] {
        &self.tokens[2..]
    }
}

/// Word vocabulary over both sides of every pair.
pub fn build_vocab(examples: &[PairExample], min_count: usize) -> Vocab {
    Vocab::from_counts(examples.iter().flat_map(|e| [e.q1.as_slice(), e.q2.as_slice()]), min_count)
}

/// Character vocabulary over the characters of the given words.
pub fn build_char_vocab<'a, I>(words: I) -> Vocab
where
    I: IntoIterator<Item = &'a str>,
{
    let chars: Vec<Vec<String>> = words.into_iter().map(|w| w.chars().map(String::from).collect()).collect();
    Vocab::from_counts(chars.iter().map(Vec::as_slice), 1)
}
