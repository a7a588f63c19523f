use std::collections::HashMap;

pub const UNKNOWN: &str = "[UNK]";

/// Whitespace tokenizer with a frequency-ranked vocabulary. Id 0 is the
/// unknown token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tokenizer {
    vocab: Vec<String>,
    index: HashMap<String, usize>,
}

impl Tokenizer {
    /// Keeps the `max_size - 1` most frequent words of `corpus`; ties are
    /// ordered lexicographically.
    pub fn build(corpus: &str, max_size: usize) -> Self {
        let mut freq: HashMap<&str, usize> = HashMap::new();
        for w in corpus.split_whitespace() {
            *freq.entry(w).or_default() += 1;
        }
        let mut ranked: Vec<(&str, usize)> = freq.into_iter().filter(|(w, _)| *w != UNKNOWN).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let words = ranked.into_iter().take(max_size.saturating_sub(1)).map(|(w, _)| w);
        Self::from_vocab(words)
    }

    pub fn from_vocab<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        let mut vocab = vec![UNKNOWN.to_string()];
        vocab.extend(words.into_iter().filter(|w| *w != UNKNOWN).map(str::to_string));
        let index = vocab.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Self { vocab, index }
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn unknown_id(&self) -> usize {
        0
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        text.split_whitespace().map(|w| self.id(w).unwrap_or(0)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter().map(|&i| self.vocab.get(i).map_or(UNKNOWN, String::as_str)).collect::<Vec<_>>().join(" ")
    }
}
