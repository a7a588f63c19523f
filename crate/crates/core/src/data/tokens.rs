use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Seeded order-2 grammar. The second token follows the first through
/// `successor`, every later token follows the previous two through `table`;
/// with probability `1 - predictable` a token is instead drawn uniformly.
#[derive(Clone, Debug, PartialEq)]
pub struct Grammar {
    pub vocab_size: usize,
    pub successor: Vec<usize>,
    pub table: Vec<usize>,
    pub predictable: f64,
}

pub const PREDICTABLE: f64 = 0.8;

impl Grammar {
    pub fn new(vocab_size: usize, predictable: f64, seed: u64) -> Result<Self> {
        if vocab_size < 4 {
            return Err(Error::Config(format!("vocab_size must be at least 4, got {vocab_size}")));
        }
        if !(0.0..=1.0).contains(&predictable) {
            return Err(Error::Config(format!("predictable fraction {predictable} outside [0, 1]")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6772_616d);
        let successor = (0..vocab_size).map(|_| rng.gen_range(0..vocab_size)).collect();
        let table = (0..vocab_size * vocab_size).map(|_| rng.gen_range(0..vocab_size)).collect();
        Ok(Self { vocab_size, successor, table, predictable })
    }

    pub fn next(&self, prev2: Option<usize>, prev: usize) -> usize {
        match prev2 {
            None => self.successor[prev],
            Some(a) => self.table[a * self.vocab_size + prev],
        }
    }

    /// Probability of `token` following `(prev2, prev)`.
    pub fn probability(&self, prev2: Option<usize>, prev: usize, token: usize) -> f64 {
        let uniform = (1.0 - self.predictable) / self.vocab_size as f64;
        uniform + if self.next(prev2, prev) == token { self.predictable } else { 0.0 }
    }

    /// Accuracy of the best possible next-token predictor.
    pub fn optimal_accuracy(&self) -> f64 {
        self.predictable + (1.0 - self.predictable) / self.vocab_size as f64
    }

    pub fn sample(&self, n: usize, len: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(n * len);
        for _ in 0..n {
            for i in 0..len {
                let t = if i == 0 || !rng.gen_bool(self.predictable) {
                    rng.gen_range(0..self.vocab_size)
                } else {
                    let row = &out[out.len() - i..];
                    self.next(i.checked_sub(2).map(|j| row[j]), row[i - 1])
                };
                out.push(t);
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TokenDataset {
    /// Row-major `[n, len]`.
    pub sequences: Vec<usize>,
    pub len: usize,
    pub vocab_size: usize,
    pub seed: u64,
}

impl TokenDataset {
    pub fn new(sequences: Vec<usize>, len: usize, vocab_size: usize, seed: u64) -> Result<Self> {
        if len < 2 || sequences.len() % len != 0 {
            return Err(Error::Data(format!("{} tokens do not form sequences of length {len} (need len >= 2)", sequences.len())));
        }
        if let Some(&bad) = sequences.iter().find(|&&t| t >= vocab_size) {
            return Err(Error::Data(format!("token id {bad} >= vocab size {vocab_size}")));
        }
        Ok(Self { sequences, len, vocab_size, seed })
    }

    pub fn count(&self) -> usize {
        self.sequences.len() / self.len
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.sequences[i * self.len..(i + 1) * self.len]
    }

    /// Model input length: each sequence predicts its own shift by one.
    pub fn context_len(&self) -> usize {
        self.len - 1
    }
}

/// `n` sequences of `len` tokens from the grammar seeded by `seed`.
pub fn gen_tokens(vocab_size: usize, n: usize, len: usize, seed: u64) -> Result<TokenDataset> {
    gen_tokens_from(&Grammar::new(vocab_size, PREDICTABLE, seed)?, n, len, seed)
}

pub fn gen_tokens_from(grammar: &Grammar, n: usize, len: usize, seed: u64) -> Result<TokenDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    TokenDataset::new(grammar.sample(n, len, &mut rng), len, grammar.vocab_size, seed)
}

/// Sequences that cycle through one fixed pattern of `period` distinct
/// tokens, each starting at a random phase. Every token after the first is
/// determined by its predecessor.
pub fn gen_periodic_tokens(vocab_size: usize, period: usize, n: usize, len: usize, seed: u64) -> Result<TokenDataset> {
    if period < 2 || period > vocab_size {
        return Err(Error::Data(format!("period {period} must be in 2..={vocab_size}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pattern: Vec<usize> = (0..vocab_size).collect();
    pattern.shuffle(&mut rng);
    pattern.truncate(period);
    let mut out = Vec::with_capacity(n * len);
    for _ in 0..n {
        let phase = rng.gen_range(0..period);
        out.extend((0..len).map(|t| pattern[(phase + t) % period]));
    }
    TokenDataset::new(out, len, vocab_size, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn periodic_sequences_follow_one_cycle() {
        let d = gen_periodic_tokens(8, 5, 50, 12, 4).unwrap();
        let mut next = std::collections::HashMap::new();
        for i in 0..d.count() {
            let r = d.row(i);
            assert_eq!(r[..7], r[5..]);
            for w in r.windows(2) {
                assert_eq!(*next.entry(w[0]).or_insert(w[1]), w[1]);
            }
        }
        assert_eq!(next.len(), 5);
        assert!(gen_periodic_tokens(8, 9, 1, 4, 0).is_err());
    }

    #[test]
    fn deterministic_and_in_range() {
        let a = gen_tokens(8, 20, 10, 1).unwrap();
        assert_eq!(a, gen_tokens(8, 20, 10, 1).unwrap());
        assert_ne!(a, gen_tokens(8, 20, 10, 2).unwrap());
        assert_eq!(a.count(), 20);
        assert!(a.sequences.iter().all(|&t| t < 8));
        assert!(gen_tokens(3, 1, 4, 0).is_err());
    }

    #[test]
    fn empirical_transitions_match_table() {
        let v = 5;
        let g = Grammar::new(v, PREDICTABLE, 3).unwrap();
        let d = gen_tokens_from(&g, 20_000, 12, 3).unwrap();
        let mut counts = vec![0usize; v * v * v];
        for i in 0..d.count() {
            for w in d.row(i).windows(3) {
                counts[(w[0] * v + w[1]) * v + w[2]] += 1;
            }
        }
        let mut checked = 0;
        for ctx in 0..v * v {
            let row = &counts[ctx * v..(ctx + 1) * v];
            let total: usize = row.iter().sum();
            // 2% is more than four standard errors once a context has 5000 samples
            if total < 5000 {
                continue;
            }
            checked += 1;
            for (t, &c) in row.iter().enumerate() {
                let p = g.probability(Some(ctx / v), ctx % v, t);
                assert!((c as f64 / total as f64 - p).abs() < 0.02, "ctx {ctx} token {t}");
            }
        }
        assert!(checked >= 10, "{checked}");
    }

    #[test]
    fn optimal_predictor_accuracy() {
        let g = Grammar::new(8, PREDICTABLE, 4).unwrap();
        assert!((g.optimal_accuracy() - 0.825).abs() < 1e-12);
        let d = gen_tokens_from(&g, 5_000, 10, 4).unwrap();
        let (mut hits, mut total) = (0, 0);
        for i in 0..d.count() {
            let r = d.row(i);
            for j in 1..r.len() {
                let guess = g.next(j.checked_sub(2).map(|k| r[k]), r[j - 1]);
                hits += (guess == r[j]) as usize;
                total += 1;
            }
        }
        assert!((hits as f64 / total as f64 - g.optimal_accuracy()).abs() < 0.01);
    }

    #[test]
    fn fully_predictable_grammar_is_deterministic_after_first_token() {
        let g = Grammar::new(6, 1.0, 5).unwrap();
        let d = gen_tokens_from(&g, 50, 8, 5).unwrap();
        for i in 0..d.count() {
            let r = d.row(i);
            assert_eq!(r[1], g.next(None, r[0]));
            for j in 2..r.len() {
                assert_eq!(r[j], g.next(Some(r[j - 2]), r[j - 1]));
            }
        }
    }
}
