//! Synthetic datasets, a whitespace tokenizer and the dataset file format.

mod file;
mod images;
mod tokenizer;
mod tokens;

pub use file::{dataset_from_bytes, dataset_to_bytes, read_dataset, write_dataset};
pub use images::{class_pattern, gen_images, ImageDataset, IMAGE_CHANNELS};
pub use tokenizer::{Tokenizer, UNKNOWN};
pub use tokens::{gen_periodic_tokens, gen_tokens, gen_tokens_from, Grammar, TokenDataset, PREDICTABLE};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::models::Input;
use crate::tensor::Tensor;

/// Fraction of examples kept for training by [`Dataset::split`].
pub const TRAIN_FRACTION: f64 = 0.95;

#[derive(Clone, Debug, PartialEq)]
pub enum Dataset {
    Images(ImageDataset),
    Tokens(TokenDataset),
}

/// Owned inputs and labels of one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub images: Option<Tensor<f32>>,
    pub ids: Vec<usize>,
    pub batch: usize,
    pub len: usize,
    /// One label per image, or one next-token target per input position.
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn input(&self) -> Input<'_> {
        match &self.images {
            Some(x) => Input::Images(x),
            None => Input::Tokens { ids: &self.ids, batch: self.batch, len: self.len },
        }
    }
}

impl Dataset {
    pub fn len(&self) -> usize {
        match self {
            Dataset::Images(d) => d.len(),
            Dataset::Tokens(d) => d.count(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Dataset::Images(_) => "images",
            Dataset::Tokens(_) => "tokens",
        }
    }

    /// Gathers the examples at `indices` into one batch. Token sequences
    /// become inputs `row[..len-1]` with targets `row[1..]`.
    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        if indices.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::Data(format!("example {bad} out of range for {} examples", self.len())));
        }
        match self {
            Dataset::Images(d) => {
                let per = d.image_len();
                let s = d.images.shape();
                let mut data = Vec::with_capacity(indices.len() * per);
                for &i in indices {
                    data.extend_from_slice(&d.images.data()[i * per..(i + 1) * per]);
                }
                let images = Tensor::new([indices.len(), s[1], s[2], s[3]], data)?;
                let labels = indices.iter().map(|&i| d.labels[i]).collect();
                Ok(Batch { images: Some(images), ids: Vec::new(), batch: indices.len(), len: 0, labels })
            }
            Dataset::Tokens(d) => {
                let len = d.context_len();
                let mut ids = Vec::with_capacity(indices.len() * len);
                let mut labels = Vec::with_capacity(indices.len() * len);
                for &i in indices {
                    let row = d.row(i);
                    ids.extend_from_slice(&row[..len]);
                    labels.extend_from_slice(&row[1..]);
                }
                Ok(Batch { images: None, ids, batch: indices.len(), len, labels })
            }
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        match self {
            Dataset::Images(d) => {
                let b = self.batch(indices)?;
                Ok(Dataset::Images(ImageDataset {
                    images: b.images.expect("image batch"),
                    labels: b.labels,
                    num_classes: d.num_classes,
                    seed: d.seed,
                }))
            }
            Dataset::Tokens(d) => {
                let seqs = indices.iter().flat_map(|&i| d.row(i).iter().copied()).collect();
                Ok(Dataset::Tokens(TokenDataset::new(seqs, d.len, d.vocab_size, d.seed)?))
            }
        }
    }

    /// Seeded disjoint split: `train_fraction` of the examples for training,
    /// the rest (at least one) for validation.
    pub fn split(&self, train_fraction: f64, seed: u64) -> Result<(Self, Self)> {
        let (train, val) = split_indices(self.len(), train_fraction, seed)?;
        Ok((self.subset(&train)?, self.subset(&val)?))
    }
}

pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 || !(0.0..1.0).contains(&train_fraction) {
        return Err(Error::Data(format!("cannot split {n} examples with train fraction {train_fraction}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let train = ((n as f64 * train_fraction).floor() as usize).clamp(1, n - 1);
    let val = order.split_off(train);
    Ok((order, val))
}

/// Parses `synthetic:images,classes=4,n=256,size=16` or
/// `synthetic:tokens,vocab=8,n=512,len=17` or
/// `synthetic:periodic,vocab=8,period=5,n=256,len=17`. Missing `seed` uses `default_seed`.
pub fn parse_synthetic(spec: &str, default_seed: u64) -> Result<Dataset> {
    let body = spec
        .strip_prefix("synthetic:")
        .ok_or_else(|| Error::Config(format!("'{spec}' is not a synthetic data spec")))?;
    let mut parts = body.split(',');
    let kind = parts.next().unwrap_or_default();
    let mut fields = std::collections::BTreeMap::new();
    for p in parts {
        let (k, v) = p.split_once('=').ok_or_else(|| Error::Config(format!("expected key=value, got '{p}'")))?;
        let v: u64 = v.parse().map_err(|_| Error::Config(format!("'{k}' needs an integer, got '{v}'")))?;
        fields.insert(k, v);
    }
    let mut get = |k: &str, default: u64| fields.remove(k).unwrap_or(default);
    let seed = get("seed", default_seed);
    let ds = match kind {
        "images" => {
            let size = get("size", 16) as usize;
            Dataset::Images(gen_images(get("classes", 4) as usize, get("n", 256) as usize, size, size, seed)?)
        }
        "tokens" => Dataset::Tokens(gen_tokens(get("vocab", 8) as usize, get("n", 512) as usize, get("len", 17) as usize, seed)?),
        "periodic" => {
            let (v, p) = (get("vocab", 8) as usize, get("period", 5) as usize);
            Dataset::Tokens(gen_periodic_tokens(v, p, get("n", 256) as usize, get("len", 17) as usize, seed)?)
        }
        other => return Err(Error::Config(format!("unknown synthetic kind '{other}' (images, tokens or periodic)"))),
    };
    if let Some(k) = fields.keys().next() {
        return Err(Error::Config(format!("unknown synthetic field '{k}'")));
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_disjoint_and_exhaustive() {
        for n in [2, 7, 100, 1000] {
            let (mut train, val) = split_indices(n, TRAIN_FRACTION, 3).unwrap();
            assert!(!val.is_empty() && !train.is_empty());
            if n >= 100 {
                assert_eq!(train.len(), n * 95 / 100);
            }
            train.extend(&val);
            train.sort_unstable();
            assert_eq!(train, (0..n).collect::<Vec<_>>());
        }
        assert!(split_indices(1, 0.95, 0).is_err());
    }

    #[test]
    fn token_batches_shift_targets() {
        let d = Dataset::Tokens(TokenDataset::new(vec![1, 2, 3, 4, 5, 6, 7, 0], 4, 8, 0).unwrap());
        let b = d.batch(&[1, 0]).unwrap();
        assert_eq!(b.ids, vec![5, 6, 7, 1, 2, 3]);
        assert_eq!(b.labels, vec![6, 7, 0, 2, 3, 4]);
        assert_eq!((b.batch, b.len), (2, 3));
        assert!(d.batch(&[2]).is_err());
    }

    #[test]
    fn image_subset_keeps_examples() {
        let full = Dataset::Images(gen_images(2, 10, 4, 4, 1).unwrap());
        let (train, val) = full.split(0.8, 5).unwrap();
        assert_eq!((train.len(), val.len()), (8, 2));
        let Dataset::Images(v) = &val else { panic!() };
        let Dataset::Images(f) = &full else { panic!() };
        let per = f.image_len();
        for (img, &l) in v.images.data().chunks(per).zip(&v.labels) {
            let src = f.images.data().chunks(per).position(|c| c == img).unwrap();
            assert_eq!(f.labels[src], l);
        }
    }

    #[test]
    fn synthetic_specs() {
        let d = parse_synthetic("synthetic:images,classes=3,n=9,size=4", 0).unwrap();
        assert_eq!((d.kind_name(), d.len()), ("images", 9));
        let d = parse_synthetic("synthetic:tokens,vocab=6,n=5,len=9,seed=2", 0).unwrap();
        assert_eq!(d.len(), 5);
        assert!(parse_synthetic("synthetic:tokens,colour=2", 0).is_err());
        assert!(parse_synthetic("synthetic:audio", 0).is_err());
        assert!(parse_synthetic("images", 0).is_err());
    }
}
