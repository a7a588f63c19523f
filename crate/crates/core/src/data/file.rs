//! Dataset file: `"BND1"`, u8 kind (0 images, 1 tokens), then
//! images: u32 n, h, w, c, num_classes, seed (u64), f32 pixels, u32 labels;
//! tokens: u32 n, len, vocab_size, seed (u64), u32 ids. Little-endian.

use std::path::Path;

use super::{Dataset, ImageDataset, TokenDataset};
use crate::codec::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"BND1";

pub fn dataset_to_bytes(ds: &Dataset) -> Result<Vec<u8>> {
    let mut w = ByteWriter::default();
    w.bytes(MAGIC);
    match ds {
        Dataset::Images(d) => {
            w.u8(0);
            for &dim in d.images.shape() {
                w.len_u32(dim, "dimension")?;
            }
            w.len_u32(d.num_classes, "class count")?;
            w.u64(d.seed);
            d.images.data().iter().for_each(|&v| w.f32(v));
            for &l in &d.labels {
                w.len_u32(l, "label")?;
            }
        }
        Dataset::Tokens(d) => {
            w.u8(1);
            w.len_u32(d.count(), "sequence count")?;
            w.len_u32(d.len, "sequence length")?;
            w.len_u32(d.vocab_size, "vocab size")?;
            w.u64(d.seed);
            for &t in &d.sequences {
                w.len_u32(t, "token")?;
            }
        }
    }
    Ok(w.buf)
}

pub fn dataset_from_bytes(bytes: &[u8]) -> Result<Dataset> {
    if bytes.is_empty() {
        return Err(Error::format(0, "empty dataset file"));
    }
    let mut r = ByteReader::new(bytes);
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::format(0, "not a dataset file (bad magic)"));
    }
    let at = r.offset();
    let ds = match r.u8("kind")? {
        0 => {
            let mut dims = [0usize; 4];
            for d in &mut dims {
                *d = r.u32("dimension")? as usize;
            }
            let num_classes = r.u32("class count")? as usize;
            let seed = r.u64("seed")?;
            let pixels = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let pixels = r.count(pixels.unwrap_or(usize::MAX) as u64, 4, "pixel")?;
            let data = r.f32_vec(pixels, "pixels")?;
            let labels: Vec<usize> = r.u32_vec(dims[0], "labels")?.into_iter().map(|l| l as usize).collect();
            if let Some(bad) = labels.iter().find(|&&l| l >= num_classes) {
                return Err(Error::Data(format!("label {bad} >= {num_classes} classes")));
            }
            let images = Tensor::new(dims.to_vec(), data).map_err(|e| Error::format(at, e.to_string()))?;
            Dataset::Images(ImageDataset { images, labels, num_classes, seed })
        }
        1 => {
            let n = r.u32("sequence count")? as usize;
            let len = r.u32("sequence length")? as usize;
            let vocab = r.u32("vocab size")? as usize;
            let seed = r.u64("seed")?;
            let count = r.count((n as u64).saturating_mul(len as u64), 4, "token")?;
            let ids = r.u32_vec(count, "tokens")?.into_iter().map(|t| t as usize).collect();
            Dataset::Tokens(TokenDataset::new(ids, len, vocab, seed)?)
        }
        k => return Err(Error::format(at, format!("unknown dataset kind {k}"))),
    };
    if r.remaining() != 0 {
        return Err(Error::format(r.offset(), "trailing bytes after the dataset"));
    }
    if ds.is_empty() {
        return Err(Error::Data("dataset has no examples".into()));
    }
    Ok(ds)
}

pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, dataset_to_bytes(ds)?)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    dataset_from_bytes(&std::fs::read(path)?)
}
