//! The packed model file.
//!
//! Little-endian throughout:
//!
//! | field | type |
//! |---|---|
//! | magic `"BNM1"` | 4 bytes |
//! | version (1) | u32 |
//! | config length, config JSON | u32, UTF-8 |
//! | record count | u32 |
//! | per record: name length, name | u16, UTF-8 |
//! | kind (0 dense, 1 conv, 2 embedding projection) | u8 |
//! | rank, dims | u8, rank x u32 |
//! | kernel word count, words | u64, u64 each |
//! | bias word count, words | u64, u64 each |
//! | FNV-1a 64 of everything before it | u64 |
//!
//! Bit `i` of a tensor (row-major flat index) is bit `i % 64` of word `i / 64`.

use std::collections::HashMap;
use std::path::Path;

use crate::binarize::{words_for, PackedBits};
use crate::codec::{verify_checksum, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::models::{layout, ModelConfig};

pub const MAGIC: &[u8; 4] = b"BNM1";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RecordKind {
    Dense = 0,
    Conv = 1,
    EmbeddingProjection = 2,
}

impl RecordKind {
    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Self::Dense),
            1 => Some(Self::Conv),
            2 => Some(Self::EmbeddingProjection),
            _ => None,
        }
    }

    pub(crate) fn for_layer(name: &str, kernel_rank: usize) -> Self {
        if kernel_rank == 4 {
            Self::Conv
        } else if name.starts_with(&format!("{}.", crate::models::naming::EMBED)) {
            Self::EmbeddingProjection
        } else {
            Self::Dense
        }
    }
}

/// One layer's 1-bit kernel and bias.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PackedLayer {
    pub name: String,
    pub kind: RecordKind,
    pub kernel: PackedBits,
    pub bias: PackedBits,
}

/// Inference-only model: the configuration and one record per layer, in
/// the source model's parameter order.
#[derive(Clone, Debug, PartialEq)]
pub struct PackedModel {
    pub config: ModelConfig,
    layers: Vec<PackedLayer>,
    index: HashMap<String, usize>,
}

impl PackedModel {
    /// Checks the records against the layers the configuration implies.
    pub(crate) fn new(config: ModelConfig, layers: Vec<PackedLayer>) -> Result<Self> {
        if !config.binary {
            return Err(Error::Contract("only binary models have a packed form".into()));
        }
        let shapes = layout(&config)?;
        if shapes.len() != 2 * layers.len() {
            return Err(Error::format(0, format!("{} records, configuration implies {}", layers.len(), shapes.len() / 2)));
        }
        for (layer, pair) in layers.iter().zip(shapes.chunks(2)) {
            let (w, b) = (&pair[0], &pair[1]);
            let expected = w.name.strip_suffix(".W").unwrap_or(&w.name);
            if layer.name != expected
                || layer.kernel.shape() != w.shape.as_slice()
                || layer.bias.shape() != b.shape.as_slice()
                || layer.kind != RecordKind::for_layer(expected, w.shape.len())
            {
                return Err(Error::format(
                    0,
                    format!(
                        "record '{}' {:?} does not match layer '{expected}' {:?}",
                        layer.name,
                        layer.kernel.shape(),
                        w.shape
                    ),
                ));
            }
        }
        let index = layers.iter().enumerate().map(|(i, l)| (l.name.clone(), i)).collect();
        Ok(Self { config, layers, index })
    }

    pub fn layers(&self) -> &[PackedLayer] {
        &self.layers
    }

    pub fn layer(&self, name: &str) -> Result<&PackedLayer> {
        self.index
            .get(name)
            .map(|&i| &self.layers[i])
            .ok_or_else(|| Error::Data(format!("packed model has no layer '{name}'")))
    }

    /// Number of 1-bit parameters.
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.kernel.bit_count() + l.bias.bit_count()).sum()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let words: usize = self.layers.iter().map(|l| l.kernel.words().len() + l.bias.words().len()).sum();
        let mut w = ByteWriter::with_capacity(1024 + 64 * self.layers.len() + 8 * words);
        w.bytes(MAGIC);
        w.u32(VERSION);
        let config = serde_json::to_vec(&self.config)?;
        w.len_u32(config.len(), "config length")?;
        w.bytes(&config);
        w.len_u32(self.layers.len(), "record count")?;
        for l in &self.layers {
            let name = l.name.as_bytes();
            w.u16(u16::try_from(name.len()).map_err(|_| Error::Contract(format!("layer name too long: {}", l.name)))?);
            w.bytes(name);
            w.u8(l.kind as u8);
            w.u8(l.kernel.shape().len() as u8);
            for &d in l.kernel.shape() {
                w.len_u32(d, "dimension")?;
            }
            for bits in [&l.kernel, &l.bias] {
                w.u64(bits.words().len() as u64);
                bits.words().iter().for_each(|&x| w.u64(x));
            }
        }
        Ok(w.finish_with_checksum())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::format(0, "bad magic: not a packed model file"));
        }
        if bytes.len() < 8 {
            return Err(Error::format(4, "truncated version"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::format(4, format!("unsupported version {version}")));
        }
        let body = verify_checksum(bytes, 8)?;
        let mut r = ByteReader::new(body);
        r.take(8, "header")?;
        let len = r.u32("config length")? as usize;
        let at = r.offset();
        let config: ModelConfig = serde_json::from_str(r.utf8(len, "config")?)
            .map_err(|e| Error::format(at, format!("invalid config: {e}")))?;
        config.validate().map_err(|e| Error::format(at, e.to_string()))?;
        let at = r.offset();
        let count = r.u32("record count")? as u64;
        // every record takes at least 20 bytes
        let count = r.count(count, 20, "record").map_err(|_| Error::format(at, "record count exceeds file size"))?;
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            layers.push(read_record(&mut r)?);
        }
        if r.remaining() != 0 {
            return Err(Error::format(r.offset(), "trailing bytes after the last record"));
        }
        Self::new(config, layers)
    }
}

fn read_record(r: &mut ByteReader) -> Result<PackedLayer> {
    let n = r.u16("name length")? as usize;
    let name = r.utf8(n, "layer name")?.to_string();
    let at = r.offset();
    let kind = RecordKind::from_tag(r.u8("kind")?).ok_or_else(|| Error::format(at, format!("unknown record kind in '{name}'")))?;
    let rank = r.u8("rank")? as usize;
    let at = r.offset();
    let dims: Vec<usize> = r.u32_vec(rank, "dims")?.into_iter().map(|d| d as usize).collect();
    if rank == 0 || dims.contains(&0) {
        return Err(Error::format(at, format!("invalid shape {dims:?} for '{name}'")));
    }
    let bias_shape = vec![dims[rank - 1]];
    let kernel = read_bits(r, dims, &name)?;
    let bias = read_bits(r, bias_shape, &name)?;
    Ok(PackedLayer { name, kind, kernel, bias })
}

fn read_bits(r: &mut ByteReader, shape: Vec<usize>, name: &str) -> Result<PackedBits> {
    let at = r.offset();
    let raw = r.u64("word count")?;
    let bits = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
    let expected = bits.map(words_for);
    if expected != Some(raw as usize) || usize::try_from(raw).is_err() {
        return Err(Error::format(at, format!("'{name}' has {raw} words for shape {shape:?}")));
    }
    let n = r.count(raw, 8, "word")?;
    let at = r.offset();
    let words = r.u64_vec(n, "words")?;
    PackedBits::from_words(shape, words).map_err(|e| match e {
        Error::Format { detail, .. } => Error::format(at, format!("'{name}': {detail}")),
        other => other,
    })
}

pub fn save_packed(pm: &PackedModel, path: &Path) -> Result<()> {
    std::fs::write(path, pm.to_bytes()?)?;
    Ok(())
}

pub fn load_packed(path: &Path) -> Result<PackedModel> {
    PackedModel::from_bytes(&std::fs::read(path)?)
}
