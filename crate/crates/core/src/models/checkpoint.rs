//! Float checkpoint: every master tensor at full precision.
//!
//! Layout (little-endian): `"BNC1"`, u32 version, u32 config length + JSON
//! config, u32 tensor count, then per tensor u16 name length + name, u8 rank,
//! rank x u32 dims, f32 values; a trailing FNV-1a 64 checksum.

use std::path::Path;

use super::{Model, ModelConfig};
use crate::codec::{verify_checksum, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"BNC1";
const VERSION: u32 = 1;

pub fn checkpoint_bytes(model: &Model) -> Result<Vec<u8>> {
    let mut w = ByteWriter::with_capacity(64 + model.params.scalar_count() * 4);
    w.bytes(MAGIC);
    w.u32(VERSION);
    let config = serde_json::to_vec(&model.config)?;
    w.len_u32(config.len(), "config length")?;
    w.bytes(&config);
    w.len_u32(model.params.len(), "tensor count")?;
    for (_, p) in model.params.iter() {
        let name = p.name.as_bytes();
        w.u16(u16::try_from(name.len()).map_err(|_| Error::Contract(format!("name too long: {}", p.name)))?);
        w.bytes(name);
        w.u8(p.value.rank() as u8);
        for &d in p.value.shape() {
            w.len_u32(d, "dimension")?;
        }
        for &v in p.value.data() {
            w.f32(v);
        }
    }
    Ok(w.finish_with_checksum())
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    std::fs::write(path, checkpoint_bytes(model)?)?;
    Ok(())
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Model> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::format(0, "not a float checkpoint (bad magic)"));
    }
    let body = verify_checksum(bytes, 8)?;
    let mut r = ByteReader::new(body);
    r.take(4, "magic")?;
    let at = r.offset();
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::format(at, format!("unsupported checkpoint version {version}")));
    }
    let len = r.u32("config length")? as usize;
    let at = r.offset();
    let config: ModelConfig = serde_json::from_str(r.utf8(len, "config")?)
        .map_err(|e| Error::format(at, format!("invalid config: {e}")))?;
    let mut model = Model::build(config, 0)?;
    let count = r.u32("tensor count")? as usize;
    if count != model.params.len() {
        return Err(Error::format(r.offset(), format!("{count} tensors, model has {}", model.params.len())));
    }
    for id in model.params.ids().collect::<Vec<_>>() {
        let at = r.offset();
        let n = r.u16("name length")? as usize;
        let name = r.utf8(n, "name")?;
        if name != model.params.name(id) {
            return Err(Error::format(at, format!("expected tensor '{}', found '{name}'", model.params.name(id))));
        }
        let rank = r.u8("rank")? as usize;
        let dims: Vec<usize> = r.u32_vec(rank, "dims")?.into_iter().map(|d| d as usize).collect();
        if dims != model.params.get(id).shape() {
            return Err(Error::format(at, format!("tensor '{name}' has shape {dims:?}")));
        }
        let values = r.f32_vec(dims.iter().product(), "values")?;
        *model.params.get_mut(id) = Tensor::new(dims, values)?;
    }
    if r.remaining() != 0 {
        return Err(Error::format(r.offset(), "trailing bytes after the last tensor"));
    }
    Ok(model)
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    checkpoint_from_bytes(&std::fs::read(path)?)
}
