//! Little-endian byte writer and bounds-checked reader shared by the file
//! formats. Reader errors carry the byte offset where parsing failed.

use std::hash::Hasher;

use fnv::FnvHasher;

use crate::error::{Error, Result};

#[derive(Default)]
pub(crate) struct ByteWriter {
    pub buf: Vec<u8>,
}

impl ByteWriter {
    pub fn with_capacity(n: usize) -> Self {
        Self { buf: Vec::with_capacity(n) }
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u16(&mut self, v: u16) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn f32(&mut self, v: f32) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn len_u32(&mut self, n: usize, what: &str) -> Result<()> {
        let v = u32::try_from(n).map_err(|_| Error::Contract(format!("{what} {n} does not fit in u32")))?;
        self.u32(v);
        Ok(())
    }

    /// Appends the FNV-1a 64 checksum of everything written so far.
    pub fn finish_with_checksum(mut self) -> Vec<u8> {
        let sum = checksum(&self.buf);
        self.u64(sum);
        self.buf
    }
}

pub(crate) fn checksum(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn offset(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::format(
                self.pos,
                format!("truncated {what}: need {n} bytes, {} left", self.remaining()),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("slice length checked"))
    }

    pub fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.array::<1>(what)?[0])
    }

    pub fn u16(&mut self, what: &str) -> Result<u16> {
        self.array(what).map(u16::from_le_bytes)
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        self.array(what).map(u32::from_le_bytes)
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        self.array(what).map(u64::from_le_bytes)
    }

    /// A count that must be satisfiable by `unit`-byte items in the rest of
    /// the buffer, so corrupt lengths fail before anything is allocated.
    pub fn count(&mut self, raw: u64, unit: usize, what: &str) -> Result<usize> {
        let at = self.pos;
        match usize::try_from(raw).ok().and_then(|n| n.checked_mul(unit).map(|b| (n, b))) {
            Some((n, bytes)) if bytes <= self.remaining() => Ok(n),
            _ => Err(Error::format(at, format!("{what} count {raw} exceeds the remaining {} bytes", self.remaining()))),
        }
    }

    pub fn u64_vec(&mut self, n: usize, what: &str) -> Result<Vec<u64>> {
        let raw = self.take(n * 8, what)?;
        Ok(raw.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub fn u32_vec(&mut self, n: usize, what: &str) -> Result<Vec<u32>> {
        let raw = self.take(n * 4, what)?;
        Ok(raw.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub fn f32_vec(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let raw = self.take(n * 4, what)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub fn utf8(&mut self, n: usize, what: &str) -> Result<&'a str> {
        let at = self.pos;
        let raw = self.take(n, what)?;
        std::str::from_utf8(raw).map_err(|e| Error::format(at, format!("{what} is not UTF-8: {e}")))
    }
}

/// Splits off and verifies a trailing FNV-1a 64 checksum.
pub(crate) fn verify_checksum(bytes: &[u8], min_len: usize) -> Result<&[u8]> {
    if bytes.len() < min_len + 8 {
        return Err(Error::format(bytes.len(), "file too short for a checksum"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().unwrap());
    let actual = checksum(body);
    if stored != actual {
        return Err(Error::format(
            body.len(),
            format!("checksum mismatch: stored {stored:#018x}, computed {actual:#018x}"),
        ));
    }
    Ok(body)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_vectors() {
        assert_eq!(checksum(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(checksum(b"a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(checksum(b"foobar"), 0x8594_4171_f739_67e8);
    }

    #[test]
    fn reader_reports_offsets() {
        let mut w = ByteWriter::default();
        w.u32(7);
        w.u16(3);
        let bytes = w.finish_with_checksum();
        let body = verify_checksum(&bytes, 0).unwrap();
        let mut r = ByteReader::new(body);
        assert_eq!(r.u32("a").unwrap(), 7);
        assert_eq!(r.u16("b").unwrap(), 3);
        match r.u8("c") {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 6),
            other => panic!("{other:?}"),
        }
        let mut r = ByteReader::new(body);
        assert!(r.count(u64::MAX, 8, "words").is_err());
        assert_eq!(r.count(1, 6, "bytes").unwrap(), 1);
    }

    #[test]
    fn checksum_mismatch_detected() {
        let mut w = ByteWriter::default();
        w.bytes(b"hello");
        let mut bytes = w.finish_with_checksum();
        bytes[1] ^= 1;
        assert!(matches!(verify_checksum(&bytes, 0), Err(Error::Format { .. })));
    }
}
