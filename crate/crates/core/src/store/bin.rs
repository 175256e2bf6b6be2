//! Binary encoding.
//!
//! ```text
//! "FAGE" | version u8 = 1 | d u32 | count u64 |
//!   count x ( id_len u16 | id utf-8 | age u16 | seq u16 | d x f32 )
//! ```
//! All integers and floats are little-endian.

use std::io::{Read, Write};

use super::{DatasetBuilder, EmbeddingRecord, LongitudinalDataset, StoreError};
use crate::vector::{self, UNIT_NORM_SLACK};

pub const MAGIC: &[u8; 4] = b"FAGE";
pub const VERSION: u8 = 1;

pub(crate) struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], StoreError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or(StoreError::Truncated(what))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub(crate) fn u8(&mut self, what: &'static str) -> Result<u8, StoreError> {
        Ok(self.take(1, what)?[0])
    }

    pub(crate) fn u16(&mut self, what: &'static str) -> Result<u16, StoreError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self, what: &'static str) -> Result<u32, StoreError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self, what: &'static str) -> Result<u64, StoreError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self, what: &'static str) -> Result<f32, StoreError> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self, what: &'static str) -> Result<f64, StoreError> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

/// Reads records exactly as stored, without validation or renormalization.
///
/// Used for payloads that are not embeddings proper (mean tables, ground truth).
pub fn read_raw<R: Read>(mut reader: R) -> Result<(usize, Vec<EmbeddingRecord>), StoreError> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    let mut cur = Cursor::new(&bytes);

    if cur.take(4, "magic").map_err(|_| StoreError::BadMagic)? != MAGIC {
        return Err(StoreError::BadMagic);
    }
    let version = cur.u8("version")?;
    if version != VERSION {
        return Err(StoreError::UnsupportedVersion(version));
    }
    let dim = cur.u32("dimension")? as usize;
    if dim == 0 {
        return Err(StoreError::Header("dimension must be at least 1".into()));
    }
    let count = cur.u64("record count")?;
    // each record needs at least 6 + 4d bytes; guards the allocation below
    let max_possible = cur.remaining() / (6 + 4 * dim);
    if count > max_possible as u64 {
        return Err(StoreError::Truncated("records"));
    }

    let mut records = Vec::with_capacity(count as usize);
    for i in 0..count as usize {
        let row = i + 1;
        let id_len = cur.u16("subject id length")? as usize;
        let id = std::str::from_utf8(cur.take(id_len, "subject id")?)
            .map_err(|_| StoreError::Malformed {
                row,
                reason: "subject id is not UTF-8".into(),
            })?
            .to_string();
        let age = cur.u16("age")?;
        let seq = cur.u16("seq")?;
        let vector = (0..dim)
            .map(|_| cur.f32("vector").map(f64::from))
            .collect::<Result<Vec<_>, _>>()?;
        records.push(EmbeddingRecord::new(id, age, seq, vector));
    }
    if cur.remaining() != 0 {
        return Err(StoreError::Malformed {
            row: count as usize + 1,
            reason: format!("{} trailing bytes", cur.remaining()),
        });
    }
    Ok((dim, records))
}

/// Parses and validates a dataset. Vectors that need renormalizing are
/// rounded back onto the 32-bit grid so that re-encoding is lossless.
pub fn parse<R: Read>(reader: R) -> Result<LongitudinalDataset, StoreError> {
    let (dim, records) = read_raw(reader)?;
    let mut builder = DatasetBuilder::new(dim);
    for (i, mut rec) in records.into_iter().enumerate() {
        let n = vector::norm(&rec.vector);
        if n > 0.0 && n.is_finite() && (n - 1.0).abs() > UNIT_NORM_SLACK {
            rec.vector
                .iter_mut()
                .for_each(|x| *x = ((*x / n) as f32) as f64);
        }
        builder.push(rec, i + 1)?;
    }
    Ok(builder.finish())
}

pub fn write_raw<'a, W: Write>(
    dim: usize,
    records: impl ExactSizeIterator<Item = &'a EmbeddingRecord>,
    mut writer: W,
) -> Result<(), StoreError> {
    let dim32 = u32::try_from(dim).map_err(|_| StoreError::Header("dimension exceeds u32".into()))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.push(VERSION);
    buf.extend_from_slice(&dim32.to_le_bytes());
    buf.extend_from_slice(&(records.len() as u64).to_le_bytes());
    for (i, r) in records.enumerate() {
        let id = r.subject_id.as_bytes();
        let id_len = u16::try_from(id.len()).map_err(|_| StoreError::Malformed {
            row: i + 1,
            reason: "subject id longer than 65535 bytes".into(),
        })?;
        if r.vector.len() != dim {
            return Err(StoreError::DimensionMismatch {
                row: i + 1,
                expected: dim,
                found: r.vector.len(),
            });
        }
        buf.extend_from_slice(&id_len.to_le_bytes());
        buf.extend_from_slice(id);
        buf.extend_from_slice(&r.age.to_le_bytes());
        buf.extend_from_slice(&r.seq.to_le_bytes());
        for &x in &r.vector {
            buf.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    writer.write_all(&buf)?;
    writer.flush()?;
    Ok(())
}

pub fn write<W: Write>(ds: &LongitudinalDataset, writer: W) -> Result<(), StoreError> {
    write_raw(ds.dim(), ds.records().iter(), writer)
}
