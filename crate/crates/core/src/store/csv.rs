//! Text encoding: a `d=<int>` header, then `subject_id,age,seq,v0,...,v{d-1}` rows.
//! Lines starting with `#` and blank lines are skipped.

use std::io::{Read, Write};

use super::{DatasetBuilder, EmbeddingRecord, LongitudinalDataset, StoreError, MAX_AGE};

pub fn parse<R: Read>(mut reader: R) -> Result<LongitudinalDataset, StoreError> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    let text = String::from_utf8(bytes).map_err(|e| StoreError::Malformed {
        row: line_of_offset(e.as_bytes(), e.utf8_error().valid_up_to()),
        reason: "invalid UTF-8".into(),
    })?;

    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (header_row, header) = lines
        .next()
        .ok_or_else(|| StoreError::Header("missing `d=<int>` header".into()))?;
    let dim = parse_header(header).map_err(|e| StoreError::Header(format!("line {header_row}: {e}")))?;

    let mut builder = DatasetBuilder::new(dim);
    for (row, line) in lines {
        builder.push(parse_row(line, row)?, row)?;
    }
    Ok(builder.finish())
}

fn line_of_offset(bytes: &[u8], offset: usize) -> usize {
    bytes[..offset].iter().filter(|&&b| b == b'\n').count() + 1
}

fn parse_header(line: &str) -> Result<usize, String> {
    let value = line
        .strip_prefix("d=")
        .ok_or_else(|| format!("expected `d=<int>`, found {line:?}"))?;
    let dim: usize = value
        .trim()
        .parse()
        .map_err(|_| format!("invalid dimension {value:?}"))?;
    if dim == 0 {
        return Err("dimension must be at least 1".into());
    }
    Ok(dim)
}

fn parse_row(line: &str, row: usize) -> Result<EmbeddingRecord, StoreError> {
    let malformed = |reason: String| StoreError::Malformed { row, reason };
    let mut fields = line.split(',').map(str::trim);

    let subject_id = fields.next().unwrap_or_default().to_string();
    let age_field = fields.next().ok_or_else(|| malformed("missing age".into()))?;
    let seq_field = fields.next().ok_or_else(|| malformed("missing seq".into()))?;

    let age: i64 = age_field
        .parse()
        .map_err(|_| malformed(format!("invalid age {age_field:?}")))?;
    if !(0..=MAX_AGE as i64).contains(&age) {
        return Err(StoreError::AgeOutOfRange { row, age });
    }
    let seq: u16 = seq_field
        .parse()
        .map_err(|_| malformed(format!("invalid seq {seq_field:?}")))?;
    let vector = fields
        .map(|f| {
            f.parse::<f64>()
                .map_err(|_| malformed(format!("invalid vector component {f:?}")))
        })
        .collect::<Result<Vec<_>, _>>()?;

    Ok(EmbeddingRecord {
        subject_id,
        age: age as u16,
        seq,
        vector,
    })
}

/// Writes every component with the shortest representation that parses back
/// to the identical `f64`.
pub fn write<W: Write>(ds: &LongitudinalDataset, mut writer: W) -> Result<(), StoreError> {
    writeln!(writer, "d={}", ds.dim())?;
    let mut line = String::new();
    for r in ds.records() {
        use std::fmt::Write as _;
        line.clear();
        let _ = write!(line, "{},{},{}", r.subject_id, r.age, r.seq);
        for x in &r.vector {
            let _ = write!(line, ",{x}");
        }
        line.push('\n');
        writer.write_all(line.as_bytes())?;
    }
    writer.flush()?;
    Ok(())
}
