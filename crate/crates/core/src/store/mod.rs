//! Longitudinal embedding datasets: records, indexes, codecs and evaluation splits.

pub mod bin;
pub mod csv;
mod split;

pub use split::{add_distractors, build_youngest_oldest, split_folds, GalleryProbeSplit};

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::vector;

pub const MAX_AGE: u16 = 120;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("row {row}: malformed record: {reason}")]
    Malformed { row: usize, reason: String },
    #[error("row {row}: expected {expected} vector components, found {found}")]
    DimensionMismatch {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("row {row}: zero-norm vector")]
    ZeroNorm { row: usize },
    #[error("row {row}: duplicate key (subject {subject:?}, age {age}, seq {seq})")]
    DuplicateKey {
        row: usize,
        subject: String,
        age: u16,
        seq: u16,
    },
    #[error("row {row}: age {age} outside [0, {MAX_AGE}]")]
    AgeOutOfRange { row: usize, age: i64 },
    #[error("bad header: {0}")]
    Header(String),
    #[error("not a FAGE binary stream")]
    BadMagic,
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u8),
    #[error("stream truncated while reading {0}")]
    Truncated(&'static str),
    #[error("fold count must be at least 2, got {0}")]
    InvalidFoldCount(usize),
    #[error("cannot split {subjects} subjects into {k} folds")]
    TooFewSubjects { subjects: usize, k: usize },
    #[error("distractor subject {0:?} is enrolled in the gallery")]
    DistractorCollision(String),
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One observation: a unit-norm embedding of `subject_id` captured at `age`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub subject_id: String,
    pub age: u16,
    /// Disambiguates several images of one subject at the same age.
    pub seq: u16,
    pub vector: Vec<f64>,
}

impl EmbeddingRecord {
    pub fn new(subject_id: impl Into<String>, age: u16, seq: u16, vector: Vec<f64>) -> Self {
        Self {
            subject_id: subject_id.into(),
            age,
            seq,
            vector,
        }
    }

    pub fn key(&self) -> (&str, u16, u16) {
        (&self.subject_id, self.age, self.seq)
    }
}

/// On-disk dataset encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Bin,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "bin" => Ok(Format::Bin),
            other => Err(format!("unknown format {other:?} (expected csv or bin)")),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Csv => "csv",
            Format::Bin => "bin",
        })
    }
}

/// Validated, indexed, immutable collection of records sharing one dimension.
#[derive(Debug, Clone)]
pub struct LongitudinalDataset {
    dim: usize,
    records: Vec<EmbeddingRecord>,
    /// subject id -> record indices sorted by (age, seq)
    by_subject: BTreeMap<String, Vec<usize>>,
    /// age -> record indices in record order
    by_age: BTreeMap<u16, Vec<usize>>,
}

impl PartialEq for LongitudinalDataset {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.records == other.records
    }
}

/// Incremental validator shared by the codecs so errors carry source rows.
pub(crate) struct DatasetBuilder {
    dim: usize,
    records: Vec<EmbeddingRecord>,
    seen: HashSet<(String, u16, u16)>,
}

impl DatasetBuilder {
    pub(crate) fn new(dim: usize) -> Self {
        Self {
            dim,
            records: Vec::new(),
            seen: HashSet::new(),
        }
    }

    pub(crate) fn push(&mut self, mut rec: EmbeddingRecord, row: usize) -> Result<(), StoreError> {
        validate_subject_id(&rec.subject_id).map_err(|reason| StoreError::Malformed { row, reason })?;
        if rec.age > MAX_AGE {
            return Err(StoreError::AgeOutOfRange {
                row,
                age: rec.age as i64,
            });
        }
        if rec.vector.len() != self.dim {
            return Err(StoreError::DimensionMismatch {
                row,
                expected: self.dim,
                found: rec.vector.len(),
            });
        }
        if rec.vector.iter().any(|x| !x.is_finite()) {
            return Err(StoreError::Malformed {
                row,
                reason: "non-finite vector component".into(),
            });
        }
        if !vector::normalize_in_place(&mut rec.vector) {
            return Err(StoreError::ZeroNorm { row });
        }
        if !self.seen.insert((rec.subject_id.clone(), rec.age, rec.seq)) {
            return Err(StoreError::DuplicateKey {
                row,
                subject: rec.subject_id,
                age: rec.age,
                seq: rec.seq,
            });
        }
        self.records.push(rec);
        Ok(())
    }

    pub(crate) fn finish(self) -> LongitudinalDataset {
        LongitudinalDataset::index(self.dim, self.records)
    }
}

fn validate_subject_id(id: &str) -> Result<(), String> {
    if id.is_empty() {
        return Err("empty subject id".into());
    }
    if id.len() > u16::MAX as usize {
        return Err("subject id longer than 65535 bytes".into());
    }
    if id.starts_with('#') || id.contains([',', '\n', '\r']) || id.trim() != id {
        return Err(format!("subject id {id:?} contains reserved characters"));
    }
    Ok(())
}

impl LongitudinalDataset {
    /// Validates and indexes `records`. Vectors are renormalized to unit length.
    pub fn from_records(dim: usize, records: Vec<EmbeddingRecord>) -> Result<Self, StoreError> {
        if dim == 0 {
            return Err(StoreError::Header("dimension must be at least 1".into()));
        }
        let mut builder = DatasetBuilder::new(dim);
        for (i, rec) in records.into_iter().enumerate() {
            builder.push(rec, i + 1)?;
        }
        Ok(builder.finish())
    }

    pub fn empty(dim: usize) -> Self {
        Self::index(dim, Vec::new())
    }

    fn index(dim: usize, records: Vec<EmbeddingRecord>) -> Self {
        let mut by_subject: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut by_age: BTreeMap<u16, Vec<usize>> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            by_subject.entry(r.subject_id.clone()).or_default().push(i);
            by_age.entry(r.age).or_default().push(i);
        }
        for idx in by_subject.values_mut() {
            idx.sort_by_key(|&i| (records[i].age, records[i].seq));
        }
        Self {
            dim,
            records,
            by_subject,
            by_age,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn subject_count(&self) -> usize {
        self.by_subject.len()
    }

    /// Subject ids in lexicographic order.
    pub fn subjects(&self) -> impl Iterator<Item = &str> {
        self.by_subject.keys().map(String::as_str)
    }

    /// Records of one subject sorted by (age, seq).
    pub fn subject_records(&self, subject: &str) -> Vec<&EmbeddingRecord> {
        self.by_subject
            .get(subject)
            .map(|idx| idx.iter().map(|&i| &self.records[i]).collect())
            .unwrap_or_default()
    }

    /// All subjects with their age-sorted records.
    pub fn by_subject(&self) -> impl Iterator<Item = (&str, Vec<&EmbeddingRecord>)> {
        self.by_subject
            .iter()
            .map(|(s, idx)| (s.as_str(), idx.iter().map(|&i| &self.records[i]).collect()))
    }

    /// Ages present in the dataset, ascending.
    pub fn ages(&self) -> impl Iterator<Item = u16> + '_ {
        self.by_age.keys().copied()
    }

    /// The cohort of records captured at `age`, in record order.
    pub fn cohort(&self, age: u16) -> Vec<&EmbeddingRecord> {
        self.by_age
            .get(&age)
            .map(|idx| idx.iter().map(|&i| &self.records[i]).collect())
            .unwrap_or_default()
    }

    /// Records whose subject satisfies `keep`, in original order.
    pub fn filter_subjects(&self, mut keep: impl FnMut(&str) -> bool) -> Self {
        let records = self
            .records
            .iter()
            .filter(|r| keep(&r.subject_id))
            .cloned()
            .collect();
        Self::index(self.dim, records)
    }

    /// Concatenates datasets of equal dimension; keys must stay unique.
    pub fn merge(parts: &[&LongitudinalDataset]) -> Result<Self, StoreError> {
        let dim = parts
            .first()
            .map(|p| p.dim)
            .ok_or_else(|| StoreError::Header("nothing to merge".into()))?;
        let records = parts.iter().flat_map(|p| p.records.iter().cloned()).collect();
        Self::from_records(dim, records)
    }
}

/// Parses a dataset from `reader` in the given format.
pub fn parse_dataset<R: Read>(reader: R, format: Format) -> Result<LongitudinalDataset, StoreError> {
    match format {
        Format::Csv => csv::parse(reader),
        Format::Bin => bin::parse(reader),
    }
}

pub fn write_dataset<W: Write>(ds: &LongitudinalDataset, writer: W, format: Format) -> Result<(), StoreError> {
    match format {
        Format::Csv => csv::write(ds, writer),
        Format::Bin => bin::write(ds, writer),
    }
}

/// Guesses the encoding from the leading bytes.
pub fn detect_format(bytes: &[u8]) -> Format {
    if bytes.starts_with(bin::MAGIC) {
        Format::Bin
    } else {
        Format::Csv
    }
}

pub fn read_dataset_file(path: &Path) -> Result<LongitudinalDataset, StoreError> {
    let bytes = std::fs::read(path)?;
    parse_dataset(bytes.as_slice(), detect_format(&bytes))
}

pub fn write_dataset_file(ds: &LongitudinalDataset, path: &Path, format: Format) -> Result<(), StoreError> {
    let mut buf = Vec::new();
    write_dataset(ds, &mut buf, format)?;
    std::fs::write(path, buf)?;
    Ok(())
}
