//! Seeded synthetic longitudinal embeddings with a known aging law.
//!
//! Subject `s` has a unit identity vector `u_s`; all subjects share a unit
//! drift direction `v`. The noiseless embedding at age `t` is
//! `normalize(u_s + γ·(t/100)·v)`, and a record adds `σ·ε` (standard normal
//! per coordinate) before normalizing.
//!
//! The drift direction comes from ChaCha stream 0 and subject `i` from stream
//! `i + 1`, so a subject's data depends only on the seed and its index. Using a
//! different `first_subject` yields a disjoint population under the same drift.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::store::{bin, EmbeddingRecord, LongitudinalDataset, StoreError, MAX_AGE};
use crate::vector;

pub const DRIFT_ID: &str = "__drift__";

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
    #[error("{requested} ages per subject requested but the age range holds only {available}")]
    TooManyAges { requested: usize, available: usize },
    #[error("unknown subject {0:?}")]
    UnknownSubject(String),
    #[error("ground truth file: {0}")]
    GroundTruthFormat(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub dim: usize,
    pub n_subjects: usize,
    /// Inclusive bounds on the number of distinct ages per subject.
    pub ages_per_subject: (usize, usize),
    /// Inclusive age interval.
    pub age_range: (u16, u16),
    pub drift_magnitude: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Index of the first generated subject.
    pub first_subject: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            n_subjects: 500,
            ages_per_subject: (2, 6),
            age_range: (5, 25),
            drift_magnitude: 1.2,
            noise_sigma: 0.05,
            seed: 0,
            first_subject: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        if self.dim < 2 {
            return bad(format!("dim must be at least 2, got {}", self.dim));
        }
        if !(self.drift_magnitude.is_finite() && self.drift_magnitude >= 0.0) {
            return bad(format!("drift magnitude must be finite and ≥ 0, got {}", self.drift_magnitude));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad(format!("noise sigma must be finite and ≥ 0, got {}", self.noise_sigma));
        }
        let (a_min, a_max) = self.age_range;
        if a_min >= a_max || a_max > MAX_AGE {
            return bad(format!("age range [{a_min}, {a_max}] must satisfy a_min < a_max ≤ {MAX_AGE}"));
        }
        let (lo, hi) = self.ages_per_subject;
        if lo == 0 || lo > hi {
            return bad(format!("ages per subject [{lo}, {hi}] must satisfy 1 ≤ min ≤ max"));
        }
        let available = (a_max - a_min) as usize + 1;
        if hi > available {
            return Err(SynthError::TooManyAges { requested: hi, available });
        }
        if self.first_subject.checked_add(self.n_subjects).is_none_or(|n| n > 99_999) {
            return bad("subject indices must stay below 100000".into());
        }
        Ok(())
    }
}

/// The generating parameters needed to predict any subject at any age.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub drift_direction: Vec<f64>,
    pub drift_magnitude: f64,
    pub identity_vectors: BTreeMap<String, Vec<f64>>,
}

pub fn subject_id(index: usize) -> String {
    format!("s{index:05}")
}

fn identity_record_id(subject: &str) -> String {
    format!("__id_{subject}__")
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if vector::normalize_exact(&mut v) {
            return v;
        }
    }
}

fn drifted(u: &[f64], v: &[f64], gamma: f64, age: u16) -> Vec<f64> {
    let c = gamma * (age as f64 / 100.0);
    u.iter().zip(v).map(|(a, b)| a + c * b).collect()
}

pub fn generate(cfg: &SyntheticConfig) -> Result<(LongitudinalDataset, GroundTruth), SynthError> {
    cfg.validate()?;
    let v = random_unit(&mut stream_rng(cfg.seed, 0), cfg.dim);
    let (a_min, a_max) = cfg.age_range;
    let span = (a_max - a_min) as usize + 1;

    let mut records = Vec::new();
    let mut identities = BTreeMap::new();
    for i in cfg.first_subject..cfg.first_subject + cfg.n_subjects {
        let mut rng = stream_rng(cfg.seed, i as u64 + 1);
        let id = subject_id(i);
        let u = random_unit(&mut rng, cfg.dim);
        let n_ages = rng.random_range(cfg.ages_per_subject.0..=cfg.ages_per_subject.1);
        let mut ages: Vec<u16> = index::sample(&mut rng, span, n_ages)
            .into_iter()
            .map(|k| a_min + k as u16)
            .collect();
        ages.sort_unstable();
        for age in ages {
            let mut x = drifted(&u, &v, cfg.drift_magnitude, age);
            if cfg.noise_sigma > 0.0 {
                for xi in &mut x {
                    let e: f64 = rng.sample(StandardNormal);
                    *xi += cfg.noise_sigma * e;
                }
            }
            if !vector::normalize_exact(&mut x) {
                return Err(SynthError::InvalidConfig(format!(
                    "subject {id} at age {age} produced a zero vector"
                )));
            }
            records.push(EmbeddingRecord::new(id.clone(), age, 0, x));
        }
        identities.insert(id, u);
    }
    let ds = LongitudinalDataset::from_records(cfg.dim, records)?;
    Ok((
        ds,
        GroundTruth {
            drift_direction: v,
            drift_magnitude: cfg.drift_magnitude,
            identity_vectors: identities,
        },
    ))
}

impl GroundTruth {
    pub fn dim(&self) -> usize {
        self.drift_direction.len()
    }

    /// Noiseless embedding of `subject` at age `t2`.
    pub fn oracle_aged(&self, subject: &str, t2: u16) -> Result<Vec<f64>, SynthError> {
        let u = self
            .identity_vectors
            .get(subject)
            .ok_or_else(|| SynthError::UnknownSubject(subject.to_string()))?;
        let mut x = drifted(u, &self.drift_direction, self.drift_magnitude, t2);
        if !vector::normalize_exact(&mut x) {
            return Err(SynthError::InvalidConfig(format!("{subject} at age {t2} has zero norm")));
        }
        Ok(x)
    }

    /// Stores `γ·v` as `__drift__` and each `u` as `__id_<subject>__`, all at
    /// age 0, in the binary dataset layout. Values are narrowed to f32.
    pub fn write_bin<W: Write>(&self, writer: W) -> Result<(), SynthError> {
        let mut recs = Vec::with_capacity(self.identity_vectors.len() + 1);
        let scaled: Vec<f64> = self.drift_direction.iter().map(|x| x * self.drift_magnitude).collect();
        recs.push(EmbeddingRecord::new(DRIFT_ID, 0, 0, scaled));
        for (id, u) in &self.identity_vectors {
            recs.push(EmbeddingRecord::new(identity_record_id(id), 0, 0, u.clone()));
        }
        bin::write_raw(self.dim(), recs.iter(), writer)?;
        Ok(())
    }

    pub fn read_bin<R: Read>(reader: R) -> Result<Self, SynthError> {
        let (dim, recs) = bin::read_raw(reader)?;
        let mut drift = None;
        let mut identities = BTreeMap::new();
        for r in recs {
            if r.subject_id == DRIFT_ID {
                drift = Some(r.vector);
            } else if let Some(s) = r.subject_id.strip_prefix("__id_").and_then(|s| s.strip_suffix("__")) {
                let mut u = r.vector;
                vector::normalize_exact(&mut u);
                identities.insert(s.to_string(), u);
            } else {
                return Err(SynthError::GroundTruthFormat(format!("unexpected record {:?}", r.subject_id)));
            }
        }
        let mut v = drift.ok_or_else(|| SynthError::GroundTruthFormat(format!("missing {DRIFT_ID} record")))?;
        let gamma = vector::norm(&v);
        if gamma > 0.0 {
            vector::normalize_exact(&mut v);
        } else {
            // direction is irrelevant without drift
            v = vec![0.0; dim];
            v[0] = 1.0;
        }
        Ok(Self {
            drift_direction: v,
            drift_magnitude: gamma,
            identity_vectors: identities,
        })
    }
}
