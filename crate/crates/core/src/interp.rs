//! Age cohort mean features and linear movement along attribute vectors.
//!
//! The mean feature of an age cohort is the plain arithmetic mean of its
//! embeddings; an attribute vector is the difference of two such means. A
//! feature captured at age `t1` is moved towards `t2` by adding a multiple of
//! the `t1 → t2` attribute vector.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use thiserror::Error;

use crate::store::{self, bin, EmbeddingRecord, LongitudinalDataset, StoreError};
use crate::vector;

/// Reserved subject id used when a mean table is stored in the binary format.
pub const MEAN_SUBJECT_ID: &str = "__mean__";

#[derive(Debug, Error)]
pub enum InterpError {
    #[error("no mean feature for age {0}")]
    MissingAge(u16),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("interpolated feature has zero norm")]
    ZeroNorm,
    #[error("cohort at age {age} has {size} records, more than the storage format allows")]
    CohortTooLarge { age: u16, size: usize },
    #[error("record {0:?} is not a mean-table entry")]
    NotAMeanTable(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortMean {
    pub mean: Vec<f64>,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanFeatureTable {
    dim: usize,
    means: BTreeMap<u16, CohortMean>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributeVector {
    pub t1: u16,
    pub t2: u16,
    pub delta: Vec<f64>,
}

/// Mean embedding of every age cohort holding at least `min_cohort` records.
pub fn mean_features(ds: &LongitudinalDataset, min_cohort: usize) -> MeanFeatureTable {
    let min_cohort = min_cohort.max(1);
    let mut means = BTreeMap::new();
    for age in ds.ages() {
        let cohort = ds.cohort(age);
        if cohort.len() < min_cohort {
            continue;
        }
        let mut sum = vec![0.0; ds.dim()];
        for r in &cohort {
            for (s, x) in sum.iter_mut().zip(&r.vector) {
                *s += x;
            }
        }
        let n = cohort.len() as f64;
        sum.iter_mut().for_each(|s| *s /= n);
        means.insert(
            age,
            CohortMean {
                mean: sum,
                size: cohort.len(),
            },
        );
    }
    MeanFeatureTable { dim: ds.dim(), means }
}

impl MeanFeatureTable {
    pub fn new(dim: usize, means: BTreeMap<u16, CohortMean>) -> Self {
        Self { dim, means }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, age: u16) -> Option<&CohortMean> {
        self.means.get(&age)
    }

    pub fn ages(&self) -> impl Iterator<Item = u16> + '_ {
        self.means.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    /// Stores the table in the dataset binary format: one record per age with
    /// subject [`MEAN_SUBJECT_ID`] and the cohort size in `seq`.
    pub fn write_bin<W: Write>(&self, writer: W) -> Result<(), InterpError> {
        let records = self
            .means
            .iter()
            .map(|(&age, m)| {
                let seq = u16::try_from(m.size).map_err(|_| InterpError::CohortTooLarge { age, size: m.size })?;
                Ok(EmbeddingRecord::new(MEAN_SUBJECT_ID, age, seq, m.mean.clone()))
            })
            .collect::<Result<Vec<_>, InterpError>>()?;
        bin::write_raw(self.dim, records.iter(), writer)?;
        Ok(())
    }

    /// Means are stored as 32-bit floats, so a reloaded table matches the
    /// original to single precision.
    pub fn read_bin<R: Read>(reader: R) -> Result<Self, InterpError> {
        let (dim, records) = bin::read_raw(reader)?;
        let mut means = BTreeMap::new();
        for r in records {
            if r.subject_id != MEAN_SUBJECT_ID || r.seq == 0 || r.age > store::MAX_AGE {
                return Err(InterpError::NotAMeanTable(r.subject_id));
            }
            means.insert(
                r.age,
                CohortMean {
                    mean: r.vector,
                    size: r.seq as usize,
                },
            );
        }
        Ok(Self { dim, means })
    }
}

/// `mean[t2] − mean[t1]`.
pub fn attribute_vector(table: &MeanFeatureTable, t1: u16, t2: u16) -> Result<AttributeVector, InterpError> {
    let from = table.get(t1).ok_or(InterpError::MissingAge(t1))?;
    let to = table.get(t2).ok_or(InterpError::MissingAge(t2))?;
    let delta = to.mean.iter().zip(&from.mean).map(|(b, a)| b - a).collect();
    Ok(AttributeVector { t1, t2, delta })
}

/// `phi + alpha·delta` before renormalization.
pub fn interpolate_raw(phi: &[f64], delta: &AttributeVector, alpha: f64) -> Result<Vec<f64>, InterpError> {
    if phi.len() != delta.delta.len() {
        return Err(InterpError::DimensionMismatch {
            expected: delta.delta.len(),
            found: phi.len(),
        });
    }
    Ok(phi.iter().zip(&delta.delta).map(|(p, d)| p + alpha * d).collect())
}

/// Moves `phi` along the attribute vector and projects back onto the unit sphere.
pub fn interpolate(phi: &[f64], delta: &AttributeVector, alpha: f64) -> Result<Vec<f64>, InterpError> {
    let mut out = interpolate_raw(phi, delta, alpha)?;
    if !vector::normalize_in_place(&mut out) {
        return Err(InterpError::ZeroNorm);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ds(recs: &[(&str, u16, &[f64])]) -> LongitudinalDataset {
        LongitudinalDataset::from_records(
            recs[0].2.len(),
            recs.iter()
                .map(|(s, a, v)| EmbeddingRecord::new(*s, *a, 0, v.to_vec()))
                .collect(),
        )
        .unwrap()
    }

    fn table(entries: &[(u16, &[f64])]) -> MeanFeatureTable {
        MeanFeatureTable::new(
            entries[0].1.len(),
            entries
                .iter()
                .map(|(a, m)| (*a, CohortMean { mean: m.to_vec(), size: 1 }))
                .collect(),
        )
    }

    #[test]
    fn singleton_cohort_mean_is_the_vector() {
        let d = ds(&[("a", 3, &[0.6, 0.8])]);
        assert_eq!(mean_features(&d, 1).get(3).unwrap().mean, vec![0.6, 0.8]);
    }

    #[test]
    fn two_vector_mean() {
        let d = ds(&[("a", 3, &[1.0, 0.0]), ("b", 3, &[0.0, 1.0])]);
        let m = mean_features(&d, 1);
        assert_eq!(m.get(3).unwrap().mean, vec![0.5, 0.5]);
        assert_eq!(m.get(3).unwrap().size, 2);
        assert!(mean_features(&d, 3).is_empty());
    }

    #[test]
    fn mean_matches_summation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let recs: Vec<EmbeddingRecord> = (0..20)
            .map(|i| {
                let v: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
                EmbeddingRecord::new(format!("s{i}"), 10, 0, v)
            })
            .collect();
        let d = LongitudinalDataset::from_records(6, recs).unwrap();
        let table = mean_features(&d, 1);
        let got = &table.get(10).unwrap().mean;
        for (c, g) in got.iter().enumerate() {
            let mut acc = 0.0;
            for r in d.records() {
                acc += r.vector[c];
            }
            assert!((g - acc / 20.0).abs() < 1e-12);
        }
    }

    #[test]
    fn attribute_vector_cases() {
        let t = table(&[(5, &[1.0, 0.0]), (10, &[0.0, 1.0]), (15, &[0.3, -0.2])]);
        assert_eq!(attribute_vector(&t, 5, 10).unwrap().delta, vec![-1.0, 1.0]);
        assert_eq!(attribute_vector(&t, 10, 10).unwrap().delta, vec![0.0, 0.0]);
        let fwd = attribute_vector(&t, 5, 15).unwrap().delta;
        let back = attribute_vector(&t, 15, 5).unwrap().delta;
        assert!(fwd.iter().zip(&back).all(|(a, b)| (a + b).abs() < 1e-10));
        let chain: Vec<f64> = attribute_vector(&t, 5, 10)
            .unwrap()
            .delta
            .iter()
            .zip(&attribute_vector(&t, 10, 15).unwrap().delta)
            .map(|(a, b)| a + b)
            .collect();
        assert!(chain.iter().zip(&fwd).all(|(a, b)| (a - b).abs() < 1e-10));
        assert!(matches!(attribute_vector(&t, 5, 7), Err(InterpError::MissingAge(7))));
    }

    #[test]
    fn interpolation_endpoints() {
        let phi = vec![0.6, 0.8];
        let delta = AttributeVector {
            t1: 1,
            t2: 2,
            delta: vec![0.4, -0.8],
        };
        assert_eq!(interpolate(&phi, &delta, 0.0).unwrap(), phi);

        // delta = w - phi with unit w
        let w = [0.0, 1.0];
        let to_w = AttributeVector {
            t1: 1,
            t2: 2,
            delta: vec![w[0] - phi[0], w[1] - phi[1]],
        };
        let out = interpolate(&phi, &to_w, 1.0).unwrap();
        assert!((out[0] - w[0]).abs() < 1e-12 && (out[1] - w[1]).abs() < 1e-12);

        for a in [-1.0, 0.0, 0.5, 1.0, 2.0] {
            let raw = interpolate_raw(&phi, &delta, a).unwrap();
            for i in 0..2 {
                assert_eq!(raw[i], phi[i] + a * delta.delta[i]);
            }
        }
        assert!(matches!(
            interpolate(&[1.0], &delta, 1.0),
            Err(InterpError::DimensionMismatch { .. })
        ));
        let cancel = AttributeVector {
            t1: 1,
            t2: 2,
            delta: vec![-0.6, -0.8],
        };
        assert!(matches!(interpolate(&phi, &cancel, 1.0), Err(InterpError::ZeroNorm)));
    }

    #[test]
    fn mean_table_bin_round_trip() {
        let d = ds(&[("a", 3, &[1.0, 0.0]), ("b", 3, &[0.0, 1.0]), ("c", 7, &[0.6, 0.8])]);
        let t = mean_features(&d, 1);
        let mut buf = Vec::new();
        t.write_bin(&mut buf).unwrap();
        let back = MeanFeatureTable::read_bin(buf.as_slice()).unwrap();
        assert_eq!(back.get(3).unwrap(), &CohortMean { mean: vec![0.5, 0.5], size: 2 });
        assert_eq!(back.get(7).unwrap().size, 1);
        assert_eq!(back.dim(), 2);

        let mut other = Vec::new();
        store::bin::write(&d, &mut other).unwrap();
        assert!(matches!(
            MeanFeatureTable::read_bin(other.as_slice()),
            Err(InterpError::NotAMeanTable(_))
        ));
    }
}
