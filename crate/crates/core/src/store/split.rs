use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{EmbeddingRecord, LongitudinalDataset, StoreError};

/// Records partitioned into an enrolled gallery and the probes searched against it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GalleryProbeSplit {
    /// One record per enrolled subject.
    pub gallery: Vec<EmbeddingRecord>,
    pub mated_probes: Vec<EmbeddingRecord>,
    /// Distractors: probes whose subject is not enrolled.
    pub unmated_probes: Vec<EmbeddingRecord>,
}

impl GalleryProbeSplit {
    /// Checks the structural invariants every split must satisfy.
    pub fn validate(&self) -> Result<(), StoreError> {
        let mut enrolled = HashSet::new();
        for g in &self.gallery {
            if !enrolled.insert(g.subject_id.as_str()) {
                return Err(StoreError::InvalidSplit(format!(
                    "subject {:?} enrolled more than once",
                    g.subject_id
                )));
            }
        }
        if let Some(p) = self.mated_probes.iter().find(|p| !enrolled.contains(p.subject_id.as_str())) {
            return Err(StoreError::InvalidSplit(format!(
                "mated probe subject {:?} not in gallery",
                p.subject_id
            )));
        }
        if let Some(p) = self.unmated_probes.iter().find(|p| enrolled.contains(p.subject_id.as_str())) {
            return Err(StoreError::InvalidSplit(format!(
                "unmated probe subject {:?} is enrolled",
                p.subject_id
            )));
        }
        Ok(())
    }

    /// Same as [`validate`](Self::validate), plus gallery age ≤ mated probe age.
    pub fn validate_youngest_oldest(&self) -> Result<(), StoreError> {
        self.validate()?;
        for p in &self.mated_probes {
            let g = self.gallery.iter().find(|g| g.subject_id == p.subject_id).unwrap();
            if g.age > p.age {
                return Err(StoreError::InvalidSplit(format!(
                    "subject {:?}: gallery age {} exceeds probe age {}",
                    p.subject_id, g.age, p.age
                )));
            }
        }
        Ok(())
    }
}

/// Partitions subjects into `k` disjoint folds of near-equal subject count.
///
/// Subject ids are sorted before the seeded shuffle, so the assignment does
/// not depend on record order.
pub fn split_folds(ds: &LongitudinalDataset, k: usize, seed: u64) -> Result<Vec<LongitudinalDataset>, StoreError> {
    if k < 2 {
        return Err(StoreError::InvalidFoldCount(k));
    }
    let mut subjects: Vec<&str> = ds.subjects().collect();
    if subjects.len() < k {
        return Err(StoreError::TooFewSubjects {
            subjects: subjects.len(),
            k,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    subjects.shuffle(&mut rng);

    let base = subjects.len() / k;
    let extra = subjects.len() % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let members: HashSet<&str> = subjects[start..start + size].iter().copied().collect();
        folds.push(ds.filter_subjects(|s| members.contains(s)));
        start += size;
    }
    Ok(folds)
}

/// Enrolls each subject's youngest record and probes with its oldest.
///
/// Subjects need at least two records and an age gap of at least `min_gap`
/// years. Equal ages resolve to the smaller `seq`; when every record shares
/// one age the probe is the next record by `seq`. Gallery order follows
/// subject id.
pub fn build_youngest_oldest(ds: &LongitudinalDataset, min_gap: u16) -> GalleryProbeSplit {
    let mut split = GalleryProbeSplit::default();
    for (_, recs) in ds.by_subject() {
        if recs.len() < 2 {
            continue;
        }
        let youngest = recs[0];
        let rest = &recs[1..];
        let max_age = rest.last().unwrap().age;
        let oldest = rest.iter().find(|r| r.age == max_age).unwrap();
        if oldest.age - youngest.age < min_gap {
            continue;
        }
        split.gallery.push(youngest.clone());
        split.mated_probes.push((*oldest).clone());
    }
    split
}

/// Extends the unmated probes with every record of `distractors`.
pub fn add_distractors(
    split: &GalleryProbeSplit,
    distractors: &LongitudinalDataset,
) -> Result<GalleryProbeSplit, StoreError> {
    let enrolled: HashSet<&str> = split.gallery.iter().map(|g| g.subject_id.as_str()).collect();
    if let Some(s) = distractors.subjects().find(|s| enrolled.contains(s)) {
        return Err(StoreError::DistractorCollision(s.to_string()));
    }
    let mut out = split.clone();
    out.unmated_probes.extend(distractors.records().iter().cloned());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset(subjects: &[(&str, &[u16])]) -> LongitudinalDataset {
        let mut recs = Vec::new();
        for (s, ages) in subjects {
            for (i, &a) in ages.iter().enumerate() {
                let v = vec![1.0 + i as f64, a as f64 + 1.0];
                recs.push(EmbeddingRecord::new(*s, a, 0, v));
            }
        }
        LongitudinalDataset::from_records(2, recs).unwrap()
    }

    fn subject_sets(folds: &[LongitudinalDataset]) -> Vec<HashSet<String>> {
        folds
            .iter()
            .map(|f| f.subjects().map(str::to_string).collect())
            .collect()
    }

    #[test]
    fn ten_subjects_five_folds_of_two() {
        let names: Vec<String> = (0..10).map(|i| format!("s{i}")).collect();
        let spec: Vec<(&str, &[u16])> = names.iter().map(|n| (n.as_str(), &[3u16, 9][..])).collect();
        let folds = split_folds(&dataset(&spec), 5, 42).unwrap();
        assert!(folds.iter().all(|f| f.subject_count() == 2));
    }

    #[test]
    fn eleven_subjects_disjoint_and_balanced() {
        let names: Vec<String> = (0..11).map(|i| format!("s{i:02}")).collect();
        let spec: Vec<(&str, &[u16])> = names.iter().map(|n| (n.as_str(), &[1u16][..])).collect();
        let ds = dataset(&spec);
        let folds = split_folds(&ds, 5, 7).unwrap();
        let mut sizes: Vec<usize> = folds.iter().map(|f| f.subject_count()).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![2, 2, 2, 2, 3]);

        let sets = subject_sets(&folds);
        for i in 0..sets.len() {
            for j in i + 1..sets.len() {
                assert!(sets[i].is_disjoint(&sets[j]), "folds {i} and {j} intersect");
            }
        }
        let union: HashSet<String> = sets.into_iter().flatten().collect();
        assert_eq!(union, ds.subjects().map(str::to_string).collect());
        assert_eq!(folds.iter().map(|f| f.len()).sum::<usize>(), ds.len());
    }

    #[test]
    fn folds_are_deterministic_and_order_independent() {
        let ds = dataset(&[("a", &[1, 2]), ("b", &[3]), ("c", &[4, 8]), ("d", &[5])]);
        let reversed = LongitudinalDataset::from_records(2, ds.records().iter().rev().cloned().collect()).unwrap();
        let one = subject_sets(&split_folds(&ds, 2, 3).unwrap());
        let two = subject_sets(&split_folds(&ds, 2, 3).unwrap());
        let three = subject_sets(&split_folds(&reversed, 2, 3).unwrap());
        assert_eq!(one, two);
        assert_eq!(one, three);
    }

    #[test]
    fn fold_errors() {
        let ds = dataset(&[("a", &[1]), ("b", &[1])]);
        assert!(matches!(split_folds(&ds, 1, 0), Err(StoreError::InvalidFoldCount(1))));
        assert!(matches!(
            split_folds(&ds, 3, 0),
            Err(StoreError::TooFewSubjects { subjects: 2, k: 3 })
        ));
    }

    #[test]
    fn youngest_vs_oldest_picks_extremes() {
        let ds = dataset(&[("kid", &[8, 5, 11, 6])]);
        let split = build_youngest_oldest(&ds, 0);
        assert_eq!(split.gallery[0].age, 5);
        assert_eq!(split.mated_probes[0].age, 11);
        assert!(split.unmated_probes.is_empty());
    }

    #[test]
    fn single_record_subjects_excluded() {
        let split = build_youngest_oldest(&dataset(&[("solo", &[4])]), 0);
        assert!(split.gallery.is_empty() && split.mated_probes.is_empty());
    }

    #[test]
    fn gap_filter() {
        let ds = dataset(&[("g1", &[5, 6]), ("g4", &[2, 6]), ("g9", &[3, 12])]);
        let split = build_youngest_oldest(&ds, 5);
        let ids: Vec<&str> = split.gallery.iter().map(|g| g.subject_id.as_str()).collect();
        assert_eq!(ids, vec!["g9"]);
        assert_eq!(split.mated_probes.len(), 1);
    }

    #[test]
    fn same_age_ties_use_seq() {
        let recs = vec![
            EmbeddingRecord::new("t", 4, 2, vec![1.0, 0.0]),
            EmbeddingRecord::new("t", 4, 1, vec![0.0, 1.0]),
            EmbeddingRecord::new("t", 9, 3, vec![1.0, 1.0]),
            EmbeddingRecord::new("t", 9, 0, vec![1.0, 2.0]),
        ];
        let split = build_youngest_oldest(&LongitudinalDataset::from_records(2, recs).unwrap(), 0);
        assert_eq!((split.gallery[0].age, split.gallery[0].seq), (4, 1));
        assert_eq!((split.mated_probes[0].age, split.mated_probes[0].seq), (9, 0));

        let recs = vec![
            EmbeddingRecord::new("t", 4, 2, vec![1.0, 0.0]),
            EmbeddingRecord::new("t", 4, 5, vec![0.0, 1.0]),
        ];
        let split = build_youngest_oldest(&LongitudinalDataset::from_records(2, recs).unwrap(), 0);
        assert_eq!(split.gallery[0].seq, 2);
        assert_eq!(split.mated_probes[0].seq, 5);
    }

    #[test]
    fn distractors() {
        let ds = dataset(&[("a", &[1, 9]), ("b", &[2, 8])]);
        let split = build_youngest_oldest(&ds, 0);

        let none = LongitudinalDataset::empty(2);
        assert_eq!(add_distractors(&split, &none).unwrap(), split);

        let names: Vec<String> = (0..100).map(|i| format!("x{i}")).collect();
        let spec: Vec<(&str, &[u16])> = names.iter().map(|n| (n.as_str(), &[20u16][..])).collect();
        let extended = add_distractors(&split, &dataset(&spec)).unwrap();
        assert_eq!(extended.unmated_probes.len(), split.unmated_probes.len() + 100);
        assert_eq!(extended.gallery, split.gallery);
        assert_eq!(extended.mated_probes, split.mated_probes);
        extended.validate().unwrap();

        let clash = dataset(&[("x1", &[3]), ("b", &[4])]);
        match add_distractors(&split, &clash).unwrap_err() {
            StoreError::DistractorCollision(id) => assert_eq!(id, "b"),
            e => panic!("unexpected {e}"),
        }
    }
}
