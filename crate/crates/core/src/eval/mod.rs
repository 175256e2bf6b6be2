//! Similarity scoring and identification metrics.

mod heatmap;
mod metrics;
mod report;

pub use heatmap::{heatmap, AgeBin, Heatmap, HeatmapCell, DEFAULT_MIN_CELL};
pub use metrics::{cmc, far_threshold, mate_ranks, open_set_rank1, open_set_threshold, rank1_closed, tar_at_far};
pub use report::{evaluate, evaluate_with_scores, summarize, EvalReport, FoldSummary, LapseBucket, MeanStd, VerificationScores};

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::model::{AffineMap, AgeProgressionModel, ModelError};
use crate::store::{EmbeddingRecord, StoreError};
use crate::vector;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("aging direction {0} requested without a model")]
    MissingModel(AgingDirection),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("probe subject {0:?} has no gallery mate")]
    LabelNotInGallery(String),
    #[error("no {0} scores")]
    Empty(&'static str),
    #[error("false accept rate {0} outside (0, 1)")]
    InvalidFar(f64),
    #[error("mated and unmated score matrices use different galleries")]
    GalleryMismatch,
    #[error("invalid bins: {0}")]
    InvalidBins(String),
    #[error("aged feature has zero norm")]
    ZeroOutput,
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Which side of a comparison is progressed to the other side's age.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AgingDirection {
    None,
    #[default]
    GalleryToProbe,
    ProbeToGallery,
}

impl FromStr for AgingDirection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Self::None),
            "gallery-to-probe" | "age_gallery_to_probe" => Ok(Self::GalleryToProbe),
            "probe-to-gallery" | "age_probe_to_gallery" => Ok(Self::ProbeToGallery),
            other => Err(format!(
                "unknown direction {other:?} (expected none, gallery-to-probe or probe-to-gallery)"
            )),
        }
    }
}

impl fmt::Display for AgingDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::GalleryToProbe => "gallery-to-probe",
            Self::ProbeToGallery => "probe-to-gallery",
        })
    }
}

/// Cosine similarity of two unit vectors.
pub fn score(a: &[f64], b: &[f64]) -> f64 {
    vector::dot(a, b)
}

/// Probe-by-gallery similarity scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    rows: usize,
    cols: usize,
    scores: Vec<f64>,
    pub probe_labels: Vec<String>,
    pub gallery_labels: Vec<String>,
}

impl ScoreMatrix {
    pub fn new(scores: Vec<Vec<f64>>, probe_labels: Vec<String>, gallery_labels: Vec<String>) -> Self {
        let rows = scores.len();
        let cols = gallery_labels.len();
        assert_eq!(rows, probe_labels.len(), "one label per probe row");
        assert!(scores.iter().all(|r| r.len() == cols), "one score per gallery entry");
        Self {
            rows,
            cols,
            scores: scores.into_iter().flatten().collect(),
            probe_labels,
            gallery_labels,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.scores[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.scores[r * self.cols + c]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.scores
    }
}

fn check_dims(records: &[EmbeddingRecord], dim: usize) -> Result<(), EvalError> {
    match records.iter().find(|r| r.vector.len() != dim) {
        Some(r) => Err(EvalError::DimensionMismatch {
            expected: dim,
            found: r.vector.len(),
        }),
        None => Ok(()),
    }
}

/// Scores every probe against every gallery entry, optionally aging one side.
///
/// With [`AgingDirection::GalleryToProbe`] each gallery feature is progressed
/// from its own age to the probe's age before comparison (so the gallery is
/// transformed once per probe); [`AgingDirection::ProbeToGallery`] is the
/// mirror image. Without a model only `None` is accepted.
pub fn score_matrix(
    probes: &[EmbeddingRecord],
    gallery: &[EmbeddingRecord],
    model: Option<&AgeProgressionModel>,
    dir: AgingDirection,
) -> Result<ScoreMatrix, EvalError> {
    let dim = model
        .map(AgeProgressionModel::dim)
        .or_else(|| gallery.first().map(|g| g.vector.len()))
        .or_else(|| probes.first().map(|p| p.vector.len()))
        .unwrap_or(0);
    check_dims(probes, dim)?;
    check_dims(gallery, dim)?;

    let affine = match (dir, model) {
        (AgingDirection::None, _) => None,
        (d, None) => return Err(EvalError::MissingModel(d)),
        (_, Some(m)) => Some(m.compose()),
    };

    let rows: Vec<Vec<f64>> = match (dir, &affine) {
        (AgingDirection::GalleryToProbe, Some(map)) => {
            let base: Vec<Vec<f64>> = gallery.iter().map(|g| map.feature_part(&g.vector)).collect();
            probes
                .par_iter()
                .map(|p| {
                    gallery
                        .iter()
                        .zip(&base)
                        .map(|(g, b)| aged_score(map, b, g.age, p.age, &p.vector))
                        .collect()
                })
                .collect::<Result<_, _>>()?
        }
        (AgingDirection::ProbeToGallery, Some(map)) => probes
            .par_iter()
            .map(|p| {
                let base = map.feature_part(&p.vector);
                gallery
                    .iter()
                    .map(|g| aged_score(map, &base, p.age, g.age, &g.vector))
                    .collect()
            })
            .collect::<Result<_, _>>()?,
        _ => probes
            .par_iter()
            .map(|p| gallery.iter().map(|g| score(&p.vector, &g.vector)).collect())
            .collect(),
    };

    Ok(ScoreMatrix::new(
        rows,
        probes.iter().map(|p| p.subject_id.clone()).collect(),
        gallery.iter().map(|g| g.subject_id.clone()).collect(),
    ))
}

fn aged_score(map: &AffineMap, base: &[f64], from: u16, to: u16, other: &[f64]) -> Result<f64, EvalError> {
    let mut aged = base.to_vec();
    map.add_age_part(&mut aged, from, to);
    if !vector::normalize_in_place(&mut aged) {
        return Err(EvalError::ZeroOutput);
    }
    Ok(score(&aged, other))
}
