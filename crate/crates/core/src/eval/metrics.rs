use std::cmp::Ordering;

use super::{EvalError, ScoreMatrix};

fn validate_far(far: f64) -> Result<(), EvalError> {
    if far > 0.0 && far < 1.0 {
        Ok(())
    } else {
        Err(EvalError::InvalidFar(far))
    }
}

/// Rank (1-based) of each probe's mate. Entries scoring strictly higher, or
/// equal but at a lower gallery index, rank ahead of the mate.
pub fn mate_ranks(sm: &ScoreMatrix) -> Result<Vec<usize>, EvalError> {
    (0..sm.rows())
        .map(|r| {
            let label = &sm.probe_labels[r];
            let mate = sm
                .gallery_labels
                .iter()
                .position(|g| g == label)
                .ok_or_else(|| EvalError::LabelNotInGallery(label.clone()))?;
            let row = sm.row(r);
            let s = row[mate];
            let ahead = row
                .iter()
                .enumerate()
                .filter(|&(j, &x)| x > s || (x == s && j < mate))
                .count();
            Ok(ahead + 1)
        })
        .collect()
}

/// Fraction of probes whose top-scoring gallery entry is their mate.
pub fn rank1_closed(sm: &ScoreMatrix) -> Result<f64, EvalError> {
    Ok(cmc(sm, 1)?[0].1)
}

/// Cumulative match characteristic for ranks `1..=max_rank` (capped at the gallery size).
pub fn cmc(sm: &ScoreMatrix, max_rank: usize) -> Result<Vec<(usize, f64)>, EvalError> {
    if sm.rows() == 0 {
        return Err(EvalError::Empty("probe"));
    }
    let ranks = mate_ranks(sm)?;
    let max_rank = max_rank.clamp(1, sm.cols().max(1));
    let mut hits = vec![0usize; max_rank + 1];
    for r in ranks {
        if r <= max_rank {
            hits[r] += 1;
        }
    }
    let n = sm.rows() as f64;
    let mut acc = 0;
    Ok((1..=max_rank)
        .map(|r| {
            acc += hits[r];
            (r, acc as f64 / n)
        })
        .collect())
}

/// The `(⌊far·N⌋ + 1)`-th largest impostor score.
///
/// Acceptance is `score > τ` everywhere, so at most `⌊far·N⌋` impostors pass.
pub fn far_threshold(impostor_scores: &[f64], far: f64) -> Result<f64, EvalError> {
    validate_far(far)?;
    if impostor_scores.is_empty() {
        return Err(EvalError::Empty("impostor"));
    }
    let n = impostor_scores.len();
    // relative nudge so products like 0.001 × 1000 land on the intended integer
    let allowed = ((far * n as f64) * (1.0 + 1e-12)).floor() as usize;
    let mut sorted = impostor_scores.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    Ok(sorted[allowed.min(n - 1)])
}

/// Fraction of genuine scores strictly above the threshold fixed at `far`.
pub fn tar_at_far(genuine: &[f64], impostor: &[f64], far: f64) -> Result<f64, EvalError> {
    if genuine.is_empty() {
        return Err(EvalError::Empty("genuine"));
    }
    let tau = far_threshold(impostor, far)?;
    Ok(genuine.iter().filter(|&&g| g > tau).count() as f64 / genuine.len() as f64)
}

fn top_match(row: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (j, &s) in row.iter().enumerate() {
        if s.total_cmp(&best.1) == Ordering::Greater {
            best = (j, s);
        }
    }
    best
}

/// Threshold from the best gallery score of every unmated probe.
pub fn open_set_threshold(unmated_sm: &ScoreMatrix, far: f64) -> Result<f64, EvalError> {
    if unmated_sm.rows() == 0 {
        return Err(EvalError::Empty("unmated probe"));
    }
    if unmated_sm.cols() == 0 {
        return Err(EvalError::Empty("gallery"));
    }
    let best: Vec<f64> = (0..unmated_sm.rows()).map(|r| top_match(unmated_sm.row(r)).1).collect();
    far_threshold(&best, far)
}

/// Fraction of mated probes that are both accepted (best score above the
/// open-set threshold) and whose best gallery match is their mate.
pub fn open_set_rank1(mated_sm: &ScoreMatrix, unmated_sm: &ScoreMatrix, far: f64) -> Result<f64, EvalError> {
    if mated_sm.gallery_labels != unmated_sm.gallery_labels {
        return Err(EvalError::GalleryMismatch);
    }
    if mated_sm.rows() == 0 {
        return Err(EvalError::Empty("mated probe"));
    }
    let tau = open_set_threshold(unmated_sm, far)?;
    let mut hits = 0;
    for r in 0..mated_sm.rows() {
        let (top, best) = top_match(mated_sm.row(r));
        if best > tau && mated_sm.gallery_labels[top] == mated_sm.probe_labels[r] {
            hits += 1;
        }
    }
    Ok(hits as f64 / mated_sm.rows() as f64)
}
