use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::metrics::{cmc, far_threshold, mate_ranks, open_set_rank1, open_set_threshold};
use super::{score_matrix, AgingDirection, EvalError};
use crate::model::AgeProgressionModel;
use crate::store::{EmbeddingRecord, GalleryProbeSplit};

/// Rank-1 for the mated probes at one time lapse (in years).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LapseBucket {
    pub count: usize,
    pub rank1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub tar_at_far: f64,
    pub rank1_closed: f64,
    /// Absent when the split has no unmated probes.
    pub rank1_open_at_far: Option<f64>,
    pub cmc: Vec<(usize, f64)>,
    pub far_target: f64,
    /// Verification threshold fixed on impostor scores.
    pub threshold: f64,
    pub open_set_threshold: Option<f64>,
    pub per_lapse: BTreeMap<i32, LapseBucket>,
    pub gallery_size: usize,
    pub mated_probes: usize,
    pub unmated_probes: usize,
    pub direction: AgingDirection,
}

/// Genuine and impostor scores behind the verification numbers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerificationScores {
    pub genuine: Vec<f64>,
    pub impostor: Vec<f64>,
}

pub fn evaluate(
    split: &GalleryProbeSplit,
    model: Option<&AgeProgressionModel>,
    far: f64,
    dir: AgingDirection,
) -> Result<EvalReport, EvalError> {
    evaluate_with_scores(split, model, far, dir).map(|(r, _)| r)
}

pub fn evaluate_with_scores(
    split: &GalleryProbeSplit,
    model: Option<&AgeProgressionModel>,
    far: f64,
    dir: AgingDirection,
) -> Result<(EvalReport, VerificationScores), EvalError> {
    split.validate()?;
    // stable id sort makes every metric independent of the input gallery order
    let mut gallery: Vec<&EmbeddingRecord> = split.gallery.iter().collect();
    gallery.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
    let gallery: Vec<EmbeddingRecord> = gallery.into_iter().cloned().collect();

    let mated = score_matrix(&split.mated_probes, &gallery, model, dir)?;
    let ranks = mate_ranks(&mated)?;

    let mut scores = VerificationScores::default();
    let mut lapse: BTreeMap<i32, (usize, usize)> = BTreeMap::new();
    for (r, probe) in split.mated_probes.iter().enumerate() {
        let row = mated.row(r);
        for (c, g) in gallery.iter().enumerate() {
            if g.subject_id == probe.subject_id {
                scores.genuine.push(row[c]);
                let bucket = lapse.entry(probe.age as i32 - g.age as i32).or_default();
                bucket.0 += 1;
                if ranks[r] == 1 {
                    bucket.1 += 1;
                }
            } else {
                scores.impostor.push(row[c]);
            }
        }
    }
    if scores.genuine.is_empty() {
        return Err(EvalError::Empty("genuine"));
    }
    let threshold = far_threshold(&scores.impostor, far)?;
    let tar_at_far = scores.genuine.iter().filter(|&&s| s > threshold).count() as f64 / scores.genuine.len() as f64;
    let curve = cmc(&mated, gallery.len())?;

    let (rank1_open_at_far, open_threshold) = if split.unmated_probes.is_empty() {
        (None, None)
    } else {
        let unmated = score_matrix(&split.unmated_probes, &gallery, model, dir)?;
        (
            Some(open_set_rank1(&mated, &unmated, far)?),
            Some(open_set_threshold(&unmated, far)?),
        )
    };

    let report = EvalReport {
        tar_at_far,
        rank1_closed: curve[0].1,
        rank1_open_at_far,
        cmc: curve,
        far_target: far,
        threshold,
        open_set_threshold: open_threshold,
        per_lapse: lapse
            .into_iter()
            .map(|(k, (n, hit))| {
                (
                    k,
                    LapseBucket {
                        count: n,
                        rank1: hit as f64 / n as f64,
                    },
                )
            })
            .collect(),
        gallery_size: gallery.len(),
        mated_probes: split.mated_probes.len(),
        unmated_probes: split.unmated_probes.len(),
        direction: dir,
    };
    Ok((report, scores))
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

impl EvalReport {
    pub fn cmc_at(&self, rank: usize) -> Option<f64> {
        self.cmc.get(rank.checked_sub(1)?).map(|&(_, r)| r)
    }

    /// Human-readable summary.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let far = 100.0 * self.far_target;
        let _ = writeln!(
            s,
            "gallery {} | mated probes {} | unmated probes {} | aging {}",
            self.gallery_size, self.mated_probes, self.unmated_probes, self.direction
        );
        let _ = writeln!(s, "TAR @ {far}% FAR           {:>7}%  (threshold {:.6})", pct(self.tar_at_far), self.threshold);
        let _ = writeln!(s, "closed-set rank-1         {:>7}%", pct(self.rank1_closed));
        match self.rank1_open_at_far {
            Some(r) => {
                let _ = writeln!(s, "open-set rank-1 @ {far}% FAR {:>7}%", pct(r));
            }
            None => {
                let _ = writeln!(s, "open-set rank-1 @ {far}% FAR       n/a (no unmated probes)");
            }
        }
        let ranks: Vec<String> = [1, 5, 10, 20]
            .into_iter()
            .filter_map(|r| self.cmc_at(r).map(|v| format!("r{r} {}%", pct(v))))
            .collect();
        let _ = writeln!(s, "CMC                       {}", ranks.join(", "));
        if !self.per_lapse.is_empty() {
            let _ = writeln!(s, "rank-1 by time lapse (years):");
            for (lapse, b) in &self.per_lapse {
                let _ = writeln!(s, "  {lapse:>3}  {:>7}%  (n={})", pct(b.rank1), b.count);
            }
        }
        s
    }

    /// `metric=value` lines followed by CSV blocks for the CMC and time-lapse curves.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "direction={}", self.direction);
        let _ = writeln!(s, "gallery_size={}", self.gallery_size);
        let _ = writeln!(s, "mated_probes={}", self.mated_probes);
        let _ = writeln!(s, "unmated_probes={}", self.unmated_probes);
        let _ = writeln!(s, "far_target={}", self.far_target);
        let _ = writeln!(s, "threshold={}", self.threshold);
        let _ = writeln!(s, "tar_at_far={}", self.tar_at_far);
        let _ = writeln!(s, "rank1_closed={}", self.rank1_closed);
        match (self.rank1_open_at_far, self.open_set_threshold) {
            (Some(r), Some(t)) => {
                let _ = writeln!(s, "rank1_open_at_far={r}");
                let _ = writeln!(s, "open_set_threshold={t}");
            }
            _ => {
                let _ = writeln!(s, "rank1_open_at_far=NA");
                let _ = writeln!(s, "open_set_threshold=NA");
            }
        }
        let _ = writeln!(s, "\n[cmc]\nrank,rate");
        for (r, v) in &self.cmc {
            let _ = writeln!(s, "{r},{v}");
        }
        let _ = writeln!(s, "\n[per_lapse]\nlapse,count,rank1");
        for (l, b) in &self.per_lapse {
            let _ = writeln!(s, "{l},{},{}", b.count, b.rank1);
        }
        s
    }
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() < 2 {
            0.0
        } else {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Some(Self { mean, std })
    }

    /// Percentages, e.g. `94.46 ± 0.95`.
    pub fn as_percent(&self) -> String {
        format!("{} ± {}", pct(self.mean), pct(self.std))
    }
}

/// Cross-fold aggregate of several reports.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldSummary {
    pub folds: usize,
    pub tar_at_far: MeanStd,
    pub rank1_closed: MeanStd,
    pub rank1_open_at_far: Option<MeanStd>,
    pub far_target: f64,
}

pub fn summarize(reports: &[EvalReport]) -> Option<FoldSummary> {
    let first = reports.first()?;
    let tar: Vec<f64> = reports.iter().map(|r| r.tar_at_far).collect();
    let closed: Vec<f64> = reports.iter().map(|r| r.rank1_closed).collect();
    let open: Option<Vec<f64>> = reports.iter().map(|r| r.rank1_open_at_far).collect();
    Some(FoldSummary {
        folds: reports.len(),
        tar_at_far: MeanStd::of(&tar)?,
        rank1_closed: MeanStd::of(&closed)?,
        rank1_open_at_far: open.as_deref().and_then(MeanStd::of),
        far_target: first.far_target,
    })
}

impl FoldSummary {
    /// One table row: verification, closed-set and open-set columns.
    pub fn table_row(&self, label: &str) -> String {
        let open = self
            .rank1_open_at_far
            .map(|m| m.as_percent())
            .unwrap_or_else(|| "n/a".into());
        format!(
            "{label} | {} | {} | {}",
            self.tar_at_far.as_percent(),
            self.rank1_closed.as_percent(),
            open
        )
    }

    pub fn table_header(&self) -> String {
        let far = 100.0 * self.far_target;
        format!("method | TAR @ {far}% FAR | closed-set rank-1 | open-set rank-1 @ {far}% FAR")
    }

    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "folds={}", self.folds);
        let _ = writeln!(s, "tar_at_far_mean={}", self.tar_at_far.mean);
        let _ = writeln!(s, "tar_at_far_std={}", self.tar_at_far.std);
        let _ = writeln!(s, "rank1_closed_mean={}", self.rank1_closed.mean);
        let _ = writeln!(s, "rank1_closed_std={}", self.rank1_closed.std);
        if let Some(o) = self.rank1_open_at_far {
            let _ = writeln!(s, "rank1_open_at_far_mean={}", o.mean);
            let _ = writeln!(s, "rank1_open_at_far_std={}", o.std);
        }
        s
    }
}
