use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use super::metrics::mate_ranks;
use super::{score_matrix, AgingDirection, EvalError};
use crate::model::AgeProgressionModel;
use crate::store::{EmbeddingRecord, LongitudinalDataset};

/// Cells with fewer subjects than this are reported as absent.
pub const DEFAULT_MIN_CELL: usize = 5;

/// Inclusive integer interval of years.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AgeBin {
    pub lo: u16,
    pub hi: u16,
}

impl AgeBin {
    pub fn new(lo: u16, hi: u16) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, x: u16) -> bool {
        self.lo <= x && x <= self.hi
    }

    /// Parses a comma-separated list such as `0-4,5-9,10`.
    pub fn parse_list(s: &str) -> Result<Vec<AgeBin>, EvalError> {
        s.split(',').map(|b| b.trim().parse()).collect()
    }

    /// Consecutive bins of `width` years covering `lo..=hi`.
    pub fn uniform(lo: u16, hi: u16, width: u16) -> Vec<AgeBin> {
        let width = width.max(1);
        let mut out = Vec::new();
        let mut a = lo;
        while a <= hi {
            let b = a.saturating_add(width - 1).min(hi);
            out.push(AgeBin::new(a, b));
            if b == u16::MAX {
                break;
            }
            a = b + 1;
        }
        out
    }
}

impl FromStr for AgeBin {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || EvalError::InvalidBins(format!("cannot parse bin {s:?}"));
        let (lo, hi) = match s.split_once('-') {
            Some((a, b)) => (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?),
            None => {
                let x = s.trim().parse().map_err(|_| bad())?;
                (x, x)
            }
        };
        Ok(AgeBin { lo, hi })
    }
}

impl fmt::Display for AgeBin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.lo == self.hi {
            write!(f, "{}", self.lo)
        } else {
            write!(f, "{}-{}", self.lo, self.hi)
        }
    }
}

fn validate_bins(bins: &[AgeBin], what: &str) -> Result<(), EvalError> {
    if bins.is_empty() {
        return Err(EvalError::InvalidBins(format!("no {what} bins")));
    }
    if let Some(b) = bins.iter().find(|b| b.lo > b.hi) {
        return Err(EvalError::InvalidBins(format!("{what} bin {}-{} is reversed", b.lo, b.hi)));
    }
    for (i, a) in bins.iter().enumerate() {
        for b in &bins[i + 1..] {
            if a.lo <= b.hi && b.lo <= a.hi {
                return Err(EvalError::InvalidBins(format!("{what} bins {a} and {b} overlap")));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeatmapCell {
    pub subjects: usize,
    pub rank1: f64,
}

/// Rank-1 by gallery age (rows) and time lapse to the probe (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub age_bins: Vec<AgeBin>,
    pub lapse_bins: Vec<AgeBin>,
    /// `cells[age][lapse]`; `None` below the minimum subject count.
    pub cells: Vec<Vec<Option<HeatmapCell>>>,
}

impl Heatmap {
    pub fn get(&self, age: usize, lapse: usize) -> Option<HeatmapCell> {
        self.cells[age][lapse]
    }

    /// CSV block: one row per populated or absent cell (`NA` when absent).
    pub fn to_csv(&self) -> String {
        let mut s = String::from("gallery_age,lapse,subjects,rank1\n");
        for (a, row) in self.age_bins.iter().zip(&self.cells) {
            for (l, cell) in self.lapse_bins.iter().zip(row) {
                match cell {
                    Some(c) => {
                        let _ = writeln!(s, "{a},{l},{},{}", c.subjects, c.rank1);
                    }
                    None => {
                        let _ = writeln!(s, "{a},{l},NA,NA");
                    }
                }
            }
        }
        s
    }
}

/// For every subject with at least two records the youngest is enrolled. In
/// each lapse bin the subject contributes its oldest record falling in that
/// bin as a probe, scored against the whole gallery.
pub fn heatmap(
    ds: &LongitudinalDataset,
    model: Option<&AgeProgressionModel>,
    dir: AgingDirection,
    age_bins: &[AgeBin],
    lapse_bins: &[AgeBin],
    min_cell: usize,
) -> Result<Heatmap, EvalError> {
    validate_bins(age_bins, "age")?;
    validate_bins(lapse_bins, "lapse")?;

    let mut gallery: Vec<EmbeddingRecord> = Vec::new();
    let mut probes: Vec<EmbeddingRecord> = Vec::new();
    let mut cell_of: Vec<(usize, usize)> = Vec::new();
    for (_, recs) in ds.by_subject() {
        if recs.len() < 2 {
            continue;
        }
        let youngest = recs[0];
        gallery.push(youngest.clone());
        let Some(row) = age_bins.iter().position(|b| b.contains(youngest.age)) else {
            continue;
        };
        let mut chosen: Vec<Option<&EmbeddingRecord>> = vec![None; lapse_bins.len()];
        for r in &recs[1..] {
            let lapse = r.age - youngest.age;
            if let Some(col) = lapse_bins.iter().position(|b| b.contains(lapse)) {
                // records come sorted by (age, seq): keep the first at the greatest age
                if chosen[col].is_none_or(|c| r.age > c.age) {
                    chosen[col] = Some(r);
                }
            }
        }
        for (col, r) in chosen.into_iter().enumerate() {
            if let Some(r) = r {
                probes.push(r.clone());
                cell_of.push((row, col));
            }
        }
    }

    let mut counts = vec![vec![(0usize, 0usize); lapse_bins.len()]; age_bins.len()];
    if !probes.is_empty() {
        let sm = score_matrix(&probes, &gallery, model, dir)?;
        for ((row, col), rank) in cell_of.into_iter().zip(mate_ranks(&sm)?) {
            counts[row][col].0 += 1;
            if rank == 1 {
                counts[row][col].1 += 1;
            }
        }
    }
    let min_cell = min_cell.max(1);
    let cells = counts
        .into_iter()
        .map(|row| {
            row.into_iter()
                .map(|(n, hit)| {
                    (n >= min_cell).then(|| HeatmapCell {
                        subjects: n,
                        rank1: hit as f64 / n as f64,
                    })
                })
                .collect()
        })
        .collect();
    Ok(Heatmap {
        age_bins: age_bins.to_vec(),
        lapse_bins: lapse_bins.to_vec(),
        cells,
    })
}
