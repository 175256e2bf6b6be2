//! Command options. Every field is optional so flags and a TOML file can be
//! layered: a flag wins over the file, the file wins over the built-in default.
//! The fully resolved options are written next to each command's outputs and
//! can be fed back through `--config`.

use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use fage_core::model::{InitMode, LayerSpec, TrainConfig};
use fage_core::synth::SyntheticConfig;
use serde::{Deserialize, Serialize};

use crate::UsageError;

macro_rules! layer {
    ($dst:ident, $src:ident; $($field:ident),+ $(,)?) => {
        $( if $dst.$field.is_none() { $dst.$field = $src.$field; } )+
    };
}

/// Contents of a `--config` file: one optional table per subcommand.
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthOpts>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainOpts>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub age: Option<AgeOpts>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalOpts>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub interp: Option<InterpOpts>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| UsageError(format!("invalid config {}: {e}", path.display())).into())
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        let text = toml::to_string(self).context("serializing resolved config")?;
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }
}

fn parse_field<T: std::str::FromStr>(value: &str, what: &str) -> anyhow::Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| UsageError(format!("--{what}: {e}")).into())
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthOpts {
    /// Random seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output format: csv or bin
    #[arg(long)]
    pub format: Option<String>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Embedding dimension
    #[arg(long)]
    pub dim: Option<usize>,
    /// Number of subjects
    #[arg(long)]
    pub subjects: Option<usize>,
    /// Fewest distinct ages per subject
    #[arg(long)]
    pub min_ages: Option<usize>,
    /// Most distinct ages per subject
    #[arg(long)]
    pub max_ages: Option<usize>,
    /// Youngest age
    #[arg(long)]
    pub age_min: Option<u16>,
    /// Oldest age
    #[arg(long)]
    pub age_max: Option<u16>,
    /// Drift magnitude
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Per-coordinate noise standard deviation
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Index of the first subject (disjoint populations share the drift)
    #[arg(long)]
    pub first_subject: Option<usize>,
}

impl SynthOpts {
    pub fn resolve(mut self, file: Option<Self>) -> Self {
        if let Some(f) = file {
            layer!(self, f; seed, format, out, dim, subjects, min_ages, max_ages, age_min, age_max, gamma, sigma, first_subject);
        }
        let d = SyntheticConfig::default();
        let defaults = Self {
            seed: Some(d.seed),
            format: Some("csv".into()),
            out: Some(".".into()),
            dim: Some(d.dim),
            subjects: Some(d.n_subjects),
            min_ages: Some(d.ages_per_subject.0),
            max_ages: Some(d.ages_per_subject.1),
            age_min: Some(d.age_range.0),
            age_max: Some(d.age_range.1),
            gamma: Some(d.drift_magnitude),
            sigma: Some(d.noise_sigma),
            first_subject: Some(d.first_subject),
        };
        layer!(self, defaults; seed, format, out, dim, subjects, min_ages, max_ages, age_min, age_max, gamma, sigma, first_subject);
        self
    }

    pub fn synthetic_config(&self) -> SyntheticConfig {
        SyntheticConfig {
            dim: self.dim.unwrap(),
            n_subjects: self.subjects.unwrap(),
            ages_per_subject: (self.min_ages.unwrap(), self.max_ages.unwrap()),
            age_range: (self.age_min.unwrap(), self.age_max.unwrap()),
            drift_magnitude: self.gamma.unwrap(),
            noise_sigma: self.sigma.unwrap(),
            seed: self.seed.unwrap(),
            first_subject: self.first_subject.unwrap(),
        }
    }
}

/// Optimizer and architecture settings, shared by `train` and per-fold retraining in `eval`.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperOpts {
    /// Adam iterations
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Adam learning rate
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Mini-batch size once the pair count exceeds --full-batch-limit
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub full_batch_limit: Option<usize>,
    #[arg(long)]
    pub encoder_layers: Option<usize>,
    #[arg(long)]
    pub decoder_layers: Option<usize>,
    /// Latent width (defaults to the embedding dimension)
    #[arg(long)]
    pub latent_dim: Option<usize>,
    /// Initialization: identity or random
    #[arg(long)]
    pub init: Option<String>,
    /// Also train on pairs of records sharing an age
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub same_age: Option<bool>,
}

impl HyperOpts {
    pub fn resolve(mut self, file: Option<Self>) -> Self {
        if let Some(f) = file {
            layer!(self, f; iterations, lr, beta1, beta2, epsilon, batch_size, full_batch_limit,
                encoder_layers, decoder_layers, latent_dim, init, same_age);
        }
        let d = TrainConfig::default();
        let defaults = Self {
            iterations: Some(d.iterations),
            lr: Some(d.learning_rate),
            beta1: Some(d.beta1),
            beta2: Some(d.beta2),
            epsilon: Some(d.epsilon),
            batch_size: Some(d.batch_size),
            full_batch_limit: Some(d.full_batch_limit),
            encoder_layers: Some(d.layers.encoder_layers),
            decoder_layers: Some(d.layers.decoder_layers),
            latent_dim: None,
            init: Some("identity".into()),
            same_age: Some(d.include_same_age),
        };
        layer!(self, defaults; iterations, lr, beta1, beta2, epsilon, batch_size, full_batch_limit,
            encoder_layers, decoder_layers, init, same_age);
        self
    }

    pub fn train_config(&self, seed: u64) -> anyhow::Result<TrainConfig> {
        let init = match self.init.as_deref().unwrap() {
            "identity" => InitMode::Identity,
            "random" => InitMode::Random,
            other => return Err(UsageError(format!("--init: unknown mode {other:?} (identity or random)")).into()),
        };
        Ok(TrainConfig {
            iterations: self.iterations.unwrap(),
            learning_rate: self.lr.unwrap(),
            beta1: self.beta1.unwrap(),
            beta2: self.beta2.unwrap(),
            epsilon: self.epsilon.unwrap(),
            full_batch_limit: self.full_batch_limit.unwrap(),
            batch_size: self.batch_size.unwrap(),
            seed,
            include_same_age: self.same_age.unwrap(),
            layers: LayerSpec {
                latent_dim: self.latent_dim,
                encoder_layers: self.encoder_layers.unwrap(),
                decoder_layers: self.decoder_layers.unwrap(),
                init,
                ..LayerSpec::default()
            },
        })
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOpts {
    /// Training dataset (CSV or BIN, detected from content)
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Seed for initialization and mini-batch order
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(default)]
    pub hyper: HyperOpts,
}

impl TrainOpts {
    pub fn resolve(mut self, file: Option<Self>) -> Self {
        let file_hyper = file.as_ref().map(|f| f.hyper.clone());
        if let Some(f) = file {
            layer!(self, f; data, seed, out);
        }
        self.seed.get_or_insert(0);
        self.out.get_or_insert_with(|| ".".into());
        self.hyper = self.hyper.resolve(file_hyper);
        self
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgeOpts {
    /// Dataset to progress
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Trained model file
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Target age: absolute (`20`) or relative to each record (`+5`, `-3`)
    #[arg(long, allow_hyphen_values = true)]
    pub target: Option<String>,
    /// Output format: csv or bin
    #[arg(long)]
    pub format: Option<String>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl AgeOpts {
    pub fn resolve(mut self, file: Option<Self>) -> Self {
        if let Some(f) = file {
            layer!(self, f; data, model, target, format, out);
        }
        self.format.get_or_insert_with(|| "csv".into());
        self.out.get_or_insert_with(|| ".".into());
        self
    }
}

/// Target age for `fage age`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetAge {
    Absolute(u16),
    Relative(i32),
}

impl TargetAge {
    pub fn parse(s: &str) -> anyhow::Result<Self> {
        let s = s.trim();
        let bad = || UsageError(format!("--target: expected an age like 20, +5 or -3, got {s:?}"));
        if s.starts_with('+') || s.starts_with('-') {
            s.parse::<i32>().map(TargetAge::Relative).map_err(|_| bad().into())
        } else {
            s.parse::<u16>().map(TargetAge::Absolute).map_err(|_| bad().into())
        }
    }

    pub fn apply(self, age: u16) -> Option<u16> {
        let t = match self {
            TargetAge::Absolute(t) => i64::from(t),
            TargetAge::Relative(d) => i64::from(age) + i64::from(d),
        };
        (0..=i64::from(fage_core::store::MAX_AGE)).contains(&t).then_some(t as u16)
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalOpts {
    /// Dataset evaluated with the youngest-vs-oldest protocol
    #[arg(long, conflicts_with_all = ["gallery", "probes"])]
    pub dataset: Option<PathBuf>,
    /// Gallery file (one record per subject)
    #[arg(long, requires = "probes")]
    pub gallery: Option<PathBuf>,
    /// Probe file; probes of subjects absent from the gallery are unmated
    #[arg(long, requires = "gallery")]
    pub probes: Option<PathBuf>,
    /// Trained model file
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Subject-disjoint folds; each fold is tested with a model trained on the others
    #[arg(long)]
    pub folds: Option<usize>,
    /// Reuse --model for every fold instead of retraining
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub pretrained: Option<bool>,
    /// none, gallery-to-probe or probe-to-gallery
    #[arg(long)]
    pub direction: Option<String>,
    /// Extra unmated probes
    #[arg(long)]
    pub distractors: Option<PathBuf>,
    /// Also write the gallery-age by time-lapse rank-1 heatmap
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub heatmap: Option<bool>,
    /// Heatmap gallery-age bins, e.g. 0-4,5-9 (default: 5-year bins over the data)
    #[arg(long)]
    pub age_bins: Option<String>,
    /// Heatmap time-lapse bins (default: 5-year bins from 0)
    #[arg(long)]
    pub lapse_bins: Option<String>,
    /// Heatmap cells with fewer subjects are reported as NA
    #[arg(long)]
    pub min_cell: Option<usize>,
    /// Target false accept rate
    #[arg(long)]
    pub far: Option<f64>,
    /// Minimum youngest-to-oldest age gap for a subject to be used
    #[arg(long)]
    pub min_gap: Option<u16>,
    /// Write genuine and impostor scores
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub dump_scores: Option<bool>,
    /// Seed for fold assignment and retraining
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(default)]
    pub hyper: HyperOpts,
}

impl EvalOpts {
    pub fn resolve(mut self, file: Option<Self>) -> Self {
        let file_hyper = file.as_ref().map(|f| f.hyper.clone());
        if let Some(f) = file {
            layer!(self, f; dataset, gallery, probes, model, folds, pretrained, direction, distractors, heatmap,
                age_bins, lapse_bins, min_cell, far, min_gap, dump_scores, seed, out);
        }
        self.pretrained.get_or_insert(false);
        self.heatmap.get_or_insert(false);
        self.dump_scores.get_or_insert(false);
        self.min_cell.get_or_insert(fage_core::eval::DEFAULT_MIN_CELL);
        self.far.get_or_insert(0.001);
        self.min_gap.get_or_insert(0);
        self.seed.get_or_insert(0);
        self.out.get_or_insert_with(|| ".".into());
        self.hyper = self.hyper.resolve(file_hyper);
        self
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterpOpts {
    /// Dataset whose age-t1 records are moved
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Dataset for the cohort means (default: --data)
    #[arg(long)]
    pub means: Option<PathBuf>,
    #[arg(long)]
    pub t1: Option<u16>,
    #[arg(long)]
    pub t2: Option<u16>,
    /// Step along the attribute vector
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: Option<f64>,
    /// Smallest cohort used for a mean
    #[arg(long)]
    pub min_cohort: Option<usize>,
    /// Output format: csv or bin
    #[arg(long)]
    pub format: Option<String>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl InterpOpts {
    pub fn resolve(mut self, file: Option<Self>) -> Self {
        if let Some(f) = file {
            layer!(self, f; data, means, t1, t2, alpha, min_cohort, format, out);
        }
        self.alpha.get_or_insert(1.0);
        self.min_cohort.get_or_insert(1);
        self.format.get_or_insert_with(|| "csv".into());
        self.out.get_or_insert_with(|| ".".into());
        self
    }
}

pub fn required<'a, T>(v: &'a Option<T>, flag: &str) -> anyhow::Result<&'a T> {
    v.as_ref().ok_or_else(|| UsageError(format!("--{flag} is required")).into())
}

pub fn parse_format(v: &Option<String>) -> anyhow::Result<fage_core::Format> {
    parse_field(v.as_deref().unwrap_or("csv"), "format")
}

pub fn parse_direction(v: &str) -> anyhow::Result<fage_core::AgingDirection> {
    parse_field(v, "direction")
}
