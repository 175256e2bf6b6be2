use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use fage_core::eval::{evaluate_with_scores, heatmap, summarize, AgeBin, EvalReport, VerificationScores};
use fage_core::interp::{attribute_vector, interpolate, mean_features};
use fage_core::model::{read_model_file, train as train_model, write_model_file, ModelError};
use fage_core::store::{
    add_distractors, build_youngest_oldest, read_dataset_file, split_folds, write_dataset_file, EmbeddingRecord,
    GalleryProbeSplit, LongitudinalDataset, StoreError,
};
use fage_core::synth::{generate, SynthError};
use fage_core::{AgeProgressionModel, AgingDirection, Format};
use log::{info, warn};
use rayon::prelude::*;

use crate::config::{
    parse_direction, parse_format, required, AgeOpts, ConfigFile, EvalOpts, InterpOpts, SynthOpts, TargetAge, TrainOpts,
};
use crate::UsageError;

fn load_dataset(path: &Path) -> anyhow::Result<LongitudinalDataset> {
    let ds = read_dataset_file(path).with_context(|| format!("reading {}", path.display()))?;
    info!("{}: {} records, {} subjects, d={}", path.display(), ds.len(), ds.subject_count(), ds.dim());
    Ok(ds)
}

fn load_model(path: &Path) -> anyhow::Result<AgeProgressionModel> {
    read_model_file(path).with_context(|| format!("reading model {}", path.display()))
}

fn out_dir(out: &Option<PathBuf>) -> anyhow::Result<PathBuf> {
    let dir = out.clone().unwrap_or_else(|| ".".into());
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn dataset_name(stem: &str, format: Format) -> String {
    format!("{stem}.{format}")
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn synth(o: SynthOpts) -> anyhow::Result<()> {
    let format = parse_format(&o.format)?;
    let cfg = o.synthetic_config();
    let (ds, truth) = generate(&cfg).map_err(|e| match e {
        SynthError::InvalidConfig(_) | SynthError::TooManyAges { .. } => anyhow::Error::new(UsageError(e.to_string())),
        other => other.into(),
    })?;
    let dir = out_dir(&o.out)?;
    let data_path = dir.join(dataset_name("dataset", format));
    write_dataset_file(&ds, &data_path, format).with_context(|| format!("writing {}", data_path.display()))?;
    let truth_path = dir.join("ground_truth.bin");
    let mut buf = Vec::new();
    truth.write_bin(&mut buf)?;
    fs::write(&truth_path, buf).with_context(|| format!("writing {}", truth_path.display()))?;
    ConfigFile {
        synth: Some(o),
        ..ConfigFile::default()
    }
    .write(&dir.join("synth.toml"))?;
    println!(
        "wrote {} ({} records, {} subjects) and {}",
        data_path.display(),
        ds.len(),
        ds.subject_count(),
        truth_path.display()
    );
    Ok(())
}

fn train_error(e: ModelError) -> anyhow::Error {
    match e {
        ModelError::InvalidLayerSpec(_) => UsageError(e.to_string()).into(),
        other => other.into(),
    }
}

pub fn train(o: TrainOpts) -> anyhow::Result<()> {
    let data = required(&o.data, "data")?;
    let cfg = o.hyper.train_config(o.seed.unwrap_or(0))?;
    let ds = load_dataset(data)?;
    let out = train_model(&ds, &cfg).map_err(train_error)?;
    info!("trained on {} pairs", out.pair_count);

    let dir = out_dir(&o.out)?;
    let model_path = dir.join("model.fagm");
    write_model_file(&out.model, &model_path).with_context(|| format!("writing {}", model_path.display()))?;
    let mut curve = String::from("iteration,loss\n");
    for (i, l) in out.loss_history.iter().enumerate() {
        let _ = writeln!(curve, "{i},{l}");
    }
    write_text(&dir.join("loss.csv"), &curve)?;
    ConfigFile {
        train: Some(o),
        ..ConfigFile::default()
    }
    .write(&dir.join("train.toml"))?;
    println!(
        "pairs={} initial_loss={} final_loss={}",
        out.pair_count,
        out.loss_history[0],
        out.final_loss()
    );
    println!("wrote {}", model_path.display());
    Ok(())
}

pub fn age(o: AgeOpts) -> anyhow::Result<()> {
    let format = parse_format(&o.format)?;
    let target = TargetAge::parse(required(&o.target, "target")?)?;
    let ds = load_dataset(required(&o.data, "data")?)?;
    let model = load_model(required(&o.model, "model")?)?;
    if model.dim() != ds.dim() {
        bail!("model dimension {} does not match data dimension {}", model.dim(), ds.dim());
    }
    let mut next_seq: HashMap<(String, u16), u16> = HashMap::new();
    let mut out = Vec::with_capacity(ds.len());
    for r in ds.records() {
        let Some(t2) = target.apply(r.age) else {
            bail!("{} at age {}: target age outside 0..={}", r.subject_id, r.age, fage_core::store::MAX_AGE);
        };
        let v = model.forward_unit(&r.vector, r.age, t2)?;
        // several sources may land on one (subject, age); number them in input order
        let seq = next_seq.entry((r.subject_id.clone(), t2)).or_insert(0);
        out.push(EmbeddingRecord::new(r.subject_id.clone(), t2, *seq, v));
        *seq = seq.checked_add(1).context("more than 65536 records map to one subject and age")?;
    }
    let aged = LongitudinalDataset::from_records(ds.dim(), out)?;
    let dir = out_dir(&o.out)?;
    let path = dir.join(dataset_name("aged", format));
    write_dataset_file(&aged, &path, format).with_context(|| format!("writing {}", path.display()))?;
    ConfigFile {
        age: Some(o),
        ..ConfigFile::default()
    }
    .write(&dir.join("age.toml"))?;
    println!("wrote {} ({} records)", path.display(), aged.len());
    Ok(())
}

pub fn interp(o: InterpOpts) -> anyhow::Result<()> {
    let format = parse_format(&o.format)?;
    let t1 = *required(&o.t1, "t1")?;
    let t2 = *required(&o.t2, "t2")?;
    let alpha = o.alpha.unwrap_or(1.0);
    let ds = load_dataset(required(&o.data, "data")?)?;
    let means_ds = match &o.means {
        Some(p) => load_dataset(p)?,
        None => ds.clone(),
    };
    if means_ds.dim() != ds.dim() {
        bail!("means dataset dimension {} does not match data dimension {}", means_ds.dim(), ds.dim());
    }
    let table = mean_features(&means_ds, o.min_cohort.unwrap_or(1));
    let delta = attribute_vector(&table, t1, t2)?;
    let moved = ds
        .cohort(t1)
        .into_iter()
        .map(|r| Ok(EmbeddingRecord::new(r.subject_id.clone(), t2, r.seq, interpolate(&r.vector, &delta, alpha)?)))
        .collect::<anyhow::Result<Vec<_>>>()?;
    if moved.is_empty() {
        warn!("no records at age {t1}");
    }
    let out = LongitudinalDataset::from_records(ds.dim(), moved)?;
    let dir = out_dir(&o.out)?;
    let path = dir.join(dataset_name("interp", format));
    write_dataset_file(&out, &path, format).with_context(|| format!("writing {}", path.display()))?;
    ConfigFile {
        interp: Some(o),
        ..ConfigFile::default()
    }
    .write(&dir.join("interp.toml"))?;
    println!("wrote {} ({} records moved from age {t1} to {t2})", path.display(), out.len());
    Ok(())
}

/// Everything produced for one gallery/probe split.
struct SplitResult {
    report: EvalReport,
    scores: VerificationScores,
    heatmaps: Vec<(String, String)>,
}

struct HeatmapSpec {
    age_bins: Option<Vec<AgeBin>>,
    lapse_bins: Option<Vec<AgeBin>>,
    min_cell: usize,
}

impl HeatmapSpec {
    fn bins(&self, ds: &LongitudinalDataset) -> (Vec<AgeBin>, Vec<AgeBin>) {
        let lo = ds.ages().min().unwrap_or(0);
        let hi = ds.ages().max().unwrap_or(0);
        let ages = self.age_bins.clone().unwrap_or_else(|| AgeBin::uniform(lo, hi, 5));
        let lapses = self.lapse_bins.clone().unwrap_or_else(|| AgeBin::uniform(0, hi - lo, 5));
        (ages, lapses)
    }

    fn render(
        &self,
        ds: &LongitudinalDataset,
        model: Option<&AgeProgressionModel>,
        dir: AgingDirection,
    ) -> anyhow::Result<Vec<(String, String)>> {
        let (ages, lapses) = self.bins(ds);
        let mut out = vec![(
            "heatmap".to_string(),
            heatmap(ds, model, dir, &ages, &lapses, self.min_cell)?.to_csv(),
        )];
        if dir != AgingDirection::None {
            let base = heatmap(ds, None, AgingDirection::None, &ages, &lapses, self.min_cell)?;
            out.push(("heatmap_baseline".to_string(), base.to_csv()));
        }
        Ok(out)
    }
}

fn run_split(
    split: &GalleryProbeSplit,
    model: Option<&AgeProgressionModel>,
    far: f64,
    dir: AgingDirection,
    heat: Option<(&HeatmapSpec, &LongitudinalDataset)>,
) -> anyhow::Result<SplitResult> {
    let (report, scores) = evaluate_with_scores(split, model, far, dir)?;
    let heatmaps = match heat {
        Some((spec, ds)) => spec.render(ds, model, dir)?,
        None => Vec::new(),
    };
    Ok(SplitResult {
        report,
        scores,
        heatmaps,
    })
}

fn write_split(dir: &Path, prefix: &str, r: &SplitResult, dump_scores: bool) -> anyhow::Result<()> {
    write_text(&dir.join(format!("{prefix}.txt")), &r.report.to_text())?;
    write_text(&dir.join(format!("{prefix}.kv")), &r.report.to_key_values())?;
    for (name, csv) in &r.heatmaps {
        write_text(&dir.join(format!("{}{name}.csv", fold_prefix(prefix))), csv)?;
    }
    if dump_scores {
        for (name, scores) in [("genuine", &r.scores.genuine), ("impostor", &r.scores.impostor)] {
            let mut text = String::new();
            for s in scores.iter() {
                let _ = writeln!(text, "{s}");
            }
            write_text(&dir.join(format!("{}{name}.csv", fold_prefix(prefix))), &text)?;
        }
    }
    Ok(())
}

// "report" -> "", "fold2" -> "fold2_"
fn fold_prefix(prefix: &str) -> String {
    if prefix == "report" {
        String::new()
    } else {
        format!("{prefix}_")
    }
}

fn eval_split(o: &EvalOpts) -> anyhow::Result<(GalleryProbeSplit, Option<LongitudinalDataset>)> {
    let min_gap = o.min_gap.unwrap_or(0);
    let (split, ds) = if let Some(p) = &o.dataset {
        let ds = load_dataset(p)?;
        (build_youngest_oldest(&ds, min_gap), Some(ds))
    } else if let (Some(g), Some(p)) = (&o.gallery, &o.probes) {
        let gallery = load_dataset(g)?;
        let probes = load_dataset(p)?;
        if gallery.dim() != probes.dim() {
            bail!("gallery dimension {} does not match probe dimension {}", gallery.dim(), probes.dim());
        }
        let enrolled: std::collections::HashSet<&str> = gallery.subjects().collect();
        let (mated, unmated): (Vec<EmbeddingRecord>, Vec<EmbeddingRecord>) =
            probes.records().iter().cloned().partition(|r| enrolled.contains(r.subject_id.as_str()));
        let split = GalleryProbeSplit {
            gallery: gallery.records().to_vec(),
            mated_probes: mated,
            unmated_probes: unmated,
        };
        split.validate()?;
        (split, None)
    } else {
        return Err(UsageError("give --dataset, or --gallery with --probes".into()).into());
    };
    Ok((with_distractors(split, o)?, ds))
}

fn with_distractors(split: GalleryProbeSplit, o: &EvalOpts) -> anyhow::Result<GalleryProbeSplit> {
    match &o.distractors {
        Some(p) => {
            let d = load_dataset(p)?;
            Ok(add_distractors(&split, &d)?)
        }
        None => Ok(split),
    }
}

fn parse_bins(v: &Option<String>, flag: &str) -> anyhow::Result<Option<Vec<AgeBin>>> {
    v.as_deref()
        .map(|s| AgeBin::parse_list(s).map_err(|e| UsageError(format!("--{flag}: {e}")).into()))
        .transpose()
}

pub fn eval(mut o: EvalOpts) -> anyhow::Result<()> {
    let far = o.far.unwrap_or(0.001);
    if !(far > 0.0 && far < 1.0) {
        return Err(UsageError(format!("--far must lie in (0, 1), got {far}")).into());
    }
    let dir = match &o.direction {
        Some(s) => parse_direction(s)?,
        None if o.model.is_some() => AgingDirection::GalleryToProbe,
        None => AgingDirection::None,
    };
    o.direction = Some(dir.to_string());
    let want_heatmap = o.heatmap.unwrap_or(false);
    let heat = HeatmapSpec {
        age_bins: parse_bins(&o.age_bins, "age-bins")?,
        lapse_bins: parse_bins(&o.lapse_bins, "lapse-bins")?,
        min_cell: o.min_cell.unwrap_or(fage_core::eval::DEFAULT_MIN_CELL),
    };
    if want_heatmap && o.dataset.is_none() {
        return Err(UsageError("--heatmap needs --dataset".into()).into());
    }
    let out = out_dir(&o.out)?;
    let dump = o.dump_scores.unwrap_or(false);

    match o.folds {
        None => {
            if dir != AgingDirection::None && o.model.is_none() {
                return Err(UsageError(format!("--direction {dir} needs --model")).into());
            }
            let model = o.model.as_deref().map(load_model).transpose()?;
            let (split, ds) = eval_split(&o)?;
            let heat_input = if want_heatmap { ds.as_ref().map(|d| (&heat, d)) } else { None };
            let r = run_split(&split, model.as_ref(), far, dir, heat_input)?;
            write_split(&out, "report", &r, dump)?;
            print!("{}", r.report.to_text());
        }
        Some(k) => run_folds(&o, k, far, dir, want_heatmap.then_some(&heat), &out, dump)?,
    }
    ConfigFile {
        eval: Some(o),
        ..ConfigFile::default()
    }
    .write(&out.join("eval.toml"))?;
    Ok(())
}

fn run_folds(
    o: &EvalOpts,
    k: usize,
    far: f64,
    dir: AgingDirection,
    heat: Option<&HeatmapSpec>,
    out: &Path,
    dump: bool,
) -> anyhow::Result<()> {
    let Some(path) = &o.dataset else {
        return Err(UsageError("--folds needs --dataset".into()).into());
    };
    let pretrained = o.pretrained.unwrap_or(false);
    if pretrained && o.model.is_none() {
        return Err(UsageError("--pretrained needs --model".into()).into());
    }
    if o.model.is_some() && !pretrained && dir != AgingDirection::None {
        warn!("--model is ignored without --pretrained: each fold retrains");
    }
    let seed = o.seed.unwrap_or(0);
    let cfg = o.hyper.train_config(seed)?;
    let shared = if pretrained {
        o.model.as_deref().map(load_model).transpose()?
    } else {
        None
    };
    let ds = load_dataset(path)?;
    let folds = split_folds(&ds, k, seed).map_err(|e| match e {
        StoreError::InvalidFoldCount(_) | StoreError::TooFewSubjects { .. } => {
            anyhow::Error::new(UsageError(format!("--folds: {e}")))
        }
        other => other.into(),
    })?;

    let results: Vec<SplitResult> = (0..k)
        .into_par_iter()
        .map(|i| -> anyhow::Result<SplitResult> {
            let test = &folds[i];
            let model = match (dir, &shared) {
                (AgingDirection::None, _) => None,
                (_, Some(m)) => Some(m.clone()),
                _ => {
                    let rest: Vec<&LongitudinalDataset> = folds.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, f)| f).collect();
                    let train_ds = LongitudinalDataset::merge(&rest)?;
                    let fold_cfg = fage_core::TrainConfig {
                        seed: seed.wrapping_add(i as u64),
                        ..cfg.clone()
                    };
                    let trained = train_model(&train_ds, &fold_cfg).map_err(train_error)?;
                    info!("fold {i}: final training loss {}", trained.final_loss());
                    Some(trained.model)
                }
            };
            let split = with_distractors(build_youngest_oldest(test, o.min_gap.unwrap_or(0)), o)?;
            run_split(&split, model.as_ref(), far, dir, heat.map(|h| (h, test)))
                .with_context(|| format!("fold {i}"))
        })
        .collect::<anyhow::Result<_>>()?;

    for (i, r) in results.iter().enumerate() {
        write_split(out, &format!("fold{i}"), r, dump)?;
        println!("== fold {i} ==");
        print!("{}", r.report.to_text());
    }
    let reports: Vec<EvalReport> = results.into_iter().map(|r| r.report).collect();
    let summary = summarize(&reports).context("no folds evaluated")?;
    let label = match dir {
        AgingDirection::None => "baseline".to_string(),
        d => format!("aged ({d})"),
    };
    let text = format!("{}\n{}\n", summary.table_header(), summary.table_row(&label));
    write_text(&out.join("summary.txt"), &text)?;
    write_text(&out.join("summary.kv"), &summary.to_key_values())?;
    println!("== {k}-fold mean ± std ==");
    print!("{text}");
    Ok(())
}
