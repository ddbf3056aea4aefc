use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use featsplat_core::extract::FeatureExtractor;
use featsplat_core::probe::{
    assemble, assemble_tokens, metrics_depth, metrics_seg, predict_depth, train_depth_probe, train_seg_probe,
    AssemblyStrategy, DepthProbe, DepthSample, LabelImage, ProbeConfig, SegProbe, SegSample,
};
use featsplat_core::FeatureImage;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{read_json, resolve, write_json};
use crate::error::{CliError, CliResult};
use crate::formats::{load_extractor, load_fmap, save_fmap};
use crate::manifest::{load_label_png, load_png, save_label_png};
use crate::record::{to_value, RunRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Seg,
    Depth,
}

/// Probe samples. Original features come from `features` or from running
/// the `--original` extractor on `image`; fine-tuned features likewise from
/// `tuned` or `--tuned`. Global tokens default to the mean patch feature.
/// Paths are relative to the dataset file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProbeDataset {
    pub samples: Vec<ProbeSampleEntry>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeSampleEntry {
    pub image: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub tuned: Option<PathBuf>,
    /// Segmentation labels: 8-bit greyscale PNG, 255 ignored.
    pub labels: Option<PathBuf>,
    /// Depth: one-channel FMAP; non-positive entries are invalid.
    pub depth: Option<PathBuf>,
    /// Stored prediction (label PNG or depth FMAP) for `eval` without a probe.
    pub prediction: Option<PathBuf>,
}

/// A trained probe with the assembly it expects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "kebab-case")]
pub enum ProbeFile {
    Seg { assembly: AssemblyStrategy, num_classes: usize, probe: SegProbe },
    Depth { assembly: AssemblyStrategy, probe: DepthProbe },
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FeatureSources {
    /// Extractor checkpoint producing original features from images.
    #[arg(long)]
    pub original: Option<PathBuf>,
    /// Extractor checkpoint producing fine-tuned features from images.
    #[arg(long)]
    pub tuned: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ProbeArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub task: Task,
    #[arg(long, default_value_t = AssemblyStrategy::Concat)]
    pub assembly: AssemblyStrategy,
    /// Number of segmentation classes.
    #[arg(long)]
    pub num_classes: Option<usize>,
    /// Depth bin range `min,max`; defaults to the 1st/99th percentiles.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    pub depth_range: Option<Vec<f64>>,
    #[arg(long, default_value_t = 300)]
    pub iterations: usize,
    #[arg(long, default_value_t = 0.5)]
    pub lr: f64,
    #[command(flatten)]
    pub sources: FeatureSources,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for `probe.json` and `run.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub task: Task,
    /// Trained probe; without it the samples' stored predictions are scored.
    #[arg(long)]
    pub probe: Option<PathBuf>,
    /// Number of classes when scoring stored segmentation predictions.
    #[arg(long)]
    pub num_classes: Option<usize>,
    #[command(flatten)]
    pub sources: FeatureSources,
    /// Directory to write predictions into.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Run record with the metrics.
    #[arg(long)]
    pub out: PathBuf,
}

struct Extractors {
    original: Option<FeatureExtractor>,
    tuned: Option<FeatureExtractor>,
}

impl Extractors {
    fn load(s: &FeatureSources) -> CliResult<Self> {
        let get = |p: &Option<PathBuf>| -> CliResult<Option<FeatureExtractor>> {
            p.as_deref().map(|p| load_extractor(p).map(FeatureExtractor::Toy)).transpose()
        };
        Ok(Self { original: get(&s.original)?, tuned: get(&s.tuned)? })
    }
}

fn features_of(
    base: &Path,
    file: &Option<PathBuf>,
    image: &Option<PathBuf>,
    extractor: &Option<FeatureExtractor>,
    what: &str,
) -> CliResult<Option<(FeatureImage, Vec<f64>)>> {
    if let Some(f) = file {
        let grid = load_fmap(&resolve(base, f))?;
        let global = grid.channel_mean();
        return Ok(Some((grid, global)));
    }
    match (image, extractor) {
        (Some(img), Some(e)) => {
            let out = e.extract(&load_png(&resolve(base, img))?)?;
            Ok(Some((out.grid, out.global)))
        }
        (None, Some(_)) => Err(CliError::Validation(format!("{what} features need an image path"))),
        _ => Ok(None),
    }
}

/// Assembled patch features and global token of one sample.
fn assembled(
    base: &Path,
    s: &ProbeSampleEntry,
    ex: &Extractors,
    strategy: AssemblyStrategy,
) -> CliResult<(FeatureImage, Vec<f64>)> {
    let (orig, og) = features_of(base, &s.features, &s.image, &ex.original, "original")?
        .ok_or_else(|| CliError::Validation("sample has no original features (give `features` or --original)".into()))?;
    let (tuned, tg) = match features_of(base, &s.tuned, &s.image, &ex.tuned, "tuned")? {
        Some(t) => t,
        None if strategy == AssemblyStrategy::ConcatSelf => (orig.clone(), og.clone()),
        None => return Err(CliError::Validation(format!("assembly {strategy} needs fine-tuned features"))),
    };
    let a = assemble(&orig, &tuned, strategy)?;
    Ok((a.data, assemble_tokens(&og, &tg, strategy)?))
}

fn require<'a>(p: &'a Option<PathBuf>, what: &str, i: usize) -> CliResult<&'a Path> {
    p.as_deref().ok_or_else(|| CliError::Validation(format!("sample {i} has no {what}")))
}

fn load_dataset(path: &Path) -> CliResult<(ProbeDataset, PathBuf)> {
    let data: ProbeDataset = read_json(path)?;
    if data.samples.is_empty() {
        return Err(CliError::Validation(format!("{}: no samples", path.display())));
    }
    Ok((data, path.parent().map(Path::to_path_buf).unwrap_or_default()))
}

pub(super) fn run_probe(a: &ProbeArgs) -> CliResult<()> {
    let (data, base) = load_dataset(&a.data)?;
    let ex = Extractors::load(&a.sources)?;
    let cfg = ProbeConfig { iterations: a.iterations, lr: a.lr, ..ProbeConfig::default() };
    let (file, metrics) = match a.task {
        Task::Seg => {
            let k = a.num_classes.ok_or_else(|| CliError::Validation("--num-classes is required for seg".into()))?;
            let mut samples = Vec::new();
            for (i, s) in data.samples.iter().enumerate() {
                let (features, _) = assembled(&base, s, &ex, a.assembly)?;
                let labels = load_label_png(&resolve(&base, require(&s.labels, "labels", i)?))?;
                samples.push(SegSample { features, labels });
            }
            let probe = train_seg_probe(&samples, k, a.assembly, &cfg)?;
            let pred: Vec<_> = samples
                .iter()
                .map(|s| probe.predict(&s.features, s.labels.height, s.labels.width))
                .collect::<Result<_, _>>()?;
            let gt: Vec<_> = samples.into_iter().map(|s| s.labels).collect();
            let m = metrics_seg(&pred, &gt, k)?;
            (ProbeFile::Seg { assembly: a.assembly, num_classes: k, probe }, to_value(&m))
        }
        Task::Depth => {
            let mut samples = Vec::new();
            for (i, s) in data.samples.iter().enumerate() {
                let (features, global) = assembled(&base, s, &ex, a.assembly)?;
                let depth = load_fmap(&resolve(&base, require(&s.depth, "depth", i)?))?;
                samples.push(DepthSample { features, global, depth });
            }
            let range = a.depth_range.as_ref().map(|r| (r[0], r[1]));
            let probe = train_depth_probe(&samples, a.assembly, range, &cfg)?;
            let pred: Vec<_> = samples
                .iter()
                .map(|s| predict_depth(&probe, &s.features, &s.global, s.depth.height, s.depth.width))
                .collect::<Result<_, _>>()?;
            let gt: Vec<_> = samples.into_iter().map(|s| s.depth).collect();
            let m = metrics_depth(&pred, &gt, None)?;
            (ProbeFile::Depth { assembly: a.assembly, probe }, to_value(&m))
        }
    };
    write_json(&a.out.join("probe.json"), &file)?;
    let mut record = RunRecord::new("probe", a.seed, json!({ "args": to_value(a), "probe": to_value(&cfg) }));
    record.outputs = vec!["probe.json".into()];
    record.metrics = json!({ "train": metrics });
    record.save(&a.out.join("run.json"))
}

pub(super) fn run_eval(a: &EvalArgs) -> CliResult<()> {
    let (data, base) = load_dataset(&a.data)?;
    let ex = Extractors::load(&a.sources)?;
    let probe: Option<ProbeFile> = a.probe.as_deref().map(read_json).transpose()?;
    let metrics = match (a.task, &probe) {
        (Task::Seg, None | Some(ProbeFile::Seg { .. })) => {
            let k = match &probe {
                Some(ProbeFile::Seg { num_classes, .. }) => *num_classes,
                _ => a.num_classes.ok_or_else(|| CliError::Validation("--num-classes is required without --probe".into()))?,
            };
            let mut pred = Vec::new();
            let mut gt = Vec::new();
            for (i, s) in data.samples.iter().enumerate() {
                let labels = load_label_png(&resolve(&base, require(&s.labels, "labels", i)?))?;
                let p: LabelImage = match &probe {
                    Some(ProbeFile::Seg { assembly, probe, .. }) => {
                        let (f, _) = assembled(&base, s, &ex, *assembly)?;
                        probe.predict(&f, labels.height, labels.width)?
                    }
                    _ => load_label_png(&resolve(&base, require(&s.prediction, "prediction", i)?))?,
                };
                if let Some(dir) = &a.predictions {
                    save_label_png(&dir.join(format!("{i:04}.png")), &p)?;
                }
                pred.push(p);
                gt.push(labels);
            }
            to_value(&metrics_seg(&pred, &gt, k)?)
        }
        (Task::Depth, None | Some(ProbeFile::Depth { .. })) => {
            let mut pred = Vec::new();
            let mut gt = Vec::new();
            for (i, s) in data.samples.iter().enumerate() {
                let depth = load_fmap(&resolve(&base, require(&s.depth, "depth", i)?))?;
                let p = match &probe {
                    Some(ProbeFile::Depth { assembly, probe }) => {
                        let (f, g) = assembled(&base, s, &ex, *assembly)?;
                        predict_depth(probe, &f, &g, depth.height, depth.width)?
                    }
                    _ => load_fmap(&resolve(&base, require(&s.prediction, "prediction", i)?))?,
                };
                if let Some(dir) = &a.predictions {
                    save_fmap(&dir.join(format!("{i:04}.fmap")), &p)?;
                }
                pred.push(p);
                gt.push(depth);
            }
            to_value(&metrics_depth(&pred, &gt, None)?)
        }
        _ => return Err(CliError::Validation("probe task does not match --task".into())),
    };
    let mut record = RunRecord::new("eval", 0, to_value(a));
    record.metrics = metrics;
    record.save(&a.out)
}

