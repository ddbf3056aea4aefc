use std::path::{Path, PathBuf};

use clap::Args;
use featsplat_core::extract::{
    correspondences, finetune, multiview_consistency, target_l1, Correspondence, FeatureExtractor, FinetuneConfig,
    LibraryScene, LibraryView, SceneLibrary, ToyPatchEncoder,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{read_json, resolve};
use crate::error::{CliError, CliResult};
use crate::formats::{fmap_shape, load_extractor, load_scene, save_extractor};
use crate::manifest::SceneManifest;
use crate::record::{to_value, write_jsonl, RunRecord};

/// A list of fitted scenes: each manifest with the checkpoint fitted to it.
/// Paths are relative to the library file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibraryFile {
    pub scenes: Vec<LibraryEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibraryEntry {
    pub manifest: PathBuf,
    pub checkpoint: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FinetuneArgs {
    /// Library JSON listing `{manifest, checkpoint}` pairs.
    #[arg(long)]
    pub library: PathBuf,
    /// Starting extractor; a random toy encoder when absent.
    #[arg(long)]
    pub extractor: Option<PathBuf>,
    /// Patch size of a freshly initialised encoder.
    #[arg(long, default_value_t = 8)]
    pub patch_size: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub lr: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 2)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1)]
    pub epochs: usize,
    /// Disable the random horizontal flip.
    #[arg(long)]
    pub no_flip: bool,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for `extractor.xtrc`, `initial.xtrc`,
    /// `losses.jsonl` and `run.json`.
    #[arg(long)]
    pub out: PathBuf,
}

impl FinetuneArgs {
    pub fn config(&self) -> FinetuneConfig {
        FinetuneConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            epochs: self.epochs,
            flip: !self.no_flip,
            seed: self.seed,
            max_steps: self.max_steps,
        }
    }
}

/// Loads every scene of a library file. Training views come first in each
/// scene, then held-out views; targets render at the feature-map resolution.
pub fn load_library(path: &Path) -> CliResult<(SceneLibrary, usize)> {
    let file: LibraryFile = read_json(path)?;
    if file.scenes.is_empty() {
        return Err(CliError::Validation(format!("{}: library is empty", path.display())));
    }
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut lib = SceneLibrary::default();
    let mut channels = None;
    for entry in &file.scenes {
        let mpath = resolve(&base, &entry.manifest);
        let (manifest, mbase) = SceneManifest::open(&mpath)?;
        if *channels.get_or_insert(manifest.feature_channels) != manifest.feature_channels {
            return Err(CliError::Validation(format!("{}: feature channels differ across the library", mpath.display())));
        }
        let scene = load_scene(&resolve(&base, &entry.checkpoint))?;
        let (rh, rw, _) = fmap_shape(&mbase.join(&manifest.views[0].features))?;
        let loaded = manifest.load_views(&mbase)?;
        let (train, held): (Vec<_>, Vec<_>) = loaded.into_iter().partition(|v| !v.held_out);
        let train_views = train.len();
        let views = train.into_iter().chain(held).map(|v| LibraryView { camera: v.camera, image: v.image }).collect();
        lib.scenes.push(LibraryScene { scene, views, train_views, render_width: rw, render_height: rh });
    }
    Ok((lib, channels.unwrap_or(0)))
}

/// Mean multiview consistency over every held-out view paired with its two
/// neighbouring training views, pooled across the library.
pub fn held_out_consistency(e: &FeatureExtractor, lib: &SceneLibrary) -> CliResult<Option<f64>> {
    let mut images = Vec::new();
    let mut pairs = Vec::new();
    let mut corr: Vec<Vec<Correspondence>> = Vec::new();
    for s in &lib.scenes {
        let base = images.len();
        images.extend(s.views.iter().map(|v| v.image.clone()));
        if s.train_views == 0 {
            continue;
        }
        for a in s.train_views..s.views.len() {
            let k = a - s.train_views;
            for b in [k % s.train_views, (k + 1) % s.train_views] {
                pairs.push((base + a, base + b));
                corr.push(correspondences(&s.scene, &s.views[a].camera, &s.views[b].camera, 0.5));
            }
        }
    }
    if corr.iter().all(Vec::is_empty) {
        return Ok(None);
    }
    Ok(Some(multiview_consistency(e, &images, &pairs, &corr)?))
}

pub(super) fn run(a: &FinetuneArgs) -> CliResult<()> {
    let cfg = a.config();
    cfg.validate()?;
    let (lib, channels) = load_library(&a.library)?;
    let enc = match &a.extractor {
        Some(p) => load_extractor(p)?,
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            rng.set_stream(1);
            ToyPatchEncoder::random(a.patch_size, channels, &mut rng)
        }
    };
    lib.validate(enc.channels, enc.patch_size)?;
    save_extractor(&a.out.join("initial.xtrc"), &enc)?;
    let e = FeatureExtractor::Toy(enc);
    let held = lib.held_out_refs();
    let before = if held.is_empty() { None } else { Some((target_l1(&e, &lib, &held)?, held_out_consistency(&e, &lib)?)) };
    let out = finetune(&e, &lib, &cfg)?;
    let after = if held.is_empty() {
        None
    } else {
        Some((target_l1(&out.extractor, &lib, &held)?, held_out_consistency(&out.extractor, &lib)?))
    };
    let FeatureExtractor::Toy(tuned) = &out.extractor else { unreachable!("fine-tuning keeps the extractor kind") };
    save_extractor(&a.out.join("extractor.xtrc"), tuned)?;
    let losses: Vec<_> = out.losses.iter().enumerate().map(|(step, loss)| json!({ "step": step, "loss": loss })).collect();
    write_jsonl(&a.out.join("losses.jsonl"), &losses)?;
    let mut record = RunRecord::new("finetune", a.seed, json!({ "args": to_value(a), "finetune": to_value(&cfg) }));
    record.outputs = vec!["initial.xtrc".into(), "extractor.xtrc".into(), "losses.jsonl".into()];
    record.metrics = json!({
        "scenes": lib.scenes.len(),
        "steps": out.losses.len(),
        "held_out_l1_before": before.map(|b| b.0),
        "held_out_l1_after": after.map(|b| b.0),
        "consistency_before": before.and_then(|b| b.1),
        "consistency_after": after.and_then(|b| b.1),
    });
    record.save(&a.out.join("run.json"))
}
