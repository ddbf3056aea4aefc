//! 3D-aware fine-tuning: regress extractor outputs onto feature renders of
//! fitted scenes.

use std::sync::mpsc::sync_channel;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FeatureExtractor, ToyPatchEncoder};
use crate::error::{Error, Result};
use crate::raster::{rasterize_features, RasterConfig};
use crate::scene::{CameraView, FeatureImage, Scene};
use crate::train::{l1_loss, Adam};

#[derive(Debug, Clone, PartialEq)]
pub struct LibraryView {
    pub camera: CameraView,
    pub image: FeatureImage,
}

/// A fitted scene with its posed images. Views `0..train_views` are used
/// for fine-tuning; the rest are held out for evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct LibraryScene {
    pub scene: Scene,
    pub views: Vec<LibraryView>,
    pub train_views: usize,
    /// Resolution at which the low-dimensional features are rendered before
    /// decoding.
    pub render_width: usize,
    pub render_height: usize,
}

/// Fitted scenes held in memory for the whole fine-tuning run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SceneLibrary {
    pub scenes: Vec<LibraryScene>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ViewRef {
    pub scene: usize,
    pub view: usize,
}

impl SceneLibrary {
    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    pub fn train_refs(&self) -> Vec<ViewRef> {
        self.refs(|s| 0..s.train_views.min(s.views.len()))
    }

    pub fn held_out_refs(&self) -> Vec<ViewRef> {
        self.refs(|s| s.train_views.min(s.views.len())..s.views.len())
    }

    fn refs(&self, range: impl Fn(&LibraryScene) -> std::ops::Range<usize>) -> Vec<ViewRef> {
        self.scenes.iter().enumerate().flat_map(|(si, s)| range(s).map(move |v| ViewRef { scene: si, view: v })).collect()
    }

    pub fn view(&self, r: ViewRef) -> &LibraryView {
        &self.scenes[r.scene].views[r.view]
    }

    pub fn validate(&self, channels: usize, patch_size: usize) -> Result<()> {
        if self.scenes.is_empty() {
            return Err(Error::Config("scene library is empty".into()));
        }
        for (i, s) in self.scenes.iter().enumerate() {
            s.scene.validate()?;
            if s.scene.decoder.c_out != channels {
                return Err(Error::Config(format!(
                    "scene {i} decodes to {} channels, extractor produces {channels}",
                    s.scene.decoder.c_out
                )));
            }
            if s.render_width == 0 || s.render_height == 0 {
                return Err(Error::Config(format!("scene {i} has an empty render size")));
            }
            for (v, view) in s.views.iter().enumerate() {
                let img = &view.image;
                if img.channels != 3 || img.height % patch_size != 0 || img.width % patch_size != 0 {
                    return Err(Error::Shape(format!(
                        "scene {i} view {v}: image {}×{}×{} incompatible with patch size {patch_size}",
                        img.height, img.width, img.channels
                    )));
                }
            }
        }
        Ok(())
    }
}

/// `F^high` for a library view, bilinearly resized to a `grid_h × grid_w`
/// patch grid.
pub fn render_target(lib: &SceneLibrary, r: ViewRef, grid_h: usize, grid_w: usize) -> Result<FeatureImage> {
    let s = &lib.scenes[r.scene];
    let low = rasterize_features(&s.scene, &s.views[r.view].camera, s.render_width, s.render_height, &RasterConfig::default())?;
    let high = s.scene.decoder.apply(&low.image)?;
    Ok(high.resize_bilinear(grid_h, grid_w))
}

/// Mean L1 between extractor output and rendered targets over `refs`.
pub fn target_l1(e: &FeatureExtractor, lib: &SceneLibrary, refs: &[ViewRef]) -> Result<f64> {
    if refs.is_empty() {
        return Err(Error::Config("no views to evaluate".into()));
    }
    let mut total = 0.0;
    for &r in refs {
        let out = e.extract(&lib.view(r).image)?;
        let target = render_target(lib, r, out.grid.height, out.grid.width)?;
        total += l1_loss(&out.grid, &target)?.value;
    }
    Ok(total / refs.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub flip: bool,
    pub seed: u64,
    /// Stop after this many optimizer steps.
    pub max_steps: Option<usize>,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self { lr: 1e-5, weight_decay: 1e-4, batch_size: 2, epochs: 1, flip: true, seed: 0, max_steps: None }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("learning rate and weight decay must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub extractor: FeatureExtractor,
    /// Mean batch loss per optimizer step.
    pub losses: Vec<f64>,
    /// Views in the order they were used.
    pub visited: Vec<ViewRef>,
}

struct Sample {
    image: FeatureImage,
    target: FeatureImage,
}

/// Fine-tunes a trainable extractor on rendered targets. Targets are
/// constants: the library is only read.
pub fn finetune(e: &FeatureExtractor, lib: &SceneLibrary, cfg: &FinetuneConfig) -> Result<FinetuneOutcome> {
    let FeatureExtractor::Toy(enc) = e else {
        return Err(Error::Unsupported("file-backed extractors cannot be fine-tuned".into()));
    };
    cfg.validate()?;
    enc.validate()?;
    lib.validate(enc.channels, enc.patch_size)?;
    let train = lib.train_refs();
    if train.is_empty() {
        return Err(Error::Config("scene library has no training views".into()));
    }

    // The whole schedule is drawn up front so the renderer thread needs no
    // randomness.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut batches: Vec<Vec<(ViewRef, bool)>> = Vec::new();
    for _ in 0..cfg.epochs {
        let mut order = train.clone();
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            batches.push(chunk.iter().map(|&r| (r, cfg.flip && rng.gen_bool(0.5))).collect());
        }
    }
    if let Some(max) = cfg.max_steps {
        batches.truncate(max);
    }
    let visited = batches.iter().flatten().map(|(r, _)| *r).collect();

    let mut enc: ToyPatchEncoder = enc.clone();
    let mut opt = Adam::adamw(enc.params.len(), 1, cfg.weight_decay);
    let mut losses = Vec::with_capacity(batches.len());
    let (tx, rx) = sync_channel::<Result<Vec<Sample>>>(2);
    let patch = enc.patch_size;
    std::thread::scope(|scope| -> Result<()> {
        // Owned here so an early error return drops it and unblocks the producer.
        let rx = rx;
        let schedule = &batches;
        scope.spawn(move || {
            for batch in schedule {
                let prepared: Result<Vec<Sample>> = batch
                    .iter()
                    .map(|&(r, flip)| {
                        let img = &lib.view(r).image;
                        let target = render_target(lib, r, img.height / patch, img.width / patch)?;
                        Ok(if flip {
                            Sample { image: img.flip_horizontal(), target: target.flip_horizontal() }
                        } else {
                            Sample { image: img.clone(), target }
                        })
                    })
                    .collect();
                let failed = prepared.is_err();
                if tx.send(prepared).is_err() || failed {
                    break;
                }
            }
        });
        for _ in 0..batches.len() {
            let batch = rx.recv().map_err(|_| Error::Invalid("target renderer stopped".into()))??;
            let mut grad = vec![0.0; enc.params.len()];
            let mut loss = 0.0;
            let scale = 1.0 / batch.len() as f64;
            for s in &batch {
                let (out, tape) = enc.forward_tape(&s.image)?;
                let l = l1_loss(&out.grid, &s.target)?;
                loss += l.value * scale;
                let g = enc.backward(&tape, &l.grad, &vec![0.0; enc.channels])?;
                for (a, b) in grad.iter_mut().zip(&g) {
                    *a += b * scale;
                }
            }
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("fine-tuning loss diverged at step {}", losses.len() + 1)));
            }
            opt.step(cfg.lr, &mut enc.params, &grad);
            losses.push(loss);
        }
        Ok(())
    })?;
    Ok(FinetuneOutcome { extractor: FeatureExtractor::Toy(enc), losses, visited })
}
