//! Joint fitting of geometry, appearance, features and decoder.
//!
//! Gradient routing is literal: the RGB loss only ever updates mean, scale,
//! rotation, opacity and SH; the feature loss only ever updates the feature
//! vectors and the decoder.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::densify::{densify_and_prune, DensifyConfig, GradStats};
use super::loss::{loss_feat, loss_rgb, psnr};
use super::optim::Adam;
use crate::error::{Error, Result};
use crate::math::norm3;
use crate::raster::{rasterize_backward, rasterize_features, rasterize_rgb, GaussianGrads, RasterConfig};
use crate::scene::{CameraView, FeatureDecoder, FeatureImage, Scene};

pub const FEATURE_DIM_OPTIONS: [usize; 3] = [32, 64, 128];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningRates {
    pub position_init: f64,
    pub position_final: f64,
    pub sh: f64,
    pub opacity: f64,
    pub scale: f64,
    pub rotation: f64,
    pub feature: f64,
    pub decoder: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            position_init: 1.6e-4,
            position_final: 1.6e-6,
            sh: 2.5e-3,
            opacity: 5e-2,
            scale: 5e-3,
            rotation: 1e-3,
            feature: 2.5e-3,
            decoder: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub iterations: usize,
    pub lr: LearningRates,
    pub lambda_dssim: f64,
    pub feature_dim: usize,
    /// Accept a feature dimension outside 32/64/128.
    pub allow_any_feature_dim: bool,
    /// Multiplier on `L^c`. Zero skips every geometry/appearance step.
    pub rgb_weight: f64,
    /// Multiplier on `L^f`. Zero skips every feature/decoder step.
    pub feature_weight: f64,
    pub decoder_weight_decay: f64,
    pub densify: DensifyConfig,
    /// Iterations between metric records; the last iteration is always recorded.
    pub metrics_interval: usize,
    pub seed: u64,
    pub background: [f64; 3],
    pub tile_size: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            iterations: 30000,
            lr: LearningRates::default(),
            lambda_dssim: 0.2,
            feature_dim: 64,
            allow_any_feature_dim: false,
            rgb_weight: 1.0,
            feature_weight: 1.0,
            decoder_weight_decay: 1e-4,
            densify: DensifyConfig::default(),
            metrics_interval: 100,
            seed: 0,
            background: [0.0; 3],
            tile_size: crate::raster::DEFAULT_TILE_SIZE,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda_dssim) {
            return Err(Error::Config(format!("lambda_dssim {} outside [0, 1]", self.lambda_dssim)));
        }
        if self.feature_dim == 0 {
            return Err(Error::Config("feature_dim must be positive".into()));
        }
        if !self.allow_any_feature_dim && !FEATURE_DIM_OPTIONS.contains(&self.feature_dim) {
            return Err(Error::Config(format!(
                "feature_dim {} not in {FEATURE_DIM_OPTIONS:?} (set allow_any_feature_dim to override)",
                self.feature_dim
            )));
        }
        if self.rgb_weight < 0.0 || self.feature_weight < 0.0 || !self.rgb_weight.is_finite() || !self.feature_weight.is_finite() {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        if self.tile_size == 0 {
            return Err(Error::Config("tile_size must be positive".into()));
        }
        Ok(())
    }

    pub fn raster(&self) -> RasterConfig {
        RasterConfig { tile_size: self.tile_size, background: self.background }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub iteration: usize,
    pub view: usize,
    pub loss_rgb: f64,
    pub loss_feat: f64,
    pub psnr: f64,
    pub num_gaussians: usize,
}

#[derive(Debug, Clone)]
pub struct FitOutput {
    pub scene: Scene,
    pub metrics: Vec<MetricRecord>,
    /// `L^c` at every iteration.
    pub rgb_losses: Vec<f64>,
    /// `L^f` at every iteration.
    pub feature_losses: Vec<f64>,
}

impl FitOutput {
    pub fn decoder(&self) -> &FeatureDecoder {
        &self.scene.decoder
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Group {
    Mean,
    LogScale,
    Rotation,
    Opacity,
    Sh,
    Feature,
}

const GEOMETRY_GROUPS: [Group; 5] = [Group::Mean, Group::LogScale, Group::Rotation, Group::Opacity, Group::Sh];

fn stride(scene: &Scene, group: Group) -> usize {
    match group {
        Group::Mean | Group::LogScale => 3,
        Group::Rotation => 4,
        Group::Opacity => 1,
        Group::Sh => 3 * scene.num_sh_coeffs(),
        Group::Feature => scene.feature_dim,
    }
}

fn gather(scene: &Scene, group: Group) -> Vec<f64> {
    let mut out = Vec::with_capacity(scene.len() * stride(scene, group));
    for g in &scene.gaussians {
        match group {
            Group::Mean => out.extend_from_slice(&g.mean),
            Group::LogScale => out.extend_from_slice(&g.log_scale),
            Group::Rotation => out.extend_from_slice(&g.rotation),
            Group::Opacity => out.push(g.opacity_logit),
            Group::Sh => out.extend_from_slice(&g.sh),
            Group::Feature => out.extend_from_slice(&g.feature),
        }
    }
    out
}

fn scatter(scene: &mut Scene, group: Group, values: &[f64]) {
    let s = stride(scene, group);
    for (g, v) in scene.gaussians.iter_mut().zip(values.chunks_exact(s.max(1))) {
        match group {
            Group::Mean => g.mean.copy_from_slice(v),
            Group::LogScale => g.log_scale.copy_from_slice(v),
            Group::Rotation => g.rotation.copy_from_slice(v),
            Group::Opacity => g.opacity_logit = v[0],
            Group::Sh => g.sh.copy_from_slice(v),
            Group::Feature => g.feature.copy_from_slice(v),
        }
    }
}

fn grad_of(grads: &GaussianGrads, group: Group) -> &[f64] {
    match group {
        Group::Mean => &grads.mean,
        Group::LogScale => &grads.log_scale,
        Group::Rotation => &grads.rotation,
        Group::Opacity => &grads.opacity_logit,
        Group::Sh => &grads.sh,
        Group::Feature => &grads.feature,
    }
}

/// Radius of the camera rig around its centroid, padded by 10%.
pub fn scene_extent(views: &[CameraView]) -> f64 {
    let centers: Vec<_> = views.iter().map(|v| v.center()).collect();
    let n = centers.len().max(1) as f64;
    let mut c = [0.0; 3];
    for p in &centers {
        for k in 0..3 {
            c[k] += p[k] / n;
        }
    }
    let r = centers.iter().map(|p| norm3(&[p[0] - c[0], p[1] - c[1], p[2] - c[2]])).fold(0.0, f64::max);
    if r > 0.0 {
        1.1 * r
    } else {
        1.0
    }
}

/// Log-linear decay from `init` to `fin` over `total` iterations.
pub fn exp_decay(init: f64, fin: f64, iter: usize, total: usize) -> f64 {
    let t = (iter as f64 / total.max(1) as f64).clamp(0.0, 1.0);
    ((1.0 - t) * init.ln() + t * fin.ln()).exp()
}

fn check_inputs(
    views: &[CameraView],
    images: &[FeatureImage],
    feat_maps: &[FeatureImage],
    config: &FitConfig,
    init: &Scene,
) -> Result<()> {
    config.validate()?;
    init.validate()?;
    if views.len() < 2 {
        return Err(Error::Config(format!("fitting needs at least 2 views, got {}", views.len())));
    }
    if images.len() != views.len() {
        return Err(Error::Config(format!("{} views but {} images", views.len(), images.len())));
    }
    if feat_maps.len() != views.len() {
        return Err(Error::Config(format!("{} views but {} feature maps", views.len(), feat_maps.len())));
    }
    if init.is_empty() {
        return Err(Error::EmptyScene);
    }
    if init.feature_dim != config.feature_dim {
        return Err(Error::Config(format!(
            "initial scene has feature dimension {}, config asks for {}",
            init.feature_dim, config.feature_dim
        )));
    }
    for (i, (v, img)) in views.iter().zip(images).enumerate() {
        v.validate()?;
        if img.height != v.height || img.width != v.width || img.channels != 3 {
            return Err(Error::Shape(format!(
                "image {i} is {}×{}×{}, camera expects {}×{}×3",
                img.height, img.width, img.channels, v.height, v.width
            )));
        }
    }
    for (i, f) in feat_maps.iter().enumerate() {
        if f.channels != init.decoder.c_out {
            return Err(Error::Config(format!(
                "feature map {i} has {} channels, decoder outputs {}",
                f.channels, init.decoder.c_out
            )));
        }
        if f.height == 0 || f.width == 0 {
            return Err(Error::Shape(format!("feature map {i} is empty")));
        }
    }
    Ok(())
}

pub fn fit_scene(
    views: &[CameraView],
    images: &[FeatureImage],
    feat_maps: &[FeatureImage],
    config: &FitConfig,
    init: Scene,
) -> Result<FitOutput> {
    fit_scene_observed(views, images, feat_maps, config, init, &mut |_, _| {})
}

/// As [`fit_scene`], calling `observer(iteration, scene)` after every
/// iteration's update.
pub fn fit_scene_observed(
    views: &[CameraView],
    images: &[FeatureImage],
    feat_maps: &[FeatureImage],
    config: &FitConfig,
    init: Scene,
    observer: &mut dyn FnMut(usize, &Scene),
) -> Result<FitOutput> {
    check_inputs(views, images, feat_maps, config, &init)?;
    let raster = config.raster();
    let extent = scene_extent(views);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut scene = init;
    let n = scene.len();
    let mut geo_opt: Vec<(Group, Adam)> =
        GEOMETRY_GROUPS.iter().map(|&g| (g, Adam::new(n * stride(&scene, g), stride(&scene, g)))).collect();
    let mut feat_opt = Adam::new(n * scene.feature_dim, scene.feature_dim);
    let mut dec_opt = Adam::adamw(scene.decoder.num_params(), 1, config.decoder_weight_decay);
    let mut stats = GradStats::new(n);
    let lr = &config.lr;
    let mut out_metrics = Vec::new();
    let mut rgb_losses = Vec::with_capacity(config.iterations);
    let mut feature_losses = Vec::with_capacity(config.iterations);

    for iter in 1..=config.iterations {
        let view = rng.gen_range(0..views.len());
        let cam = &views[view];

        let rgb = rasterize_rgb(&scene, cam, &raster)?;
        let lc = loss_rgb(&rgb.image, &images[view], config.lambda_dssim)?;
        let target = &feat_maps[view];
        let low = rasterize_features(&scene, cam, target.width, target.height, &raster)?;
        let high = scene.decoder.apply(&low.image)?;
        let lf = loss_feat(&high, target)?;
        if !lc.value.is_finite() || !lf.value.is_finite() {
            return Err(Error::Numeric(format!(
                "loss diverged at iteration {iter} (view {view}): L^c = {}, L^f = {}",
                lc.value, lf.value
            )));
        }
        rgb_losses.push(lc.value);
        feature_losses.push(lf.value);

        let color_grads = if config.rgb_weight > 0.0 {
            let mut g = lc.grad.clone();
            g.data.iter_mut().for_each(|v| *v *= config.rgb_weight);
            let cache = rgb.cache.as_ref().expect("tile path keeps a cache");
            Some(rasterize_backward(&scene, &g, cache)?)
        } else {
            None
        };
        let feature_grads = if config.feature_weight > 0.0 {
            let mut g = lf.grad.clone();
            g.data.iter_mut().for_each(|v| *v *= config.feature_weight);
            let (dec_grad, grad_low) = scene.decoder.backward(&low.image, &g)?;
            let cache = low.cache.as_ref().expect("tile path keeps a cache");
            Some((rasterize_backward(&scene, &grad_low, cache)?, dec_grad))
        } else {
            None
        };

        if let Some(grads) = &color_grads {
            for (group, opt) in geo_opt.iter_mut() {
                let rate = match group {
                    Group::Mean => exp_decay(lr.position_init, lr.position_final, iter - 1, config.iterations) * extent,
                    Group::LogScale => lr.scale,
                    Group::Rotation => lr.rotation,
                    Group::Opacity => lr.opacity,
                    Group::Sh => lr.sh,
                    Group::Feature => unreachable!(),
                };
                let mut p = gather(&scene, *group);
                opt.step(rate, &mut p, grad_of(grads, *group));
                scatter(&mut scene, *group, &p);
            }
            stats.add(&grads.mean2d, &grads.visible, cam.width, cam.height);
        }
        if let Some((grads, dec_grad)) = &feature_grads {
            let mut p = gather(&scene, Group::Feature);
            feat_opt.step(lr.feature, &mut p, grad_of(grads, Group::Feature));
            scatter(&mut scene, Group::Feature, &p);
            let dec = &mut scene.decoder;
            let mut dp: Vec<f64> = dec.kernel.iter().chain(&dec.bias).copied().collect();
            let dg: Vec<f64> = dec_grad.kernel.iter().chain(&dec_grad.bias).copied().collect();
            dec_opt.step(lr.decoder, &mut dp, &dg);
            let nk = dec.kernel.len();
            dec.kernel.copy_from_slice(&dp[..nk]);
            dec.bias.copy_from_slice(&dp[nk..]);
        }

        if config.densify.due(iter) {
            let outcome = densify_and_prune(&scene, &stats, &config.densify, extent, &mut rng);
            if outcome.scene.is_empty() {
                return Err(Error::EmptyScene);
            }
            for (_, opt) in geo_opt.iter_mut() {
                opt.remap(&outcome.kept, outcome.appended);
            }
            feat_opt.remap(&outcome.kept, outcome.appended);
            scene = outcome.scene;
            stats = GradStats::new(scene.len());
        }

        observer(iter, &scene);

        if iter % config.metrics_interval.max(1) == 0 || iter == config.iterations {
            out_metrics.push(MetricRecord {
                iteration: iter,
                view,
                loss_rgb: lc.value,
                loss_feat: lf.value,
                psnr: psnr(&rgb.image, &images[view])?,
                num_gaussians: scene.len(),
            });
        }
    }
    Ok(FitOutput { scene, metrics: out_metrics, rgb_losses, feature_losses })
}
