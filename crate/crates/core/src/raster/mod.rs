//! Depth-sorted α-blending of projected Gaussians.
//!
//! The tile-binned path ([`rasterize_rgb`], [`rasterize_features`]) is the
//! one used for fitting and fine-tuning; [`rasterize_reference`] walks every
//! splat for every pixel and serves as its correctness oracle.
//! [`rasterize_backward`] differentiates the tile path.

mod backward;
mod forward;

pub use backward::{rasterize_backward, GaussianGrads};
pub use forward::{pixel_weights, rasterize, rasterize_features, rasterize_reference, rasterize_rgb};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::math::{norm3, sub3, sigmoid};
use crate::scene::{sh, try_project, CameraView, CullReason, FeatureImage, Scene, Splat2D};

pub const DEFAULT_TILE_SIZE: usize = 16;
pub const ALPHA_MAX: f64 = 0.99;
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
pub const TRANSMITTANCE_EPS: f64 = 1e-4;
const SUPPORT_MAHALANOBIS_SQ: f64 = 9.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelMode {
    /// View-dependent colour from SH coefficients, 3 channels.
    Rgb,
    /// Per-Gaussian feature vectors, `feature_dim` channels.
    Feature,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RasterConfig {
    pub tile_size: usize,
    /// Composited behind RGB renders. Feature renders always use zero.
    pub background: [f64; 3],
}

impl Default for RasterConfig {
    fn default() -> Self {
        Self { tile_size: DEFAULT_TILE_SIZE, background: [0.0; 3] }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct PreparedSplat {
    pub gaussian: usize,
    pub mean2d: [f64; 2],
    pub conic: [f64; 3],
    pub opacity: f64,
    pub pixel_rect: [usize; 4],
}

/// Visible splats in ascending depth order, binned into square tiles.
#[derive(Debug, Clone)]
pub struct SplatList {
    pub splats: Vec<Splat2D>,
    pub(crate) prepared: Vec<PreparedSplat>,
    /// Blended quantity per splat, `channels` values each.
    pub(crate) values: Vec<f64>,
    pub channels: usize,
    pub tile_size: usize,
    pub tiles_x: usize,
    pub tiles_y: usize,
    /// For tile `t`, `tile_entries[tile_offsets[t]..tile_offsets[t + 1]]`
    /// are indices into `splats`, depth-sorted.
    pub tile_offsets: Vec<usize>,
    pub tile_entries: Vec<u32>,
    /// Gaussians dropped because their projected covariance was not
    /// positive-definite.
    pub degenerate: usize,
}

impl SplatList {
    pub fn tile_range(&self, tile: usize) -> &[u32] {
        &self.tile_entries[self.tile_offsets[tile]..self.tile_offsets[tile + 1]]
    }
}

/// Pixel-level evaluation shared by every path so all of them see the same α.
#[derive(Debug, Clone, Copy)]
pub(crate) struct AlphaEval {
    pub alpha: f64,
    pub falloff: f64,
    pub clamped: bool,
    pub dx: f64,
    pub dy: f64,
}

#[inline]
pub(crate) fn eval_alpha(s: &PreparedSplat, px: f64, py: f64) -> Option<AlphaEval> {
    let dx = px - s.mean2d[0];
    let dy = py - s.mean2d[1];
    let m2 = s.conic[0] * dx * dx + 2.0 * s.conic[1] * dx * dy + s.conic[2] * dy * dy;
    if !(m2 <= SUPPORT_MAHALANOBIS_SQ) {
        return None;
    }
    let falloff = (-0.5 * m2).exp();
    let raw = s.opacity * falloff;
    let clamped = raw > ALPHA_MAX;
    let alpha = if clamped { ALPHA_MAX } else { raw };
    if alpha < ALPHA_MIN {
        return None;
    }
    Some(AlphaEval { alpha, falloff, clamped, dx, dy })
}

pub(crate) fn compute_values(scene: &Scene, cam: &CameraView, mode: ChannelMode, gaussians: &[usize]) -> (Vec<f64>, usize) {
    match mode {
        ChannelMode::Rgb => {
            let center = cam.center();
            let values = gaussians
                .iter()
                .flat_map(|&gi| {
                    let g = &scene.gaussians[gi];
                    let v = sub3(&g.mean, &center);
                    let n = norm3(&v);
                    let dir = [v[0] / n, v[1] / n, v[2] / n];
                    sh::eval_sh(scene.sh_degree, &g.sh, &dir)
                })
                .collect();
            (values, 3)
        }
        ChannelMode::Feature => {
            let values = gaussians.iter().flat_map(|&gi| scene.gaussians[gi].feature.iter().copied()).collect();
            (values, scene.feature_dim)
        }
    }
}

/// Projects, sorts by camera-space depth (ties by index), and bins.
pub(crate) fn prepare(scene: &Scene, cam: &CameraView, mode: ChannelMode, tile_size: usize) -> Result<SplatList> {
    if scene.is_empty() {
        return Err(Error::EmptyScene);
    }
    if tile_size == 0 {
        return Err(Error::Config("tile size must be positive".into()));
    }
    cam.validate()?;
    let projected: Vec<_> = scene
        .gaussians
        .par_iter()
        .enumerate()
        .map(|(i, g)| (i, try_project(g, cam)))
        .collect();
    let mut degenerate = 0;
    let mut visible = Vec::new();
    for (i, p) in projected {
        match p {
            Ok(p) => visible.push((i, p)),
            Err(CullReason::Degenerate) => degenerate += 1,
            Err(_) => {}
        }
    }
    visible.sort_by(|a, b| a.1.splat.depth.total_cmp(&b.1.splat.depth).then(a.0.cmp(&b.0)));

    let mut splats = Vec::with_capacity(visible.len());
    let mut prepared = Vec::with_capacity(visible.len());
    for (i, p) in &visible {
        let mut s = p.splat;
        s.gaussian_index = *i;
        splats.push(s);
        prepared.push(PreparedSplat {
            gaussian: *i,
            mean2d: p.splat.mean2d,
            conic: p.conic,
            opacity: sigmoid(scene.gaussians[*i].opacity_logit),
            pixel_rect: p.pixel_rect,
        });
    }
    let order: Vec<usize> = prepared.iter().map(|p| p.gaussian).collect();
    let (values, channels) = compute_values(scene, cam, mode, &order);

    let tiles_x = cam.width.div_ceil(tile_size);
    let tiles_y = cam.height.div_ceil(tile_size);
    let mut counts = vec![0usize; tiles_x * tiles_y];
    for p in &prepared {
        let [x0, y0, x1, y1] = p.pixel_rect;
        for ty in y0 / tile_size..=y1 / tile_size {
            for tx in x0 / tile_size..=x1 / tile_size {
                counts[ty * tiles_x + tx] += 1;
            }
        }
    }
    let mut tile_offsets = Vec::with_capacity(counts.len() + 1);
    tile_offsets.push(0);
    for c in &counts {
        tile_offsets.push(tile_offsets.last().unwrap() + c);
    }
    let mut cursor = tile_offsets[..counts.len()].to_vec();
    let mut tile_entries = vec![0u32; *tile_offsets.last().unwrap()];
    for (k, p) in prepared.iter().enumerate() {
        let [x0, y0, x1, y1] = p.pixel_rect;
        for ty in y0 / tile_size..=y1 / tile_size {
            for tx in x0 / tile_size..=x1 / tile_size {
                let t = ty * tiles_x + tx;
                tile_entries[cursor[t]] = k as u32;
                cursor[t] += 1;
            }
        }
    }
    Ok(SplatList {
        splats,
        prepared,
        values,
        channels,
        tile_size,
        tiles_x,
        tiles_y,
        tile_offsets,
        tile_entries,
        degenerate,
    })
}

/// Everything the backward pass needs from its forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub mode: ChannelMode,
    pub camera: CameraView,
    pub fingerprint: u64,
    pub list: SplatList,
    /// Number of tile-list entries walked per pixel.
    pub(crate) walked: Vec<u32>,
    pub final_transmittance: Vec<f64>,
    pub background: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub image: FeatureImage,
    /// Residual transmittance per pixel.
    pub alpha_accum: Vec<f64>,
    /// Number of splats blended into each pixel.
    pub contrib_count: Vec<u32>,
    /// Pixels where compositing stopped because transmittance fell below
    /// the termination threshold.
    pub early_terminated: Vec<bool>,
    pub degenerate_splats: usize,
    /// `None` for the reference renderer, which has no backward pass.
    pub cache: Option<ForwardCache>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::logit;
    use crate::scene::{FeatureDecoder, Gaussian3D};

    fn axis_camera(size: usize, focal: f64) -> CameraView {
        CameraView {
            width: size,
            height: size,
            fx: focal,
            fy: focal,
            cx: size as f64 / 2.0,
            cy: size as f64 / 2.0,
            world_to_camera: [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]],
        }
    }

    fn gaussian(mean: [f64; 3], scale: f64, opacity_logit: f64, rgb: [f64; 3], feature: Vec<f64>) -> Gaussian3D {
        Gaussian3D {
            mean,
            log_scale: [scale.ln(); 3],
            rotation: [1.0, 0.0, 0.0, 0.0],
            opacity_logit,
            sh: rgb.iter().map(|c| sh::rgb_to_dc(*c)).collect(),
            feature,
        }
    }

    fn scene_of(gs: Vec<Gaussian3D>, d: usize) -> Scene {
        let mut s = Scene::new(d, 0, FeatureDecoder::identity(d));
        s.gaussians = gs;
        s
    }

    #[test]
    fn huge_opaque_gaussian_hits_the_alpha_clamp() {
        let c = [0.2, 0.6, 0.9];
        let scene = scene_of(vec![gaussian([0.0, 0.0, 10.0], 100.0, 20.0, c, vec![0.0])], 1);
        let cfg = RasterConfig { background: [1.0, 0.5, 0.0], ..Default::default() };
        let out = rasterize_rgb(&scene, &axis_camera(32, 32.0), &cfg).unwrap();
        for px in out.image.data.chunks(3) {
            for k in 0..3 {
                assert!((px[k] - (c[k] * 0.99 + cfg.background[k] * 0.01)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn uncovered_tiles_show_background_exactly() {
        let scene = scene_of(vec![gaussian([-0.3, -0.3, 1.0], 0.005, 2.0, [1.0; 3], vec![1.0])], 1);
        let cfg = RasterConfig { background: [0.25, 0.5, 0.75], ..Default::default() };
        let out = rasterize_rgb(&scene, &axis_camera(64, 64.0), &cfg).unwrap();
        assert_eq!(out.image.pixel(60, 60), &[0.25, 0.5, 0.75]);
        assert_eq!(out.contrib_count[60 * 64 + 60], 0);
    }

    #[test]
    fn single_gaussian_centre_pixel_blends_its_feature() {
        // Centre of pixel (16, 16) is (16.5, 16.5); place the mean there.
        let cam = axis_camera(32, 32.0);
        let mean = [0.5 / 32.0, 0.5 / 32.0, 1.0];
        let f = vec![0.3, -1.2, 2.0];
        let scene = scene_of(vec![gaussian(mean, 0.05, logit(0.99), [0.5; 3], f.clone())], 3);
        let out = rasterize_features(&scene, &cam, 32, 32, &RasterConfig::default()).unwrap();
        let px = out.image.pixel(16, 16);
        for k in 0..3 {
            assert!((px[k] - 0.99 * f[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn two_coincident_splats_follow_front_to_back_weights() {
        let cam = axis_camera(32, 32.0);
        let a = vec![1.0, 0.0];
        let b = vec![0.0, 1.0];
        let m = 0.5 / 32.0;
        let scene = scene_of(
            vec![
                gaussian([2.0 * m, 2.0 * m, 2.0], 0.05, 0.0, [0.5; 3], b.clone()),
                gaussian([m, m, 1.0], 0.05, 0.0, [0.5; 3], a.clone()),
            ],
            2,
        );
        let out = rasterize_features(&scene, &cam, 32, 32, &RasterConfig::default()).unwrap();
        let px = out.image.pixel(16, 16);
        assert!((px[0] - 0.5).abs() < 1e-12);
        assert!((px[1] - 0.25).abs() < 1e-12);
        assert!((out.alpha_accum[16 * 32 + 16] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn empty_scene_errors_on_fast_path_and_is_background_on_reference() {
        let scene = scene_of(vec![], 2);
        let cam = axis_camera(8, 8.0);
        assert!(matches!(rasterize_rgb(&scene, &cam, &RasterConfig::default()), Err(Error::EmptyScene)));
        let cfg = RasterConfig { background: [0.1, 0.2, 0.3], ..Default::default() };
        let r = rasterize_reference(&scene, &cam, 8, 8, ChannelMode::Rgb, &cfg).unwrap();
        assert_eq!(r.image, FeatureImage::filled(8, 8, &[0.1, 0.2, 0.3]));
    }

    #[test]
    fn single_splat_reference_is_closed_form_falloff() {
        let cam = axis_camera(16, 16.0);
        let sigma = 0.2;
        let opacity = 0.7;
        let scene = scene_of(vec![gaussian([0.0, 0.0, 1.0], sigma, logit(opacity), [0.5; 3], vec![1.0])], 1);
        let r = rasterize_reference(&scene, &cam, 16, 16, ChannelMode::Feature, &RasterConfig::default()).unwrap();
        let var = (16.0 * sigma).powi(2) + 0.3;
        for y in 0..16 {
            for x in 0..16 {
                let (dx, dy) = (x as f64 + 0.5 - 8.0, y as f64 + 0.5 - 8.0);
                let m2 = (dx * dx + dy * dy) / var;
                let alpha = opacity * (-0.5 * m2).exp();
                let expected = if m2 <= 9.0 && alpha >= 1.0 / 255.0 { alpha } else { 0.0 };
                assert!((r.image.pixel(y, x)[0] - expected).abs() < 1e-12, "({x},{y})");
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients_and_stale_cache_is_rejected() {
        let cam = axis_camera(16, 16.0);
        let mut scene = scene_of(vec![gaussian([0.0, 0.0, 1.0], 0.2, 0.3, [0.4; 3], vec![0.5, 0.1])], 2);
        let out = rasterize_features(&scene, &cam, 16, 16, &RasterConfig::default()).unwrap();
        let cache = out.cache.unwrap();
        let g = rasterize_backward(&scene, &FeatureImage::zeros(16, 16, 2), &cache).unwrap();
        assert_eq!(g, GaussianGrads { visible: vec![true], ..GaussianGrads::for_scene(&scene) });
        scene.gaussians[0].feature[0] = 0.6;
        assert!(matches!(rasterize_backward(&scene, &FeatureImage::zeros(16, 16, 2), &cache), Err(Error::StaleCache)));
    }

    #[test]
    fn single_splat_feature_gradient_equals_alpha() {
        let cam = axis_camera(16, 16.0);
        let scene = scene_of(vec![gaussian([0.01, -0.02, 1.0], 0.15, 0.4, [0.4; 3], vec![0.5])], 1);
        let out = rasterize_features(&scene, &cam, 16, 16, &RasterConfig::default()).unwrap();
        let mut up = FeatureImage::zeros(16, 16, 1);
        up.pixel_mut(5, 9)[0] = 1.0;
        let g = rasterize_backward(&scene, &up, out.cache.as_ref().unwrap()).unwrap();
        let alpha = 1.0 - out.alpha_accum[5 * 16 + 9];
        assert!(alpha > 0.0);
        assert!((g.feature[0] - alpha).abs() < 1e-12);
    }

    #[test]
    fn rgb_and_feature_paths_share_alpha_bitwise() {
        let cam = axis_camera(32, 40.0);
        let mut gs = Vec::new();
        for i in 0..6 {
            let t = i as f64;
            gs.push(gaussian([0.1 * t - 0.25, 0.05 * t - 0.1, 1.0 + 0.3 * t], 0.05 + 0.02 * t, 0.5 - 0.2 * t, [0.3, 0.5, 0.7], vec![t, 1.0]));
        }
        let scene = scene_of(gs, 2);
        let cfg = RasterConfig::default();
        let rgb = rasterize_rgb(&scene, &cam, &cfg).unwrap();
        let feat = rasterize_features(&scene, &cam, 32, 32, &cfg).unwrap();
        assert_eq!(rgb.alpha_accum, feat.alpha_accum);
        assert_eq!(rgb.contrib_count, feat.contrib_count);
    }
}
