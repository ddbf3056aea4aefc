//! Procedural scenes with known ground truth, used by tests, benchmarks and
//! the `synth` command.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::Result;
use crate::extract::{LibraryScene, LibraryView, SceneLibrary};
use crate::train::{fit_scene, DensifyConfig, FitConfig};
use crate::math::{logit, quat_normalize};
use crate::raster::{rasterize_features, rasterize_rgb, RasterConfig};
use crate::scene::{sh, CameraView, FeatureDecoder, FeatureImage, Gaussian3D, Scene};

/// Standard normal sample (Box–Muller).
pub fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

pub fn random_unit_quaternion<R: Rng>(rng: &mut R) -> [f64; 4] {
    quat_normalize(&[standard_normal(rng), standard_normal(rng), standard_normal(rng), standard_normal(rng)])
}

#[derive(Debug, Clone)]
pub struct GaussianSampler {
    pub center: [f64; 3],
    pub half_extent: [f64; 3],
    pub scale_range: (f64, f64),
    pub opacity_range: (f64, f64),
    /// Base colour range per channel.
    pub color_range: (f64, f64),
    /// Magnitude of the non-DC SH coefficients.
    pub sh_rest: f64,
}

impl Default for GaussianSampler {
    fn default() -> Self {
        Self {
            center: [0.0; 3],
            half_extent: [1.0; 3],
            scale_range: (0.12, 0.3),
            opacity_range: (0.6, 0.95),
            color_range: (0.1, 0.9),
            sh_rest: 0.05,
        }
    }
}

impl GaussianSampler {
    /// Samples a Gaussian with a random feature in `[0, 1)^D`. Returns the
    /// base (view-independent) colour alongside it.
    pub fn sample<R: Rng>(&self, rng: &mut R, sh_degree: usize, feature_dim: usize) -> (Gaussian3D, [f64; 3]) {
        let mut mean = [0.0; 3];
        for a in 0..3 {
            mean[a] = self.center[a] + rng.gen_range(-self.half_extent[a]..=self.half_extent[a]);
        }
        let (s0, s1) = self.scale_range;
        let log_scale = [rng.gen_range(s0.ln()..=s1.ln()), rng.gen_range(s0.ln()..=s1.ln()), rng.gen_range(s0.ln()..=s1.ln())];
        let opacity = rng.gen_range(self.opacity_range.0..=self.opacity_range.1);
        let base = [
            rng.gen_range(self.color_range.0..=self.color_range.1),
            rng.gen_range(self.color_range.0..=self.color_range.1),
            rng.gen_range(self.color_range.0..=self.color_range.1),
        ];
        let n = sh::num_coeffs(sh_degree);
        let mut coeffs = vec![0.0; 3 * n];
        for c in 0..3 {
            coeffs[c] = sh::rgb_to_dc(base[c]);
        }
        for v in coeffs.iter_mut().skip(3) {
            *v = rng.gen_range(-self.sh_rest..=self.sh_rest);
        }
        let feature = (0..feature_dim).map(|_| rng.gen::<f64>()).collect();
        let g = Gaussian3D {
            mean,
            log_scale,
            rotation: random_unit_quaternion(rng),
            opacity_logit: logit(opacity),
            sh: coeffs,
            feature,
        };
        (g, base)
    }
}

pub fn random_scene<R: Rng>(
    rng: &mut R,
    count: usize,
    feature_dim: usize,
    sh_degree: usize,
    sampler: &GaussianSampler,
) -> Scene {
    let mut scene = Scene::new(feature_dim, sh_degree, FeatureDecoder::identity(feature_dim));
    for _ in 0..count {
        scene.gaussians.push(sampler.sample(rng, sh_degree, feature_dim).0);
    }
    scene
}

/// Cameras on a ring around `target`, alternating slightly above and below
/// its horizontal plane, world +z up.
pub fn ring_cameras(count: usize, radius: f64, target: [f64; 3], width: usize, height: usize, focal: f64, phase: f64) -> Vec<CameraView> {
    (0..count)
        .map(|i| {
            let az = phase + std::f64::consts::TAU * i as f64 / count as f64;
            let el: f64 = if i % 2 == 0 { 0.35 } else { -0.2 };
            let eye = [
                target[0] + radius * el.cos() * az.cos(),
                target[1] + radius * el.cos() * az.sin(),
                target[2] + radius * el.sin(),
            ];
            CameraView::look_at(eye, target, [0.0, 0.0, 1.0], width, height, focal)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub num_gaussians: usize,
    pub train_views: usize,
    pub held_out_views: usize,
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub camera_radius: f64,
    pub feature_dim: usize,
    /// Channels of the emitted feature maps (the extractor dimension).
    pub feature_channels: usize,
    pub feature_width: usize,
    pub feature_height: usize,
    /// Standard deviation of the per-view, per-entry noise added to feature
    /// maps. Models the view inconsistency of a 2D extractor.
    pub feature_noise: f64,
    /// Make each Gaussian's feature an affine function of its base colour,
    /// so features are predictable from pixels.
    pub features_from_color: bool,
    pub sh_degree: usize,
    pub sampler: GaussianSampler,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_gaussians: 20,
            train_views: 8,
            held_out_views: 2,
            width: 64,
            height: 64,
            focal: 64.0,
            camera_radius: 4.0,
            feature_dim: 8,
            feature_channels: 8,
            feature_width: 32,
            feature_height: 32,
            feature_noise: 0.1,
            features_from_color: false,
            sh_degree: 3,
            sampler: GaussianSampler::default(),
        }
    }
}

/// A ground-truth scene with rendered observations. Views `0..train_views`
/// are for fitting; the rest are held out.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub truth: Scene,
    pub cameras: Vec<CameraView>,
    pub images: Vec<FeatureImage>,
    /// Noisy per-view feature maps (what a 2D extractor would supply).
    pub feature_maps: Vec<FeatureImage>,
    /// Noise-free renders of the ground-truth features through its decoder.
    pub clean_feature_maps: Vec<FeatureImage>,
    pub train_views: usize,
}

impl SyntheticScene {
    pub fn generate<R: Rng>(cfg: &SynthConfig, rng: &mut R) -> Result<Self> {
        let mut truth = Scene::new(cfg.feature_dim, cfg.sh_degree, FeatureDecoder::identity(cfg.feature_dim));
        let color_map: Vec<f64> = (0..cfg.feature_dim * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for _ in 0..cfg.num_gaussians {
            let (mut g, base) = cfg.sampler.sample(rng, cfg.sh_degree, cfg.feature_dim);
            if cfg.features_from_color {
                for (d, f) in g.feature.iter_mut().enumerate() {
                    let row = &color_map[d * 4..d * 4 + 4];
                    *f = row[0] * base[0] + row[1] * base[1] + row[2] * base[2] + 0.5 * row[3];
                }
            }
            truth.gaussians.push(g);
        }
        truth.decoder = if cfg.feature_channels == cfg.feature_dim {
            FeatureDecoder::identity(cfg.feature_dim)
        } else {
            // Centre-tap-only random projection keeps targets spatially sharp.
            let mut dec = FeatureDecoder::zeros(cfg.feature_dim, cfg.feature_channels);
            let bound = 1.0 / (cfg.feature_dim as f64).sqrt();
            for o in 0..cfg.feature_channels {
                for i in 0..cfg.feature_dim {
                    let k = dec.kernel_index(o, i, 1, 1);
                    dec.kernel[k] = rng.gen_range(-bound..bound);
                }
            }
            dec
        };
        let total = cfg.train_views + cfg.held_out_views;
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        let mut cameras = ring_cameras(cfg.train_views, cfg.camera_radius, [0.0; 3], cfg.width, cfg.height, cfg.focal, phase);
        // Held-out views sit between training views.
        let step = std::f64::consts::TAU / cfg.train_views.max(1) as f64;
        cameras.extend(ring_cameras(
            cfg.held_out_views,
            cfg.camera_radius,
            [0.0; 3],
            cfg.width,
            cfg.height,
            cfg.focal,
            phase + 0.5 * step,
        ));
        debug_assert_eq!(cameras.len(), total);
        let raster = RasterConfig::default();
        let mut images = Vec::with_capacity(total);
        let mut clean = Vec::with_capacity(total);
        let mut noisy = Vec::with_capacity(total);
        for cam in &cameras {
            images.push(rasterize_rgb(&truth, cam, &raster)?.image);
            let low = rasterize_features(&truth, cam, cfg.feature_width, cfg.feature_height, &raster)?.image;
            let high = truth.decoder.apply(&low)?;
            let mut n = high.clone();
            for v in n.data.iter_mut() {
                *v += cfg.feature_noise * standard_normal(rng);
            }
            clean.push(high);
            noisy.push(n);
        }
        Ok(Self { truth, cameras, images, feature_maps: noisy, clean_feature_maps: clean, train_views: cfg.train_views })
    }

    pub fn held_out(&self) -> std::ops::Range<usize> {
        self.train_views..self.cameras.len()
    }
}

/// Jitters every geometric and appearance parameter of `scene`.
pub fn perturb<R: Rng>(scene: &Scene, rng: &mut R, magnitude: f64) -> Scene {
    let mut out = scene.clone();
    for g in &mut out.gaussians {
        for v in g.mean.iter_mut() {
            *v += magnitude * 0.5 * standard_normal(rng);
        }
        for v in g.log_scale.iter_mut() {
            *v += magnitude * standard_normal(rng);
        }
        for v in g.rotation.iter_mut() {
            *v += magnitude * 0.5 * standard_normal(rng);
        }
        g.opacity_logit += magnitude * 2.0 * standard_normal(rng);
        for v in g.sh.iter_mut() {
            *v += magnitude * standard_normal(rng);
        }
    }
    out
}

/// Fisher–Yates permutation of `0..n`.
pub fn shuffled<R: Rng>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}

/// Camera for [`smooth_scene`]: 24×24 px, on the −z axis looking at the origin.
pub fn smooth_scene_camera() -> CameraView {
    CameraView::look_at([0.0, 0.0, -4.0], [0.0; 3], [0.0, -1.0, 0.0], 24, 24, 24.0)
}

/// A scene in which every splat covers the whole [`smooth_scene_camera`]
/// frame with unclamped α above the skip threshold and transmittance never
/// reaches the termination floor, so the render is a smooth function of all
/// parameters. Used for finite-difference checks.
pub fn smooth_scene<R: Rng>(rng: &mut R, count: usize, feature_dim: usize, sh_degree: usize) -> Scene {
    let sampler = GaussianSampler {
        center: [0.0; 3],
        half_extent: [0.4, 0.4, 0.6],
        scale_range: (2.0, 3.0),
        opacity_range: (0.15, 0.3),
        color_range: (0.3, 0.7),
        sh_rest: 0.03,
    };
    let mut scene = random_scene(rng, count, feature_dim, sh_degree, &sampler);
    for g in &mut scene.gaussians {
        for f in g.feature.iter_mut() {
            *f = 2.0 * *f - 1.0;
        }
    }
    scene
}

/// How to build a library of fitted synthetic scenes.
#[derive(Debug, Clone)]
pub struct LibrarySpec {
    pub scenes: usize,
    pub synth: SynthConfig,
    pub fit: FitConfig,
    /// Perturbation applied to the ground truth before fitting.
    pub init_perturbation: f64,
}

impl Default for LibrarySpec {
    fn default() -> Self {
        Self {
            scenes: 4,
            synth: SynthConfig { features_from_color: true, feature_channels: 16, ..SynthConfig::default() },
            fit: FitConfig {
                iterations: 300,
                feature_dim: 8,
                allow_any_feature_dim: true,
                densify: DensifyConfig::disabled(),
                ..FitConfig::default()
            },
            init_perturbation: 0.1,
        }
    }
}

/// Generates and fits `spec.scenes` synthetic scenes. Held-out cameras of
/// each scene become the library's held-out views.
pub fn synthetic_library<R: Rng>(spec: &LibrarySpec, rng: &mut R) -> Result<(SceneLibrary, Vec<SyntheticScene>)> {
    let mut lib = SceneLibrary::default();
    let mut sources = Vec::with_capacity(spec.scenes);
    for k in 0..spec.scenes {
        let synth = SyntheticScene::generate(&spec.synth, rng)?;
        let mut init = perturb(&synth.truth, rng, spec.init_perturbation);
        init.randomize_features(rng);
        init.decoder = FeatureDecoder::random(spec.synth.feature_dim, spec.synth.feature_channels, rng);
        let n = synth.train_views;
        let fit = FitConfig { seed: spec.fit.seed.wrapping_add(k as u64), ..spec.fit.clone() };
        let out = fit_scene(&synth.cameras[..n], &synth.images[..n], &synth.feature_maps[..n], &fit, init)?;
        let views = synth
            .cameras
            .iter()
            .zip(&synth.images)
            .map(|(camera, image)| LibraryView { camera: camera.clone(), image: image.clone() })
            .collect();
        lib.scenes.push(LibraryScene {
            scene: out.scene,
            views,
            train_views: n,
            render_width: spec.synth.feature_width,
            render_height: spec.synth.feature_height,
        });
        sources.push(synth);
    }
    Ok((lib, sources))
}
