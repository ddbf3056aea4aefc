use std::path::PathBuf;

use clap::Args;
use featsplat_core::raster::{rasterize_features, rasterize_rgb};
use featsplat_core::synthetic::{perturb, random_scene, GaussianSampler};
use featsplat_core::train::{fit_scene, l1_loss, psnr, DensifyConfig, FitConfig};
use featsplat_core::{CameraView, FeatureDecoder, Scene};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::error::{CliError, CliResult};
use crate::formats::{load_scene, save_scene};
use crate::manifest::SceneManifest;
use crate::record::{to_value, write_jsonl, RunRecord};

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory for `scene.gspl`, `metrics.jsonl` and `run.json`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 30000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 64)]
    pub feature_dim: usize,
    /// Accept feature dimensions other than 32, 64 and 128.
    #[arg(long)]
    pub allow_any_feature_dim: bool,
    #[arg(long, default_value_t = 0.2)]
    pub lambda_dssim: f64,
    #[arg(long, default_value_t = 1.0)]
    pub rgb_weight: f64,
    #[arg(long, default_value_t = 1.0)]
    pub feature_weight: f64,
    #[arg(long)]
    pub no_densify: bool,
    #[arg(long, default_value_t = 100)]
    pub metrics_interval: usize,
    /// Take geometry and appearance from this checkpoint. Features and the
    /// decoder are always initialised fresh.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Jitter applied to the `--init` geometry and appearance.
    #[arg(long, default_value_t = 0.0)]
    pub init_perturbation: f64,
    /// Gaussians sampled around the camera focus when no `--init` is given.
    #[arg(long, default_value_t = 500)]
    pub init_gaussians: usize,
    #[arg(long, default_value_t = 3)]
    pub sh_degree: usize,
}

impl FitArgs {
    pub fn config(&self) -> FitConfig {
        FitConfig {
            iterations: self.iterations,
            lambda_dssim: self.lambda_dssim,
            feature_dim: self.feature_dim,
            allow_any_feature_dim: self.allow_any_feature_dim,
            rgb_weight: self.rgb_weight,
            feature_weight: self.feature_weight,
            densify: if self.no_densify { DensifyConfig::disabled() } else { DensifyConfig::default() },
            metrics_interval: self.metrics_interval,
            seed: self.seed,
            ..FitConfig::default()
        }
    }
}

/// Least-squares point closest to every optical axis; the camera centroid
/// if the axes are (nearly) parallel.
pub(crate) fn focus_point(cams: &[CameraView]) -> [f64; 3] {
    let mut a = [[0.0; 3]; 3];
    let mut b = [0.0; 3];
    let mut centroid = [0.0; 3];
    for cam in cams {
        let c = cam.center();
        let d = cam.rotation()[2];
        for i in 0..3 {
            centroid[i] += c[i] / cams.len() as f64;
            for j in 0..3 {
                let m = if i == j { 1.0 } else { 0.0 } - d[i] * d[j];
                a[i][j] += m;
                b[i] += m * c[j];
            }
        }
    }
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(&a);
    if d.abs() < 1e-6 * cams.len().pow(3) as f64 {
        return centroid;
    }
    let mut x = [0.0; 3];
    for (k, xk) in x.iter_mut().enumerate() {
        let mut m = a;
        for r in 0..3 {
            m[r][k] = b[r];
        }
        *xk = det(&m) / d;
    }
    x
}

fn initial_scene(a: &FitArgs, cams: &[CameraView], channels: usize, rng: &mut ChaCha8Rng) -> CliResult<Scene> {
    let mut scene = match &a.init {
        Some(path) => {
            let s = load_scene(path)?;
            let mut s = perturb(&s, rng, a.init_perturbation);
            s.feature_dim = a.feature_dim;
            s
        }
        None => {
            let focus = focus_point(cams);
            let dist = cams.iter().map(|c| {
                let p = c.center();
                ((p[0] - focus[0]).powi(2) + (p[1] - focus[1]).powi(2) + (p[2] - focus[2]).powi(2)).sqrt()
            });
            let dist = dist.sum::<f64>() / cams.len() as f64;
            let sampler = GaussianSampler {
                center: focus,
                half_extent: [0.25 * dist; 3],
                scale_range: (0.01 * dist, 0.03 * dist),
                opacity_range: (0.1, 0.3),
                color_range: (0.2, 0.8),
                sh_rest: 0.0,
            };
            random_scene(rng, a.init_gaussians, a.feature_dim, a.sh_degree, &sampler)
        }
    };
    scene.randomize_features(rng);
    scene.decoder = FeatureDecoder::random(a.feature_dim, channels, rng);
    Ok(scene)
}

pub(super) fn run(a: &FitArgs) -> CliResult<()> {
    let cfg = a.config();
    cfg.validate()?;
    let (manifest, base) = SceneManifest::open(&a.manifest)?;
    let views = manifest.load_views(&base)?;
    let (train, held): (Vec<_>, Vec<_>) = views.into_iter().partition(|v| !v.held_out);
    if train.is_empty() {
        return Err(CliError::Validation(format!("{}: every view is held out", a.manifest.display())));
    }
    let cams: Vec<_> = train.iter().map(|v| v.camera.clone()).collect();
    let images: Vec<_> = train.iter().map(|v| v.image.clone()).collect();
    let maps: Vec<_> = train.iter().map(|v| v.features.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    rng.set_stream(1);
    let init = initial_scene(a, &cams, manifest.feature_channels, &mut rng)?;
    let out = fit_scene(&cams, &images, &maps, &cfg, init)?;

    let ckpt = a.out.join("scene.gspl");
    save_scene(&ckpt, &out.scene)?;
    write_jsonl(&a.out.join("metrics.jsonl"), &out.metrics)?;

    // Report on exactly what was written to disk.
    let scene = load_scene(&ckpt)?;
    let raster = cfg.raster();
    let eval = |set: &[crate::manifest::LoadedView]| -> CliResult<Option<(f64, f64)>> {
        if set.is_empty() {
            return Ok(None);
        }
        let (mut mse, mut l1) = (0.0, 0.0);
        for v in set {
            let rgb = rasterize_rgb(&scene, &v.camera, &raster)?.image;
            mse += 10f64.powf(-psnr(&rgb, &v.image)? / 10.0);
            let low = rasterize_features(&scene, &v.camera, v.features.width, v.features.height, &raster)?.image;
            l1 += l1_loss(&scene.decoder.apply(&low)?, &v.features)?.value;
        }
        let n = set.len() as f64;
        Ok(Some((-10.0 * (mse / n).log10(), l1 / n)))
    };
    let train_eval = eval(&train)?;
    let held_eval = eval(&held)?;
    let mut record = RunRecord::new("fit", a.seed, json!({ "args": to_value(a), "fit": to_value(&cfg) }));
    record.outputs = vec!["scene.gspl".into(), "metrics.jsonl".into()];
    record.metrics = json!({
        "num_gaussians": scene.len(),
        "feature_dim": scene.feature_dim,
        "decoder_channels": scene.decoder.c_out,
        "train_psnr": train_eval.map(|e| e.0),
        "train_feature_l1": train_eval.map(|e| e.1),
        "held_out_psnr": held_eval.map(|e| e.0),
        "held_out_feature_l1": held_eval.map(|e| e.1),
    });
    record.save(&a.out.join("run.json"))
}
