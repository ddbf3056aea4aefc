use std::path::PathBuf;

use clap::Args;
use featsplat_core::synthetic::{SynthConfig, SyntheticScene};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::CliResult;
use crate::formats::{save_fmap, save_scene};
use crate::manifest::{save_png, SceneManifest, ViewEntry};
use crate::record::{to_value, RunRecord};

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    /// Output directory (manifest, images, feature maps, ground truth).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub gaussians: usize,
    #[arg(long, default_value_t = 8)]
    pub train_views: usize,
    #[arg(long, default_value_t = 2)]
    pub held_out_views: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    /// Per-Gaussian feature dimension of the ground truth.
    #[arg(long, default_value_t = 8)]
    pub feature_dim: usize,
    /// Channels of the emitted feature maps; defaults to the feature
    /// dimension (identity decoder).
    #[arg(long)]
    pub feature_channels: Option<usize>,
    /// Side length of the square feature maps.
    #[arg(long, default_value_t = 32)]
    pub feature_size: usize,
    /// Standard deviation of per-view feature noise.
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 3)]
    pub sh_degree: usize,
    /// Derive each Gaussian's feature from its colour.
    #[arg(long)]
    pub features_from_color: bool,
}

impl SynthArgs {
    pub fn config(&self) -> SynthConfig {
        SynthConfig {
            num_gaussians: self.gaussians,
            train_views: self.train_views,
            held_out_views: self.held_out_views,
            width: self.width,
            height: self.height,
            focal: self.width as f64,
            feature_dim: self.feature_dim,
            feature_channels: self.feature_channels.unwrap_or(self.feature_dim),
            feature_width: self.feature_size,
            feature_height: self.feature_size,
            feature_noise: self.noise,
            features_from_color: self.features_from_color,
            sh_degree: self.sh_degree,
            ..SynthConfig::default()
        }
    }
}

/// Writes `manifest.json`, `images/`, `features/` (noisy maps), `clean/`
/// (noise-free maps) and `truth.gspl`.
pub(super) fn run(a: &SynthArgs) -> CliResult<()> {
    let cfg = a.config();
    if cfg.train_views == 0 || cfg.feature_dim == 0 || cfg.width == 0 || cfg.height == 0 || cfg.feature_width == 0 {
        return Err(crate::CliError::Validation("views, feature dimension and sizes must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let synth = SyntheticScene::generate(&cfg, &mut rng)?;
    let mut views = Vec::new();
    for (i, cam) in synth.cameras.iter().enumerate() {
        let image = PathBuf::from(format!("images/{i:04}.png"));
        let features = PathBuf::from(format!("features/{i:04}.fmap"));
        save_png(&a.out.join(&image), &synth.images[i])?;
        save_fmap(&a.out.join(&features), &synth.feature_maps[i])?;
        save_fmap(&a.out.join(format!("clean/{i:04}.fmap")), &synth.clean_feature_maps[i])?;
        views.push(ViewEntry::from_camera(cam, image, features, i >= synth.train_views));
    }
    let manifest = SceneManifest { scene_id: format!("synthetic-{}", a.seed), feature_channels: cfg.feature_channels, views };
    manifest.save(&a.out.join("manifest.json"))?;
    save_scene(&a.out.join("truth.gspl"), &synth.truth)?;
    let mut record = RunRecord::new("synth", a.seed, to_value(a));
    record.outputs = vec!["manifest.json".into(), "truth.gspl".into()];
    record.save(&a.out.join("run.json"))
}
