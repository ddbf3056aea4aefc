use std::path::PathBuf;

use clap::{Args, ValueEnum};
use featsplat_core::probe::pca_visualize;
use featsplat_core::raster::{rasterize_features, rasterize_rgb, RasterConfig};
use featsplat_core::CameraView;
use serde::Serialize;
use serde_json::json;

use super::{read_json, sidecar_record};
use crate::error::{CliError, CliResult};
use crate::formats::{load_scene, save_fmap};
use crate::manifest::{save_png, SceneManifest};
use crate::record::{to_value, RunRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RenderMode {
    /// Colour image as PNG.
    Rgb,
    /// Low-dimensional feature image as FMAP.
    Feature,
    /// Decoded feature image as FMAP.
    FeatureHigh,
    /// First three principal components of the decoded features as PNG.
    Pca,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RenderArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Take the pose from this manifest (with `--view`).
    #[arg(long, requires = "view", conflicts_with = "camera")]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub view: Option<usize>,
    /// Take the pose from a JSON camera file.
    #[arg(long)]
    pub camera: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = RenderMode::Rgb)]
    pub mode: RenderMode,
    /// Output resolution; defaults to the camera's.
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

fn camera(a: &RenderArgs) -> CliResult<CameraView> {
    let cam = match (&a.manifest, &a.camera) {
        (Some(m), None) => {
            let (manifest, _) = SceneManifest::open(m)?;
            let i = a.view.unwrap_or(0);
            manifest
                .views
                .get(i)
                .ok_or_else(|| CliError::Validation(format!("{} has no view {i}", m.display())))?
                .camera()
        }
        (None, Some(c)) => read_json::<CameraView>(c)?,
        _ => return Err(CliError::Validation("give either --manifest and --view, or --camera".into())),
    };
    cam.validate().map_err(|e| CliError::Validation(format!("camera: {e}")))?;
    Ok(cam)
}

pub(super) fn run(a: &RenderArgs) -> CliResult<()> {
    let scene = load_scene(&a.checkpoint)?;
    let cam = camera(a)?;
    let (w, h) = (a.width.unwrap_or(cam.width), a.height.unwrap_or(cam.height));
    if w == 0 || h == 0 {
        return Err(CliError::Validation("output resolution must be positive".into()));
    }
    let cam = cam.scaled_to(w, h);
    let raster = RasterConfig::default();
    let channels = match a.mode {
        RenderMode::Rgb => {
            let img = rasterize_rgb(&scene, &cam, &raster)?.image;
            save_png(&a.out, &img)?;
            3
        }
        RenderMode::Feature => {
            let img = rasterize_features(&scene, &cam, w, h, &raster)?.image;
            save_fmap(&a.out, &img)?;
            img.channels
        }
        RenderMode::FeatureHigh | RenderMode::Pca => {
            let low = rasterize_features(&scene, &cam, w, h, &raster)?.image;
            let high = scene.decoder.apply(&low)?;
            if a.mode == RenderMode::Pca {
                save_png(&a.out, &pca_visualize(&high)?)?;
                3
            } else {
                save_fmap(&a.out, &high)?;
                high.channels
            }
        }
    };
    let mut record = RunRecord::new("render", 0, to_value(a));
    record.outputs = vec![a.out.clone()];
    record.metrics = json!({ "width": w, "height": h, "channels": channels });
    record.save(&sidecar_record(&a.out))
}
