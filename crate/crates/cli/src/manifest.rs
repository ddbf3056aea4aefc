//! Scene manifests: JSON documents describing the registered views of one
//! scene.
//!
//! ```json
//! {
//!   "scene_id": "kitchen",
//!   "feature_channels": 384,
//!   "views": [
//!     {
//!       "image": "images/0000.png",
//!       "features": "features/0000.fmap",
//!       "width": 448, "height": 336,
//!       "fx": 400.0, "fy": 400.0, "cx": 224.0, "cy": 168.0,
//!       "world_to_camera": [1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 2.5, 0, 0, 0, 1],
//!       "held_out": false
//!     }
//!   ]
//! }
//! ```
//!
//! Paths are relative to the manifest's directory. `world_to_camera` is a
//! row-major 4×4 rigid transform into a camera frame with +x right, +y down
//! and +z forward. Images are 8-bit PNG, read as RGB in `[0, 1]`; feature
//! maps are `FMAP` files. Views marked `held_out` are never fitted.
//!
//! COLMAP world-to-camera poses already follow this convention. OpenGL-style
//! camera-to-world poses (+y up, +z backward) convert by negating the second
//! and third columns of the pose, then inverting it.

use std::fs;
use std::path::{Path, PathBuf};

use featsplat_core::{CameraView, FeatureImage};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::formats::{fmap_shape, load_fmap};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewEntry {
    pub image: PathBuf,
    pub features: PathBuf,
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub world_to_camera: [f64; 16],
    #[serde(default)]
    pub held_out: bool,
}

impl ViewEntry {
    pub fn camera(&self) -> CameraView {
        let m = &self.world_to_camera;
        let mut w2c = [[0.0; 4]; 4];
        for (r, row) in w2c.iter_mut().enumerate() {
            row.copy_from_slice(&m[4 * r..4 * r + 4]);
        }
        CameraView { width: self.width, height: self.height, fx: self.fx, fy: self.fy, cx: self.cx, cy: self.cy, world_to_camera: w2c }
    }

    pub fn from_camera(cam: &CameraView, image: PathBuf, features: PathBuf, held_out: bool) -> Self {
        let mut m = [0.0; 16];
        for (r, row) in cam.world_to_camera.iter().enumerate() {
            m[4 * r..4 * r + 4].copy_from_slice(row);
        }
        Self {
            image,
            features,
            width: cam.width,
            height: cam.height,
            fx: cam.fx,
            fy: cam.fy,
            cx: cam.cx,
            cy: cam.cy,
            world_to_camera: m,
            held_out,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub scene_id: String,
    pub feature_channels: usize,
    pub views: Vec<ViewEntry>,
}

/// A view with its files read into memory.
#[derive(Debug, Clone)]
pub struct LoadedView {
    pub camera: CameraView,
    pub image: FeatureImage,
    pub features: FeatureImage,
    pub held_out: bool,
}

impl SceneManifest {
    /// Parses a manifest and checks every referenced file exists, cameras
    /// are valid and feature maps agree on their channel count. File
    /// contents are not read.
    pub fn open(path: &Path) -> CliResult<(Self, PathBuf)> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let m: SceneManifest = serde_json::from_str(&text).map_err(|e| CliError::format(path, e.to_string()))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.check(&base)?;
        Ok((m, base))
    }

    fn check(&self, base: &Path) -> CliResult<()> {
        if self.views.is_empty() {
            return Err(CliError::Validation(format!("manifest for scene '{}' lists no views", self.scene_id)));
        }
        for (i, v) in self.views.iter().enumerate() {
            for p in [&v.image, &v.features] {
                let full = base.join(p);
                if !full.is_file() {
                    return Err(CliError::Validation(format!("missing file {}", full.display())));
                }
            }
            v.camera()
                .validate()
                .map_err(|e| CliError::Validation(format!("view {i} of scene '{}': {e}", self.scene_id)))?;
            let (_, _, c) = fmap_shape(&base.join(&v.features))?;
            if c != self.feature_channels {
                return Err(CliError::Validation(format!(
                    "{} has {c} channels, manifest declares {}",
                    base.join(&v.features).display(),
                    self.feature_channels
                )));
            }
        }
        Ok(())
    }

    pub fn load_views(&self, base: &Path) -> CliResult<Vec<LoadedView>> {
        self.views
            .iter()
            .map(|v| {
                let image = load_png(&base.join(&v.image))?;
                if image.width != v.width || image.height != v.height {
                    return Err(CliError::Validation(format!(
                        "{} is {}×{}, manifest says {}×{}",
                        base.join(&v.image).display(),
                        image.width,
                        image.height,
                        v.width,
                        v.height
                    )));
                }
                Ok(LoadedView { camera: v.camera(), image, features: load_fmap(&base.join(&v.features))?, held_out: v.held_out })
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::format(path, e.to_string()))?;
        crate::formats::write_bytes(path, text.as_bytes())
    }
}

/// Reads an 8-bit PNG as RGB in `[0, 1]`.
pub fn load_png(path: &Path) -> CliResult<FeatureImage> {
    let img = image::open(path).map_err(|e| CliError::format(path, e.to_string()))?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
    Ok(FeatureImage::from_vec(h, w, 3, data)?)
}

/// Writes a 3-channel (RGB) or 1-channel (grey) image, clamped to `[0, 1]`.
pub fn save_png(path: &Path, img: &FeatureImage) -> CliResult<()> {
    let bytes: Vec<u8> = img.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let color = match img.channels {
        1 => image::ExtendedColorType::L8,
        3 => image::ExtendedColorType::Rgb8,
        c => return Err(CliError::Validation(format!("cannot write a {c}-channel image as PNG"))),
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    image::save_buffer(path, &bytes, img.width as u32, img.height as u32, color).map_err(|e| CliError::format(path, e.to_string()))
}

/// Reads an 8-bit greyscale PNG of class indices.
pub fn load_label_png(path: &Path) -> CliResult<featsplat_core::probe::LabelImage> {
    let img = image::open(path).map_err(|e| CliError::format(path, e.to_string()))?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(featsplat_core::probe::LabelImage::new(h, w, img.into_raw())?)
}

pub fn save_label_png(path: &Path, labels: &featsplat_core::probe::LabelImage) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    image::save_buffer(path, &labels.data, labels.width as u32, labels.height as u32, image::ExtendedColorType::L8)
        .map_err(|e| CliError::format(path, e.to_string()))
}
