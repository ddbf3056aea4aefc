//! Cross-view consistency of extracted features.

use serde::{Deserialize, Serialize};

use super::FeatureExtractor;
use crate::error::{Error, Result};
use crate::raster::pixel_weights;
use crate::scene::{project_gaussian, CameraView, FeatureImage, Scene};

/// Matching continuous pixel positions (pixel centres at `i + 0.5`) in two
/// views.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub a: [f64; 2],
    pub b: [f64; 2],
}

/// Correspondences from projected Gaussian centres that dominate their
/// pixel (blend weight at least `min_weight`) in both views.
pub fn correspondences(scene: &Scene, cam_a: &CameraView, cam_b: &CameraView, min_weight: f64) -> Vec<Correspondence> {
    let dominant = |i: usize, cam: &CameraView| -> Option<[f64; 2]> {
        let s = project_gaussian(&scene.gaussians[i], cam)?;
        let [u, v] = s.mean2d;
        if u < 0.0 || v < 0.0 || u >= cam.width as f64 || v >= cam.height as f64 {
            return None;
        }
        let w = pixel_weights(scene, cam, u as usize, v as usize);
        w.iter().any(|&(g, wt)| g == i && wt >= min_weight).then_some([u, v])
    };
    (0..scene.len())
        .filter_map(|i| Some(Correspondence { a: dominant(i, cam_a)?, b: dominant(i, cam_b)? }))
        .collect()
}

/// Bilinear lookup on a patch grid at continuous pixel position `(x, y)`.
pub fn sample_bilinear(grid: &FeatureImage, patch_size: usize, x: f64, y: f64) -> Vec<f64> {
    let gx = (x / patch_size as f64 - 0.5).clamp(0.0, (grid.width - 1) as f64);
    let gy = (y / patch_size as f64 - 0.5).clamp(0.0, (grid.height - 1) as f64);
    let (x0, y0) = (gx.floor() as usize, gy.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(grid.width - 1), (y0 + 1).min(grid.height - 1));
    let (fx, fy) = (gx - x0 as f64, gy - y0 as f64);
    let mut out = vec![0.0; grid.channels];
    for (yy, wy) in [(y0, 1.0 - fy), (y1, fy)] {
        for (xx, wx) in [(x0, 1.0 - fx), (x1, fx)] {
            for (o, v) in out.iter_mut().zip(grid.pixel(yy, xx)) {
                *o += wy * wx * v;
            }
        }
    }
    out
}

fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return if na == nb { 0.0 } else { 1.0 };
    }
    1.0 - (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// Mean cosine distance between features extracted at corresponding pixels.
/// `pairs[k]` indexes `images` and `corr[k]` holds its correspondences.
pub fn multiview_consistency(
    e: &FeatureExtractor,
    images: &[FeatureImage],
    pairs: &[(usize, usize)],
    corr: &[Vec<Correspondence>],
) -> Result<f64> {
    if pairs.len() != corr.len() {
        return Err(Error::Config(format!("{} view pairs but {} correspondence sets", pairs.len(), corr.len())));
    }
    let total: usize = corr.iter().map(Vec::len).sum();
    if total == 0 {
        return Err(Error::Config("empty correspondence set".into()));
    }
    let p = e.patch_size();
    let mut sum = 0.0;
    for (&(ia, ib), cs) in pairs.iter().zip(corr) {
        if cs.is_empty() {
            continue;
        }
        let fa = e.extract(images.get(ia).ok_or_else(|| Error::Config(format!("no image {ia}")))?)?.grid;
        let fb = e.extract(images.get(ib).ok_or_else(|| Error::Config(format!("no image {ib}")))?)?.grid;
        for c in cs {
            sum += cosine_distance(&sample_bilinear(&fa, p, c.a[0], c.a[1]), &sample_bilinear(&fb, p, c.b[0], c.b[1]));
        }
    }
    Ok(sum / total as f64)
}
