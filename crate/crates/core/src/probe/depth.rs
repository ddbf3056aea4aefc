use serde::{Deserialize, Serialize};

use super::head::{softmax, LinearHead, ProbeConfig};
use super::seg::{fusion_for, upsampled};
use super::AssemblyStrategy;
use crate::error::{Error, Result};
use crate::scene::FeatureImage;

pub const NUM_DEPTH_BINS: usize = 256;

/// Patch-grid features, the image's global token and a full-resolution
/// depth map (single channel; non-positive or non-finite entries are
/// invalid).
#[derive(Debug, Clone, PartialEq)]
pub struct DepthSample {
    pub features: FeatureImage,
    pub global: Vec<f64>,
    pub depth: FeatureImage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthProbe {
    /// Two input segments: the patch feature and the global token.
    pub head: LinearHead,
    pub d_min: f64,
    pub d_max: f64,
}

pub fn is_valid_depth(d: f64) -> bool {
    d.is_finite() && d > 0.0
}

pub fn bin_centers(d_min: f64, d_max: f64) -> Vec<f64> {
    let w = (d_max - d_min) / NUM_DEPTH_BINS as f64;
    (0..NUM_DEPTH_BINS).map(|b| d_min + (b as f64 + 0.5) * w).collect()
}

fn nearest_bin(d: f64, d_min: f64, d_max: f64) -> u16 {
    let w = (d_max - d_min) / NUM_DEPTH_BINS as f64;
    ((d - d_min) / w).floor().clamp(0.0, (NUM_DEPTH_BINS - 1) as f64) as u16
}

/// 1st and 99th percentiles (nearest rank) of all valid depths.
pub fn depth_range(samples: &[DepthSample]) -> Result<(f64, f64)> {
    let mut v: Vec<f64> = samples.iter().flat_map(|s| s.depth.data.iter().copied()).filter(|&d| is_valid_depth(d)).collect();
    if v.is_empty() {
        return Err(Error::Config("no valid depth pixels".into()));
    }
    v.sort_by(f64::total_cmp);
    let rank = |q: f64| v[((q * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1];
    let (lo, hi) = (rank(0.01), rank(0.99));
    if !(lo < hi) {
        return Err(Error::Config(format!("degenerate depth range [{lo}, {hi}]")));
    }
    Ok((lo, hi))
}

fn rows(sample: &DepthSample, d_min: f64, d_max: f64) -> (Vec<f64>, Vec<u16>) {
    let d = &sample.depth;
    let up = upsampled(&sample.features, d.height, d.width);
    let c = up.channels;
    let mut x = Vec::new();
    let mut t = Vec::new();
    for (p, &depth) in d.data.iter().enumerate() {
        if is_valid_depth(depth) {
            x.extend_from_slice(&up.data[p * c..(p + 1) * c]);
            x.extend_from_slice(&sample.global);
            t.push(nearest_bin(depth, d_min, d_max));
        }
    }
    (x, t)
}

/// Trains a zero-initialised 256-bin head by cross-entropy to the nearest
/// bin. `range` defaults to the 1st/99th depth percentiles of `samples`.
pub fn train_depth_probe(
    samples: &[DepthSample],
    strategy: AssemblyStrategy,
    range: Option<(f64, f64)>,
    cfg: &ProbeConfig,
) -> Result<DepthProbe> {
    let first = samples.first().ok_or_else(|| Error::Config("no probe samples".into()))?;
    let c = first.features.channels;
    for s in samples {
        if s.features.channels != c || s.global.len() != c {
            return Err(Error::Shape("depth samples need matching feature and global-token widths".into()));
        }
        if s.depth.channels != 1 {
            return Err(Error::Shape("depth maps must have one channel".into()));
        }
    }
    let (d_min, d_max) = match range {
        Some(r) => r,
        None => depth_range(samples)?,
    };
    if !(d_min < d_max) {
        return Err(Error::Config(format!("invalid depth range [{d_min}, {d_max}]")));
    }
    let mut head = LinearHead::zeros(2, c, fusion_for(strategy, c)?, NUM_DEPTH_BINS)?;
    let data: Vec<_> = samples.iter().map(|s| rows(s, d_min, d_max)).collect();
    head.train(&data, cfg)?;
    Ok(DepthProbe { head, d_min, d_max })
}

/// Softmax-expectation depth per patch, bilinearly upsampled to
/// `height × width`.
pub fn predict_depth(probe: &DepthProbe, features: &FeatureImage, global: &[f64], height: usize, width: usize) -> Result<FeatureImage> {
    let c = probe.head.seg_dim;
    if features.channels != c || global.len() != c {
        return Err(Error::Shape(format!(
            "depth probe expects {c} channels, got features {} and global {}",
            features.channels,
            global.len()
        )));
    }
    let centers = bin_centers(probe.d_min, probe.d_max);
    let mut grid = FeatureImage::zeros(features.height, features.width, 1);
    let mut x = vec![0.0; 2 * c];
    x[c..].copy_from_slice(global);
    for p in 0..features.num_pixels() {
        x[..c].copy_from_slice(&features.data[p * c..(p + 1) * c]);
        let prob = softmax(&probe.head.logits(&x));
        let d: f64 = prob.iter().zip(&centers).map(|(a, b)| a * b).sum();
        grid.data[p] = d.clamp(probe.d_min, probe.d_max);
    }
    Ok(upsampled(&grid, height, width))
}
