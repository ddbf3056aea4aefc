//! Linear probing: feature assembly, segmentation and depth heads, metrics
//! and PCA visualisation.

mod depth;
mod head;
mod metrics;
mod pca;
mod seg;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use depth::{bin_centers, depth_range, predict_depth, train_depth_probe, DepthProbe, DepthSample, NUM_DEPTH_BINS};
pub use head::{Fusion, LinearHead, ProbeConfig};
pub use metrics::{confusion_matrix, metrics_depth, metrics_seg, DepthMetrics, SegMetrics};
pub use pca::{pca, pca_visualize, Pca};
pub use seg::{train_seg_probe, SegProbe, SegSample};

use crate::error::{Error, Result};
use crate::scene::FeatureImage;

pub const IGNORE_LABEL: u8 = 255;

/// Per-pixel class ids; [`IGNORE_LABEL`] marks unlabeled pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl LabelImage {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!("label buffer has {} entries, expected {}", data.len(), height * width)));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, label: u8) -> Self {
        Self { height, width, data: vec![label; height * width] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AssemblyStrategy {
    #[default]
    Concat,
    Add,
    LinearFusion,
    /// The original features concatenated with themselves, a control for the
    /// extra channel count of `Concat`.
    ConcatSelf,
}

impl AssemblyStrategy {
    pub const ALL: [AssemblyStrategy; 4] = [Self::Concat, Self::Add, Self::LinearFusion, Self::ConcatSelf];

    pub fn name(self) -> &'static str {
        match self {
            Self::Concat => "concat",
            Self::Add => "add",
            Self::LinearFusion => "linear-fusion",
            Self::ConcatSelf => "concat-self",
        }
    }
}

impl fmt::Display for AssemblyStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AssemblyStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown assembly strategy {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssembledFeatures {
    pub data: FeatureImage,
    pub strategy: AssemblyStrategy,
    /// Channel count of the original features.
    pub orig_channels: usize,
}

impl AssembledFeatures {
    /// Channels seen by a probe head after any fusion layer.
    pub fn head_channels(&self) -> usize {
        match self.strategy {
            AssemblyStrategy::LinearFusion => self.orig_channels,
            _ => self.data.channels,
        }
    }
}

fn stack(a: &FeatureImage, b: &FeatureImage) -> FeatureImage {
    let c = a.channels + b.channels;
    let mut out = FeatureImage::zeros(a.height, a.width, c);
    for p in 0..a.num_pixels() {
        out.data[p * c..p * c + a.channels].copy_from_slice(&a.data[p * a.channels..(p + 1) * a.channels]);
        out.data[p * c + a.channels..(p + 1) * c].copy_from_slice(&b.data[p * b.channels..(p + 1) * b.channels]);
    }
    out
}

/// Combines original and fine-tuned features. `ConcatSelf` ignores `tuned`.
pub fn assemble(orig: &FeatureImage, tuned: &FeatureImage, strategy: AssemblyStrategy) -> Result<AssembledFeatures> {
    if strategy != AssemblyStrategy::ConcatSelf && (orig.height != tuned.height || orig.width != tuned.width) {
        return Err(Error::Shape(format!(
            "feature grids differ: {}×{} vs {}×{}",
            orig.height, orig.width, tuned.height, tuned.width
        )));
    }
    let needs_equal = matches!(strategy, AssemblyStrategy::Add | AssemblyStrategy::LinearFusion);
    if needs_equal && orig.channels != tuned.channels {
        return Err(Error::Shape(format!(
            "{strategy} needs equal channel counts, got {} and {}",
            orig.channels, tuned.channels
        )));
    }
    let data = match strategy {
        AssemblyStrategy::Concat | AssemblyStrategy::LinearFusion => stack(orig, tuned),
        AssemblyStrategy::ConcatSelf => stack(orig, orig),
        AssemblyStrategy::Add => {
            let mut out = orig.clone();
            out.data.iter_mut().zip(&tuned.data).for_each(|(a, b)| *a += b);
            out
        }
    };
    Ok(AssembledFeatures { data, strategy, orig_channels: orig.channels })
}

/// Assembles global tokens the same way as patch features.
pub fn assemble_tokens(orig: &[f64], tuned: &[f64], strategy: AssemblyStrategy) -> Result<Vec<f64>> {
    let a = FeatureImage { height: 1, width: 1, channels: orig.len(), data: orig.to_vec() };
    let b = FeatureImage { height: 1, width: 1, channels: tuned.len(), data: tuned.to_vec() };
    Ok(assemble(&a, &b, strategy)?.data.data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize, c: usize, offset: f64) -> FeatureImage {
        FeatureImage::from_vec(h, w, c, (0..h * w * c).map(|i| i as f64 * 0.5 + offset).collect()).unwrap()
    }

    #[test]
    fn concat_of_two_384_maps_has_768_channels() {
        let a = ramp(2, 3, 384, 0.0);
        let b = ramp(2, 3, 384, 1.0);
        let out = assemble(&a, &b, AssemblyStrategy::Concat).unwrap();
        assert_eq!(out.data.channels, 768);
        assert_eq!(&out.data.pixel(1, 2)[..384], a.pixel(1, 2));
        assert_eq!(&out.data.pixel(1, 2)[384..], b.pixel(1, 2));
    }

    #[test]
    fn add_with_zero_is_identity() {
        let a = ramp(3, 3, 5, 0.25);
        let out = assemble(&a, &FeatureImage::zeros(3, 3, 5), AssemblyStrategy::Add).unwrap();
        assert_eq!(out.data, a);
    }

    #[test]
    fn concat_self_equals_concat_with_a_copy() {
        let a = ramp(2, 2, 3, 0.0);
        let other = ramp(2, 2, 3, 9.0);
        let dup = assemble(&a, &other, AssemblyStrategy::ConcatSelf).unwrap();
        let direct = assemble(&a, &a, AssemblyStrategy::Concat).unwrap();
        assert_eq!(dup.data, direct.data);
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        assert!(assemble(&ramp(2, 2, 3, 0.0), &ramp(2, 3, 3, 0.0), AssemblyStrategy::Concat).is_err());
        assert!(assemble(&ramp(2, 2, 3, 0.0), &ramp(2, 2, 4, 0.0), AssemblyStrategy::Add).is_err());
        assert!(assemble(&ramp(2, 2, 3, 0.0), &ramp(2, 2, 4, 0.0), AssemblyStrategy::Concat).is_ok());
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in AssemblyStrategy::ALL {
            assert_eq!(s.name().parse::<AssemblyStrategy>().unwrap(), s);
        }
        assert_eq!(AssemblyStrategy::default(), AssemblyStrategy::Concat);
    }
}
