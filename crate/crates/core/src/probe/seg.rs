use serde::{Deserialize, Serialize};

use super::head::{Fusion, LinearHead, ProbeConfig};
use super::{AssemblyStrategy, LabelImage, IGNORE_LABEL};
use crate::error::{Error, Result};
use crate::scene::{BilinearMap, FeatureImage};

/// Patch-grid features with full-resolution labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SegSample {
    pub features: FeatureImage,
    pub labels: LabelImage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegProbe {
    pub head: LinearHead,
}

pub(crate) fn fusion_for(strategy: AssemblyStrategy, channels: usize) -> Result<Option<Fusion>> {
    if strategy != AssemblyStrategy::LinearFusion {
        return Ok(None);
    }
    if channels % 2 != 0 {
        return Err(Error::Shape(format!("linear fusion needs an even channel count, got {channels}")));
    }
    Ok(Some(Fusion::averaging(channels / 2)))
}

/// Features bilinearly resampled to label resolution. Logits are affine in
/// the features and bilinear weights sum to one, so upsampling features
/// then applying the head equals upsampling the logits.
pub(crate) fn upsampled(features: &FeatureImage, height: usize, width: usize) -> FeatureImage {
    if features.height == height && features.width == width {
        features.clone()
    } else {
        BilinearMap::new(features.height, features.width, height, width).apply(features)
    }
}

fn rows(sample: &SegSample) -> (Vec<f64>, Vec<u16>) {
    let l = &sample.labels;
    let up = upsampled(&sample.features, l.height, l.width);
    let c = up.channels;
    let mut x = Vec::new();
    let mut t = Vec::new();
    for (p, &label) in l.data.iter().enumerate() {
        if label != IGNORE_LABEL {
            x.extend_from_slice(&up.data[p * c..(p + 1) * c]);
            t.push(label as u16);
        }
    }
    (x, t)
}

fn check_samples(samples: &[SegSample]) -> Result<usize> {
    let c = samples.first().ok_or_else(|| Error::Config("no probe samples".into()))?.features.channels;
    if samples.iter().any(|s| s.features.channels != c) {
        return Err(Error::Shape("probe samples disagree on channel count".into()));
    }
    Ok(c)
}

/// Trains a zero-initialised linear segmentation head by per-pixel
/// cross-entropy at label resolution, skipping ignored pixels.
pub fn train_seg_probe(
    samples: &[SegSample],
    num_classes: usize,
    strategy: AssemblyStrategy,
    cfg: &ProbeConfig,
) -> Result<SegProbe> {
    let c = check_samples(samples)?;
    let mut head = LinearHead::zeros(1, c, fusion_for(strategy, c)?, num_classes)?;
    let data: Vec<_> = samples.iter().map(rows).collect();
    if data.iter().all(|(_, t)| t.is_empty()) {
        return Err(Error::Config("every label pixel is ignored".into()));
    }
    if let Some(bad) = data.iter().flat_map(|(_, t)| t).find(|&&v| v as usize >= num_classes) {
        return Err(Error::Config(format!("label {bad} outside 0..{num_classes}")));
    }
    head.train(&data, cfg)?;
    Ok(SegProbe { head })
}

impl SegProbe {
    /// Class logits on the feature grid.
    pub fn logits(&self, features: &FeatureImage) -> Result<FeatureImage> {
        if features.channels != self.head.input_dim() {
            return Err(Error::Shape(format!(
                "probe expects {} channels, features have {}",
                self.head.input_dim(),
                features.channels
            )));
        }
        let c = features.channels;
        let mut out = FeatureImage::zeros(features.height, features.width, self.head.classes);
        for p in 0..features.num_pixels() {
            let l = self.head.logits(&features.data[p * c..(p + 1) * c]);
            out.data[p * self.head.classes..(p + 1) * self.head.classes].copy_from_slice(&l);
        }
        Ok(out)
    }

    /// Argmax of logits bilinearly upsampled to `height × width`.
    pub fn predict(&self, features: &FeatureImage, height: usize, width: usize) -> Result<LabelImage> {
        let logits = upsampled(&self.logits(features)?, height, width);
        let k = logits.channels;
        let data = (0..height * width)
            .map(|p| {
                let row = &logits.data[p * k..(p + 1) * k];
                let mut best = 0;
                for (i, v) in row.iter().enumerate() {
                    if *v > row[best] {
                        best = i;
                    }
                }
                best as u8
            })
            .collect();
        LabelImage::new(height, width, data)
    }

    /// Mean cross-entropy over the labelled pixels of `samples`.
    pub fn loss(&self, samples: &[SegSample]) -> f64 {
        let data: Vec<_> = samples.iter().map(rows).collect();
        self.head.loss_and_grad(&data).0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_class_sample() -> SegSample {
        let (h, w) = (4, 4);
        let mut f = FeatureImage::zeros(h, w, 2);
        let mut labels = Vec::new();
        for y in 0..h {
            for x in 0..w {
                let class = (x >= 2) as u8;
                f.pixel_mut(y, x).copy_from_slice(&[if class == 1 { 1.0 } else { -1.0 }, 1.0]);
                labels.push(class);
            }
        }
        SegSample { features: f, labels: LabelImage::new(h, w, labels).unwrap() }
    }

    #[test]
    fn zero_probe_predicts_uniform_probabilities() {
        let s = two_class_sample();
        let probe = train_seg_probe(&[s.clone()], 3, AssemblyStrategy::Concat, &ProbeConfig { iterations: 0, ..ProbeConfig::default() }).unwrap();
        let logits = probe.logits(&s.features).unwrap();
        assert!(logits.data.iter().all(|&v| v == 0.0));
        assert!((probe.loss(&[s]) - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn single_class_dataset_is_predicted_everywhere() {
        let mut s = two_class_sample();
        s.labels.data.iter_mut().for_each(|v| *v = 1);
        let probe = train_seg_probe(&[s.clone()], 3, AssemblyStrategy::Concat, &ProbeConfig::default()).unwrap();
        let pred = probe.predict(&s.features, 8, 8).unwrap();
        assert!(pred.data.iter().all(|&v| v == 1));
    }

    #[test]
    fn all_ignored_is_an_error() {
        let mut s = two_class_sample();
        s.labels.data.iter_mut().for_each(|v| *v = IGNORE_LABEL);
        assert!(train_seg_probe(&[s], 2, AssemblyStrategy::Concat, &ProbeConfig::default()).is_err());
    }

    #[test]
    fn argmax_ignores_a_constant_logit_shift() {
        let s = two_class_sample();
        let mut probe = train_seg_probe(&[s.clone()], 2, AssemblyStrategy::Concat, &ProbeConfig { iterations: 20, ..ProbeConfig::default() }).unwrap();
        let before = probe.predict(&s.features, 4, 4).unwrap();
        probe.head.bias.iter_mut().for_each(|b| *b += 7.5);
        assert_eq!(probe.predict(&s.features, 4, 4).unwrap(), before);
    }
}
