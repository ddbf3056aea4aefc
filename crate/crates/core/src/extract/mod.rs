//! 2D feature extractors and 3D-aware fine-tuning.

mod consistency;
mod encoder;
mod finetune;

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::Hasher;

pub use consistency::{correspondences, multiview_consistency, sample_bilinear, Correspondence};
pub use encoder::{EncoderTape, Extracted, Layout, ToyPatchEncoder, DEFAULT_PATCH_SIZE, NUM_BLOCKS};
pub use finetune::{
    finetune, render_target, target_l1, FinetuneConfig, FinetuneOutcome, LibraryScene, LibraryView, SceneLibrary,
    ViewRef,
};

use crate::error::{Error, Result};
use crate::scene::FeatureImage;

/// Identifies an image by its exact contents.
pub fn image_key(image: &FeatureImage) -> u64 {
    let mut h = DefaultHasher::new();
    h.write_usize(image.height);
    h.write_usize(image.width);
    h.write_usize(image.channels);
    for v in &image.data {
        h.write_u64(v.to_bits());
    }
    h.finish()
}

/// Frozen extractor serving precomputed feature maps (for example exported
/// from a foundation model). The global token is the mean patch feature.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FileBackedExtractor {
    pub patch_size: usize,
    pub channels: usize,
    maps: HashMap<u64, FeatureImage>,
}

impl FileBackedExtractor {
    pub fn new(patch_size: usize, channels: usize) -> Self {
        Self { patch_size, channels, maps: HashMap::new() }
    }

    pub fn register(&mut self, image: &FeatureImage, features: FeatureImage) -> Result<()> {
        if features.channels != self.channels {
            return Err(Error::Shape(format!(
                "feature file has {} channels, extractor serves {}",
                features.channels, self.channels
            )));
        }
        self.maps.insert(image_key(image), features);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureExtractor {
    Toy(ToyPatchEncoder),
    FileBacked(FileBackedExtractor),
}

impl FeatureExtractor {
    pub fn patch_size(&self) -> usize {
        match self {
            Self::Toy(e) => e.patch_size,
            Self::FileBacked(e) => e.patch_size,
        }
    }

    pub fn channels(&self) -> usize {
        match self {
            Self::Toy(e) => e.channels,
            Self::FileBacked(e) => e.channels,
        }
    }

    pub fn is_trainable(&self) -> bool {
        matches!(self, Self::Toy(_))
    }

    pub fn extract(&self, image: &FeatureImage) -> Result<Extracted> {
        match self {
            Self::Toy(e) => e.forward(image),
            Self::FileBacked(e) => {
                let grid = e.maps.get(&image_key(image)).ok_or(Error::UnregisteredImage)?.clone();
                let global = grid.channel_mean();
                Ok(Extracted { grid, global })
            }
        }
    }
}
