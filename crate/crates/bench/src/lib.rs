//! Fixtures shared by the benchmarks.

use featsplat_core::synthetic::{random_scene, GaussianSampler};
use featsplat_core::{CameraView, Scene};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A seeded scene of `count` Gaussians seen from a camera 4 units away.
pub fn fixture(count: usize, feature_dim: usize, size: usize) -> (Scene, CameraView) {
    let mut rng = ChaCha8Rng::seed_from_u64(count as u64);
    let scene = random_scene(&mut rng, count, feature_dim, 3, &GaussianSampler::default());
    let cam = CameraView::look_at([0.0, 0.0, -4.0], [0.0; 3], [0.0, -1.0, 0.0], size, size, size as f64);
    (scene, cam)
}
