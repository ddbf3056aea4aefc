use featsplat_core::raster::{rasterize, rasterize_reference, ChannelMode, RasterConfig};
use featsplat_core::synthetic::{random_scene, ring_cameras, GaussianSampler};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn max_diff_on_untermimated(seed: u64, count: usize, d: usize, mode: ChannelMode) -> (f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scene = random_scene(&mut rng, count, d, 3, &GaussianSampler::default());
    let cam = ring_cameras(1, 3.5, [0.0; 3], 64, 64, 64.0, rng.gen_range(0.0..6.0)).remove(0);
    let cfg = RasterConfig { background: [0.1, 0.3, 0.2], ..Default::default() };
    let fast = rasterize(&scene, &cam, 64, 64, mode, &cfg).unwrap();
    let slow = rasterize_reference(&scene, &cam, 64, 64, mode, &cfg).unwrap();
    let c = fast.image.channels;
    let mut worst = 0.0f64;
    let mut terminated = 0;
    for p in 0..64 * 64 {
        if fast.early_terminated[p] {
            terminated += 1;
            continue;
        }
        for k in 0..c {
            worst = worst.max((fast.image.data[p * c + k] - slow.image.data[p * c + k]).abs());
        }
    }
    (worst, terminated)
}

#[test]
fn tile_path_matches_brute_force_for_features() {
    for seed in 0..6 {
        let (worst, _) = max_diff_on_untermimated(seed, 100 + 20 * seed as usize, 8, ChannelMode::Feature);
        assert!(worst <= 1e-5, "seed {seed}: {worst}");
    }
}

#[test]
fn tile_path_matches_brute_force_for_rgb() {
    for seed in 10..14 {
        let (worst, _) = max_diff_on_untermimated(seed, 200, 8, ChannelMode::Rgb);
        assert!(worst <= 1e-5, "seed {seed}: {worst}");
    }
}

#[test]
fn compositing_weights_sum_to_one_minus_transmittance() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut scene = random_scene(&mut rng, 60, 1, 0, &GaussianSampler::default());
    for g in &mut scene.gaussians {
        g.feature = vec![1.0];
    }
    let cam = ring_cameras(1, 3.5, [0.0; 3], 48, 48, 48.0, 0.3).remove(0);
    let out = rasterize(&scene, &cam, 48, 48, ChannelMode::Feature, &RasterConfig::default()).unwrap();
    for p in 0..48 * 48 {
        let t = out.alpha_accum[p];
        assert!((0.0..=1.0).contains(&t));
        // With unit features the blended value is exactly Σ wᵢ.
        assert!((out.image.data[p] - (1.0 - t)).abs() < 1e-12);
    }
}

#[test]
fn rendering_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let scene = random_scene(&mut rng, 150, 16, 3, &GaussianSampler::default());
    let cam = ring_cameras(1, 3.5, [0.0; 3], 64, 64, 64.0, 1.0).remove(0);
    let cfg = RasterConfig::default();
    let a = rasterize(&scene, &cam, 64, 64, ChannelMode::Feature, &cfg).unwrap();
    let b = rasterize(&scene, &cam, 64, 64, ChannelMode::Feature, &cfg).unwrap();
    assert_eq!(a.image, b.image);
    assert_eq!(a.contrib_count, b.contrib_count);
}

#[test]
fn feature_render_at_lower_resolution_rescales_intrinsics() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let scene = random_scene(&mut rng, 30, 4, 0, &GaussianSampler::default());
    let cam = ring_cameras(1, 3.5, [0.0; 3], 64, 64, 64.0, 0.0).remove(0);
    let half = cam.scaled_to(32, 32);
    let cfg = RasterConfig::default();
    let a = rasterize(&scene, &cam, 32, 32, ChannelMode::Feature, &cfg).unwrap();
    let b = rasterize(&scene, &half, 32, 32, ChannelMode::Feature, &cfg).unwrap();
    assert_eq!(a.image, b.image);
}
