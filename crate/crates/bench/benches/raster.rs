use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use featsplat_bench::fixture;
use featsplat_core::raster::{rasterize, rasterize_backward, ChannelMode, RasterConfig};
use featsplat_core::FeatureImage;

fn forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward");
    let cfg = RasterConfig::default();
    for (count, dim) in [(200, 8), (200, 64), (2000, 64)] {
        let (scene, cam) = fixture(count, dim, 128);
        group.bench_with_input(BenchmarkId::new("feature", format!("{count}x{dim}")), &scene, |b, s| {
            b.iter(|| rasterize(s, &cam, 128, 128, ChannelMode::Feature, &cfg).unwrap())
        });
    }
    let (scene, cam) = fixture(2000, 8, 128);
    group.bench_function("rgb/2000", |b| b.iter(|| rasterize(&scene, &cam, 128, 128, ChannelMode::Rgb, &cfg).unwrap()));
    group.finish();
}

fn backward(c: &mut Criterion) {
    let mut group = c.benchmark_group("backward");
    let cfg = RasterConfig::default();
    for (count, dim) in [(200, 8), (2000, 64)] {
        let (scene, cam) = fixture(count, dim, 128);
        let out = rasterize(&scene, &cam, 128, 128, ChannelMode::Feature, &cfg).unwrap();
        let cache = out.cache.unwrap();
        let upstream = FeatureImage::filled(128, 128, &vec![1.0; dim]);
        group.bench_function(BenchmarkId::new("feature", format!("{count}x{dim}")), |b| {
            b.iter(|| rasterize_backward(&scene, &upstream, &cache).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, forward, backward);
criterion_main!(benches);
