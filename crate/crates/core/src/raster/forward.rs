use rayon::prelude::*;

use super::{
    eval_alpha, prepare, ChannelMode, ForwardCache, PreparedSplat, RasterConfig, RenderOutput,
    TRANSMITTANCE_EPS,
};
use crate::error::{Error, Result};
use crate::scene::{try_project, CameraView, FeatureImage, Scene};

struct PixelResult {
    color: Vec<f64>,
    transmittance: f64,
    walked: u32,
    contributors: u32,
    terminated: bool,
}

/// Front-to-back blend of `entries` (indices into `prepared`) at one pixel.
#[inline]
fn composite_pixel<I: Iterator<Item = usize>>(
    entries: I,
    prepared: &[PreparedSplat],
    values: &[f64],
    channels: usize,
    px: f64,
    py: f64,
    termination: f64,
    background: &[f64],
) -> PixelResult {
    let mut color = vec![0.0; channels];
    let mut t = 1.0;
    let mut walked = 0u32;
    let mut contributors = 0u32;
    let mut terminated = false;
    for (pos, k) in entries.enumerate() {
        let Some(a) = eval_alpha(&prepared[k], px, py) else {
            walked = pos as u32 + 1;
            continue;
        };
        let next_t = t * (1.0 - a.alpha);
        if next_t < termination {
            terminated = true;
            break;
        }
        let w = a.alpha * t;
        for (c, v) in color.iter_mut().zip(&values[k * channels..(k + 1) * channels]) {
            *c += w * v;
        }
        t = next_t;
        contributors += 1;
        walked = pos as u32 + 1;
    }
    for (c, b) in color.iter_mut().zip(background) {
        *c += t * b;
    }
    PixelResult { color, transmittance: t, walked, contributors, terminated }
}

fn background_for(mode: ChannelMode, channels: usize, cfg: &RasterConfig) -> Vec<f64> {
    match mode {
        ChannelMode::Rgb => cfg.background.to_vec(),
        ChannelMode::Feature => vec![0.0; channels],
    }
}

/// Tile-binned forward pass at `out_width × out_height`; intrinsics are
/// rescaled from `cam` when the resolution differs.
pub fn rasterize(
    scene: &Scene,
    cam: &CameraView,
    out_width: usize,
    out_height: usize,
    mode: ChannelMode,
    cfg: &RasterConfig,
) -> Result<RenderOutput> {
    if out_width == 0 || out_height == 0 {
        return Err(Error::Config("render resolution must be positive".into()));
    }
    let cam = if out_width == cam.width && out_height == cam.height { cam.clone() } else { cam.scaled_to(out_width, out_height) };
    let list = prepare(scene, &cam, mode, cfg.tile_size)?;
    let channels = list.channels;
    let background = background_for(mode, channels, cfg);
    let ts = list.tile_size;

    let tiles: Vec<Vec<(usize, PixelResult)>> = (0..list.tiles_x * list.tiles_y)
        .into_par_iter()
        .map(|tile| {
            let (tx, ty) = (tile % list.tiles_x, tile / list.tiles_x);
            let entries = list.tile_range(tile);
            let mut out = Vec::with_capacity(ts * ts);
            for y in ty * ts..((ty + 1) * ts).min(out_height) {
                for x in tx * ts..((tx + 1) * ts).min(out_width) {
                    let r = composite_pixel(
                        entries.iter().map(|&e| e as usize),
                        &list.prepared,
                        &list.values,
                        channels,
                        x as f64 + 0.5,
                        y as f64 + 0.5,
                        TRANSMITTANCE_EPS,
                        &background,
                    );
                    out.push((y * out_width + x, r));
                }
            }
            out
        })
        .collect();

    let n = out_width * out_height;
    let mut image = FeatureImage::zeros(out_height, out_width, channels);
    let mut alpha_accum = vec![1.0; n];
    let mut contrib_count = vec![0u32; n];
    let mut early_terminated = vec![false; n];
    let mut walked = vec![0u32; n];
    for (p, r) in tiles.into_iter().flatten() {
        image.data[p * channels..(p + 1) * channels].copy_from_slice(&r.color);
        alpha_accum[p] = r.transmittance;
        contrib_count[p] = r.contributors;
        early_terminated[p] = r.terminated;
        walked[p] = r.walked;
    }
    let degenerate_splats = list.degenerate;
    let cache = ForwardCache {
        mode,
        camera: cam,
        fingerprint: scene.fingerprint(),
        list,
        walked,
        final_transmittance: alpha_accum.clone(),
        background,
    };
    Ok(RenderOutput { image, alpha_accum, contrib_count, early_terminated, degenerate_splats, cache: Some(cache) })
}

pub fn rasterize_rgb(scene: &Scene, cam: &CameraView, cfg: &RasterConfig) -> Result<RenderOutput> {
    rasterize(scene, cam, cam.width, cam.height, ChannelMode::Rgb, cfg)
}

/// Renders the low-dimensional feature image; the background is the zero vector.
pub fn rasterize_features(
    scene: &Scene,
    cam: &CameraView,
    out_width: usize,
    out_height: usize,
    cfg: &RasterConfig,
) -> Result<RenderOutput> {
    rasterize(scene, cam, out_width, out_height, ChannelMode::Feature, cfg)
}

/// Brute-force oracle: every pixel walks every visible splat in global depth
/// order, no tiles and no early termination.
pub fn rasterize_reference(
    scene: &Scene,
    cam: &CameraView,
    out_width: usize,
    out_height: usize,
    mode: ChannelMode,
    cfg: &RasterConfig,
) -> Result<RenderOutput> {
    let cam = cam.scaled_to(out_width, out_height);
    let channels = match mode {
        ChannelMode::Rgb => 3,
        ChannelMode::Feature => scene.feature_dim,
    };
    let background = background_for(mode, channels, cfg);
    let n = out_width * out_height;
    if scene.is_empty() {
        let image = FeatureImage::filled(out_height, out_width, &background);
        return Ok(RenderOutput {
            image,
            alpha_accum: vec![1.0; n],
            contrib_count: vec![0; n],
            early_terminated: vec![false; n],
            degenerate_splats: 0,
            cache: None,
        });
    }
    // Single-tile binning yields the global depth order with no spatial pruning.
    let list = prepare(scene, &cam, mode, out_width.max(out_height))?;
    let all: Vec<usize> = (0..list.prepared.len()).collect();
    let mut image = FeatureImage::zeros(out_height, out_width, channels);
    let mut alpha_accum = vec![1.0; n];
    let mut contrib_count = vec![0u32; n];
    for y in 0..out_height {
        for x in 0..out_width {
            let r = composite_pixel(
                all.iter().copied(),
                &list.prepared,
                &list.values,
                channels,
                x as f64 + 0.5,
                y as f64 + 0.5,
                0.0,
                &background,
            );
            let p = y * out_width + x;
            image.data[p * channels..(p + 1) * channels].copy_from_slice(&r.color);
            alpha_accum[p] = r.transmittance;
            contrib_count[p] = r.contributors;
        }
    }
    Ok(RenderOutput {
        image,
        alpha_accum,
        contrib_count,
        early_terminated: vec![false; n],
        degenerate_splats: list.degenerate,
        cache: None,
    })
}

/// Blending weight of every Gaussian contributing to pixel `(x, y)`, in
/// depth order. Computed by the reference walk.
pub fn pixel_weights(scene: &Scene, cam: &CameraView, x: usize, y: usize) -> Vec<(usize, f64)> {
    let mut visible: Vec<_> = scene
        .gaussians
        .iter()
        .enumerate()
        .filter_map(|(i, g)| try_project(g, cam).ok().map(|p| (i, p)))
        .collect();
    visible.sort_by(|a, b| a.1.splat.depth.total_cmp(&b.1.splat.depth).then(a.0.cmp(&b.0)));
    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
    let mut t = 1.0;
    let mut out = Vec::new();
    for (i, p) in visible {
        let prep = PreparedSplat {
            gaussian: i,
            mean2d: p.splat.mean2d,
            conic: p.conic,
            opacity: scene.gaussians[i].opacity(),
            pixel_rect: p.pixel_rect,
        };
        if let Some(a) = eval_alpha(&prep, px, py) {
            out.push((i, a.alpha * t));
            t *= 1.0 - a.alpha;
        }
    }
    out
}
