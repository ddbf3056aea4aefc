use rayon::prelude::*;

use super::{eval_alpha, ChannelMode, ForwardCache};
use crate::error::{Error, Result};
use crate::math::{mat3_mul, mat3_transpose, norm3, quat_to_mat, quat_to_mat_backward, sub3, Mat3};
use crate::scene::{projection_jacobian, sh, FeatureImage, Scene};

/// Gradients for every per-Gaussian parameter group, flattened with a fixed
/// stride per Gaussian. Groups not reached by the rendered channel mode stay
/// zero (SH for feature renders, features for RGB renders).
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianGrads {
    pub mean: Vec<f64>,
    pub log_scale: Vec<f64>,
    pub rotation: Vec<f64>,
    pub opacity_logit: Vec<f64>,
    pub sh: Vec<f64>,
    pub feature: Vec<f64>,
    /// Screen-space mean gradient (px units) per Gaussian, `[gx, gy]`.
    pub mean2d: Vec<[f64; 2]>,
    /// Whether the Gaussian survived culling in this render.
    pub visible: Vec<bool>,
}

impl GaussianGrads {
    pub fn zeros(num: usize, sh_len: usize, feature_dim: usize) -> Self {
        Self {
            mean: vec![0.0; num * 3],
            log_scale: vec![0.0; num * 3],
            rotation: vec![0.0; num * 4],
            opacity_logit: vec![0.0; num],
            sh: vec![0.0; num * sh_len],
            feature: vec![0.0; num * feature_dim],
            mean2d: vec![[0.0; 2]; num],
            visible: vec![false; num],
        }
    }

    pub fn for_scene(scene: &Scene) -> Self {
        Self::zeros(scene.len(), 3 * scene.num_sh_coeffs(), scene.feature_dim)
    }
}

/// Screen-space gradient record laid out as
/// `[mean2d.x, mean2d.y, conic.a, conic.b, conic.c, opacity, values...]`.
const SCREEN_FIXED: usize = 6;

struct Contributor {
    splat: usize,
    alpha: f64,
    t_before: f64,
    falloff: f64,
    clamped: bool,
    dx: f64,
    dy: f64,
}

/// Analytic gradients of `Σ upstream ⊙ image` for a render produced by the
/// tile path. Fails if the scene changed since the forward pass.
pub fn rasterize_backward(
    scene: &Scene,
    upstream_grad: &FeatureImage,
    cache: &ForwardCache,
) -> Result<GaussianGrads> {
    if scene.fingerprint() != cache.fingerprint {
        return Err(Error::StaleCache);
    }
    let cam = &cache.camera;
    let list = &cache.list;
    let ch = list.channels;
    if upstream_grad.width != cam.width || upstream_grad.height != cam.height || upstream_grad.channels != ch {
        return Err(Error::Shape(format!(
            "upstream gradient {}×{}×{} does not match render {}×{}×{}",
            upstream_grad.height, upstream_grad.width, upstream_grad.channels, cam.height, cam.width, ch
        )));
    }
    let stride = SCREEN_FIXED + ch;
    let ts = list.tile_size;
    let (w, h) = (cam.width, cam.height);

    // Per-tile partial sums indexed by position in the tile list.
    let tile_partials: Vec<Vec<f64>> = (0..list.tiles_x * list.tiles_y)
        .into_par_iter()
        .map(|tile| {
            let entries = list.tile_range(tile);
            let mut acc = vec![0.0; entries.len() * stride];
            let (tx, ty) = (tile % list.tiles_x, tile / list.tiles_x);
            let mut contribs: Vec<(usize, Contributor)> = Vec::new();
            for y in ty * ts..((ty + 1) * ts).min(h) {
                for x in tx * ts..((tx + 1) * ts).min(w) {
                    let p = y * w + x;
                    let up = upstream_grad.pixel(y, x);
                    if up.iter().all(|v| *v == 0.0) {
                        continue;
                    }
                    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                    contribs.clear();
                    let mut t = 1.0;
                    for (pos, &e) in entries[..cache.walked[p] as usize].iter().enumerate() {
                        let k = e as usize;
                        if let Some(a) = eval_alpha(&list.prepared[k], px, py) {
                            contribs.push((
                                pos,
                                Contributor {
                                    splat: k,
                                    alpha: a.alpha,
                                    t_before: t,
                                    falloff: a.falloff,
                                    clamped: a.clamped,
                                    dx: a.dx,
                                    dy: a.dy,
                                },
                            ));
                            t *= 1.0 - a.alpha;
                        }
                    }
                    let t_final = cache.final_transmittance[p];
                    // Colour behind the current splat, including background.
                    let mut behind: Vec<f64> = cache.background.iter().map(|b| b * t_final).collect();
                    for (pos, c) in contribs.iter().rev() {
                        let vals = &list.values[c.splat * ch..(c.splat + 1) * ch];
                        let weight = c.alpha * c.t_before;
                        let rec = &mut acc[pos * stride..(pos + 1) * stride];
                        let mut g_alpha = 0.0;
                        for j in 0..ch {
                            rec[SCREEN_FIXED + j] += up[j] * weight;
                            g_alpha += up[j] * (c.t_before * vals[j] - behind[j] / (1.0 - c.alpha));
                        }
                        for j in 0..ch {
                            behind[j] += vals[j] * weight;
                        }
                        if c.clamped {
                            continue;
                        }
                        let s = &list.prepared[c.splat];
                        rec[5] += g_alpha * c.falloff;
                        let g_m2 = -0.5 * c.alpha * g_alpha;
                        let (dx, dy) = (c.dx, c.dy);
                        rec[0] += -g_m2 * (2.0 * s.conic[0] * dx + 2.0 * s.conic[1] * dy);
                        rec[1] += -g_m2 * (2.0 * s.conic[1] * dx + 2.0 * s.conic[2] * dy);
                        rec[2] += g_m2 * dx * dx;
                        rec[3] += g_m2 * 2.0 * dx * dy;
                        rec[4] += g_m2 * dy * dy;
                    }
                }
            }
            acc
        })
        .collect();

    // Fixed-order merge keeps results run-to-run identical.
    let n_splats = list.prepared.len();
    let mut screen = vec![0.0; n_splats * stride];
    for (tile, partial) in tile_partials.iter().enumerate() {
        for (pos, &e) in list.tile_range(tile).iter().enumerate() {
            let k = e as usize;
            for (d, s) in screen[k * stride..(k + 1) * stride].iter_mut().zip(&partial[pos * stride..(pos + 1) * stride]) {
                *d += s;
            }
        }
    }

    let sh_len = 3 * scene.num_sh_coeffs();
    let per_splat: Vec<SplatGrad> = (0..n_splats)
        .into_par_iter()
        .map(|k| splat_backward(scene, cache, k, &screen[k * stride..(k + 1) * stride], sh_len))
        .collect();

    let mut grads = GaussianGrads::for_scene(scene);
    let d = scene.feature_dim;
    for (k, sg) in per_splat.into_iter().enumerate() {
        let gi = list.prepared[k].gaussian;
        grads.visible[gi] = true;
        grads.mean[gi * 3..gi * 3 + 3].copy_from_slice(&sg.mean);
        grads.log_scale[gi * 3..gi * 3 + 3].copy_from_slice(&sg.log_scale);
        grads.rotation[gi * 4..gi * 4 + 4].copy_from_slice(&sg.rotation);
        grads.opacity_logit[gi] = sg.opacity_logit;
        grads.mean2d[gi] = sg.mean2d;
        match cache.mode {
            ChannelMode::Rgb => grads.sh[gi * sh_len..(gi + 1) * sh_len].copy_from_slice(&sg.values),
            ChannelMode::Feature => grads.feature[gi * d..(gi + 1) * d].copy_from_slice(&sg.values),
        }
    }
    Ok(grads)
}

struct SplatGrad {
    mean: [f64; 3],
    log_scale: [f64; 3],
    rotation: [f64; 4],
    opacity_logit: f64,
    mean2d: [f64; 2],
    /// SH coefficient gradient (RGB) or feature gradient (features).
    values: Vec<f64>,
}

fn splat_backward(scene: &Scene, cache: &ForwardCache, k: usize, screen: &[f64], sh_len: usize) -> SplatGrad {
    let cam = &cache.camera;
    let prep = &cache.list.prepared[k];
    let g = &scene.gaussians[prep.gaussian];
    let g_mean2d = [screen[0], screen[1]];
    let g_values = &screen[SCREEN_FIXED..];

    let op = prep.opacity;
    let opacity_logit = screen[5] * op * (1.0 - op);

    // Conic → 2D covariance: dL/dΣ₂ = −Q·G_Q·Q with G_Q the full-matrix gradient.
    let q = [[prep.conic[0], prep.conic[1]], [prep.conic[1], prep.conic[2]]];
    let gq = [[screen[2], 0.5 * screen[3]], [0.5 * screen[3], screen[4]]];
    let mut g_cov2 = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            let mut acc = 0.0;
            for a in 0..2 {
                for b in 0..2 {
                    acc += q[i][a] * gq[a][b] * q[b][j];
                }
            }
            g_cov2[i][j] = -acc;
        }
    }

    let w = cam.rotation();
    let p = cam.to_camera(&g.mean);
    let j = projection_jacobian(cam, &p);
    let scale = g.scale();
    let rot = quat_to_mat(&g.unit_rotation());
    let mut m = rot;
    for row in m.iter_mut() {
        for (c, v) in row.iter_mut().enumerate() {
            *v *= scale[c];
        }
    }
    let sigma = mat3_mul(&m, &mat3_transpose(&m));
    let cov_cam = mat3_mul(&mat3_mul(&w, &sigma), &mat3_transpose(&w));

    // G_C = Jᵀ·G₂·J
    let mut g_c: Mat3 = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            let mut acc = 0.0;
            for r in 0..2 {
                for s in 0..2 {
                    acc += j[r][a] * g_cov2[r][s] * j[s][b];
                }
            }
            g_c[a][b] = acc;
        }
    }
    // G_J = 2·G₂·J·C
    let mut g_j = [[0.0; 3]; 2];
    for r in 0..2 {
        for b in 0..3 {
            let mut acc = 0.0;
            for s in 0..2 {
                for a in 0..3 {
                    acc += g_cov2[r][s] * j[s][a] * cov_cam[a][b];
                }
            }
            g_j[r][b] = 2.0 * acc;
        }
    }
    // G_Σ = Wᵀ·G_C·W, then Σ = M·Mᵀ with M = R·S.
    let g_sigma = mat3_mul(&mat3_mul(&mat3_transpose(&w), &g_c), &w);
    let g_m = {
        let gm = mat3_mul(&g_sigma, &m);
        let mut out = [[0.0; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                out[a][b] = 2.0 * gm[a][b];
            }
        }
        out
    };
    let mut log_scale = [0.0; 3];
    let mut g_rot = [[0.0; 3]; 3];
    for c in 0..3 {
        let mut gs = 0.0;
        for r in 0..3 {
            gs += g_m[r][c] * rot[r][c];
            g_rot[r][c] = g_m[r][c] * scale[c];
        }
        log_scale[c] = gs * scale[c];
    }
    let rotation = quat_to_mat_backward(&g.rotation, &g_rot);

    // Camera-space position from the projected mean and the Jacobian.
    let (x, y, z) = (p[0], p[1], p[2]);
    let (fx, fy) = (cam.fx, cam.fy);
    let z2 = z * z;
    let z3 = z2 * z;
    let mut g_p = [
        g_mean2d[0] * fx / z,
        g_mean2d[1] * fy / z,
        -g_mean2d[0] * fx * x / z2 - g_mean2d[1] * fy * y / z2,
    ];
    g_p[0] += g_j[0][2] * (-fx / z2);
    g_p[1] += g_j[1][2] * (-fy / z2);
    g_p[2] += g_j[0][0] * (-fx / z2) + g_j[0][2] * (2.0 * fx * x / z3) + g_j[1][1] * (-fy / z2) + g_j[1][2] * (2.0 * fy * y / z3);
    let wt = mat3_transpose(&w);
    let mut mean = [
        wt[0][0] * g_p[0] + wt[0][1] * g_p[1] + wt[0][2] * g_p[2],
        wt[1][0] * g_p[0] + wt[1][1] * g_p[1] + wt[1][2] * g_p[2],
        wt[2][0] * g_p[0] + wt[2][1] * g_p[1] + wt[2][2] * g_p[2],
    ];

    let values = match cache.mode {
        ChannelMode::Feature => g_values.to_vec(),
        ChannelMode::Rgb => {
            let mut g_sh = vec![0.0; sh_len];
            let v = sub3(&g.mean, &cam.center());
            let n = norm3(&v);
            let dir = [v[0] / n, v[1] / n, v[2] / n];
            let g_rgb = [g_values[0], g_values[1], g_values[2]];
            let g_dir = sh::eval_sh_backward(scene.sh_degree, &g.sh, &dir, &g_rgb, &mut g_sh);
            let proj = g_dir[0] * dir[0] + g_dir[1] * dir[1] + g_dir[2] * dir[2];
            for a in 0..3 {
                mean[a] += (g_dir[a] - dir[a] * proj) / n;
            }
            g_sh
        }
    };

    SplatGrad { mean, log_scale, rotation, opacity_logit, mean2d: g_mean2d, values }
}
