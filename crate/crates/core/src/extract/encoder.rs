//! A small trainable patch encoder standing in for a ViT backbone.
//!
//! Patches are linearly embedded to width `C`, refined by two residual
//! blocks `h ← h + tanh(W·z + b)` where `z = Σ_δ mix[δ]·h[p+δ]` mixes the
//! 3×3 patch neighbourhood (zero padded), then mapped by an output layer.
//! The global token is a learned projection of the mean final embedding.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scene::FeatureImage;

pub const NUM_BLOCKS: usize = 2;
pub const DEFAULT_PATCH_SIZE: usize = 14;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyPatchEncoder {
    pub patch_size: usize,
    pub channels: usize,
    /// All weights packed; see [`Layout`].
    pub params: Vec<f64>,
}

/// Offsets of each tensor inside `params`.
#[derive(Debug, Clone, Copy)]
pub struct Layout {
    pub w_in: usize,
    pub b_in: usize,
    pub blocks: [BlockLayout; NUM_BLOCKS],
    pub w_out: usize,
    pub b_out: usize,
    pub w_g: usize,
    pub b_g: usize,
    pub len: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct BlockLayout {
    pub mix: usize,
    pub w: usize,
    pub b: usize,
}

impl Layout {
    pub fn new(patch_size: usize, c: usize) -> Self {
        let d = patch_size * patch_size * 3;
        let mut at = 0;
        let mut take = |n: usize| {
            let o = at;
            at += n;
            o
        };
        let w_in = take(c * d);
        let b_in = take(c);
        let blocks = [(); NUM_BLOCKS].map(|_| BlockLayout { mix: take(9), w: take(c * c), b: take(c) });
        let w_out = take(c * c);
        let b_out = take(c);
        let w_g = take(c * c);
        let b_g = take(c);
        Self { w_in, b_in, blocks, w_out, b_out, w_g, b_g, len: at }
    }
}

/// Output of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Extracted {
    pub grid: FeatureImage,
    pub global: Vec<f64>,
}

/// Activations kept for the backward pass.
pub struct EncoderTape {
    gh: usize,
    gw: usize,
    patches: Vec<f64>,
    /// `h` entering each block, then the final `h`.
    hs: Vec<Vec<f64>>,
    zs: Vec<Vec<f64>>,
    /// `tanh(u)` per block.
    ts: Vec<Vec<f64>>,
}

fn matvec(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        out[r] = row.iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

impl ToyPatchEncoder {
    pub fn zeros(patch_size: usize, channels: usize) -> Self {
        let len = Layout::new(patch_size, channels).len;
        Self { patch_size, channels, params: vec![0.0; len] }
    }

    pub fn random<R: Rng>(patch_size: usize, channels: usize, rng: &mut R) -> Self {
        let mut enc = Self::zeros(patch_size, channels);
        let l = enc.layout();
        let c = channels;
        let d = enc.patch_dim();
        let mut fill = |p: &mut [f64], bound: f64| p.iter_mut().for_each(|v| *v = rng.gen_range(-bound..bound));
        fill(&mut enc.params[l.w_in..l.w_in + c * d], (3.0 / d as f64).sqrt());
        for b in l.blocks {
            fill(&mut enc.params[b.mix..b.mix + 9], 0.1);
            enc.params[b.mix + 4] = 1.0;
            fill(&mut enc.params[b.w..b.w + c * c], 0.5 / (c as f64).sqrt());
        }
        fill(&mut enc.params[l.w_out..l.w_out + c * c], 1.0 / (c as f64).sqrt());
        fill(&mut enc.params[l.w_g..l.w_g + c * c], 1.0 / (c as f64).sqrt());
        enc
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self.patch_size, self.channels)
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * 3
    }

    pub fn grid_size(&self, height: usize, width: usize) -> (usize, usize) {
        (height / self.patch_size, width / self.patch_size)
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.channels == 0 {
            return Err(Error::Config("patch size and channels must be positive".into()));
        }
        if self.params.len() != self.layout().len {
            return Err(Error::Config(format!(
                "encoder has {} parameters, layout needs {}",
                self.params.len(),
                self.layout().len
            )));
        }
        Ok(())
    }

    fn check_image(&self, image: &FeatureImage) -> Result<()> {
        if image.channels != 3 {
            return Err(Error::Shape(format!("encoder expects 3 channels, got {}", image.channels)));
        }
        let p = self.patch_size;
        if image.height % p != 0 || image.width % p != 0 || image.height == 0 || image.width == 0 {
            return Err(Error::Shape(format!(
                "image {}×{} is not divisible by patch size {p}",
                image.height, image.width
            )));
        }
        Ok(())
    }

    pub fn forward(&self, image: &FeatureImage) -> Result<Extracted> {
        Ok(self.forward_tape(image)?.0)
    }

    pub fn forward_tape(&self, image: &FeatureImage) -> Result<(Extracted, EncoderTape)> {
        self.check_image(image)?;
        let (p, c, d) = (self.patch_size, self.channels, self.patch_dim());
        let l = self.layout();
        let w = &self.params;
        let (gh, gw) = self.grid_size(image.height, image.width);
        let np = gh * gw;
        let mut patches = vec![0.0; np * d];
        for gy in 0..gh {
            for gx in 0..gw {
                let dst = &mut patches[(gy * gw + gx) * d..(gy * gw + gx + 1) * d];
                for py in 0..p {
                    for px in 0..p {
                        let src = image.pixel(gy * p + py, gx * p + px);
                        dst[(py * p + px) * 3..(py * p + px) * 3 + 3].copy_from_slice(src);
                    }
                }
            }
        }
        let mut h = vec![0.0; np * c];
        for i in 0..np {
            let out = &mut h[i * c..(i + 1) * c];
            matvec(&w[l.w_in..l.w_in + c * d], c, d, &patches[i * d..(i + 1) * d], out);
            for k in 0..c {
                out[k] += w[l.b_in + k];
            }
        }
        let mut hs = vec![h];
        let mut zs = Vec::new();
        let mut ts = Vec::new();
        for b in l.blocks {
            let h = hs.last().unwrap();
            let z = mix_neighbours(h, gh, gw, c, &w[b.mix..b.mix + 9]);
            let mut t = vec![0.0; np * c];
            let mut next = h.clone();
            for i in 0..np {
                matvec(&w[b.w..b.w + c * c], c, c, &z[i * c..(i + 1) * c], &mut t[i * c..(i + 1) * c]);
                for k in 0..c {
                    let v = (t[i * c + k] + w[b.b + k]).tanh();
                    t[i * c + k] = v;
                    next[i * c + k] += v;
                }
            }
            zs.push(z);
            ts.push(t);
            hs.push(next);
        }
        let hf = hs.last().unwrap();
        let mut grid = vec![0.0; np * c];
        for i in 0..np {
            matvec(&w[l.w_out..l.w_out + c * c], c, c, &hf[i * c..(i + 1) * c], &mut grid[i * c..(i + 1) * c]);
            for k in 0..c {
                grid[i * c + k] += w[l.b_out + k];
            }
        }
        let mean = mean_rows(hf, np, c);
        let mut global = vec![0.0; c];
        matvec(&w[l.w_g..l.w_g + c * c], c, c, &mean, &mut global);
        for k in 0..c {
            global[k] += w[l.b_g + k];
        }
        let out = Extracted { grid: FeatureImage { height: gh, width: gw, channels: c, data: grid }, global };
        Ok((out, EncoderTape { gh, gw, patches, hs, zs, ts }))
    }

    /// Parameter gradient for upstream gradients on the grid and the global
    /// token.
    pub fn backward(&self, tape: &EncoderTape, grad_grid: &FeatureImage, grad_global: &[f64]) -> Result<Vec<f64>> {
        let (c, d) = (self.channels, self.patch_dim());
        let (gh, gw) = (tape.gh, tape.gw);
        let np = gh * gw;
        if grad_grid.height != gh || grad_grid.width != gw || grad_grid.channels != c || grad_global.len() != c {
            return Err(Error::Shape("encoder backward: upstream gradient shape mismatch".into()));
        }
        let l = self.layout();
        let w = &self.params;
        let mut g = vec![0.0; l.len];
        let hf = tape.hs.last().unwrap();
        let mean = mean_rows(hf, np, c);
        for r in 0..c {
            g[l.b_g + r] += grad_global[r];
            for k in 0..c {
                g[l.w_g + r * c + k] += grad_global[r] * mean[k];
            }
        }
        // Gradient reaching the mean embedding, shared by every patch.
        let mut g_mean = vec![0.0; c];
        for r in 0..c {
            for k in 0..c {
                g_mean[k] += w[l.w_g + r * c + k] * grad_global[r];
            }
        }
        let mut dh = vec![0.0; np * c];
        for i in 0..np {
            let go = &grad_grid.data[i * c..(i + 1) * c];
            let hi = &hf[i * c..(i + 1) * c];
            for r in 0..c {
                g[l.b_out + r] += go[r];
                for k in 0..c {
                    g[l.w_out + r * c + k] += go[r] * hi[k];
                    dh[i * c + k] += w[l.w_out + r * c + k] * go[r];
                }
            }
            for k in 0..c {
                dh[i * c + k] += g_mean[k] / np as f64;
            }
        }
        for (bi, b) in l.blocks.iter().enumerate().rev() {
            let h = &tape.hs[bi];
            let z = &tape.zs[bi];
            let t = &tape.ts[bi];
            let mut dz = vec![0.0; np * c];
            for i in 0..np {
                for r in 0..c {
                    let du = dh[i * c + r] * (1.0 - t[i * c + r] * t[i * c + r]);
                    g[b.b + r] += du;
                    for k in 0..c {
                        g[b.w + r * c + k] += du * z[i * c + k];
                        dz[i * c + k] += w[b.w + r * c + k] * du;
                    }
                }
            }
            // Residual path keeps dh; add the mixing adjoint.
            let mix = &w[b.mix..b.mix + 9];
            for y in 0..gh {
                for x in 0..gw {
                    let i = y * gw + x;
                    for (t_idx, (dy, dx)) in OFFSETS.iter().enumerate() {
                        let (ny, nx) = (y as isize + dy, x as isize + dx);
                        if ny < 0 || nx < 0 || ny >= gh as isize || nx >= gw as isize {
                            continue;
                        }
                        let j = ny as usize * gw + nx as usize;
                        let mut acc = 0.0;
                        for k in 0..c {
                            acc += dz[i * c + k] * h[j * c + k];
                            dh[j * c + k] += mix[t_idx] * dz[i * c + k];
                        }
                        g[b.mix + t_idx] += acc;
                    }
                }
            }
        }
        for i in 0..np {
            let x = &tape.patches[i * d..(i + 1) * d];
            for r in 0..c {
                let gr = dh[i * c + r];
                g[l.b_in + r] += gr;
                let row = &mut g[l.w_in + r * d..l.w_in + (r + 1) * d];
                for (gv, xv) in row.iter_mut().zip(x) {
                    *gv += gr * xv;
                }
            }
        }
        Ok(g)
    }
}

/// `(dy, dx)` for tap index `3·(dy+1) + (dx+1)`.
const OFFSETS: [(isize, isize); 9] = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 0), (0, 1), (1, -1), (1, 0), (1, 1)];

fn mix_neighbours(h: &[f64], gh: usize, gw: usize, c: usize, mix: &[f64]) -> Vec<f64> {
    let mut z = vec![0.0; h.len()];
    for y in 0..gh {
        for x in 0..gw {
            let i = y * gw + x;
            for (t, (dy, dx)) in OFFSETS.iter().enumerate() {
                let (ny, nx) = (y as isize + dy, x as isize + dx);
                if ny < 0 || nx < 0 || ny >= gh as isize || nx >= gw as isize || mix[t] == 0.0 {
                    continue;
                }
                let j = ny as usize * gw + nx as usize;
                for k in 0..c {
                    z[i * c + k] += mix[t] * h[j * c + k];
                }
            }
        }
    }
    z
}

fn mean_rows(h: &[f64], n: usize, c: usize) -> Vec<f64> {
    let mut m = vec![0.0; c];
    for i in 0..n {
        for k in 0..c {
            m[k] += h[i * c + k];
        }
    }
    m.iter_mut().for_each(|v| *v /= n as f64);
    m
}
