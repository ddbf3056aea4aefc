use crate::error::{Error, Result};

/// Dense `height × width × channels` map, row-major with channels innermost.
///
/// Used for RGB images (3 channels), rendered low-dimensional feature images,
/// decoded high-dimensional feature images, and ground-truth feature maps.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureImage {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl FeatureImage {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self { height, width, channels, data: vec![0.0; height * width * channels] }
    }

    pub fn filled(height: usize, width: usize, value: &[f64]) -> Self {
        let mut data = Vec::with_capacity(height * width * value.len());
        for _ in 0..height * width {
            data.extend_from_slice(value);
        }
        Self { height, width, channels: value.len(), data }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "expected {}×{}×{} = {} values, got {}",
                height,
                width,
                channels,
                height * width * channels,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("non-finite value at flat index {bad}")));
        }
        Ok(Self { height, width, channels, data })
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize) -> usize {
        (y * self.width + x) * self.channels
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &[f64] {
        let i = self.index(y, x);
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, y: usize, x: usize) -> &mut [f64] {
        let i = self.index(y, x);
        let c = self.channels;
        &mut self.data[i..i + c]
    }

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn same_shape(&self, other: &FeatureImage) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn check_same_shape(&self, other: &FeatureImage) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{}×{}×{} vs {}×{}×{}",
                self.height, self.width, self.channels, other.height, other.width, other.channels
            )))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Mirror along the width axis. Channels are not permuted.
    pub fn flip_horizontal(&self) -> FeatureImage {
        let mut out = FeatureImage::zeros(self.height, self.width, self.channels);
        for y in 0..self.height {
            for x in 0..self.width {
                let src = self.index(y, self.width - 1 - x);
                let dst = out.index(y, x);
                out.data[dst..dst + self.channels].copy_from_slice(&self.data[src..src + self.channels]);
            }
        }
        out
    }

    /// Channel-wise mean over all pixels.
    pub fn channel_mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.channels];
        for px in self.data.chunks_exact(self.channels) {
            for (m, v) in mean.iter_mut().zip(px) {
                *m += v;
            }
        }
        let n = self.num_pixels().max(1) as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    /// Crops the top-left `height × width` region.
    pub fn crop(&self, height: usize, width: usize) -> Result<FeatureImage> {
        if height > self.height || width > self.width {
            return Err(Error::Shape(format!(
                "crop {height}×{width} exceeds image {}×{}",
                self.height, self.width
            )));
        }
        let mut out = FeatureImage::zeros(height, width, self.channels);
        for y in 0..height {
            let src = self.index(y, 0);
            let dst = out.index(y, 0);
            out.data[dst..dst + width * self.channels].copy_from_slice(&self.data[src..src + width * self.channels]);
        }
        Ok(out)
    }

    pub fn resize_bilinear(&self, height: usize, width: usize) -> FeatureImage {
        BilinearMap::new(self.height, self.width, height, width).apply(self)
    }
}

/// Per-output-pixel interpolation stencil for half-pixel-centred bilinear
/// resampling (sample position `(dst + 0.5)·scale − 0.5`, clamped to the
/// source). Kept explicit so the adjoint can be applied for backprop.
#[derive(Debug, Clone)]
pub struct BilinearMap {
    pub src_height: usize,
    pub src_width: usize,
    pub dst_height: usize,
    pub dst_width: usize,
    taps: Vec<[(usize, f64); 4]>,
}

fn axis_taps(src: usize, dst: usize, i: usize) -> (usize, usize, f64) {
    let scale = src as f64 / dst as f64;
    let pos = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
    let i0 = (pos.floor() as usize).min(src - 1);
    let i1 = (i0 + 1).min(src - 1);
    let t = if i1 == i0 { 0.0 } else { pos - i0 as f64 };
    (i0, i1, t)
}

impl BilinearMap {
    pub fn new(src_height: usize, src_width: usize, dst_height: usize, dst_width: usize) -> Self {
        let mut taps = Vec::with_capacity(dst_height * dst_width);
        for y in 0..dst_height {
            let (y0, y1, ty) = axis_taps(src_height, dst_height, y);
            for x in 0..dst_width {
                let (x0, x1, tx) = axis_taps(src_width, dst_width, x);
                taps.push([
                    (y0 * src_width + x0, (1.0 - ty) * (1.0 - tx)),
                    (y0 * src_width + x1, (1.0 - ty) * tx),
                    (y1 * src_width + x0, ty * (1.0 - tx)),
                    (y1 * src_width + x1, ty * tx),
                ]);
            }
        }
        Self { src_height, src_width, dst_height, dst_width, taps }
    }

    pub fn taps(&self, dst_index: usize) -> &[(usize, f64); 4] {
        &self.taps[dst_index]
    }

    pub fn apply(&self, img: &FeatureImage) -> FeatureImage {
        let c = img.channels;
        let mut out = FeatureImage::zeros(self.dst_height, self.dst_width, c);
        for (d, taps) in self.taps.iter().enumerate() {
            let dst = &mut out.data[d * c..(d + 1) * c];
            for &(s, w) in taps {
                if w == 0.0 {
                    continue;
                }
                for (o, v) in dst.iter_mut().zip(&img.data[s * c..(s + 1) * c]) {
                    *o += w * v;
                }
            }
        }
        out
    }

    /// Transpose of [`BilinearMap::apply`].
    pub fn apply_adjoint(&self, grad: &FeatureImage) -> FeatureImage {
        let c = grad.channels;
        let mut out = FeatureImage::zeros(self.src_height, self.src_width, c);
        for (d, taps) in self.taps.iter().enumerate() {
            let g = &grad.data[d * c..(d + 1) * c];
            for &(s, w) in taps {
                if w == 0.0 {
                    continue;
                }
                for (o, v) in out.data[s * c..(s + 1) * c].iter_mut().zip(g) {
                    *o += w * v;
                }
            }
        }
        out
    }
}
