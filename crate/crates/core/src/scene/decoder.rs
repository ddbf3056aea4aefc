use rand::Rng;

use crate::error::{Error, Result};
use crate::scene::FeatureImage;

/// Scene-specific 3×3 convolution that lifts rendered low-dimensional
/// feature images to the extractor's feature dimension.
///
/// `kernel` is laid out `[c_out][c_in][ky][kx]`, zero padding, stride 1.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDecoder {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderGrad {
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
}

impl FeatureDecoder {
    pub const KERNEL_SIZE: usize = 3;

    pub fn zeros(c_in: usize, c_out: usize) -> Self {
        Self { c_in, c_out, kernel: vec![0.0; c_out * c_in * 9], bias: vec![0.0; c_out] }
    }

    /// Fan-in scaled uniform init in `±1/√(9·c_in)`, zero bias.
    pub fn random<R: Rng>(c_in: usize, c_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / ((9 * c_in) as f64).sqrt();
        let kernel = (0..c_out * c_in * 9).map(|_| rng.gen_range(-bound..bound)).collect();
        Self { c_in, c_out, kernel, bias: vec![0.0; c_out] }
    }

    /// Centre tap is the identity, all other taps zero. Requires `c_in == c_out`.
    pub fn identity(channels: usize) -> Self {
        let mut dec = Self::zeros(channels, channels);
        for c in 0..channels {
            let k = dec.kernel_index(c, c, 1, 1);
            dec.kernel[k] = 1.0;
        }
        dec
    }

    #[inline]
    pub fn kernel_index(&self, o: usize, i: usize, ky: usize, kx: usize) -> usize {
        ((o * self.c_in + i) * 3 + ky) * 3 + kx
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel.len() != self.c_out * self.c_in * 9 || self.bias.len() != self.c_out {
            return Err(Error::Config(format!(
                "decoder buffers do not match {}×{}×3×3",
                self.c_out, self.c_in
            )));
        }
        if !self.kernel.iter().chain(&self.bias).all(|v| v.is_finite()) {
            return Err(Error::Numeric("decoder weights are not finite".into()));
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.kernel.len() + self.bias.len()
    }

    pub fn apply(&self, input: &FeatureImage) -> Result<FeatureImage> {
        if input.channels != self.c_in {
            return Err(Error::Config(format!(
                "decoder expects {} input channels, image has {}",
                self.c_in, input.channels
            )));
        }
        let (h, w) = (input.height, input.width);
        let mut out = FeatureImage::filled(h, w, &self.bias);
        // Reorder taps so the innermost loop runs over contiguous output channels.
        let mut taps = vec![0.0; 9 * self.c_in * self.c_out];
        for o in 0..self.c_out {
            for i in 0..self.c_in {
                for t in 0..9 {
                    taps[(t * self.c_in + i) * self.c_out + o] = self.kernel[(o * self.c_in + i) * 9 + t];
                }
            }
        }
        for y in 0..h {
            for x in 0..w {
                let dst = out.index(y, x);
                for ky in 0..3 {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let sx = x as isize + kx as isize - 1;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        let src = input.pixel(sy as usize, sx as usize);
                        let t = ky * 3 + kx;
                        for (i, v) in src.iter().enumerate() {
                            if *v == 0.0 {
                                continue;
                            }
                            let row = &taps[(t * self.c_in + i) * self.c_out..(t * self.c_in + i + 1) * self.c_out];
                            for (o, k) in out.data[dst..dst + self.c_out].iter_mut().zip(row) {
                                *o += k * v;
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Returns parameter gradients and the gradient with respect to the input.
    pub fn backward(&self, input: &FeatureImage, grad_out: &FeatureImage) -> Result<(DecoderGrad, FeatureImage)> {
        if input.channels != self.c_in || grad_out.channels != self.c_out {
            return Err(Error::Config("decoder backward channel mismatch".into()));
        }
        if input.height != grad_out.height || input.width != grad_out.width {
            return Err(Error::Shape("decoder backward spatial mismatch".into()));
        }
        let (h, w) = (input.height, input.width);
        let mut gk = vec![0.0; self.kernel.len()];
        let mut gb = vec![0.0; self.c_out];
        let mut gin = FeatureImage::zeros(h, w, self.c_in);
        for y in 0..h {
            for x in 0..w {
                let go = grad_out.pixel(y, x);
                for (b, g) in gb.iter_mut().zip(go) {
                    *b += g;
                }
                for ky in 0..3 {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let sx = x as isize + kx as isize - 1;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        let (sy, sx) = (sy as usize, sx as usize);
                        let src_idx = input.index(sy, sx);
                        for (o, g) in go.iter().enumerate() {
                            if *g == 0.0 {
                                continue;
                            }
                            for i in 0..self.c_in {
                                let k = self.kernel_index(o, i, ky, kx);
                                gk[k] += g * input.data[src_idx + i];
                                gin.data[src_idx + i] += g * self.kernel[k];
                            }
                        }
                    }
                }
            }
        }
        Ok((DecoderGrad { kernel: gk, bias: gb }, gin))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> FeatureImage {
        FeatureImage::from_vec(h, w, c, (0..h * w * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Direct nested-loop convolution, written independently of `apply`.
    fn naive_conv(dec: &FeatureDecoder, img: &FeatureImage) -> FeatureImage {
        let mut out = FeatureImage::zeros(img.height, img.width, dec.c_out);
        for o in 0..dec.c_out {
            for y in 0..img.height as isize {
                for x in 0..img.width as isize {
                    let mut acc = dec.bias[o];
                    for i in 0..dec.c_in {
                        for dy in -1..=1isize {
                            for dx in -1..=1isize {
                                let (sy, sx) = (y + dy, x + dx);
                                if sy < 0 || sx < 0 || sy >= img.height as isize || sx >= img.width as isize {
                                    continue;
                                }
                                let kv = dec.kernel[((o * dec.c_in + i) * 3 + (dy + 1) as usize) * 3 + (dx + 1) as usize];
                                acc += kv * img.pixel(sy as usize, sx as usize)[i];
                            }
                        }
                    }
                    out.pixel_mut(y as usize, x as usize)[o] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = random_image(&mut rng, 4, 6, 3);
        assert_eq!(FeatureDecoder::identity(3).apply(&img).unwrap(), img);
    }

    #[test]
    fn zero_kernel_gives_constant_bias() {
        let mut dec = FeatureDecoder::zeros(2, 3);
        dec.bias = vec![0.5, -1.0, 2.0];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let out = dec.apply(&random_image(&mut rng, 3, 3, 2)).unwrap();
        assert_eq!(out, FeatureImage::filled(3, 3, &[0.5, -1.0, 2.0]));
    }

    #[test]
    fn matches_naive_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut dec = FeatureDecoder::random(4, 5, &mut rng);
        dec.bias.iter_mut().for_each(|b| *b = rng.gen_range(-1.0..1.0));
        let img = random_image(&mut rng, 5, 5, 4);
        let fast = dec.apply(&img).unwrap();
        let slow = naive_conv(&dec, &img);
        for (a, b) in fast.data.iter().zip(&slow.data) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn is_affine_in_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut dec = FeatureDecoder::random(3, 2, &mut rng);
        dec.bias = vec![0.3, -0.7];
        let x = random_image(&mut rng, 4, 4, 3);
        let y = random_image(&mut rng, 4, 4, 3);
        let (a, b) = (1.7, -0.4);
        let mix = FeatureImage::from_vec(4, 4, 3, x.data.iter().zip(&y.data).map(|(p, q)| a * p + b * q).collect()).unwrap();
        let lhs = dec.apply(&mix).unwrap();
        let ax = dec.apply(&x).unwrap();
        let ay = dec.apply(&y).unwrap();
        for (idx, l) in lhs.data.iter().enumerate() {
            let bias = dec.bias[idx % 2];
            let rhs = a * ax.data[idx] + b * ay.data[idx] - (a + b - 1.0) * bias;
            assert!((l - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn channel_mismatch_is_config_error() {
        let dec = FeatureDecoder::zeros(4, 2);
        assert!(matches!(dec.apply(&FeatureImage::zeros(2, 2, 3)), Err(Error::Config(_))));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut dec = FeatureDecoder::random(2, 3, &mut rng);
        let x = random_image(&mut rng, 3, 4, 2);
        let up = random_image(&mut rng, 3, 4, 3);
        let loss = |d: &FeatureDecoder, x: &FeatureImage| -> f64 {
            d.apply(x).unwrap().data.iter().zip(&up.data).map(|(a, b)| a * b).sum()
        };
        let (g, gin) = dec.backward(&x, &up).unwrap();
        for k in [0, 7, 20, 53] {
            let orig = dec.kernel[k];
            dec.kernel[k] = orig + 1e-6;
            let lp = loss(&dec, &x);
            dec.kernel[k] = orig - 1e-6;
            let lm = loss(&dec, &x);
            dec.kernel[k] = orig;
            assert!(((lp - lm) / 2e-6 - g.kernel[k]).abs() < 1e-6);
        }
        assert!((g.bias[1] - up.data.iter().skip(1).step_by(3).sum::<f64>()).abs() < 1e-12);
        for i in [0, 5, 11, 23] {
            let mut xp = x.clone();
            xp.data[i] += 1e-6;
            let mut xm = x.clone();
            xm.data[i] -= 1e-6;
            assert!(((loss(&dec, &xp) - loss(&dec, &xm)) / 2e-6 - gin.data[i]).abs() < 1e-6);
        }
    }
}
