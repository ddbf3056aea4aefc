//! Reconstruction losses with analytic gradients.

use crate::error::{Error, Result};
use crate::scene::FeatureImage;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub value: f64,
    /// Gradient of `value` with respect to the prediction.
    pub grad: FeatureImage,
}

fn check(pred: &FeatureImage, gt: &FeatureImage) -> Result<()> {
    pred.check_same_shape(gt).map_err(|e| Error::Shape(format!("loss inputs: {e}")))
}

/// Mean absolute error over every entry. Subgradient is 0 at exact ties.
pub fn l1_loss(pred: &FeatureImage, gt: &FeatureImage) -> Result<LossOutput> {
    check(pred, gt)?;
    let n = pred.data.len() as f64;
    let mut sum = 0.0;
    let mut grad = FeatureImage::zeros(pred.height, pred.width, pred.channels);
    for ((g, p), t) in grad.data.iter_mut().zip(&pred.data).zip(&gt.data) {
        let d = p - t;
        sum += d.abs();
        *g = if d > 0.0 {
            1.0 / n
        } else if d < 0.0 {
            -1.0 / n
        } else {
            0.0
        };
    }
    Ok(LossOutput { value: sum / n, grad })
}

/// `L^f`: plain L1 between decoded and target feature images.
pub fn loss_feat(f_high: &FeatureImage, gt_feat: &FeatureImage) -> Result<LossOutput> {
    l1_loss(f_high, gt_feat)
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let x = i as f64 - half;
        *v = (-(x * x) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable same-size filtering with zero padding. The window is symmetric,
/// so this operator is its own adjoint.
fn blur(plane: &[f64], h: usize, w: usize, win: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as isize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, wk) in win.iter().enumerate() {
                let sx = x as isize + k as isize - r;
                if sx >= 0 && sx < w as isize {
                    acc += wk * plane[y * w + sx as usize];
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, wk) in win.iter().enumerate() {
                let sy = y as isize + k as isize - r;
                if sy >= 0 && sy < h as isize {
                    acc += wk * tmp[sy as usize * w + x];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Mean SSIM over all pixels and channels (11×11 Gaussian window, σ = 1.5)
/// and its gradient with respect to `pred`.
pub fn ssim(pred: &FeatureImage, gt: &FeatureImage) -> Result<LossOutput> {
    check(pred, gt)?;
    let (h, w, c) = (pred.height, pred.width, pred.channels);
    let n = h * w;
    let total = (n * c) as f64;
    let win = gaussian_window();
    let mut value = 0.0;
    let mut grad = FeatureImage::zeros(h, w, c);
    for ch in 0..c {
        let x: Vec<f64> = (0..n).map(|p| pred.data[p * c + ch]).collect();
        let y: Vec<f64> = (0..n).map(|p| gt.data[p * c + ch]).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
        let mu_x = blur(&x, h, w, &win);
        let mu_y = blur(&y, h, w, &win);
        let e_xx = blur(&xx, h, w, &win);
        let e_yy = blur(&yy, h, w, &win);
        let e_xy = blur(&xy, h, w, &win);
        let mut d_mu = vec![0.0; n];
        let mut d_exx = vec![0.0; n];
        let mut d_exy = vec![0.0; n];
        for p in 0..n {
            let (mx, my) = (mu_x[p], mu_y[p]);
            let sxx = e_xx[p] - mx * mx;
            let syy = e_yy[p] - my * my;
            let sxy = e_xy[p] - mx * my;
            let a1 = 2.0 * mx * my + SSIM_C1;
            let a2 = 2.0 * sxy + SSIM_C2;
            let b1 = mx * mx + my * my + SSIM_C1;
            let b2 = sxx + syy + SSIM_C2;
            let s = a1 * a2 / (b1 * b2);
            value += s;
            d_exy[p] = 2.0 * a1 / (b1 * b2);
            d_exx[p] = -s / b2;
            d_mu[p] = (2.0 * my * a2 - 2.0 * my * a1) / (b1 * b2) - s * (2.0 * mx / b1 - 2.0 * mx / b2);
        }
        let g_mu = blur(&d_mu, h, w, &win);
        let g_exx = blur(&d_exx, h, w, &win);
        let g_exy = blur(&d_exy, h, w, &win);
        for p in 0..n {
            grad.data[p * c + ch] = (g_mu[p] + 2.0 * x[p] * g_exx[p] + y[p] * g_exy[p]) / total;
        }
    }
    Ok(LossOutput { value: value / total, grad })
}

/// `L^c = (1 − λ)·L1 + λ·(1 − SSIM)/2`.
pub fn loss_rgb(render: &FeatureImage, gt: &FeatureImage, lambda_dssim: f64) -> Result<LossOutput> {
    let l1 = l1_loss(render, gt)?;
    if lambda_dssim == 0.0 {
        return Ok(l1);
    }
    let s = ssim(render, gt)?;
    let mut grad = l1.grad;
    for (g, sg) in grad.data.iter_mut().zip(&s.grad.data) {
        *g = (1.0 - lambda_dssim) * *g - 0.5 * lambda_dssim * sg;
    }
    Ok(LossOutput { value: (1.0 - lambda_dssim) * l1.value + lambda_dssim * (1.0 - s.value) / 2.0, grad })
}

pub fn psnr(pred: &FeatureImage, gt: &FeatureImage) -> Result<f64> {
    check(pred, gt)?;
    let mse = pred.data.iter().zip(&gt.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / pred.data.len() as f64;
    Ok(10.0 * (1.0 / mse).log10())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> FeatureImage {
        FeatureImage::from_vec(h, w, c, (0..h * w * c).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn identical_images_have_zero_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = random(&mut rng, 12, 9, 3);
        assert!(loss_rgb(&a, &a, 0.2).unwrap().value.abs() < 1e-15);
        assert_eq!(loss_feat(&a, &a).unwrap().value, 0.0);
    }

    #[test]
    fn constant_offset_gives_scaled_l1() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gt = FeatureImage::from_vec(10, 10, 3, (0..300).map(|_| rng.gen_range(0.2..0.8)).collect()).unwrap();
        let mut r = gt.clone();
        r.data.iter_mut().for_each(|v| *v += 0.1);
        let lam = 0.2;
        let out = loss_rgb(&r, &gt, lam).unwrap();
        let l1 = l1_loss(&r, &gt).unwrap().value;
        assert!((l1 - 0.1).abs() < 1e-12);
        let s = ssim(&r, &gt).unwrap().value;
        assert!((out.value - (0.1 * (1.0 - lam) + lam * (1.0 - s) / 2.0)).abs() < 1e-12);
    }

    #[test]
    fn zero_lambda_is_exactly_l1() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (a, b) = (random(&mut rng, 6, 7, 3), random(&mut rng, 6, 7, 3));
        let x = loss_rgb(&a, &b, 0.0).unwrap();
        let y = l1_loss(&a, &b).unwrap();
        assert_eq!(x.value, y.value);
        assert_eq!(x.grad, y.grad);
    }

    #[test]
    fn loss_feat_matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (a, b) = (random(&mut rng, 5, 4, 7), random(&mut rng, 5, 4, 7));
        let mut sum = 0.0;
        for i in 0..a.data.len() {
            sum += (a.data[i] - b.data[i]).abs();
        }
        assert!((loss_feat(&a, &b).unwrap().value - sum / 140.0).abs() < 1e-7);
        let mut shifted = a.clone();
        shifted.data.iter_mut().for_each(|v| *v -= 0.37);
        assert!((loss_feat(&a, &shifted).unwrap().value - 0.37).abs() < 1e-12);
    }

    #[test]
    fn rgb_loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (a, b) = (random(&mut rng, 14, 13, 3), random(&mut rng, 14, 13, 3));
        let out = loss_rgb(&a, &b, 0.2).unwrap();
        for i in (0..a.data.len()).step_by(17) {
            let mut p = a.clone();
            p.data[i] += 1e-6;
            let mut m = a.clone();
            m.data[i] -= 1e-6;
            let fd = (loss_rgb(&p, &b, 0.2).unwrap().value - loss_rgb(&m, &b, 0.2).unwrap().value) / 2e-6;
            let an = out.grad.data[i];
            assert!((fd - an).abs() <= 1e-4 * an.abs().max(fd.abs()) + 1e-10, "{i}: {fd} vs {an}");
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        assert!(loss_rgb(&FeatureImage::zeros(2, 2, 3), &FeatureImage::zeros(2, 3, 3), 0.2).is_err());
    }
}
