use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::scene::FeatureImage;

/// Principal axes of the pixel-feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Unit-length components in decreasing variance order. Each has its
    /// largest-magnitude loading positive.
    pub components: Vec<Vec<f64>>,
    /// Population variance along each component.
    pub variances: Vec<f64>,
}

impl Pca {
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| c.iter().zip(x).zip(&self.mean).map(|((a, b), m)| a * (b - m)).sum())
            .collect()
    }

    pub fn reconstruct(&self, coords: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (c, w) in self.components.iter().zip(coords) {
            out.iter_mut().zip(c).for_each(|(o, v)| *o += w * v);
        }
        out
    }
}

/// Top-`k` principal components of the `H·W × C` feature matrix.
pub fn pca(features: &FeatureImage, k: usize) -> Result<Pca> {
    let (n, c) = (features.num_pixels(), features.channels);
    if n == 0 || k > c {
        return Err(Error::Shape(format!("cannot take {k} components of {n} pixels with {c} channels")));
    }
    let mean = features.channel_mean();
    let mut cov = DMatrix::<f64>::zeros(c, c);
    for p in 0..n {
        let x = &features.data[p * c..(p + 1) * c];
        for i in 0..c {
            let di = x[i] - mean[i];
            for j in i..c {
                cov[(i, j)] += di * (x[j] - mean[j]);
            }
        }
    }
    for i in 0..c {
        for j in i..c {
            let v = cov[(i, j)] / n as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut components = Vec::with_capacity(k);
    let mut variances = Vec::with_capacity(k);
    for &idx in order.iter().take(k) {
        let mut v: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
        let lead = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if lead < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        components.push(v);
        variances.push(eig.eigenvalues[idx].max(0.0));
    }
    Ok(Pca { mean, components, variances })
}

/// Relative variance below which a component is treated as absent.
const RANK_TOL: f64 = 1e-12;

/// First three principal-component scores, each min-max scaled to `[0, 1]`.
/// Components carrying no variance render as zero.
pub fn pca_visualize(features: &FeatureImage) -> Result<FeatureImage> {
    if features.channels < 3 {
        return Err(Error::Shape(format!("PCA visualisation needs at least 3 channels, got {}", features.channels)));
    }
    let p = pca(features, 3)?;
    let (n, c) = (features.num_pixels(), features.channels);
    let top = p.variances[0];
    let mut out = FeatureImage::zeros(features.height, features.width, 3);
    for k in 0..3 {
        if top <= 0.0 || p.variances[k] <= RANK_TOL * top {
            continue;
        }
        let scores: Vec<f64> = (0..n)
            .map(|i| p.components[k].iter().zip(&features.data[i * c..(i + 1) * c]).zip(&p.mean).map(|((a, b), m)| a * (b - m)).sum())
            .collect();
        let lo = scores.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            for (i, s) in scores.iter().enumerate() {
                out.data[i * 3 + k] = (s - lo) / (hi - lo);
            }
        }
    }
    Ok(out)
}
