//! Domain types for feature Gaussians and the pure geometry around them.

mod camera;
mod decoder;
mod image;
mod projection;
pub mod sh;

use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;

use rand::Rng;

pub use camera::CameraView;
pub use decoder::{DecoderGrad, FeatureDecoder};
pub use image::{BilinearMap, FeatureImage};
pub use projection::{
    project_gaussian, project_gaussian_detailed, try_project, CullReason, Projection, Splat2D, COV2D_BLUR, NEAR_PLANE,
};
pub(crate) use projection::projection_jacobian;

use crate::error::{Error, Result};
use crate::math::{mat3_mul, mat3_transpose, quat_normalize, quat_to_mat, sigmoid, Mat3, Vec3};

/// One splat. Scale is stored as log-scale, opacity as a logit and rotation
/// as a possibly unnormalized quaternion `[w, x, y, z]`; all are activated
/// on use.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian3D {
    pub mean: Vec3,
    pub log_scale: Vec3,
    pub rotation: [f64; 4],
    pub opacity_logit: f64,
    /// `3·(L+1)²` coefficients, coefficient-major (`sh[3·k + c]`).
    pub sh: Vec<f64>,
    pub feature: Vec<f64>,
}

impl Gaussian3D {
    pub fn scale(&self) -> Vec3 {
        [self.log_scale[0].exp(), self.log_scale[1].exp(), self.log_scale[2].exp()]
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn unit_rotation(&self) -> [f64; 4] {
        quat_normalize(&self.rotation)
    }

    pub fn covariance(&self) -> Mat3 {
        covariance_3d(&self.scale(), &self.unit_rotation())
    }
}

/// `Σ = R·S·Sᵀ·Rᵀ` with `S = diag(scale)`.
pub fn covariance_3d(scale: &Vec3, rotation: &[f64; 4]) -> Mat3 {
    let r = quat_to_mat(rotation);
    let mut m = r;
    for row in m.iter_mut() {
        for (k, v) in row.iter_mut().enumerate() {
            *v *= scale[k];
        }
    }
    mat3_mul(&m, &mat3_transpose(&m))
}

/// Gaussians plus the scene-specific feature decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub gaussians: Vec<Gaussian3D>,
    pub feature_dim: usize,
    pub sh_degree: usize,
    pub decoder: FeatureDecoder,
}

impl Scene {
    pub fn new(feature_dim: usize, sh_degree: usize, decoder: FeatureDecoder) -> Self {
        Self { gaussians: Vec::new(), feature_dim, sh_degree, decoder }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn num_sh_coeffs(&self) -> usize {
        sh::num_coeffs(self.sh_degree)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sh_degree > sh::MAX_SH_DEGREE {
            return Err(Error::Config(format!("SH degree {} exceeds 3", self.sh_degree)));
        }
        if self.decoder.c_in != self.feature_dim {
            return Err(Error::Config(format!(
                "decoder input channels {} differ from feature dimension {}",
                self.decoder.c_in, self.feature_dim
            )));
        }
        self.decoder.validate()?;
        let n_sh = 3 * self.num_sh_coeffs();
        for (i, g) in self.gaussians.iter().enumerate() {
            if g.feature.len() != self.feature_dim {
                return Err(Error::Config(format!(
                    "gaussian {i} has feature length {} (expected {})",
                    g.feature.len(),
                    self.feature_dim
                )));
            }
            if g.sh.len() != n_sh {
                return Err(Error::Config(format!("gaussian {i} has {} SH values (expected {n_sh})", g.sh.len())));
            }
            let q = g.rotation;
            if q.iter().map(|v| v * v).sum::<f64>() == 0.0 {
                return Err(Error::Invalid(format!("gaussian {i} has a zero quaternion")));
            }
            let finite = g.mean.iter().chain(&g.log_scale).chain(&g.rotation).chain(&g.sh).chain(&g.feature).all(|v| v.is_finite())
                && g.opacity_logit.is_finite();
            if !finite {
                return Err(Error::Numeric(format!("gaussian {i} has non-finite parameters")));
            }
        }
        Ok(())
    }

    /// Hash over every parameter bit pattern. Used to detect a scene that was
    /// mutated between a forward pass and its backward pass.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        h.write_usize(self.gaussians.len());
        h.write_usize(self.feature_dim);
        h.write_usize(self.sh_degree);
        for g in &self.gaussians {
            for v in g.mean.iter().chain(&g.log_scale).chain(&g.rotation).chain(std::iter::once(&g.opacity_logit)).chain(&g.sh).chain(&g.feature) {
                h.write_u64(v.to_bits());
            }
        }
        h.finish()
    }

    /// Replaces every feature vector with i.i.d. samples from `[0, 1)`.
    pub fn randomize_features<R: Rng>(&mut self, rng: &mut R) {
        for g in &mut self.gaussians {
            g.feature = (0..self.feature_dim).map(|_| rng.gen::<f64>()).collect();
        }
    }
}
