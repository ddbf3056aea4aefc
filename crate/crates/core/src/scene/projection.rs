use crate::math::{mat3_mul, mat3_transpose, Mat3, Vec3};
use crate::scene::{CameraView, Gaussian3D};

/// Camera-space depth at or below which a Gaussian is culled.
pub const NEAR_PLANE: f64 = 0.01;
/// Added to the diagonal of every projected covariance (px²).
pub const COV2D_BLUR: f64 = 0.3;
/// Support cutoff in Mahalanobis units; the 99%-confidence ellipse.
pub const SUPPORT_SIGMAS: f64 = 3.0;

/// Screen-space footprint of one Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat2D {
    pub mean2d: [f64; 2],
    /// Symmetric 2×2 covariance stored as `[a, b, c]` for `[[a, b], [b, c]]`.
    pub cov2d: [f64; 3],
    pub depth: f64,
    pub gaussian_index: usize,
}

/// Projection intermediates kept around for the backward pass.
#[derive(Debug, Clone, Copy)]
pub struct Projection {
    pub splat: Splat2D,
    pub p_cam: Vec3,
    /// Inverse of `cov2d`, same packing.
    pub conic: [f64; 3],
    pub radius: f64,
    /// Inclusive pixel range `[x0, y0, x1, y1]` whose centres may fall inside the support.
    pub pixel_rect: [usize; 4],
}

/// Projects a Gaussian; `None` means culled (behind the near plane, support
/// ellipse off-screen, or degenerate covariance).
pub fn project_gaussian(g: &Gaussian3D, cam: &CameraView) -> Option<Splat2D> {
    project_gaussian_detailed(g, cam).map(|p| p.splat)
}

pub(crate) fn projection_jacobian(cam: &CameraView, p: &Vec3) -> [[f64; 3]; 2] {
    let (x, y, z) = (p[0], p[1], p[2]);
    [
        [cam.fx / z, 0.0, -cam.fx * x / (z * z)],
        [0.0, cam.fy / z, -cam.fy * y / (z * z)],
    ]
}

/// `J·C·Jᵀ` for a 2×3 `J` and symmetric 3×3 `C`, packed.
pub(crate) fn sandwich(j: &[[f64; 3]; 2], c: &Mat3) -> [f64; 3] {
    let mut jc = [[0.0; 3]; 2];
    for r in 0..2 {
        for k in 0..3 {
            jc[r][k] = j[r][0] * c[0][k] + j[r][1] * c[1][k] + j[r][2] * c[2][k];
        }
    }
    let dot = |a: &[f64; 3], b: &[f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    [dot(&jc[0], &j[0]), dot(&jc[0], &j[1]), dot(&jc[1], &j[1])]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CullReason {
    NearPlane,
    OffScreen,
    /// Projected covariance not positive-definite.
    Degenerate,
}

pub fn project_gaussian_detailed(g: &Gaussian3D, cam: &CameraView) -> Option<Projection> {
    try_project(g, cam).ok()
}

pub fn try_project(g: &Gaussian3D, cam: &CameraView) -> Result<Projection, CullReason> {
    let p = cam.to_camera(&g.mean);
    if !(p[2] > NEAR_PLANE) {
        return Err(CullReason::NearPlane);
    }
    let mean2d = [cam.fx * p[0] / p[2] + cam.cx, cam.fy * p[1] / p[2] + cam.cy];
    let w = cam.rotation();
    let cov_cam = mat3_mul(&mat3_mul(&w, &g.covariance()), &mat3_transpose(&w));
    let j = projection_jacobian(cam, &p);
    let mut cov = sandwich(&j, &cov_cam);
    cov[0] += COV2D_BLUR;
    cov[2] += COV2D_BLUR;
    let det = cov[0] * cov[2] - cov[1] * cov[1];
    if !(det > 0.0 && cov[0] > 0.0) || !det.is_finite() {
        return Err(CullReason::Degenerate);
    }
    let conic = [cov[2] / det, -cov[1] / det, cov[0] / det];
    let mid = 0.5 * (cov[0] + cov[2]);
    let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
    let radius = SUPPORT_SIGMAS * lambda_max.sqrt();
    // Pixel centres at i + 0.5 inside [mean − r, mean + r].
    let x0 = (mean2d[0] - radius - 0.5).ceil().max(0.0);
    let y0 = (mean2d[1] - radius - 0.5).ceil().max(0.0);
    let x1 = (mean2d[0] + radius - 0.5).floor().min(cam.width as f64 - 1.0);
    let y1 = (mean2d[1] + radius - 0.5).floor().min(cam.height as f64 - 1.0);
    if !(x0 <= x1 && y0 <= y1) {
        return Err(CullReason::OffScreen);
    }
    Ok(Projection {
        splat: Splat2D { mean2d, cov2d: cov, depth: p[2], gaussian_index: usize::MAX },
        p_cam: p,
        conic,
        radius,
        pixel_rect: [x0 as usize, y0 as usize, x1 as usize, y1 as usize],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::logit;

    fn camera() -> CameraView {
        CameraView {
            width: 100,
            height: 100,
            fx: 100.0,
            fy: 100.0,
            cx: 50.0,
            cy: 50.0,
            world_to_camera: [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]],
        }
    }

    fn gaussian(mean: Vec3, sigma: f64) -> Gaussian3D {
        Gaussian3D {
            mean,
            log_scale: [sigma.ln(); 3],
            rotation: [1.0, 0.0, 0.0, 0.0],
            opacity_logit: logit(0.5),
            sh: vec![0.0; 3],
            feature: vec![],
        }
    }

    #[test]
    fn optical_axis_projects_to_principal_point() {
        let s = project_gaussian(&gaussian([0.0, 0.0, 1.0], 0.01), &camera()).unwrap();
        assert_eq!(s.mean2d, [50.0, 50.0]);
        assert_eq!(s.depth, 1.0);
    }

    #[test]
    fn behind_camera_is_culled() {
        assert!(project_gaussian(&gaussian([0.0, 0.0, -1.0], 0.1), &camera()).is_none());
        assert!(project_gaussian(&gaussian([0.0, 0.0, 0.005], 0.1), &camera()).is_none());
    }

    #[test]
    fn far_off_screen_is_culled() {
        assert!(project_gaussian(&gaussian([50.0, 0.0, 1.0], 0.01), &camera()).is_none());
    }

    #[test]
    fn mean_matches_direct_pinhole_projection() {
        let mut cam = camera();
        cam.world_to_camera[0][3] = 0.2;
        cam.world_to_camera[2][3] = 0.5;
        let g = gaussian([0.3, -0.4, 2.0], 0.05);
        let s = project_gaussian(&g, &cam).unwrap();
        let (x, y, z) = (0.3 + 0.2, -0.4, 2.5);
        assert!((s.mean2d[0] - (100.0 * x / z + 50.0)).abs() < 1e-6);
        assert!((s.mean2d[1] - (100.0 * y / z + 50.0)).abs() < 1e-6);
    }

    #[test]
    fn isotropic_covariance_matches_numeric_jacobian() {
        let cam = camera();
        let (sigma, z) = (0.02, 2.0);
        let g = gaussian([0.0, 0.0, z], sigma);
        let s = project_gaussian(&g, &cam).unwrap();
        // Numeric Jacobian of the pinhole map at the mean.
        let proj = |p: [f64; 3]| [cam.fx * p[0] / p[2] + cam.cx, cam.fy * p[1] / p[2] + cam.cy];
        let h = 1e-6;
        let mut jac = [[0.0; 3]; 2];
        for k in 0..3 {
            let mut pp = [0.0, 0.0, z];
            let mut pm = pp;
            pp[k] += h;
            pm[k] -= h;
            let (a, b) = (proj(pp), proj(pm));
            jac[0][k] = (a[0] - b[0]) / (2.0 * h);
            jac[1][k] = (a[1] - b[1]) / (2.0 * h);
        }
        let mut expected = [[0.0; 2]; 2];
        for r in 0..2 {
            for c in 0..2 {
                expected[r][c] = (0..3).map(|k| jac[r][k] * jac[c][k] * sigma * sigma).sum();
            }
        }
        assert!((s.cov2d[0] - (expected[0][0] + 0.3)).abs() < 1e-6);
        assert!((s.cov2d[1] - expected[0][1]).abs() < 1e-6);
        assert!((s.cov2d[2] - (expected[1][1] + 0.3)).abs() < 1e-6);
        let closed_form = (cam.fx * sigma / z).powi(2) + 0.3;
        assert!((s.cov2d[0] - closed_form).abs() < 1e-9);
    }
}
