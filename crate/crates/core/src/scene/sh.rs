//! Real spherical harmonics up to degree 3 (Condon–Shortley phase, the
//! ordering used by splatting renderers) and their direction derivatives.

use crate::math::Vec3;

pub const MAX_SH_DEGREE: usize = 3;

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
const SH_C1: f64 = 0.488_602_511_902_919_9;
const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Offset added to the contracted SH value so a zero coefficient set maps to
/// mid grey.
pub const SH_COLOR_OFFSET: f64 = 0.5;

pub const fn num_coeffs(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Basis values for a unit direction; entries past `num_coeffs(degree)` are
/// left at zero.
pub fn basis(degree: usize, dir: &Vec3) -> [f64; 16] {
    let [x, y, z] = *dir;
    let mut b = [0.0; 16];
    b[0] = SH_C0;
    if degree >= 1 {
        b[1] = -SH_C1 * y;
        b[2] = SH_C1 * z;
        b[3] = -SH_C1 * x;
    }
    if degree >= 2 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        b[4] = SH_C2[0] * x * y;
        b[5] = SH_C2[1] * y * z;
        b[6] = SH_C2[2] * (2.0 * zz - xx - yy);
        b[7] = SH_C2[3] * x * z;
        b[8] = SH_C2[4] * (xx - yy);
        if degree >= 3 {
            b[9] = SH_C3[0] * y * (3.0 * xx - yy);
            b[10] = SH_C3[1] * x * y * z;
            b[11] = SH_C3[2] * y * (4.0 * zz - xx - yy);
            b[12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
            b[13] = SH_C3[4] * x * (4.0 * zz - xx - yy);
            b[14] = SH_C3[5] * z * (xx - yy);
            b[15] = SH_C3[6] * x * (xx - 3.0 * yy);
        }
    }
    b
}

/// Partial derivatives of each basis polynomial with respect to the
/// direction components (the direction is treated as unconstrained here).
pub fn basis_gradient(degree: usize, dir: &Vec3) -> [[f64; 3]; 16] {
    let [x, y, z] = *dir;
    let mut g = [[0.0; 3]; 16];
    if degree >= 1 {
        g[1] = [0.0, -SH_C1, 0.0];
        g[2] = [0.0, 0.0, SH_C1];
        g[3] = [-SH_C1, 0.0, 0.0];
    }
    if degree >= 2 {
        let a = SH_C2;
        g[4] = [a[0] * y, a[0] * x, 0.0];
        g[5] = [0.0, a[1] * z, a[1] * y];
        g[6] = [-2.0 * a[2] * x, -2.0 * a[2] * y, 4.0 * a[2] * z];
        g[7] = [a[3] * z, 0.0, a[3] * x];
        g[8] = [2.0 * a[4] * x, -2.0 * a[4] * y, 0.0];
        if degree >= 3 {
            let b = SH_C3;
            let (xx, yy, zz) = (x * x, y * y, z * z);
            g[9] = [6.0 * b[0] * x * y, b[0] * (3.0 * xx - 3.0 * yy), 0.0];
            g[10] = [b[1] * y * z, b[1] * x * z, b[1] * x * y];
            g[11] = [-2.0 * b[2] * x * y, b[2] * (4.0 * zz - xx - 3.0 * yy), 8.0 * b[2] * y * z];
            g[12] = [-6.0 * b[3] * x * z, -6.0 * b[3] * y * z, b[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy)];
            g[13] = [b[4] * (4.0 * zz - 3.0 * xx - yy), -2.0 * b[4] * x * y, 8.0 * b[4] * x * z];
            g[14] = [2.0 * b[5] * x * z, -2.0 * b[5] * y * z, b[5] * (xx - yy)];
            g[15] = [b[6] * (3.0 * xx - 3.0 * yy), -6.0 * b[6] * x * y, 0.0];
        }
    }
    g
}

/// Evaluates view-dependent colour. `coeffs` holds `num_coeffs(degree)`
/// RGB triples, coefficient-major (`coeffs[3·k + c]`).
pub fn eval_sh(degree: usize, coeffs: &[f64], dir: &Vec3) -> [f64; 3] {
    let raw = eval_sh_raw(degree, coeffs, dir);
    [raw[0].max(0.0), raw[1].max(0.0), raw[2].max(0.0)]
}

/// Colour before the non-negativity clamp.
pub fn eval_sh_raw(degree: usize, coeffs: &[f64], dir: &Vec3) -> [f64; 3] {
    let b = basis(degree, dir);
    let mut rgb = [SH_COLOR_OFFSET; 3];
    for (k, bk) in b.iter().take(num_coeffs(degree)).enumerate() {
        for (c, out) in rgb.iter_mut().enumerate() {
            *out += bk * coeffs[3 * k + c];
        }
    }
    rgb
}

/// Backward of [`eval_sh`]: accumulates coefficient gradients into
/// `grad_coeffs` and returns the gradient with respect to the (unit)
/// direction polynomial arguments.
pub fn eval_sh_backward(
    degree: usize,
    coeffs: &[f64],
    dir: &Vec3,
    grad_rgb: &[f64; 3],
    grad_coeffs: &mut [f64],
) -> Vec3 {
    let raw = eval_sh_raw(degree, coeffs, dir);
    let mut g = *grad_rgb;
    for c in 0..3 {
        if raw[c] < 0.0 {
            g[c] = 0.0;
        }
    }
    let n = num_coeffs(degree);
    let b = basis(degree, dir);
    for k in 0..n {
        for c in 0..3 {
            grad_coeffs[3 * k + c] += b[k] * g[c];
        }
    }
    let db = basis_gradient(degree, dir);
    let mut gdir = [0.0; 3];
    for k in 1..n {
        let w: f64 = (0..3).map(|c| g[c] * coeffs[3 * k + c]).sum();
        for a in 0..3 {
            gdir[a] += w * db[k][a];
        }
    }
    gdir
}

/// Inverse of the degree-0 mapping: the DC coefficient that produces `rgb`.
pub fn rgb_to_dc(rgb: f64) -> f64 {
    (rgb - SH_COLOR_OFFSET) / SH_C0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factorial(n: usize) -> f64 {
        (1..=n).map(|k| k as f64).product()
    }

    /// Associated Legendre `P_l^m(x)`, `m ≥ 0`, with the Condon–Shortley
    /// phase, by the standard upward recurrence.
    fn legendre(l: usize, m: usize, x: f64) -> f64 {
        let mut pmm = 1.0;
        let s = (1.0 - x * x).sqrt();
        for i in 0..m {
            pmm *= -((2 * i + 1) as f64) * s;
        }
        if l == m {
            return pmm;
        }
        let mut pm1 = x * (2 * m + 1) as f64 * pmm;
        if l == m + 1 {
            return pm1;
        }
        let mut p = 0.0;
        for ll in m + 2..=l {
            p = ((2 * ll - 1) as f64 * x * pm1 - (ll + m - 1) as f64 * pmm) / (ll - m) as f64;
            pmm = pm1;
            pm1 = p;
        }
        p
    }

    /// Real spherical harmonic from spherical angles, ordered `m = −l..l`.
    fn real_sh(l: usize, m: i64, dir: &Vec3) -> f64 {
        let theta = dir[2].clamp(-1.0, 1.0).acos();
        let phi = dir[1].atan2(dir[0]);
        let am = m.unsigned_abs() as usize;
        let k = ((2 * l + 1) as f64 / (4.0 * std::f64::consts::PI) * factorial(l - am) / factorial(l + am)).sqrt();
        let p = legendre(l, am, theta.cos());
        match m.cmp(&0) {
            std::cmp::Ordering::Equal => k * p,
            std::cmp::Ordering::Greater => std::f64::consts::SQRT_2 * k * (am as f64 * phi).cos() * p,
            std::cmp::Ordering::Less => std::f64::consts::SQRT_2 * k * (am as f64 * phi).sin() * p,
        }
    }

    #[test]
    fn basis_matches_legendre_construction() {
        let dirs = [[0.3, -0.5, 0.81], [-0.7, 0.1, -0.2], [0.0, 0.6, -0.8], [0.9, 0.9, 0.1]];
        for d in dirs {
            let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]) as f64;
            let u = [d[0] / n.sqrt(), d[1] / n.sqrt(), d[2] / n.sqrt()];
            let b = basis(3, &u);
            let mut idx = 0;
            for l in 0..=3usize {
                for m in -(l as i64)..=(l as i64) {
                    let want = real_sh(l, m, &u);
                    assert!((b[idx] - want).abs() < 1e-9, "l={l} m={m}: {} vs {want}", b[idx]);
                    idx += 1;
                }
            }
        }
    }

    #[test]
    fn constant_band_ignores_direction() {
        let coeffs = [0.7, -0.2, 1.3];
        let a = eval_sh(0, &coeffs, &[0.0, 0.0, 1.0]);
        let b = eval_sh(0, &coeffs, &[0.6, -0.8, 0.0]);
        assert_eq!(a, b);
        assert!((a[0] - (0.7 * 0.282_094_8 + 0.5)).abs() < 1e-6);
    }

    #[test]
    fn band_one_is_odd() {
        let mut coeffs = vec![0.0; 12];
        coeffs[3..12].copy_from_slice(&[0.3, -0.1, 0.2, 0.5, 0.4, -0.6, -0.2, 0.1, 0.9]);
        let d = [0.48, -0.6, 0.64];
        let neg = [-0.48, 0.6, -0.64];
        let a = eval_sh_raw(1, &coeffs, &d);
        let b = eval_sh_raw(1, &coeffs, &neg);
        for c in 0..3 {
            assert!(((a[c] - 0.5) + (b[c] - 0.5)).abs() < 1e-12);
        }
    }

    #[test]
    fn basis_gradient_matches_finite_differences() {
        let d = [0.3, -0.5, 0.7];
        let g = basis_gradient(3, &d);
        for a in 0..3 {
            let mut p = d;
            let mut m = d;
            p[a] += 1e-6;
            m[a] -= 1e-6;
            let bp = basis(3, &p);
            let bm = basis(3, &m);
            for k in 0..16 {
                let fd = (bp[k] - bm[k]) / 2e-6;
                assert!((fd - g[k][a]).abs() < 1e-7, "k={k} a={a}");
            }
        }
    }

    #[test]
    fn colour_is_clamped_non_negative() {
        let coeffs = [-10.0, 0.0, 0.0];
        assert_eq!(eval_sh(0, &coeffs, &[0.0, 0.0, 1.0])[0], 0.0);
    }
}
