use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{mat3_transpose, mat3_vec, Mat3, Vec3};

/// Pinhole camera for one registered view.
///
/// `world_to_camera` is a row-major rigid transform. Camera space is
/// +z forward, +y down, +x right; pixel centres sit at half-integer
/// coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraView {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub world_to_camera: [[f64; 4]; 4],
}

impl CameraView {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Invalid("camera has zero-sized image".into()));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Invalid(format!("focal lengths must be positive, got fx={} fy={}", self.fx, self.fy)));
        }
        let r = self.rotation();
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                if (dot - expected).abs() > 1e-6 {
                    return Err(Error::Invalid("world_to_camera rotation block is not orthonormal".into()));
                }
            }
        }
        let last = self.world_to_camera[3];
        if last != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::Invalid("world_to_camera last row must be [0, 0, 0, 1]".into()));
        }
        Ok(())
    }

    pub fn rotation(&self) -> Mat3 {
        let m = &self.world_to_camera;
        [[m[0][0], m[0][1], m[0][2]], [m[1][0], m[1][1], m[1][2]], [m[2][0], m[2][1], m[2][2]]]
    }

    pub fn translation(&self) -> Vec3 {
        let m = &self.world_to_camera;
        [m[0][3], m[1][3], m[2][3]]
    }

    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        let r = mat3_vec(&self.rotation(), p);
        let t = self.translation();
        [r[0] + t[0], r[1] + t[1], r[2] + t[2]]
    }

    /// Camera centre in world coordinates, `−Rᵀt`.
    pub fn center(&self) -> Vec3 {
        let rt = mat3_transpose(&self.rotation());
        let c = mat3_vec(&rt, &self.translation());
        [-c[0], -c[1], -c[2]]
    }

    /// Same pose, intrinsics rescaled to a different output resolution.
    pub fn scaled_to(&self, width: usize, height: usize) -> CameraView {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        CameraView {
            width,
            height,
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: self.cx * sx,
            cy: self.cy * sy,
            world_to_camera: self.world_to_camera,
        }
    }

    /// Camera at `eye` looking at `target`, with `up` hinting the world
    /// direction that should appear towards the top of the image.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, width: usize, height: usize, focal: f64) -> CameraView {
        let norm = |v: Vec3| {
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            [v[0] / n, v[1] / n, v[2] / n]
        };
        let cross = |a: Vec3, b: Vec3| [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
        let forward = norm([target[0] - eye[0], target[1] - eye[1], target[2] - eye[2]]);
        let right = norm(cross(forward, up));
        let down = cross(forward, right);
        let rows = [right, down, forward];
        let mut m = [[0.0; 4]; 4];
        for (i, row) in rows.iter().enumerate() {
            m[i][..3].copy_from_slice(row);
            m[i][3] = -(row[0] * eye[0] + row[1] * eye[1] + row[2] * eye[2]);
        }
        m[3][3] = 1.0;
        CameraView {
            width,
            height,
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            world_to_camera: m,
        }
    }
}
