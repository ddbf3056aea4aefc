//! Adam with optional decoupled weight decay (AdamW), one instance per
//! parameter group.

use serde::{Deserialize, Serialize};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    /// Number of values per row; rows are added and removed together.
    pub stride: usize,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(len: usize, stride: usize) -> Self {
        Self { beta1: BETA1, beta2: BETA2, eps: EPS, weight_decay: 0.0, step: 0, stride, m: vec![0.0; len], v: vec![0.0; len] }
    }

    pub fn adamw(len: usize, stride: usize, weight_decay: f64) -> Self {
        Self { weight_decay, ..Self::new(len, stride) }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }

    pub fn step(&mut self, lr: f64, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len(), "parameter/moment length mismatch");
        assert_eq!(grads.len(), self.m.len(), "gradient/moment length mismatch");
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let decay = 1.0 - lr * self.weight_decay;
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            if self.weight_decay != 0.0 {
                params[i] *= decay;
            }
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }

    /// Keeps rows where `keep[row]` and appends `appended` zero rows.
    pub fn remap(&mut self, keep: &[bool], appended: usize) {
        let s = self.stride;
        assert_eq!(keep.len() * s, self.m.len());
        let filter = |buf: &[f64]| -> Vec<f64> {
            let mut out: Vec<f64> = keep
                .iter()
                .enumerate()
                .filter(|(_, k)| **k)
                .flat_map(|(r, _)| buf[r * s..(r + 1) * s].iter().copied())
                .collect();
            out.extend(std::iter::repeat(0.0).take(appended * s));
            out
        };
        self.m = filter(&self.m);
        self.v = filter(&self.v);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut opt = Adam::new(2, 1);
        let mut p = vec![1.0, -1.0];
        opt.step(0.1, &mut p, &[3.0, -0.5]);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut opt = Adam::new(3, 3);
        let mut p = vec![0.3, 0.2, 0.1];
        for _ in 0..5 {
            opt.step(1e-2, &mut p, &[0.0; 3]);
        }
        assert_eq!(p, vec![0.3, 0.2, 0.1]);
    }

    #[test]
    fn adamw_decays_towards_zero() {
        let mut opt = Adam::adamw(1, 1, 0.1);
        let mut p = vec![2.0];
        opt.step(0.5, &mut p, &[0.0]);
        assert_eq!(p[0], 2.0 * (1.0 - 0.05));
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut opt = Adam::new(1, 1);
        let mut p = vec![5.0];
        for _ in 0..2000 {
            let g = 2.0 * (p[0] - 1.5);
            opt.step(0.05, &mut p, &[g]);
        }
        assert!((p[0] - 1.5).abs() < 1e-3);
    }

    #[test]
    fn remap_keeps_rows_and_zero_fills() {
        let mut opt = Adam::new(6, 2);
        let mut p = vec![1.0; 6];
        opt.step(0.1, &mut p, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let before = opt.moments().0.to_vec();
        opt.remap(&[true, false, true], 1);
        let (m, _) = opt.moments();
        assert_eq!(m.len(), 6);
        assert_eq!(&m[0..2], &before[0..2]);
        assert_eq!(&m[2..4], &before[4..6]);
        assert_eq!(&m[4..6], &[0.0, 0.0]);
    }
}
