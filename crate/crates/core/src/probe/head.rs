//! Linear softmax head with an optional shared fusion layer, trained by
//! full-batch SGD with momentum and a polynomial learning-rate decay.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub iterations: usize,
    pub lr: f64,
    pub momentum: f64,
    pub poly_power: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { iterations: 300, lr: 0.5, momentum: 0.9, poly_power: 0.9 }
    }
}

/// Linear map from stacked `[orig, tuned]` features back to the original
/// width, initialised to the average of the two halves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fusion {
    pub c_in: usize,
    pub c_out: usize,
    pub weight: Vec<f64>,
}

impl Fusion {
    pub fn averaging(c_out: usize) -> Self {
        let c_in = 2 * c_out;
        let mut weight = vec![0.0; c_out * c_in];
        for r in 0..c_out {
            weight[r * c_in + r] = 0.5;
            weight[r * c_in + c_out + r] = 0.5;
        }
        Self { c_in, c_out, weight }
    }
}

/// Input rows consist of `segments` blocks of `seg_dim` values; the fusion
/// layer (if any) maps each block separately before the class map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearHead {
    pub segments: usize,
    pub seg_dim: usize,
    pub fusion: Option<Fusion>,
    pub classes: usize,
    /// `classes × z_dim`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearHead {
    pub fn zeros(segments: usize, seg_dim: usize, fusion: Option<Fusion>, classes: usize) -> Result<Self> {
        if let Some(f) = &fusion {
            if f.c_in != seg_dim {
                return Err(Error::Config(format!("fusion expects {} inputs, segments have {seg_dim}", f.c_in)));
            }
        }
        let mut head = Self { segments, seg_dim, fusion, classes, weight: Vec::new(), bias: vec![0.0; classes] };
        head.weight = vec![0.0; classes * head.z_dim()];
        Ok(head)
    }

    pub fn input_dim(&self) -> usize {
        self.segments * self.seg_dim
    }

    fn block_dim(&self) -> usize {
        self.fusion.as_ref().map_or(self.seg_dim, |f| f.c_out)
    }

    pub fn z_dim(&self) -> usize {
        self.segments * self.block_dim()
    }

    fn hidden(&self, x: &[f64], z: &mut [f64]) {
        match &self.fusion {
            None => z.copy_from_slice(x),
            Some(f) => {
                for s in 0..self.segments {
                    let xs = &x[s * f.c_in..(s + 1) * f.c_in];
                    for r in 0..f.c_out {
                        z[s * f.c_out + r] = f.weight[r * f.c_in..(r + 1) * f.c_in].iter().zip(xs).map(|(a, b)| a * b).sum();
                    }
                }
            }
        }
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let zd = self.z_dim();
        let mut z = vec![0.0; zd];
        self.hidden(x, &mut z);
        (0..self.classes)
            .map(|k| self.bias[k] + self.weight[k * zd..(k + 1) * zd].iter().zip(&z).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    }

    fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len() + self.fusion.as_ref().map_or(0, |f| f.weight.len())
    }

    fn params_mut(&mut self) -> Vec<&mut f64> {
        let mut v: Vec<&mut f64> = self.weight.iter_mut().chain(self.bias.iter_mut()).collect();
        if let Some(f) = &mut self.fusion {
            v.extend(f.weight.iter_mut());
        }
        v
    }

    /// Summed cross-entropy and its parameter gradient over one group of rows.
    fn group_grad(&self, rows: &[f64], targets: &[u16]) -> (f64, Vec<f64>) {
        let (d, zd, k) = (self.input_dim(), self.z_dim(), self.classes);
        let mut g = vec![0.0; self.num_params()];
        let (gw, rest) = g.split_at_mut(self.weight.len());
        let (gb, gf) = rest.split_at_mut(k);
        let mut loss = 0.0;
        let mut z = vec![0.0; zd];
        let mut dz = vec![0.0; zd];
        for (x, &t) in rows.chunks_exact(d).zip(targets) {
            self.hidden(x, &mut z);
            let logits: Vec<f64> = (0..k)
                .map(|c| self.bias[c] + self.weight[c * zd..(c + 1) * zd].iter().zip(&z).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            let m = logits.iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let s: f64 = e.iter().sum();
            loss += s.ln() + m - logits[t as usize];
            dz.iter_mut().for_each(|v| *v = 0.0);
            for c in 0..k {
                let dl = e[c] / s - if c == t as usize { 1.0 } else { 0.0 };
                gb[c] += dl;
                let wrow = &self.weight[c * zd..(c + 1) * zd];
                for j in 0..zd {
                    gw[c * zd + j] += dl * z[j];
                    dz[j] += dl * wrow[j];
                }
            }
            if let Some(f) = &self.fusion {
                for seg in 0..self.segments {
                    let xs = &x[seg * f.c_in..(seg + 1) * f.c_in];
                    for r in 0..f.c_out {
                        let dzr = dz[seg * f.c_out + r];
                        for (gv, xv) in gf[r * f.c_in..(r + 1) * f.c_in].iter_mut().zip(xs) {
                            *gv += dzr * xv;
                        }
                    }
                }
            }
        }
        (loss, g)
    }

    /// Mean cross-entropy and gradient over all groups. Groups are reduced
    /// in order, so the result does not depend on thread scheduling.
    pub fn loss_and_grad(&self, data: &[(Vec<f64>, Vec<u16>)]) -> (f64, Vec<f64>) {
        let n: usize = data.iter().map(|(_, t)| t.len()).sum();
        let parts: Vec<(f64, Vec<f64>)> = data.par_iter().map(|(rows, t)| self.group_grad(rows, t)).collect();
        let mut loss = 0.0;
        let mut grad = vec![0.0; self.num_params()];
        for (l, g) in parts {
            loss += l;
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        let inv = 1.0 / n.max(1) as f64;
        grad.iter_mut().for_each(|v| *v *= inv);
        (loss * inv, grad)
    }

    /// Full-batch SGD with momentum, `lr·(1 − t/T)^power` schedule.
    pub fn train(&mut self, data: &[(Vec<f64>, Vec<u16>)], cfg: &ProbeConfig) -> Result<Vec<f64>> {
        let n: usize = data.iter().map(|(_, t)| t.len()).sum();
        if n == 0 {
            return Err(Error::Config("no labelled pixels to train on".into()));
        }
        for (rows, t) in data {
            if rows.len() != t.len() * self.input_dim() {
                return Err(Error::Shape("probe rows do not match the head input width".into()));
            }
            if t.iter().any(|&c| c as usize >= self.classes) {
                return Err(Error::Config("target class outside the head's range".into()));
            }
        }
        let mut velocity = vec![0.0; self.num_params()];
        let mut history = Vec::with_capacity(cfg.iterations);
        for it in 0..cfg.iterations {
            let (loss, grad) = self.loss_and_grad(data);
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("probe loss diverged at iteration {}", it + 1)));
            }
            history.push(loss);
            let lr = cfg.lr * (1.0 - it as f64 / cfg.iterations as f64).powf(cfg.poly_power);
            for ((p, v), g) in self.params_mut().into_iter().zip(velocity.iter_mut()).zip(&grad) {
                *v = cfg.momentum * *v + g;
                *p -= lr * *v;
            }
        }
        Ok(history)
    }
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::MIN, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_matches_finite_differences_with_fusion() {
        let mut head = LinearHead::zeros(2, 4, Some(Fusion::averaging(2)), 3).unwrap();
        for (i, w) in head.weight.iter_mut().enumerate() {
            *w = ((i * 7 % 11) as f64 - 5.0) * 0.1;
        }
        head.bias = vec![0.1, -0.2, 0.05];
        let rows: Vec<f64> = (0..5 * 8).map(|i| ((i * 13 % 17) as f64 - 8.0) * 0.1).collect();
        let data = vec![(rows, vec![0, 2, 1, 1, 0])];
        let (_, g) = head.loss_and_grad(&data);
        let n = g.len();
        for i in 0..n {
            let mut p = head.clone();
            *p.params_mut()[i] += 1e-6;
            let mut m = head.clone();
            *m.params_mut()[i] -= 1e-6;
            let fd = (p.loss_and_grad(&data).0 - m.loss_and_grad(&data).0) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-7, "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn averaging_fusion_means_halves() {
        let f = Fusion::averaging(2);
        let head = LinearHead { weight: vec![1.0, 0.0, 0.0, 1.0], ..LinearHead::zeros(1, 4, Some(f), 2).unwrap() };
        assert_eq!(head.logits(&[1.0, 2.0, 3.0, 6.0]), vec![2.0, 4.0]);
    }
}
