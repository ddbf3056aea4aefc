//! Adaptive density control: clone, split and prune.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::math::{mat3_vec, quat_to_mat, sigmoid};
use crate::scene::Scene;
use crate::synthetic::standard_normal;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DensifyConfig {
    pub enabled: bool,
    pub start: usize,
    pub stop: usize,
    pub interval: usize,
    /// Threshold on the mean screen-space positional gradient, in
    /// normalized device units.
    pub grad_threshold: f64,
    /// Splats whose largest scale exceeds this fraction of the scene
    /// extent are split rather than cloned.
    pub percent_dense: f64,
    pub prune_opacity: f64,
    /// Scale divisor applied to split children.
    pub split_shrink: f64,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            start: 500,
            stop: 15000,
            interval: 100,
            grad_threshold: 2e-4,
            percent_dense: 0.01,
            prune_opacity: 0.005,
            split_shrink: 1.6,
        }
    }
}

impl DensifyConfig {
    pub fn disabled() -> Self {
        Self { enabled: false, ..Self::default() }
    }

    /// Whether densification runs after 1-based iteration `iter`.
    pub fn due(&self, iter: usize) -> bool {
        self.enabled && self.interval > 0 && iter >= self.start && iter < self.stop && iter % self.interval == 0
    }
}

/// Accumulated screen-space positional gradient magnitudes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradStats {
    pub accum: Vec<f64>,
    pub count: Vec<u32>,
}

impl GradStats {
    pub fn new(n: usize) -> Self {
        Self { accum: vec![0.0; n], count: vec![0; n] }
    }

    /// `mean2d` gradients are in pixels; they are converted to NDC units.
    pub fn add(&mut self, mean2d: &[[f64; 2]], visible: &[bool], width: usize, height: usize) {
        let (sx, sy) = (0.5 * width as f64, 0.5 * height as f64);
        for (i, g) in mean2d.iter().enumerate() {
            if visible[i] {
                self.accum[i] += ((g[0] * sx).powi(2) + (g[1] * sy).powi(2)).sqrt();
                self.count[i] += 1;
            }
        }
    }

    pub fn mean(&self, i: usize) -> f64 {
        if self.count[i] == 0 {
            0.0
        } else {
            self.accum[i] / self.count[i] as f64
        }
    }
}

/// New scene plus the row mapping needed to carry optimizer state over.
#[derive(Debug, Clone)]
pub struct DensifyOutcome {
    pub scene: Scene,
    /// For each old Gaussian, whether it survives (in order) in the new scene.
    pub kept: Vec<bool>,
    /// Gaussians appended after the survivors.
    pub appended: usize,
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
}

impl DensifyOutcome {
    fn unchanged(scene: &Scene) -> Self {
        Self { scene: scene.clone(), kept: vec![true; scene.len()], appended: 0, cloned: 0, split: 0, pruned: 0 }
    }
}

pub fn densify_and_prune<R: Rng>(
    scene: &Scene,
    stats: &GradStats,
    config: &DensifyConfig,
    extent: f64,
    rng: &mut R,
) -> DensifyOutcome {
    if !config.enabled {
        return DensifyOutcome::unchanged(scene);
    }
    let n = scene.len();
    let mut out = scene.clone();
    out.gaussians.clear();
    let mut survivor = vec![false; n];
    let mut extra = Vec::new();
    let (mut cloned, mut split) = (0, 0);
    for (i, g) in scene.gaussians.iter().enumerate() {
        let hot = i < stats.count.len() && stats.mean(i) >= config.grad_threshold;
        let big = g.scale().iter().cloned().fold(f64::MIN, f64::max) > config.percent_dense * extent;
        if hot && big {
            split += 1;
            let r = quat_to_mat(&g.unit_rotation());
            let s = g.scale();
            for _ in 0..2 {
                let n3 = [standard_normal(rng) * s[0], standard_normal(rng) * s[1], standard_normal(rng) * s[2]];
                let off = mat3_vec(&r, &n3);
                let mut child = g.clone();
                for k in 0..3 {
                    child.mean[k] += off[k];
                    child.log_scale[k] -= config.split_shrink.ln();
                }
                extra.push(child);
            }
            continue;
        }
        survivor[i] = true;
        out.gaussians.push(g.clone());
        if hot {
            cloned += 1;
            extra.push(g.clone());
        }
    }
    // Prune survivors and children alike.
    let keep_new = |op_logit: f64| sigmoid(op_logit) >= config.prune_opacity;
    let mut kept = vec![false; n];
    let mut pruned = 0;
    let mut survivors = out.gaussians.drain(..).collect::<Vec<_>>().into_iter();
    for i in 0..n {
        if survivor[i] {
            let g = survivors.next().expect("survivor count");
            if keep_new(g.opacity_logit) {
                kept[i] = true;
                out.gaussians.push(g);
            } else {
                pruned += 1;
            }
        }
    }
    let mut appended = 0;
    for g in extra {
        if keep_new(g.opacity_logit) {
            out.gaussians.push(g);
            appended += 1;
        } else {
            pruned += 1;
        }
    }
    DensifyOutcome { scene: out, kept, appended, cloned, split, pruned }
}
