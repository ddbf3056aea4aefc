//! Scene fitting: losses, optimizers, density control and the training loop.

mod densify;
mod fit;
mod loss;
mod optim;

pub use densify::{densify_and_prune, DensifyConfig, DensifyOutcome, GradStats};
pub use fit::{
    exp_decay, fit_scene, fit_scene_observed, scene_extent, FitConfig, FitOutput, LearningRates,
    MetricRecord, FEATURE_DIM_OPTIONS,
};
pub use loss::{l1_loss, loss_feat, loss_rgb, psnr, ssim, LossOutput};
pub use optim::Adam;
