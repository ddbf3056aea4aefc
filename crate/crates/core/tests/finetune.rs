use featsplat_core::extract::{
    correspondences, finetune, multiview_consistency, render_target, target_l1, Correspondence, FeatureExtractor,
    FileBackedExtractor, FinetuneConfig, SceneLibrary, ToyPatchEncoder,
};
use featsplat_core::synthetic::{synthetic_library, LibrarySpec};
use featsplat_core::train::l1_loss;
use featsplat_core::{Error, FeatureDecoder};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;

fn small_library(seed: u64) -> SceneLibrary {
    let mut spec = LibrarySpec { scenes: 2, ..LibrarySpec::default() };
    spec.fit.iterations = 30;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    synthetic_library(&spec, &mut rng).unwrap().0
}

/// Mean consistency over every held-out view paired with two training views.
fn library_consistency(e: &FeatureExtractor, lib: &SceneLibrary) -> f64 {
    let mut images = Vec::new();
    let mut pairs = Vec::new();
    let mut corr: Vec<Vec<Correspondence>> = Vec::new();
    for s in &lib.scenes {
        let base = images.len();
        images.extend(s.views.iter().map(|v| v.image.clone()));
        for a in s.train_views..s.views.len() {
            let k = a - s.train_views;
            for b in [k % s.train_views, (k + 1) % s.train_views] {
                pairs.push((base + a, base + b));
                corr.push(correspondences(&s.scene, &s.views[a].camera, &s.views[b].camera, 0.5));
            }
        }
    }
    multiview_consistency(e, &images, &pairs, &corr).unwrap()
}

#[test]
fn one_epoch_on_four_scenes_improves_held_out_error_and_consistency() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (lib, _) = synthetic_library(&LibrarySpec::default(), &mut rng).unwrap();
    let before_lib = lib.clone();
    let enc = FeatureExtractor::Toy(ToyPatchEncoder::random(8, 16, &mut rng));
    let held = lib.held_out_refs();
    let base_l1 = target_l1(&enc, &lib, &held).unwrap();
    let base_cons = library_consistency(&enc, &lib);
    let out = finetune(&enc, &lib, &FinetuneConfig { lr: 5e-3, ..FinetuneConfig::default() }).unwrap();
    let l1 = target_l1(&out.extractor, &lib, &held).unwrap();
    let cons = library_consistency(&out.extractor, &lib);
    assert!(l1 < base_l1, "held-out L1 {base_l1} -> {l1}");
    assert!(cons <= base_cons, "consistency {base_cons} -> {cons}");
    assert_eq!(lib, before_lib, "fine-tuning must not touch the library");
}

#[test]
fn zero_steps_leave_parameters_unchanged() {
    let lib = small_library(1);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let enc = FeatureExtractor::Toy(ToyPatchEncoder::random(8, 16, &mut rng));
    let out = finetune(&enc, &lib, &FinetuneConfig { max_steps: Some(0), ..FinetuneConfig::default() }).unwrap();
    assert_eq!(out.extractor, enc);
    assert!(out.losses.is_empty());
}

#[test]
fn exact_fit_only_drifts_by_weight_decay() {
    let mut lib = small_library(2);
    lib.scenes.truncate(1);
    let c = [0.25, -0.5, 0.75, 0.1, 0.0, 1.0, -1.0, 0.3, 0.2, 0.4, -0.2, 0.6, 0.9, -0.7, 0.05, 0.15];
    let mut dec = FeatureDecoder::zeros(8, 16);
    dec.bias.copy_from_slice(&c);
    lib.scenes[0].scene.decoder = dec;
    let mut enc = ToyPatchEncoder::zeros(8, 16);
    let l = enc.layout();
    enc.params[l.b_out..l.b_out + 16].copy_from_slice(&c);
    let e = FeatureExtractor::Toy(enc.clone());
    // Without decay the exact fit is a fixed point for the whole epoch.
    let still = finetune(&e, &lib, &FinetuneConfig { lr: 1e-2, weight_decay: 0.0, ..FinetuneConfig::default() }).unwrap();
    assert!(still.losses.iter().all(|&v| v == 0.0));
    assert_eq!(still.extractor, e);
    // With decay, a step at zero loss only applies the decay factor.
    let cfg = FinetuneConfig { lr: 1e-2, weight_decay: 1e-1, max_steps: Some(1), ..FinetuneConfig::default() };
    let out = finetune(&e, &lib, &cfg).unwrap();
    assert_eq!(out.losses, vec![0.0]);
    let FeatureExtractor::Toy(tuned) = out.extractor else { unreachable!() };
    for (a, b) in tuned.params.iter().zip(&enc.params) {
        assert_eq!(*a, b * (1.0 - cfg.lr * cfg.weight_decay));
    }
}

#[test]
fn one_epoch_visits_every_training_view_once() {
    let lib = small_library(3);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let enc = FeatureExtractor::Toy(ToyPatchEncoder::random(8, 16, &mut rng));
    let cfg = FinetuneConfig { batch_size: 3, ..FinetuneConfig::default() };
    let out = finetune(&enc, &lib, &cfg).unwrap();
    let train = lib.train_refs();
    assert_eq!(out.visited.len(), train.len());
    let seen: HashSet<_> = out.visited.iter().copied().collect();
    assert_eq!(seen, train.into_iter().collect());
    assert_eq!(out.losses.len(), out.visited.len().div_ceil(3));
}

#[test]
fn finetune_is_deterministic() {
    let lib = small_library(4);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let enc = FeatureExtractor::Toy(ToyPatchEncoder::random(8, 16, &mut rng));
    let cfg = FinetuneConfig { lr: 1e-3, epochs: 2, seed: 9, ..FinetuneConfig::default() };
    let a = finetune(&enc, &lib, &cfg).unwrap();
    let b = finetune(&enc, &lib, &cfg).unwrap();
    assert_eq!(a.extractor, b.extractor);
    assert_eq!(a.visited, b.visited);
}

#[test]
fn file_backed_extractor_cannot_be_finetuned() {
    let lib = small_library(5);
    let e = FeatureExtractor::FileBacked(FileBackedExtractor::new(8, 16));
    assert!(matches!(finetune(&e, &lib, &FinetuneConfig::default()), Err(Error::Unsupported(_))));
    let toy = FeatureExtractor::Toy(ToyPatchEncoder::zeros(8, 16));
    assert!(finetune(&toy, &SceneLibrary::default(), &FinetuneConfig::default()).is_err());
    assert!(finetune(&toy, &lib, &FinetuneConfig { epochs: 0, ..FinetuneConfig::default() }).is_err());
}

#[test]
fn joint_flip_gives_the_same_loss_for_an_equivariant_encoder() {
    let lib = small_library(6);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let p = 8;
    let mut enc = ToyPatchEncoder::random(p, 16, &mut rng);
    let l = enc.layout();
    let d = enc.patch_dim();
    for r in 0..16 {
        for py in 0..p {
            for px in 0..p / 2 {
                for ch in 0..3 {
                    enc.params[l.w_in + r * d + (py * p + (p - 1 - px)) * 3 + ch] = enc.params[l.w_in + r * d + (py * p + px) * 3 + ch];
                }
            }
        }
    }
    for b in l.blocks {
        for t in (0..9).filter(|&t| t != 4) {
            enc.params[b.mix + t] = 0.0;
        }
    }
    let r = lib.train_refs()[0];
    let img = &lib.view(r).image;
    let target = render_target(&lib, r, img.height / p, img.width / p).unwrap();
    let plain = l1_loss(&enc.forward(img).unwrap().grid, &target).unwrap().value;
    let flipped = l1_loss(&enc.forward(&img.flip_horizontal()).unwrap().grid, &target.flip_horizontal()).unwrap().value;
    assert!((plain - flipped).abs() < 1e-12, "{plain} vs {flipped}");
}

#[test]
fn consistency_is_deterministic() {
    let lib = small_library(8);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let enc = FeatureExtractor::Toy(ToyPatchEncoder::random(8, 16, &mut rng));
    assert_eq!(library_consistency(&enc, &lib), library_consistency(&enc, &lib));
}
