use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{LabelImage, IGNORE_LABEL};
use crate::error::{Error, Result};
use crate::scene::FeatureImage;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegMetrics {
    pub miou: f64,
    pub macc: f64,
    pub aacc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthMetrics {
    pub rmse: f64,
    pub abs_rel: f64,
}

/// `conf[gt][pred]` counts over pixels whose ground truth is not ignored.
/// Predictions outside `0..num_classes` count only as misses.
pub fn confusion_matrix(pred: &[LabelImage], gt: &[LabelImage], num_classes: usize) -> Result<Vec<Vec<u64>>> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!("{} predictions for {} ground-truth maps", pred.len(), gt.len())));
    }
    for (p, g) in pred.iter().zip(gt) {
        if p.height != g.height || p.width != g.width {
            return Err(Error::Shape("prediction and ground truth differ in size".into()));
        }
    }
    let k = num_classes + 1;
    let per_image: Vec<Vec<u64>> = pred
        .par_iter()
        .zip(gt)
        .map(|(p, g)| {
            let mut m = vec![0u64; num_classes * k];
            for (&pv, &gv) in p.data.iter().zip(&g.data) {
                if gv == IGNORE_LABEL || gv as usize >= num_classes {
                    continue;
                }
                let col = if (pv as usize) < num_classes { pv as usize } else { num_classes };
                m[gv as usize * k + col] += 1;
            }
            m
        })
        .collect();
    let mut total = vec![0u64; num_classes * k];
    for m in per_image {
        total.iter_mut().zip(&m).for_each(|(a, b)| *a += b);
    }
    Ok((0..num_classes).map(|r| total[r * k..r * k + num_classes + 1].to_vec()).collect())
}

/// mIoU and mAcc average over classes present in the ground truth.
pub fn metrics_seg(pred: &[LabelImage], gt: &[LabelImage], num_classes: usize) -> Result<SegMetrics> {
    let conf = confusion_matrix(pred, gt, num_classes)?;
    let total: u64 = conf.iter().flatten().sum();
    if total == 0 {
        return Err(Error::Config("no labelled pixels to evaluate".into()));
    }
    let (mut iou_sum, mut acc_sum, mut present, mut correct) = (0.0, 0.0, 0usize, 0u64);
    for c in 0..num_classes {
        let gt_count: u64 = conf[c].iter().sum();
        if gt_count == 0 {
            continue;
        }
        let tp = conf[c][c];
        let fp: u64 = (0..num_classes).filter(|&r| r != c).map(|r| conf[r][c]).sum();
        let fn_ = gt_count - tp;
        present += 1;
        correct += tp;
        iou_sum += tp as f64 / (tp + fp + fn_) as f64;
        acc_sum += tp as f64 / gt_count as f64;
    }
    Ok(SegMetrics { miou: iou_sum / present as f64, macc: acc_sum / present as f64, aacc: correct as f64 / total as f64 })
}

/// RMSE and AbsRel over pixels where `mask` is set and the ground truth is
/// positive. `mask = None` uses every positive ground-truth pixel.
pub fn metrics_depth(pred: &[FeatureImage], gt: &[FeatureImage], mask: Option<&[Vec<bool>]>) -> Result<DepthMetrics> {
    if pred.len() != gt.len() || mask.is_some_and(|m| m.len() != gt.len()) {
        return Err(Error::Shape("depth metric inputs differ in length".into()));
    }
    let parts: Vec<Result<(f64, f64, usize)>> = pred
        .par_iter()
        .zip(gt)
        .enumerate()
        .map(|(i, (p, g))| {
            if !p.same_shape(g) || g.channels != 1 {
                return Err(Error::Shape(format!("depth map {i} shape mismatch")));
            }
            let m = mask.map(|m| &m[i]);
            if m.is_some_and(|m| m.len() != g.data.len()) {
                return Err(Error::Shape(format!("mask {i} has the wrong size")));
            }
            let (mut se, mut rel, mut n) = (0.0, 0.0, 0);
            for (j, (&pv, &gv)) in p.data.iter().zip(&g.data).enumerate() {
                if m.is_some_and(|m| !m[j]) || !(gv > 0.0 && gv.is_finite()) {
                    continue;
                }
                se += (pv - gv) * (pv - gv);
                rel += (pv - gv).abs() / gv;
                n += 1;
            }
            Ok((se, rel, n))
        })
        .collect();
    let (mut se, mut rel, mut n) = (0.0, 0.0, 0);
    for part in parts {
        let (a, b, c) = part?;
        se += a;
        rel += b;
        n += c;
    }
    if n == 0 {
        return Err(Error::Config("depth mask is empty".into()));
    }
    Ok(DepthMetrics { rmse: (se / n as f64).sqrt(), abs_rel: rel / n as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(h: usize, w: usize, v: &[u8]) -> LabelImage {
        LabelImage::new(h, w, v.to_vec()).unwrap()
    }

    #[test]
    fn perfect_prediction() {
        let g = img(2, 2, &[0, 1, 2, 255]);
        let m = metrics_seg(&[g.clone()], &[g], 3).unwrap();
        assert_eq!((m.miou, m.macc, m.aacc), (1.0, 1.0, 1.0));
        let d = FeatureImage::from_vec(1, 3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        let r = metrics_depth(&[d.clone()], &[d], None).unwrap();
        assert_eq!((r.rmse, r.abs_rel), (0.0, 0.0));
    }

    #[test]
    fn inverted_binary_prediction_has_zero_iou() {
        let g = img(2, 2, &[0, 1, 1, 0]);
        let p = img(2, 2, &[1, 0, 0, 1]);
        assert_eq!(metrics_seg(&[p], &[g], 2).unwrap().miou, 0.0);
    }

    // Ground truth / prediction (4×4, 3 classes, one ignored pixel):
    //   gt   0 0 1 1     pred 0 1 1 1
    //        0 0 1 1          0 0 1 2
    //        2 2 2 2          2 2 0 2
    //        2 2 2 255        1 2 2 0
    // Confusion rows gt, cols pred:
    //   gt0: [3, 1, 0]  gt1: [0, 3, 1]  gt2: [1, 1, 5]
    // IoU0 = 3/(3+1+1) = 0.6, IoU1 = 3/(3+1+2) = 0.5, IoU2 = 5/(5+2+1) = 0.625
    // Acc0 = 3/4, Acc1 = 3/4, Acc2 = 5/7, aAcc = 11/15.
    #[test]
    fn hand_counted_four_by_four_case() {
        let gt = img(4, 4, &[0, 0, 1, 1, 0, 0, 1, 1, 2, 2, 2, 2, 2, 2, 2, 255]);
        let pred = img(4, 4, &[0, 1, 1, 1, 0, 0, 1, 2, 2, 2, 0, 2, 1, 2, 2, 0]);
        let conf = confusion_matrix(&[pred.clone()], &[gt.clone()], 3).unwrap();
        assert_eq!(conf, vec![vec![3, 1, 0, 0], vec![0, 3, 1, 0], vec![1, 1, 5, 0]]);
        let m = metrics_seg(&[pred], &[gt], 3).unwrap();
        assert!((m.miou - (0.6 + 0.5 + 0.625) / 3.0).abs() < 1e-15);
        assert!((m.macc - (0.75 + 0.75 + 5.0 / 7.0) / 3.0).abs() < 1e-15);
        assert!((m.aacc - 11.0 / 15.0).abs() < 1e-15);
    }

    #[test]
    fn absent_classes_are_excluded() {
        let g = img(1, 4, &[0, 0, 0, 0]);
        let p = img(1, 4, &[0, 0, 0, 2]);
        let m = metrics_seg(&[p], &[g], 5).unwrap();
        assert!((m.miou - 0.75).abs() < 1e-15);
        assert!((m.macc - 0.75).abs() < 1e-15);
    }

    #[test]
    fn depth_metrics_by_hand() {
        let g = FeatureImage::from_vec(1, 4, 1, vec![1.0, 2.0, 4.0, 0.0]).unwrap();
        let p = FeatureImage::from_vec(1, 4, 1, vec![2.0, 2.0, 2.0, 9.0]).unwrap();
        let r = metrics_depth(&[p.clone()], &[g.clone()], None).unwrap();
        assert!((r.rmse - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!((r.abs_rel - (1.0 + 0.0 + 0.5) / 3.0).abs() < 1e-15);
        let mask = vec![vec![false, true, true, true]];
        let r = metrics_depth(&[p.clone()], &[g.clone()], Some(&mask)).unwrap();
        assert!((r.rmse - 2.0f64.sqrt()).abs() < 1e-15);
        assert!(metrics_depth(&[p], &[g], Some(&[vec![false; 4]])).is_err());
    }
}
