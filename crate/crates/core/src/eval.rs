//! COCO-style average precision.
//!
//! Detections are ranked per class by score (stable, so equal scores keep
//! input order). Each detection is matched greedily to the unmatched ground
//! truth of the same image and class with the highest IoU (lowest index on
//! ties), provided that IoU is at least the threshold. Precision is made
//! monotone from the right and sampled at the 101 recall points `i/100`, using
//! the first rank whose recall reaches the point (0 when none does).
//!
//! Classes without any ground truth are excluded from every mean.

use alloc::vec;
use alloc::vec::Vec;

use crate::boxes::iou;
use crate::roi::BoxXYXY;
use crate::NUM_CLASSES;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub image: usize,
    pub class: usize,
    pub score: f32,
    pub bbox: BoxXYXY,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruth {
    pub image: usize,
    pub class: usize,
    pub bbox: BoxXYXY,
}

pub const RECALL_POINTS: usize = 101;

/// `0.50, 0.55, …, 0.95`.
pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

/// `i/100` for `i = 0..=100`.
pub fn recall_points() -> Vec<f64> {
    (0..RECALL_POINTS).map(|i| i as f64 / 100.0).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApTable {
    pub thresholds: Vec<f64>,
    /// `per_class[class][threshold]`; `None` for classes without ground truth.
    pub per_class: Vec<Vec<Option<f64>>>,
}

impl ApTable {
    /// Mean over evaluated classes at threshold index `t`.
    pub fn mean_at_index(&self, t: usize) -> f64 {
        let vals: Vec<f64> = self.per_class.iter().filter_map(|c| c[t]).collect();
        if vals.is_empty() {
            0.0
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    }

    /// Mean over evaluated classes at the given threshold, if it was evaluated.
    pub fn mean_at(&self, threshold: f64) -> Option<f64> {
        self.thresholds
            .iter()
            .position(|&t| (t - threshold).abs() < 1e-9)
            .map(|i| self.mean_at_index(i))
    }

    /// Mean over thresholds of the per-threshold class means.
    pub fn map(&self) -> f64 {
        if self.thresholds.is_empty() {
            return 0.0;
        }
        (0..self.thresholds.len()).map(|t| self.mean_at_index(t)).sum::<f64>() / self.thresholds.len() as f64
    }

    pub fn ap50(&self) -> f64 {
        self.mean_at(0.5).unwrap_or(0.0)
    }

    pub fn ap75(&self) -> f64 {
        self.mean_at(0.75).unwrap_or(0.0)
    }

    /// Number of classes that have ground truth.
    pub fn evaluated_classes(&self) -> usize {
        self.per_class.iter().filter(|c| c.first().is_some_and(|v| v.is_some())).count()
    }
}

/// Precision and recall after each ranked detection of one class.
pub fn pr_curve(dets: &[Detection], gts: &[GroundTruth], class: usize, threshold: f64) -> (Vec<f64>, Vec<f64>) {
    let gts: Vec<&GroundTruth> = gts.iter().filter(|g| g.class == class).collect();
    let mut ranked: Vec<&Detection> = dets.iter().filter(|d| d.class == class).collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score));
    let npos = gts.len();
    let mut matched = vec![false; npos];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut precision = Vec::with_capacity(ranked.len());
    let mut recall = Vec::with_capacity(ranked.len());
    for d in ranked {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if matched[g] || gt.image != d.image {
                continue;
            }
            let v = iou(&d.bbox, &gt.bbox) as f64;
            if v >= threshold && best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        match best {
            Some((g, _)) => {
                matched[g] = true;
                tp += 1;
            }
            None => fp += 1,
        }
        precision.push(tp as f64 / (tp + fp) as f64);
        recall.push(if npos == 0 { 0.0 } else { tp as f64 / npos as f64 });
    }
    (precision, recall)
}

/// 101-point interpolated AP of one class, `None` without ground truth.
pub fn average_precision(dets: &[Detection], gts: &[GroundTruth], class: usize, threshold: f64) -> Option<f64> {
    if !gts.iter().any(|g| g.class == class) {
        return None;
    }
    let (mut precision, recall) = pr_curve(dets, gts, class, threshold);
    for i in (1..precision.len()).rev() {
        if precision[i] > precision[i - 1] {
            precision[i - 1] = precision[i];
        }
    }
    let mut sum = 0.0;
    for r in recall_points() {
        let idx = recall.partition_point(|&rc| rc < r);
        if idx < precision.len() {
            sum += precision[idx];
        }
    }
    Some(sum / RECALL_POINTS as f64)
}

pub fn evaluate_map(dets: &[Detection], gts: &[GroundTruth], thresholds: &[f64]) -> ApTable {
    let per_class = (0..NUM_CLASSES)
        .map(|c| thresholds.iter().map(|&t| average_precision(dets, gts, c, t)).collect())
        .collect();
    ApTable {
        thresholds: thresholds.to_vec(),
        per_class,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gt(image: usize, class: usize, b: BoxXYXY) -> GroundTruth {
        GroundTruth { image, class, bbox: b }
    }

    fn det(image: usize, class: usize, score: f32, b: BoxXYXY) -> Detection {
        Detection { image, class, score, bbox: b }
    }

    #[test]
    fn perfect_detections_score_one() {
        let g = [
            gt(0, 0, BoxXYXY::new(0., 0., 10., 10.)),
            gt(0, 2, BoxXYXY::new(20., 20., 40., 40.)),
            gt(1, 0, BoxXYXY::new(5., 5., 25., 15.)),
        ];
        let d: Vec<Detection> = g.iter().map(|g| det(g.image, g.class, 1.0, g.bbox)).collect();
        let t = evaluate_map(&d, &g, &coco_thresholds());
        assert_eq!(t.map(), 1.0);
        assert_eq!(t.ap50(), 1.0);
        assert_eq!(t.ap75(), 1.0);
        assert_eq!(t.evaluated_classes(), 2);
    }

    #[test]
    fn threshold_semantics() {
        let g = [gt(0, 1, BoxXYXY::new(0., 0., 10., 10.))];
        // IoU = 6/10
        let d = [det(0, 1, 0.9, BoxXYXY::new(0., 0., 10., 6.))];
        let t = evaluate_map(&d, &g, &coco_thresholds());
        assert_eq!(t.ap50(), 1.0);
        assert_eq!(t.ap75(), 0.0);
    }

    #[test]
    fn hand_case_three_detections_two_gt() {
        let a = BoxXYXY::new(0., 0., 10., 10.);
        let b = BoxXYXY::new(50., 50., 60., 60.);
        let g = [gt(0, 0, a), gt(0, 0, b)];
        // ranks: TP, FP, TP → precision 1, 1/2, 2/3; recall 1/2, 1/2, 1
        let d = [
            det(0, 0, 0.9, a),
            det(0, 0, 0.8, BoxXYXY::new(80., 80., 90., 90.)),
            det(0, 0, 0.7, b),
        ];
        let (p, r) = pr_curve(&d, &g, 0, 0.5);
        assert_eq!(p, vec![1.0, 0.5, 2.0 / 3.0]);
        assert_eq!(r, vec![0.5, 0.5, 1.0]);
        // recall points 0..=0.5 (51 of them) see precision 1, the other 50 see 2/3
        let want = (51.0 + 50.0 * (2.0 / 3.0)) / 101.0;
        assert!((average_precision(&d, &g, 0, 0.5).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn classes_without_gt_are_excluded() {
        let g = [gt(0, 0, BoxXYXY::new(0., 0., 10., 10.))];
        let d = [
            det(0, 0, 0.9, BoxXYXY::new(0., 0., 10., 10.)),
            det(0, 3, 0.9, BoxXYXY::new(0., 0., 10., 10.)),
        ];
        let t = evaluate_map(&d, &g, &[0.5]);
        assert_eq!(t.per_class[3][0], None);
        assert_eq!(t.ap50(), 1.0);
    }

    #[test]
    fn detections_match_only_their_image() {
        let g = [gt(0, 0, BoxXYXY::new(0., 0., 10., 10.))];
        let d = [det(1, 0, 0.9, BoxXYXY::new(0., 0., 10., 10.))];
        assert_eq!(average_precision(&d, &g, 0, 0.5), Some(0.0));
    }
}
