//! IoU, `(dx, dy, dw, dh)` box deltas and greedy NMS.

use alloc::vec::Vec;

use crate::roi::BoxXYXY;

pub fn iou(a: &BoxXYXY, b: &BoxXYXY) -> f32 {
    let iw = a.x2.min(b.x2) - a.x1.max(b.x1);
    let ih = a.y2.min(b.y2) - a.y1.max(b.y1);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw as f64 * ih as f64;
    let union = a.area() as f64 + b.area() as f64 - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union) as f32
    }
}

/// Deltas taking `proposal` to `target`:
/// `((cx* − cx)/w, (cy* − cy)/h, ln(w*/w), ln(h*/h))`.
pub fn encode_deltas(proposal: &BoxXYXY, target: &BoxXYXY) -> [f32; 4] {
    let p = wide(proposal);
    let t = wide(target);
    [
        ((t.0 - p.0) / p.2) as f32,
        ((t.1 - p.1) / p.3) as f32,
        libm::log(t.2 / p.2) as f32,
        libm::log(t.3 / p.3) as f32,
    ]
}

/// `(cx, cy, w, h)` in `f64`.
fn wide(b: &BoxXYXY) -> (f64, f64, f64, f64) {
    let (x1, y1, x2, y2) = (b.x1 as f64, b.y1 as f64, b.x2 as f64, b.y2 as f64);
    (0.5 * (x1 + x2), 0.5 * (y1 + y2), x2 - x1, y2 - y1)
}

/// Largest magnitude accepted for `dw`/`dh` before exponentiation.
pub const MAX_LOG_SCALE: f32 = 4.135; // ln(1000/16)

pub fn decode_deltas(proposal: &BoxXYXY, deltas: &[f32; 4]) -> BoxXYXY {
    let (pcx, pcy, pw, ph) = wide(proposal);
    let clamp = |v: f32| v.clamp(-MAX_LOG_SCALE, MAX_LOG_SCALE) as f64;
    let cx = pcx + deltas[0] as f64 * pw;
    let cy = pcy + deltas[1] as f64 * ph;
    let hw = 0.5 * pw * libm::exp(clamp(deltas[2]));
    let hh = 0.5 * ph * libm::exp(clamp(deltas[3]));
    BoxXYXY::new((cx - hw) as f32, (cy - hh) as f32, (cx + hw) as f32, (cy + hh) as f32)
}

/// Greedy non-maximum suppression. Returns kept indices, highest score first;
/// ties keep the lower index first.
pub fn nms(boxes: &[BoxXYXY], scores: &[f32], iou_threshold: f32) -> Vec<usize> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut keep: Vec<usize> = Vec::new();
    for i in order {
        if keep.iter().all(|&k| iou(&boxes[k], &boxes[i]) <= iou_threshold) {
            keep.push(i);
        }
    }
    keep
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_extremes() {
        let a = BoxXYXY::new(0., 0., 10., 10.);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &BoxXYXY::new(10., 0., 20., 10.)), 0.0);
        assert_eq!(iou(&a, &BoxXYXY::new(20., 20., 30., 30.)), 0.0);
        assert!((iou(&a, &BoxXYXY::new(5., 0., 15., 10.)) - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn identical_boxes_have_zero_deltas() {
        let a = BoxXYXY::new(3., 4., 17., 29.);
        assert_eq!(encode_deltas(&a, &a), [0.0; 4]);
        assert_eq!(decode_deltas(&a, &[0.0; 4]), a);
    }

    #[test]
    fn nms_suppresses_overlaps() {
        let boxes = [
            BoxXYXY::new(0., 0., 10., 10.),
            BoxXYXY::new(1., 1., 11., 11.),
            BoxXYXY::new(50., 50., 60., 60.),
        ];
        assert_eq!(nms(&boxes, &[0.9, 0.95, 0.1], 0.5), alloc::vec![1, 2]);
        assert_eq!(nms(&boxes, &[0.9, 0.95, 0.1], 0.9), alloc::vec![1, 0, 2]);
    }
}
