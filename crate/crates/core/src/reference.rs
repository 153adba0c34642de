//! Loop-based `f64` reference implementations.
//!
//! Nothing here touches the tape, the GEMM kernel or the precomputed RoI
//! plans: every operation is written directly from its definition so the
//! production path can be checked against an independent computation.
//! Parameterized functions read weights from a [`RefParams`] copy of a
//! [`ParamStore`], which finite-difference checks perturb freely.

use alloc::vec;
use alloc::vec::Vec;

use crate::attention::RoiAttentionStack;
use crate::backbone::Backbone;
use crate::detector::{Detector, Head};
use crate::eval::{Detection, GroundTruth};
use crate::head::{Bottleneck, DoubleHeadParams, SingleHeadParams};
use crate::layers::{ConvLayer, LinearLayer};
use crate::params::{ParamId, ParamStore};
use crate::posenc::PosEncoder;
use crate::roi::BoxXYXY;
use crate::scene::TrainingSample;
use crate::tensor::Tensor;

/// Dense row-major `f64` array.
#[derive(Debug, Clone, PartialEq)]
pub struct Array {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Array {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "reference array size");
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new(shape, vec![0.0; shape.iter().product()])
    }

    pub fn from_tensor(t: &Tensor) -> Self {
        Self::new(t.shape(), t.data().iter().map(|&v| v as f64).collect())
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Self {
        assert_eq!(shape.iter().product::<usize>(), self.data.len());
        self.shape = shape.to_vec();
        self
    }

    fn dims2(&self) -> (usize, usize) {
        assert_eq!(self.shape.len(), 2, "expected a matrix, got {:?}", self.shape);
        (self.shape[0], self.shape[1])
    }

    /// Maximum absolute difference to an `f32` slice of the same length.
    pub fn max_abs_diff(&self, other: &[f32]) -> f64 {
        assert_eq!(self.data.len(), other.len());
        self.data
            .iter()
            .zip(other)
            .map(|(a, &b)| (a - b as f64).abs())
            .fold(0.0, f64::max)
    }
}

/// Row-major strides.
fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

pub fn matmul(a: &Array, b: &Array) -> Array {
    let (m, k) = a.dims2();
    let (k2, n) = b.dims2();
    assert_eq!(k, k2);
    let mut out = Array::zeros(&[m, n]);
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a.data[i * k + p] * b.data[p * n + j];
            }
            out.data[i * n + j] = acc;
        }
    }
    out
}

pub fn transpose(a: &Array) -> Array {
    let (m, n) = a.dims2();
    let mut out = Array::zeros(&[n, m]);
    for i in 0..m {
        for j in 0..n {
            out.data[j * m + i] = a.data[i * n + j];
        }
    }
    out
}

/// `x[n×f]·w[f×o] + b[o]`
pub fn linear(x: &Array, w: &Array, b: &[f64]) -> Array {
    let mut out = matmul(x, w);
    let o = b.len();
    for (i, v) in out.data.iter_mut().enumerate() {
        *v += b[i % o];
    }
    out
}

pub fn add(a: &Array, b: &Array) -> Array {
    assert_eq!(a.shape, b.shape);
    Array::new(&a.shape, a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect())
}

pub fn relu(x: &Array) -> Array {
    Array::new(&x.shape, x.data.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect())
}

/// Visits every 1-D slice along `dim` as a list of flat indices.
fn for_each_slice(shape: &[usize], dim: usize, mut f: impl FnMut(&[usize])) {
    let st = strides(shape);
    let len = shape[dim];
    let total: usize = shape.iter().product();
    let mut idx = Vec::with_capacity(len);
    for flat in 0..total {
        if (flat / st[dim]) % len != 0 {
            continue;
        }
        idx.clear();
        idx.extend((0..len).map(|j| flat + j * st[dim]));
        f(&idx);
    }
}

pub fn softmax_dim(x: &Array, dim: usize) -> Array {
    let mut out = x.clone();
    for_each_slice(&x.shape, dim, |idx| {
        let max = idx.iter().map(|&i| x.data[i]).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = idx.iter().map(|&i| libm::exp(x.data[i] - max)).sum();
        for &i in idx {
            out.data[i] = libm::exp(x.data[i] - max) / z;
        }
    });
    out
}

pub fn l1_normalize_dim(x: &Array, dim: usize, eps: f64) -> Array {
    let mut out = x.clone();
    for_each_slice(&x.shape, dim, |idx| {
        let z: f64 = idx.iter().map(|&i| x.data[i].abs()).sum::<f64>() + eps;
        for &i in idx {
            out.data[i] = x.data[i] / z;
        }
    });
    out
}

/// Direct cross-correlation of `x[n×c×h×w]` with `w[o×c×kh×kw]` plus bias.
pub fn conv2d(x: &Array, w: &Array, b: &[f64], stride: usize, pad: usize) -> Array {
    let [n, c, h, wd] = x.shape[..] else { panic!("conv input rank") };
    let [o, c2, kh, kw] = w.shape[..] else { panic!("conv weight rank") };
    assert_eq!(c, c2);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = Array::zeros(&[n, o, oh, ow]);
    for img in 0..n {
        for oc in 0..o {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = b[oc];
                    for ic in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                let ix = (xo * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += x.data[((img * c + ic) * h + iy as usize) * wd + ix as usize]
                                    * w.data[((oc * c + ic) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out.data[((img * o + oc) * oh + y) * ow + xo] = acc;
                }
            }
        }
    }
    out
}

/// `[n×c×h×w]` to `[n×c]`.
pub fn avg_pool_global(x: &Array) -> Array {
    let [n, c, h, w] = x.shape[..] else { panic!("pool input rank") };
    let hw = h * w;
    Array::new(
        &[n, c],
        (0..n * c).map(|i| x.data[i * hw..(i + 1) * hw].iter().sum::<f64>() / hw as f64).collect(),
    )
}

/// Concatenation along `dim`.
pub fn concat(xs: &[&Array], dim: usize) -> Array {
    let mut shape = xs[0].shape.clone();
    shape[dim] = xs.iter().map(|x| x.shape[dim]).sum();
    let outer: usize = shape[..dim].iter().product();
    let mut data = Vec::with_capacity(shape.iter().product());
    for o in 0..outer {
        for x in xs {
            let chunk: usize = x.shape[dim..].iter().product();
            data.extend_from_slice(&x.data[o * chunk..(o + 1) * chunk]);
        }
    }
    Array::new(&shape, data)
}

/// Mean over rows of `-log softmax(logits)[target]`.
pub fn cross_entropy(logits: &Array, targets: &[usize]) -> f64 {
    let (n, k) = logits.dims2();
    let mut total = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        let row = &logits.data[i * k..(i + 1) * k];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + libm::log(row.iter().map(|v| libm::exp(v - max)).sum::<f64>());
        total += lse - row[t];
    }
    total / n as f64
}

/// Weighted smooth-L1 sum divided by `norm`.
pub fn smooth_l1(pred: &Array, target: &[f64], row_weights: &[f64], beta: f64, norm: f64) -> f64 {
    let (_, k) = pred.dims2();
    let mut total = 0.0;
    for (i, (&p, &t)) in pred.data.iter().zip(target).enumerate() {
        let d = (p - t).abs();
        let v = if beta > 0.0 && d < beta { d * d / (2.0 * beta) } else { d - beta / 2.0 };
        total += row_weights[i / k] * v;
    }
    total / norm
}

/// Column softmax then row L1 (`eps = 1e-9`) of `scores[s×d]`.
pub fn double_normalize(scores: &Array) -> Array {
    let (s, d) = scores.dims2();
    let mut col = scores.clone();
    for j in 0..d {
        let max = (0..s).map(|i| scores.data[i * d + j]).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = (0..s).map(|i| libm::exp(scores.data[i * d + j] - max)).sum();
        for i in 0..s {
            col.data[i * d + j] = libm::exp(scores.data[i * d + j] - max) / z;
        }
    }
    let mut out = col.clone();
    for i in 0..s {
        let z: f64 = col.data[i * d..(i + 1) * d].iter().sum::<f64>() + 1e-9;
        for j in 0..d {
            out.data[i * d + j] = col.data[i * d + j] / z;
        }
    }
    out
}

/// `DNorm(x·M_kᵀ)·M_v + x` with memories `[d×L]`.
pub fn attention_forward(x: &Array, mk: &Array, mv: &Array) -> Array {
    let a = double_normalize(&matmul(x, &transpose(mk)));
    add(&matmul(&a, mv), x)
}

/// Dense `softmax(X·Xᵀ/√L)·X + X`.
pub fn dense_self_attention(x: &Array) -> Array {
    let (_, l) = x.dims2();
    let mut raw = matmul(x, &transpose(x));
    for v in raw.data.iter_mut() {
        *v /= libm::sqrt(l as f64);
    }
    add(&matmul(&softmax_dim(&raw, 1), x), x)
}

/// `C_x[r,c] = c/W`, `C_y[r,c] = r/H`.
pub fn coord_maps(h: usize, w: usize) -> (Array, Array) {
    let mut cx = Array::zeros(&[h, w]);
    let mut cy = Array::zeros(&[h, w]);
    for r in 0..h {
        for c in 0..w {
            cx.data[r * w + c] = c as f64 / w as f64;
            cy.data[r * w + c] = r as f64 / h as f64;
        }
    }
    (cx, cy)
}

/// `Conv1×1(concat(x, C_x, C_y))` with `weight[C×(C+2)]` (any trailing 1×1
/// extents are ignored) for `x[C×H×W]`.
pub fn encode(x: &Array, weight: &[f64], bias: &[f64]) -> Array {
    let [c, h, w] = x.shape[..] else { panic!("encode input rank") };
    let (cx, cy) = coord_maps(h, w);
    let mut out = Array::zeros(&[c, h, w]);
    for o in 0..c {
        for p in 0..h * w {
            let mut acc = bias[o];
            for i in 0..c {
                acc += weight[o * (c + 2) + i] * x.data[i * h * w + p];
            }
            acc += weight[o * (c + 2) + c] * cx.data[p];
            acc += weight[o * (c + 2) + c + 1] * cy.data[p];
            out.data[o * h * w + p] = acc;
        }
    }
    out
}

/// Box as `f64` corners.
pub type RefBox = [f64; 4];

pub fn ref_box(b: &BoxXYXY) -> RefBox {
    [b.x1 as f64, b.y1 as f64, b.x2 as f64, b.y2 as f64]
}

fn clip_box(b: RefBox, w: f64, h: f64) -> RefBox {
    [b[0].clamp(0.0, w), b[1].clamp(0.0, h), b[2].clamp(0.0, w), b[3].clamp(0.0, h)]
}

/// Scales about the center, then clips to `[0, w] × [0, h]`.
pub fn scale_box(b: RefBox, factor: f64, w: f64, h: f64) -> RefBox {
    let cx = 0.5 * (b[0] + b[2]);
    let cy = 0.5 * (b[1] + b[3]);
    let hw = 0.5 * (b[2] - b[0]) * factor;
    let hh = 0.5 * (b[3] - b[1]) * factor;
    clip_box([cx - hw, cy - hh, cx + hw, cy + hh], w, h)
}

/// Bilinear sample of channel `ch` at map position `(x, y)` in cell units
/// where cell `j` has its center at `j + 0.5`. Written as a tent-weighted sum
/// over every cell after clamping to the cell-center hull.
pub fn bilinear_sample(features: &Array, ch: usize, x: f64, y: f64) -> f64 {
    let [_, h, w] = features.shape[..] else { panic!("features rank") };
    let u = (x - 0.5).clamp(0.0, (w - 1) as f64);
    let v = (y - 0.5).clamp(0.0, (h - 1) as f64);
    let mut acc = 0.0;
    for r in 0..h {
        let wy = (1.0 - (v - r as f64).abs()).max(0.0);
        if wy == 0.0 {
            continue;
        }
        for c in 0..w {
            let wx = (1.0 - (u - c as f64).abs()).max(0.0);
            acc += wy * wx * features.data[(ch * h + r) * w + c];
        }
    }
    acc
}

/// RoIAlign of one image-pixel box over `features[C×H×W]`: the box is
/// clipped to the image, each of the `out_h×out_w` bins averages
/// `sampling²` evenly spaced bilinear samples.
pub fn roi_align(features: &Array, b: RefBox, out_h: usize, out_w: usize, scale: f64, sampling: usize) -> Array {
    let [c, h, w] = features.shape[..] else { panic!("features rank") };
    let b = clip_box(b, w as f64 / scale, h as f64 / scale);
    let bin_w = (b[2] - b[0]) * scale / out_w as f64;
    let bin_h = (b[3] - b[1]) * scale / out_h as f64;
    let mut out = Array::zeros(&[c, out_h, out_w]);
    for ch in 0..c {
        for ph in 0..out_h {
            for pw in 0..out_w {
                let mut acc = 0.0;
                for iy in 0..sampling {
                    for ix in 0..sampling {
                        let y = b[1] * scale + bin_h * (ph as f64 + (iy as f64 + 0.5) / sampling as f64);
                        let x = b[0] * scale + bin_w * (pw as f64 + (ix as f64 + 0.5) / sampling as f64);
                        acc += bilinear_sample(features, ch, x, y);
                    }
                }
                out.data[(ch * out_h + ph) * out_w + pw] = acc / (sampling * sampling) as f64;
            }
        }
    }
    out
}

/// Stacks per-box crops into `[s×C×h×w]`.
pub fn roi_align_many(
    features: &Array,
    boxes: &[RefBox],
    out: usize,
    scale: f64,
    sampling: usize,
) -> Array {
    let crops: Vec<Array> = boxes
        .iter()
        .map(|&b| {
            let a = roi_align(features, b, out, out, scale, sampling);
            let shape: Vec<usize> = core::iter::once(1).chain(a.shape.iter().copied()).collect();
            a.reshaped(&shape)
        })
        .collect();
    let refs: Vec<&Array> = crops.iter().collect();
    concat(&refs, 0)
}

/// `f64` copy of every parameter, indexed by [`ParamId`].
#[derive(Debug, Clone, PartialEq)]
pub struct RefParams {
    values: Vec<Array>,
}

impl RefParams {
    pub fn from_store(store: &ParamStore) -> Self {
        Self {
            values: store.iter().map(|(_, p)| Array::from_tensor(&p.tensor)).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Array {
        &self.values[id.index()]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array {
        &mut self.values[id.index()]
    }
}

pub fn linear_layer(p: &RefParams, layer: &LinearLayer, x: &Array) -> Array {
    linear(x, p.get(layer.weight), &p.get(layer.bias).data)
}

pub fn conv_layer(p: &RefParams, layer: &ConvLayer, x: &Array) -> Array {
    conv2d(x, p.get(layer.weight), &p.get(layer.bias).data, layer.stride, layer.padding)
}

/// Attention stack over `x[s×c×h×w]`.
pub fn attention_stack(p: &RefParams, stack: &RoiAttentionStack, x: &Array) -> Array {
    let shape = x.shape.clone();
    let s = shape[0];
    let l: usize = shape[1..].iter().product();
    let mut h = x.clone().reshaped(&[s, l]);
    for b in &stack.blocks {
        h = attention_forward(&h, p.get(b.key_memory), p.get(b.value_memory));
    }
    h.reshaped(&shape)
}

fn flatten_rows(x: &Array) -> Array {
    let s = x.shape[0];
    let l = x.data.len() / s.max(1);
    x.clone().reshaped(&[s, l])
}

pub fn bottleneck(p: &RefParams, block: &Bottleneck, x: &Array) -> Array {
    let a = relu(&conv_layer(p, &block.conv3x3, x));
    let b = conv_layer(p, &block.conv1x1, &a);
    relu(&add(&b, &conv_layer(p, &block.identity, x)))
}

pub fn forward_cls(p: &RefParams, head: &DoubleHeadParams, rois: &Array) -> Array {
    let x = if head.attach_attention_cls {
        attention_stack(p, &head.shared_attention, rois)
    } else {
        rois.clone()
    };
    let h = relu(&linear_layer(p, &head.cls_fc1, &flatten_rows(&x)));
    linear_layer(p, &head.cls_fc2, &h)
}

pub fn forward_reg(p: &RefParams, head: &DoubleHeadParams, rois: &Array) -> Array {
    let mut x = if head.attach_attention_reg {
        attention_stack(p, &head.shared_attention, rois)
    } else {
        rois.clone()
    };
    for block in &head.reg_blocks {
        x = bottleneck(p, block, &x);
    }
    linear_layer(p, &head.reg_out, &avg_pool_global(&x))
}

/// `(class_logits, box_deltas)` of the single head.
pub fn single_head(p: &RefParams, head: &SingleHeadParams, rois: &Array) -> (Array, Array) {
    let x = match &head.attention {
        Some(stack) => attention_stack(p, stack, rois),
        None => rois.clone(),
    };
    let h = relu(&linear_layer(p, &head.fc1, &flatten_rows(&x)));
    let h = relu(&linear_layer(p, &head.fc2, &h));
    (linear_layer(p, &head.cls, &h), linear_layer(p, &head.reg, &h))
}

pub fn pos_encode(p: &RefParams, enc: &PosEncoder, x: &Array) -> Array {
    encode(x, &p.get(enc.weight).data, &p.get(enc.bias).data)
}

/// `image[3×H×W]` to `[C×H/8×W/8]`.
pub fn backbone(p: &RefParams, bb: &Backbone, image: &Array) -> Array {
    let mut x = image.clone().reshaped(&[1, image.shape[0], image.shape[1], image.shape[2]]);
    for layer in &bb.layers {
        x = relu(&conv_layer(p, layer, &x));
    }
    let shape = x.shape[1..].to_vec();
    x.reshaped(&shape)
}

/// `(class_logits, box_deltas)` of the whole detector.
pub fn detector_forward(p: &RefParams, det: &Detector, image: &Array, proposals: &[BoxXYXY]) -> (Array, Array) {
    let feats = backbone(p, &det.backbone, image);
    let scale = det.grid.spatial_scale as f64;
    let out = det.grid.out_h;
    let sampling = det.grid.sampling;
    let (img_w, img_h) = (feats.shape[2] as f64 / scale, feats.shape[1] as f64 / scale);
    let boxes: Vec<RefBox> = proposals.iter().map(ref_box).collect();
    match &det.head {
        Head::Single(head) => single_head(p, head, &roi_align_many(&feats, &boxes, out, scale, sampling)),
        Head::Double(head) => {
            let reg_src = match &det.pos_encoder {
                Some(enc) => pos_encode(p, enc, &feats),
                None => feats.clone(),
            };
            let cls_boxes: Vec<RefBox> = boxes.iter().map(|&b| scale_box(b, 1.0, img_w, img_h)).collect();
            let reg_boxes: Vec<RefBox> = boxes
                .iter()
                .map(|&b| scale_box(b, det.reg_scale as f64, img_w, img_h))
                .collect();
            let cls = roi_align_many(&feats, &cls_boxes, out, scale, sampling);
            let reg = roi_align_many(&reg_src, &reg_boxes, out, scale, sampling);
            (forward_cls(p, head, &cls), forward_reg(p, head, &reg))
        }
    }
}

/// Cross-entropy mean plus foreground smooth-L1 over `max(#fg, 1)`.
pub fn detection_loss(logits: &Array, deltas: &Array, sample: &TrainingSample, beta: f64) -> f64 {
    let n = sample.labels.len();
    let mut target = vec![0.0; 4 * n];
    let mut weights = vec![0.0; n];
    let mut fg = 0usize;
    for (i, t) in sample.targets.iter().enumerate() {
        if let Some(t) = t {
            for j in 0..4 {
                target[4 * i + j] = t[j] as f64;
            }
            weights[i] = 1.0;
            fg += 1;
        }
    }
    cross_entropy(logits, &sample.labels) + smooth_l1(deltas, &target, &weights, beta, fg.max(1) as f64)
}

fn iou_ref(a: RefBox, b: RefBox) -> f64 {
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    let union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Number of true positives among the first `k` ranked detections, matching
/// greedily from scratch.
fn true_positives(ranked: &[&Detection], gts: &[&GroundTruth], threshold: f64) -> usize {
    let mut used = vec![false; gts.len()];
    let mut tp = 0;
    for d in ranked {
        let mut pick = None;
        let mut best = -1.0;
        for (g, gt) in gts.iter().enumerate() {
            if used[g] || gt.image != d.image {
                continue;
            }
            // Same f32 IoU as the evaluator, so threshold decisions agree.
            let v = crate::boxes::iou(&d.bbox, &gt.bbox) as f64;
            if v >= threshold && v > best {
                best = v;
                pick = Some(g);
            }
        }
        if let Some(g) = pick {
            used[g] = true;
            tp += 1;
        }
    }
    tp
}

/// Brute-force 101-point AP: for every recall point, the best precision of any
/// ranked prefix whose recall reaches it, each prefix scored independently.
pub fn average_precision_brute(dets: &[Detection], gts: &[GroundTruth], class: usize, threshold: f64) -> Option<f64> {
    let gts: Vec<&GroundTruth> = gts.iter().filter(|g| g.class == class).collect();
    if gts.is_empty() {
        return None;
    }
    let mut ranked: Vec<&Detection> = dets.iter().filter(|d| d.class == class).collect();
    // insertion sort: stable, descending score
    for i in 1..ranked.len() {
        let mut j = i;
        while j > 0 && ranked[j - 1].score < ranked[j].score {
            ranked.swap(j - 1, j);
            j -= 1;
        }
    }
    let prefixes: Vec<(f64, f64)> = (1..=ranked.len())
        .map(|k| {
            let tp = true_positives(&ranked[..k], &gts, threshold);
            (tp as f64 / gts.len() as f64, tp as f64 / k as f64)
        })
        .collect();
    let mut sum = 0.0;
    for i in 0..=100 {
        let r = i as f64 / 100.0;
        let best = prefixes
            .iter()
            .filter(|(rc, _)| *rc >= r)
            .map(|&(_, p)| p)
            .fold(0.0, f64::max);
        sum += best;
    }
    Some(sum / 101.0)
}

/// `(mAP, AP50, AP75)` via [`average_precision_brute`]; classes without
/// ground truth are skipped.
pub fn evaluate_map_brute(dets: &[Detection], gts: &[GroundTruth], num_classes: usize) -> (f64, f64, f64) {
    let mean_at = |t: f64| {
        let v: Vec<f64> = (0..num_classes)
            .filter_map(|c| average_precision_brute(dets, gts, c, t))
            .collect();
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    let ts: Vec<f64> = (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect();
    let map = ts.iter().map(|&t| mean_at(t)).sum::<f64>() / ts.len() as f64;
    (map, mean_at(0.5), mean_at(0.75))
}

/// Box IoU in `f64`.
pub fn iou(a: &BoxXYXY, b: &BoxXYXY) -> f64 {
    iou_ref(ref_box(a), ref_box(b))
}
