//! Backbone, optional positional encoding and head wired per configuration,
//! plus the training loss and inference post-processing.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::backbone::{Backbone, STRIDE};
use crate::boxes::{decode_deltas, nms};
use crate::config::DetectionConfig;
use crate::error::{Error, Result};
use crate::eval::Detection;
use crate::graph::{Graph, Var};
use crate::head::{DoubleHeadParams, HeadOutput, SingleHeadParams};
use crate::params::ParamStore;
use crate::posenc::{encode, PosEncoder};
use crate::roi::{extract_dual, roi_align, BoxXYXY, RoiGrid};
use crate::scene::{TrainingSample, IMAGE_SIZE};
use crate::tensor::Tensor;
use crate::NUM_CLASSES;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Head {
    Single(SingleHeadParams),
    Double(DoubleHeadParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detector {
    pub backbone: Backbone,
    /// Present only with the double head; encodes the regression-branch map.
    pub pos_encoder: Option<PosEncoder>,
    pub head: Head,
    pub grid: RoiGrid,
    pub reg_scale: f32,
}

/// Graph handles of one forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForwardTrace {
    pub image: Var,
    /// Raw backbone output.
    pub features: Var,
    /// Map the classification RoIs are cropped from.
    pub cls_source: Var,
    /// Map the regression RoIs are cropped from.
    pub reg_source: Var,
    pub output: HeadOutput,
}

impl Detector {
    /// Registers every parameter in `store` in a fixed order, so the same
    /// config and rng state always produce the same parameter list.
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &DetectionConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let widths = cfg.widths();
        let backbone = Backbone::new(store, widths.channels, rng);
        let pos_encoder = if cfg.use_pos_encoding {
            Some(PosEncoder::new(store, "posenc", widths.channels, rng))
        } else {
            None
        };
        let head = if cfg.use_double_head {
            Head::Double(DoubleHeadParams::new(
                store,
                widths,
                NUM_CLASSES,
                cfg.d,
                cfg.depth,
                cfg.attach_attention_cls,
                cfg.attach_attention_reg,
                rng,
            )?)
        } else {
            let attention = cfg.uses_attention().then_some((cfg.d, cfg.depth));
            Head::Single(SingleHeadParams::new(store, widths, NUM_CLASSES, attention, rng)?)
        };
        let mut grid = RoiGrid::new(widths.roi_size, 1.0 / STRIDE as f32);
        grid.sampling = cfg.sampling;
        Ok(Self {
            backbone,
            pos_encoder,
            head,
            grid,
            reg_scale: cfg.reg_scale,
        })
    }

    pub fn forward<'p>(
        &self,
        graph: &mut Graph<'p>,
        store: &'p ParamStore,
        image: &Tensor,
        proposals: &[BoxXYXY],
    ) -> Result<ForwardTrace> {
        let image = graph.input(image.clone(), false);
        let features = self.backbone.forward(graph, store, image)?;
        match &self.head {
            Head::Single(head) => {
                let rois = roi_align(graph, features, proposals, &self.grid)?;
                let output = head.forward(graph, store, rois)?;
                Ok(ForwardTrace {
                    image,
                    features,
                    cls_source: features,
                    reg_source: features,
                    output,
                })
            }
            Head::Double(head) => {
                let reg_source = match &self.pos_encoder {
                    Some(enc) => encode(graph, store, features, enc)?,
                    None => features,
                };
                let (cls_rois, reg_rois) =
                    extract_dual(graph, features, reg_source, proposals, &self.grid, self.reg_scale)?;
                let output = head.head_forward(graph, store, cls_rois, reg_rois)?;
                Ok(ForwardTrace {
                    image,
                    features,
                    cls_source: features,
                    reg_source,
                    output,
                })
            }
        }
    }
}

/// Mean cross-entropy over all proposals plus smooth-L1 over the foreground
/// deltas, summed and divided by the foreground count (at least 1).
pub fn detection_loss(graph: &mut Graph<'_>, output: &HeadOutput, sample: &TrainingSample, beta: f32) -> Result<Var> {
    let n = sample.labels.len();
    if sample.targets.len() != n {
        return Err(Error::shape("detection_loss", &[n], &[sample.targets.len()]));
    }
    let ce = graph.cross_entropy_with_logits(output.class_logits, &sample.labels)?;
    let mut target = vec![0.0f32; 4 * n];
    let mut weights = vec![0.0f32; n];
    for (i, t) in sample.targets.iter().enumerate() {
        if let Some(t) = t {
            target[4 * i..4 * i + 4].copy_from_slice(t);
            weights[i] = 1.0;
        }
    }
    let norm = sample.num_foreground().max(1) as f32;
    let reg = graph.smooth_l1(output.box_deltas, &target, &weights, beta, norm)?;
    graph.add(ce, reg)
}

/// Inference post-processing knobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PostProcess {
    pub score_threshold: f32,
    pub nms_iou: f32,
    pub max_detections: usize,
}

impl From<&DetectionConfig> for PostProcess {
    fn from(cfg: &DetectionConfig) -> Self {
        Self {
            score_threshold: cfg.score_threshold,
            nms_iou: cfg.nms_iou,
            max_detections: cfg.max_detections,
        }
    }
}

/// Softmax scores, per-class threshold, delta decoding, per-class NMS and a
/// global top-k by score (ties keep class then proposal order).
pub fn postprocess(
    logits: &[f32],
    deltas: &[f32],
    proposals: &[BoxXYXY],
    image: usize,
    pp: &PostProcess,
) -> Result<Vec<Detection>> {
    let s = proposals.len();
    let k1 = NUM_CLASSES + 1;
    if logits.len() != s * k1 || deltas.len() != s * 4 {
        return Err(Error::shape("postprocess", &[logits.len(), deltas.len()], &[s * k1, s * 4]));
    }
    let size = IMAGE_SIZE as f32;
    let mut boxes = Vec::with_capacity(s);
    let mut probs = vec![0.0f32; s * k1];
    for i in 0..s {
        let row = &logits[i * k1..(i + 1) * k1];
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        let z: f64 = row.iter().map(|&v| libm::exp(v as f64 - max)).sum();
        for (p, &v) in probs[i * k1..(i + 1) * k1].iter_mut().zip(row) {
            *p = (libm::exp(v as f64 - max) / z) as f32;
        }
        let d = [deltas[4 * i], deltas[4 * i + 1], deltas[4 * i + 2], deltas[4 * i + 3]];
        boxes.push(decode_deltas(&proposals[i], &d).clip(size, size));
    }
    let mut out = Vec::new();
    for class in 0..NUM_CLASSES {
        let keep: Vec<usize> = (0..s)
            .filter(|&i| probs[i * k1 + class] > pp.score_threshold && boxes[i].is_valid())
            .collect();
        let cand: Vec<BoxXYXY> = keep.iter().map(|&i| boxes[i]).collect();
        let scores: Vec<f32> = keep.iter().map(|&i| probs[i * k1 + class]).collect();
        for j in nms(&cand, &scores, pp.nms_iou) {
            out.push(Detection {
                image,
                class,
                score: scores[j],
                bbox: cand[j],
            });
        }
    }
    out.sort_by(|a, b| b.score.total_cmp(&a.score));
    out.truncate(pp.max_detections);
    Ok(out)
}

/// Forward pass plus post-processing for one image.
pub fn detect(
    detector: &Detector,
    store: &ParamStore,
    image: &Tensor,
    proposals: &[BoxXYXY],
    image_id: usize,
    pp: &PostProcess,
) -> Result<Vec<Detection>> {
    if proposals.is_empty() {
        return Ok(Vec::new());
    }
    let mut graph = Graph::new();
    let trace = detector.forward(&mut graph, store, image, proposals)?;
    postprocess(
        graph.value(trace.output.class_logits),
        graph.value(trace.output.box_deltas),
        proposals,
        image_id,
        pp,
    )
}
