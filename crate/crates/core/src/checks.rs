//! Randomized verification suites shared by the test targets and the CLI
//! self-test.
//!
//! Each suite draws its instances from a seeded ChaCha stream, compares the
//! production path against the loop-based references in [`crate::reference`]
//! or against exact algebraic laws, and returns a [`SuiteResult`] with a
//! one-line summary. Suites never panic on a mismatch; they report it.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::attention::{attention_forward, double_normalize, stack_forward, ExternalAttentionBlock, RoiAttentionStack};
use crate::boxes::{decode_deltas, encode_deltas, iou, MAX_LOG_SCALE};
use crate::config::{DetectionConfig, Variant};
use crate::detector::{detection_loss, Detector};
use crate::error::Result;
use crate::eval::{coco_thresholds, evaluate_map, Detection, GroundTruth};
use crate::gradcheck::{check, sample_coords, GradReport};
use crate::graph::{Graph, Var};
use crate::head::{DoubleHeadParams, HeadWidths};
use crate::params::{ParamId, ParamStore};
use crate::posenc::{encode, encode_levels, PosEncoder};
use crate::reference::{self as r, Array, RefParams};
use crate::roi::{roi_align, scale_box, BoxXYXY, RoiGrid};
use crate::scene::{
    assign_and_encode, generate_scene, jitter_box, make_proposals, GtObject, ProposalConfig, TrainingSample,
};
use crate::tensor::Tensor;
use crate::{BACKGROUND, NUM_CLASSES};

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub summary: String,
}

impl SuiteResult {
    fn new(name: &'static str, passed: bool, summary: String) -> Self {
        Self { name, passed, summary }
    }

    fn from_error(name: &'static str, e: crate::Error) -> Self {
        Self::new(name, false, format!("error: {e}"))
    }
}

fn rng_for(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(crate::scene::derive_seed(seed, salt))
}

fn normal(rng: &mut ChaCha8Rng) -> f32 {
    rng.sample::<f32, _>(StandardNormal)
}

fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| normal(rng))
}

fn rand_shape(rng: &mut ChaCha8Rng, rank: usize, max: usize) -> Vec<usize> {
    (0..rank).map(|_| rng.random_range(1..=max)).collect()
}

fn f64s(t: &[f32]) -> Vec<f64> {
    t.iter().map(|&v| v as f64).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// ---------------------------------------------------------------------------
// Gradient checks
// ---------------------------------------------------------------------------

/// Coordinates checked per input tensor of an operation.
const COORDS_PER_INPUT: usize = 48;
/// Coordinates checked per parameter tensor of a branch.
const COORDS_PER_PARAM: usize = 6;

/// Gradient check of a single operation. `build` maps input vars to the
/// output; `reference` maps input arrays to the output array. The scalar
/// checked is a random projection of the output.
fn op_check(
    label: &str,
    inputs: &[Tensor],
    rng: &mut ChaCha8Rng,
    build: &dyn Fn(&mut Graph<'_>, &[Var]) -> Result<Var>,
    reference: &dyn Fn(&[Array]) -> Array,
) -> Result<GradReport> {
    let mut graph = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| graph.input(t.clone(), true)).collect();
    let y = build(&mut graph, &vars)?;
    let proj: Vec<f32> = (0..graph.value(y).len()).map(|_| normal(rng)).collect();
    let loss = graph.dot_const(y, &proj)?;
    let grads = graph.backward(loss)?;
    let proj64 = f64s(&proj);
    let base: Vec<Array> = inputs.iter().map(Array::from_tensor).collect();
    let mut report = GradReport::default();
    for (k, v) in vars.iter().enumerate() {
        let zeros = vec![0.0f32; inputs[k].numel()];
        let analytic = grads.get(*v).unwrap_or(&zeros);
        let coords = sample_coords(inputs[k].numel(), COORDS_PER_INPUT, rng.random());
        let mut arrays = base.clone();
        report.merge(check(&format!("{label}.in{k}"), &base[k].data, analytic, &coords, |x| {
            arrays[k].data.copy_from_slice(x);
            dot(&proj64, &reference(&arrays).data)
        }));
    }
    Ok(report)
}

/// Gradient check of a parameterized computation: inputs plus every
/// parameter in `store`.
fn branch_check(
    label: &str,
    store: &ParamStore,
    inputs: &[Tensor],
    rng: &mut ChaCha8Rng,
    build: &dyn for<'p> Fn(&mut Graph<'p>, &'p ParamStore, &[Var]) -> Result<Var>,
    reference: &dyn Fn(&RefParams, &[Array]) -> f64,
) -> Result<GradReport> {
    let mut graph = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| graph.input(t.clone(), true)).collect();
    let loss = build(&mut graph, store, &vars)?;
    let grads = graph.backward(loss)?;
    let base_p = RefParams::from_store(store);
    let base_x: Vec<Array> = inputs.iter().map(Array::from_tensor).collect();
    let mut report = GradReport::default();
    for (k, v) in vars.iter().enumerate() {
        let zeros = vec![0.0f32; inputs[k].numel()];
        let analytic = grads.get(*v).unwrap_or(&zeros);
        let coords = sample_coords(inputs[k].numel(), COORDS_PER_INPUT, rng.random());
        let mut xs = base_x.clone();
        report.merge(check(&format!("{label}.in{k}"), &base_x[k].data, analytic, &coords, |x| {
            xs[k].data.copy_from_slice(x);
            reference(&base_p, &xs)
        }));
    }
    for id in store.ids() {
        let n = store.get(id).numel();
        let zeros = vec![0.0f32; n];
        let analytic = grads.param(id).unwrap_or(&zeros);
        let coords = sample_coords(n, COORDS_PER_PARAM, rng.random());
        let mut p = base_p.clone();
        let point = base_p.get(id).data.clone();
        report.merge(check(&format!("{label}.{}", store.name(id)), &point, analytic, &coords, |x| {
            p.get_mut(id).data.copy_from_slice(x);
            reference(&p, &base_x)
        }));
    }
    Ok(report)
}

/// Adds `N(0, std)` noise to every parameter so that zero-initialized biases
/// and small output layers carry gradient signal.
fn jitter_params(store: &mut ParamStore, std: f32, rng: &mut ChaCha8Rng) {
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        for v in store.get_mut(id).data_mut() {
            *v += std * normal(rng);
        }
    }
}

fn random_box_in(rng: &mut ChaCha8Rng, w: f32, h: f32, min_side: f32) -> BoxXYXY {
    let bw = rng.random_range(min_side..w.max(min_side + 1e-3));
    let bh = rng.random_range(min_side..h.max(min_side + 1e-3));
    let x1 = rng.random_range(0.0..(w - bw).max(1e-3));
    let y1 = rng.random_range(0.0..(h - bh).max(1e-3));
    BoxXYXY::new(x1, y1, (x1 + bw).min(w), (y1 + bh).min(h))
}

type OpCase = fn(&mut ChaCha8Rng) -> Result<GradReport>;

fn grad_matmul(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let (m, k, n) = (rng.random_range(1..=8), rng.random_range(1..=8), rng.random_range(1..=8));
    let inputs = [rand_tensor(&[m, k], rng), rand_tensor(&[k, n], rng)];
    op_check("matmul", &inputs, rng, &|g, v| g.matmul(v[0], v[1]), &|a| r::matmul(&a[0], &a[1]))
}

fn grad_matmul_t(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let (m, k, n) = (rng.random_range(1..=8), rng.random_range(1..=8), rng.random_range(1..=8));
    let inputs = [rand_tensor(&[m, k], rng), rand_tensor(&[n, k], rng)];
    op_check("matmul_t", &inputs, rng, &|g, v| g.matmul_t(v[0], v[1]), &|a| {
        r::matmul(&a[0], &r::transpose(&a[1]))
    })
}

fn grad_linear(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let (n, f, o) = (rng.random_range(1..=7), rng.random_range(1..=7), rng.random_range(1..=7));
    let inputs = [rand_tensor(&[n, f], rng), rand_tensor(&[f, o], rng), rand_tensor(&[o], rng)];
    op_check("linear", &inputs, rng, &|g, v| g.linear(v[0], v[1], v[2]), &|a| {
        r::linear(&a[0], &a[1], &a[2].data)
    })
}

fn grad_add(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let rank = rng.random_range(1..=3);
    let shape = rand_shape(rng, rank, 6);
    let inputs = [rand_tensor(&shape, rng), rand_tensor(&shape, rng)];
    op_check("add", &inputs, rng, &|g, v| g.add(v[0], v[1]), &|a| r::add(&a[0], &a[1]))
}

fn grad_scale(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let shape = rand_shape(rng, 2, 6);
    let factor: f32 = rng.random_range(-3.0..3.0);
    let inputs = [rand_tensor(&shape, rng)];
    op_check("scale", &inputs, rng, &|g, v| g.scale(v[0], factor), &|a| {
        Array::new(&a[0].shape, a[0].data.iter().map(|x| x * factor as f64).collect())
    })
}

fn grad_relu(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let rank = rng.random_range(1..=3);
    let shape = rand_shape(rng, rank, 6);
    let inputs = [rand_tensor(&shape, rng)];
    op_check("relu", &inputs, rng, &|g, v| g.relu(v[0]), &|a| r::relu(&a[0]))
}

fn grad_softmax(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let rank = rng.random_range(1..=3);
    let shape = rand_shape(rng, rank, 6);
    let dim = rng.random_range(0..rank);
    let mut x = rand_tensor(&shape, rng);
    x.data_mut().iter_mut().for_each(|v| *v *= 3.0);
    op_check("softmax_dim", &[x], rng, &|g, v| g.softmax_dim(v[0], dim), &|a| r::softmax_dim(&a[0], dim))
}

fn grad_l1_normalize(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let rank = rng.random_range(1..=3);
    let shape = rand_shape(rng, rank, 6);
    let dim = rng.random_range(0..rank);
    let x = Tensor::from_fn(&shape, |_| rng.random_range(0.1..2.0));
    op_check("l1_normalize_dim", &[x], rng, &|g, v| g.l1_normalize_dim(v[0], dim, 1e-9), &|a| {
        r::l1_normalize_dim(&a[0], dim, 1e-9)
    })
}

fn grad_conv2d(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let n = rng.random_range(1..=2);
    let c = rng.random_range(1..=3);
    let (h, w) = (rng.random_range(3..=7), rng.random_range(3..=7));
    let o = rng.random_range(1..=4);
    let k = rng.random_range(1..=3);
    let pad = rng.random_range(0..=1);
    let mut stride = rng.random_range(1..=2);
    if (h + 2 * pad - k) % stride != 0 || (w + 2 * pad - k) % stride != 0 {
        stride = 1;
    }
    let inputs = [rand_tensor(&[n, c, h, w], rng), rand_tensor(&[o, c, k, k], rng), rand_tensor(&[o], rng)];
    op_check("conv2d", &inputs, rng, &|g, v| g.conv2d(v[0], v[1], v[2], stride, pad), &|a| {
        r::conv2d(&a[0], &a[1], &a[2].data, stride, pad)
    })
}

fn grad_avg_pool(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let shape = rand_shape(rng, 4, 5);
    let inputs = [rand_tensor(&shape, rng)];
    op_check("avg_pool_global", &inputs, rng, &|g, v| g.avg_pool_global(v[0]), &|a| r::avg_pool_global(&a[0]))
}

fn grad_concat_channels(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let (n, h, w) = (rng.random_range(1..=2), rng.random_range(1..=4), rng.random_range(1..=4));
    let parts = rng.random_range(2..=3);
    let inputs: Vec<Tensor> = (0..parts)
        .map(|_| {
            let c = rng.random_range(1..=3);
            rand_tensor(&[n, c, h, w], rng)
        })
        .collect();
    op_check("concat_channels", &inputs, rng, &|g, v| g.concat_channels(v), &|a| {
        let refs: Vec<&Array> = a.iter().collect();
        r::concat(&refs, 1)
    })
}

fn grad_reshape(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let shape = rand_shape(rng, 3, 5);
    let numel: usize = shape.iter().product();
    let inputs = [rand_tensor(&shape, rng)];
    if rng.random_bool(0.5) {
        op_check("flatten", &inputs, rng, &|g, v| g.flatten(v[0]), &|a| {
            let s = a[0].shape[0];
            a[0].clone().reshaped(&[s, a[0].data.len() / s])
        })
    } else {
        op_check("reshape", &inputs, rng, &|g, v| g.reshape(v[0], &[numel, 1]), &|a| {
            a[0].clone().reshaped(&[numel, 1])
        })
    }
}

fn grad_cross_entropy(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let (n, k) = (rng.random_range(1..=6), rng.random_range(2..=6));
    let targets: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    let mut x = rand_tensor(&[n, k], rng);
    x.data_mut().iter_mut().for_each(|v| *v *= 2.0);
    let t2 = targets.clone();
    op_check(
        "cross_entropy",
        &[x],
        rng,
        &move |g, v| g.cross_entropy_with_logits(v[0], &targets),
        &move |a| Array::new(&[1], vec![r::cross_entropy(&a[0], &t2)]),
    )
}

fn grad_smooth_l1(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let n = rng.random_range(1..=6);
    let beta = [1.0f32 / 9.0, 0.5, 1.0][rng.random_range(0..3)];
    let target: Vec<f32> = (0..4 * n).map(|_| normal(rng)).collect();
    let weights: Vec<f32> = (0..n).map(|_| if rng.random_bool(0.7) { 1.0 } else { 0.0 }).collect();
    let norm: f32 = rng.random_range(1.0..5.0);
    let x = rand_tensor(&[n, 4], rng);
    let (t2, w2) = (f64s(&target), f64s(&weights));
    op_check(
        "smooth_l1",
        &[x],
        rng,
        &move |g, v| g.smooth_l1(v[0], &target, &weights, beta, norm),
        &move |a| Array::new(&[1], vec![r::smooth_l1(&a[0], &t2, &w2, beta as f64, norm as f64)]),
    )
}

fn grad_roi_align(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let c = rng.random_range(1..=3);
    let (h, w) = (rng.random_range(4..=8), rng.random_range(4..=8));
    let out = rng.random_range(1..=4);
    let mut grid = RoiGrid::new(out, 0.125);
    grid.sampling = rng.random_range(1..=2);
    let nb = rng.random_range(1..=3);
    let boxes: Vec<BoxXYXY> = (0..nb).map(|_| random_box_in(rng, 8.0 * w as f32, 8.0 * h as f32, 4.0)).collect();
    let refs: Vec<r::RefBox> = boxes.iter().map(r::ref_box).collect();
    let inputs = [rand_tensor(&[c, h, w], rng)];
    op_check("roi_align", &inputs, rng, &|g, v| roi_align(g, v[0], &boxes, &grid), &|a| {
        r::roi_align_many(&a[0], &refs, out, 0.125, grid.sampling)
    })
}

fn grad_attention_stack(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let s = rng.random_range(1..=6);
    let (c, hw) = (rng.random_range(1..=3), rng.random_range(2..=3));
    let l = c * hw * hw;
    let d = rng.random_range(1..=5);
    let depth = rng.random_range(1..=3);
    let mut store = ParamStore::new();
    let stack = RoiAttentionStack::new(&mut store, "att", d, l, depth, rng)?;
    jitter_params(&mut store, 0.3, rng);
    let x = rand_tensor(&[s, c, hw, hw], rng);
    let proj: Vec<f32> = (0..x.numel()).map(|_| normal(rng)).collect();
    let p64 = f64s(&proj);
    let st = stack.clone();
    branch_check(
        "attention_stack",
        &store,
        &[x],
        rng,
        &move |g, store, v| {
            let y = stack_forward(g, store, v[0], &stack)?;
            g.dot_const(y, &proj)
        },
        &move |p, a| dot(&p64, &r::attention_stack(p, &st, &a[0]).data),
    )
}

const TINY_WIDTHS: HeadWidths = HeadWidths {
    channels: 4,
    roi_size: 7,
    reg_mid: 4,
    reg_out: 6,
    fc_hidden: 8,
};

fn tiny_head(rng: &mut ChaCha8Rng) -> Result<(ParamStore, DoubleHeadParams)> {
    let mut store = ParamStore::new();
    let head = DoubleHeadParams::new(&mut store, TINY_WIDTHS, NUM_CLASSES, 4, 1, true, true, rng)?;
    jitter_params(&mut store, 0.05, rng);
    Ok((store, head))
}

fn grad_cls_branch(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let (store, head) = tiny_head(rng)?;
    let x = rand_tensor(&[3, 4, 7, 7], rng);
    let proj: Vec<f32> = (0..3 * (NUM_CLASSES + 1)).map(|_| normal(rng)).collect();
    let p64 = f64s(&proj);
    let h2 = head.clone();
    branch_check(
        "cls_branch",
        &store,
        &[x],
        rng,
        &move |g, store, v| {
            let y = head.forward_cls(g, store, v[0])?;
            g.dot_const(y, &proj)
        },
        &move |p, a| dot(&p64, &r::forward_cls(p, &h2, &a[0]).data),
    )
}

fn grad_reg_branch(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let (store, head) = tiny_head(rng)?;
    let x = rand_tensor(&[3, 4, 7, 7], rng);
    let proj: Vec<f32> = (0..12).map(|_| normal(rng)).collect();
    let p64 = f64s(&proj);
    let h2 = head.clone();
    branch_check(
        "reg_branch",
        &store,
        &[x],
        rng,
        &move |g, store, v| {
            let y = head.forward_reg(g, store, v[0])?;
            g.dot_const(y, &proj)
        },
        &move |p, a| dot(&p64, &r::forward_reg(p, &h2, &a[0]).data),
    )
}

fn grad_pos_encoder(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let c = rng.random_range(1..=4);
    let mut store = ParamStore::new();
    let enc = PosEncoder::new(&mut store, "posenc", c, rng);
    jitter_params(&mut store, 0.3, rng);
    let shapes = [
        [c, rng.random_range(1..=6), rng.random_range(1..=6)],
        [c, rng.random_range(1..=6), rng.random_range(1..=6)],
    ];
    let inputs = [rand_tensor(&shapes[0], rng), rand_tensor(&shapes[1], rng)];
    let projs: Vec<Vec<f32>> = inputs
        .iter()
        .map(|t| (0..t.numel()).map(|_| normal(rng)).collect())
        .collect();
    let p64: Vec<Vec<f64>> = projs.iter().map(|p| f64s(p)).collect();
    branch_check(
        "pos_encoder",
        &store,
        &inputs,
        rng,
        &move |g, store, v| {
            let outs = encode_levels(g, store, v, &enc)?;
            let a = g.dot_const(outs[0], &projs[0])?;
            let b = g.dot_const(outs[1], &projs[1])?;
            g.add(a, b)
        },
        &move |p, a| {
            dot(&p64[0], &r::pos_encode(p, &enc, &a[0]).data) + dot(&p64[1], &r::pos_encode(p, &enc, &a[1]).data)
        },
    )
}

/// Small detector config used by the end-to-end gradient and identity checks.
pub fn tiny_detector_config(variant: Variant) -> DetectionConfig {
    let mut cfg = DetectionConfig {
        d: 4,
        channels: 8,
        reg_mid: 4,
        reg_out: 6,
        fc_hidden: 8,
        ..DetectionConfig::default()
    };
    variant.apply(&mut cfg);
    cfg
}

fn tiny_training_sample(rng: &mut ChaCha8Rng, size: f32) -> TrainingSample {
    let gt: Vec<GtObject> = (0..rng.random_range(1..=2))
        .map(|_| GtObject {
            class: rng.random_range(0..NUM_CLASSES),
            bbox: random_box_in(rng, size, size, 8.0),
        })
        .collect();
    let cfg = ProposalConfig::default();
    let mut proposals: Vec<BoxXYXY> = gt.iter().map(|g| jitter_box(&g.bbox, &cfg, rng)).collect();
    proposals.extend((0..2).map(|_| random_box_in(rng, size, size, 6.0)));
    assign_and_encode(&proposals, &gt)
}

fn grad_total_loss(rng: &mut ChaCha8Rng, variant: Variant) -> Result<GradReport> {
    let cfg = tiny_detector_config(variant);
    let mut store = ParamStore::new();
    let det = Detector::new(&mut store, &cfg, rng)?;
    jitter_params(&mut store, 0.05, rng);
    let size = 32usize;
    let image = Tensor::from_fn(&[3, size, size], |_| rng.random_range(0.0..1.0));
    let sample = tiny_training_sample(rng, size as f32);
    let beta = cfg.smooth_l1_beta;
    let img_ref = Array::from_tensor(&image);
    let (s1, d1) = (sample.clone(), det.clone());
    branch_check(
        &format!("total_loss[{}]", variant.name()),
        &store,
        &[],
        rng,
        &move |g, store, _| {
            let trace = det.forward(g, store, &image, &s1.proposals)?;
            detection_loss(g, &trace.output, &s1, beta)
        },
        &move |p, _| {
            let (logits, deltas) = r::detector_forward(p, &d1, &img_ref, &sample.proposals);
            r::detection_loss(&logits, &deltas, &sample, beta as f64)
        },
    )
}

/// The operations and branches covered by [`gradient_suite`], in order.
pub const GRADIENT_CASES: &[&str] = &[
    "matmul",
    "matmul_t",
    "linear",
    "add",
    "scale",
    "relu",
    "softmax_dim",
    "l1_normalize_dim",
    "conv2d",
    "avg_pool_global",
    "concat_channels",
    "reshape/flatten",
    "cross_entropy",
    "smooth_l1",
    "roi_align",
    "attention_stack",
    "cls_branch",
    "reg_branch",
    "pos_encoder",
    "total_loss",
];

fn gradient_case(name: &str) -> Option<OpCase> {
    Some(match name {
        "matmul" => grad_matmul,
        "matmul_t" => grad_matmul_t,
        "linear" => grad_linear,
        "add" => grad_add,
        "scale" => grad_scale,
        "relu" => grad_relu,
        "softmax_dim" => grad_softmax,
        "l1_normalize_dim" => grad_l1_normalize,
        "conv2d" => grad_conv2d,
        "avg_pool_global" => grad_avg_pool,
        "concat_channels" => grad_concat_channels,
        "reshape/flatten" => grad_reshape,
        "cross_entropy" => grad_cross_entropy,
        "smooth_l1" => grad_smooth_l1,
        "roi_align" => grad_roi_align,
        "attention_stack" => grad_attention_stack,
        "cls_branch" => grad_cls_branch,
        "reg_branch" => grad_reg_branch,
        "pos_encoder" => grad_pos_encoder,
        _ => return None,
    })
}

/// One case of the gradient suite over `instances` random instances.
/// `total_loss` cycles through every head variant.
pub fn gradient_case_report(name: &str, instances: usize, seed: u64) -> Result<GradReport> {
    let mut rng = rng_for(seed, 0x6772_6164 ^ name.len() as u64 ^ (name.as_bytes()[0] as u64) << 8);
    let mut report = GradReport::default();
    for i in 0..instances {
        let r = if name == "total_loss" {
            grad_total_loss(&mut rng, Variant::ALL[i % Variant::ALL.len()])?
        } else {
            let f = gradient_case(name).ok_or_else(|| crate::Error::Config(format!("unknown gradient case {name}")))?;
            f(&mut rng)?
        };
        report.merge(r);
    }
    Ok(report)
}

/// Per-case gradient reports, in [`GRADIENT_CASES`] order.
pub fn gradient_reports(instances: usize, seed: u64) -> Vec<(&'static str, Result<GradReport>)> {
    GRADIENT_CASES
        .iter()
        .map(|&n| (n, gradient_case_report(n, instances, seed)))
        .collect()
}

pub fn gradient_suite(instances: usize, seed: u64) -> SuiteResult {
    let mut failed = Vec::new();
    let mut checked = 0;
    let mut skipped = 0;
    let mut worst: f64 = 0.0;
    for (name, rep) in gradient_reports(instances, seed) {
        match rep {
            Ok(rep) => {
                checked += rep.checked;
                skipped += rep.skipped;
                worst = worst.max(rep.worst_ratio);
                if !rep.passed() {
                    let first = rep.failures.first().cloned().unwrap_or_default();
                    failed.push(format!(
                        "{name} ({} bad, {:.1}% skipped) {first}",
                        rep.failed,
                        100.0 * rep.skip_fraction()
                    ));
                }
            }
            Err(e) => failed.push(format!("{name}: {e}")),
        }
    }
    let summary = if failed.is_empty() {
        format!(
            "{} cases × {instances} instances, {checked} coords checked, {skipped} skipped, worst error/tol {worst:.3}",
            GRADIENT_CASES.len()
        )
    } else {
        format!("failing: {}", failed.join("; "))
    };
    SuiteResult::new("gradients", failed.is_empty(), summary)
}

// ---------------------------------------------------------------------------
// Double normalization
// ---------------------------------------------------------------------------

/// Worst deviations seen over random score matrices with `s, d ≤ max_dim`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DnormStats {
    pub trials: usize,
    pub max_row_err: f64,
    pub max_col_err: f64,
    pub min_entry: f32,
}

/// Unit-variance normal scores, the scale the memory initialization targets.
pub fn dnorm_stats(trials: usize, max_dim: usize, seed: u64) -> Result<DnormStats> {
    let mut rng = rng_for(seed, 0xD0);
    let mut st = DnormStats {
        trials,
        min_entry: f32::INFINITY,
        ..Default::default()
    };
    for _ in 0..trials {
        let (s, d) = (rng.random_range(1..=max_dim), rng.random_range(1..=max_dim));
        let x = rand_tensor(&[s, d], &mut rng);
        let mut g = Graph::new();
        let v = g.input(x, false);
        let col = g.softmax_dim(v, 0)?;
        let a = double_normalize(&mut g, v)?;
        let cv = g.value(col);
        for j in 0..d {
            let sum: f64 = (0..s).map(|i| cv[i * d + j] as f64).sum();
            st.max_col_err = st.max_col_err.max((sum - 1.0).abs());
        }
        for row in g.value(a).chunks_exact(d) {
            let sum: f64 = row.iter().map(|&v| v as f64).sum();
            st.max_row_err = st.max_row_err.max((sum - 1.0).abs());
            st.min_entry = row.iter().copied().fold(st.min_entry, f32::min);
        }
    }
    Ok(st)
}

pub fn dnorm_suite(trials: usize, seed: u64) -> SuiteResult {
    match dnorm_stats(trials, 64, seed) {
        Ok(st) => {
            let ok = st.max_row_err <= 1e-5 && st.max_col_err <= 1e-6 && st.min_entry >= 0.0;
            SuiteResult::new(
                "double_normalization",
                ok,
                format!(
                    "{} matrices: max |row sum − 1| {:.2e}, max |column sum − 1| {:.2e}, min entry {:.2e}",
                    st.trials, st.max_row_err, st.max_col_err, st.min_entry
                ),
            )
        }
        Err(e) => SuiteResult::from_error("double_normalization", e),
    }
}

// ---------------------------------------------------------------------------
// Oracle equivalence
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct OracleStats {
    pub attention: f64,
    pub encode: f64,
    pub roi_align: f64,
    pub map: f64,
}

impl OracleStats {
    pub fn worst(&self) -> f64 {
        self.attention.max(self.encode).max(self.roi_align).max(self.map)
    }
}

pub fn oracle_attention(rng: &mut ChaCha8Rng, max: usize) -> Result<f64> {
    let (s, l, d) = (rng.random_range(1..=max), rng.random_range(1..=max), rng.random_range(1..=max));
    let mut store = ParamStore::new();
    let block = ExternalAttentionBlock::new(&mut store, "a", d, l, rng)?;
    jitter_params(&mut store, 0.3, rng);
    let x = rand_tensor(&[s, l], rng);
    let mut g = Graph::new();
    let v = g.input(x.clone(), false);
    let y = attention_forward(&mut g, &store, v, &block)?;
    let want = r::attention_forward(
        &Array::from_tensor(&x),
        &Array::from_tensor(store.get(block.key_memory)),
        &Array::from_tensor(store.get(block.value_memory)),
    );
    Ok(want.max_abs_diff(g.value(y)))
}

pub fn oracle_encode(rng: &mut ChaCha8Rng, max: usize) -> Result<f64> {
    let (c, h, w) = (rng.random_range(1..=max), rng.random_range(1..=max), rng.random_range(1..=max));
    let mut store = ParamStore::new();
    let enc = PosEncoder::new(&mut store, "p", c, rng);
    jitter_params(&mut store, 0.3, rng);
    let x = rand_tensor(&[c, h, w], rng);
    let mut g = Graph::new();
    let v = g.input(x.clone(), false);
    let y = encode(&mut g, &store, v, &enc)?;
    let want = r::encode(&Array::from_tensor(&x), &f64s(store.get(enc.weight).data()), &f64s(store.get(enc.bias).data()));
    Ok(want.max_abs_diff(g.value(y)))
}

pub fn oracle_roi_align(rng: &mut ChaCha8Rng, max: usize) -> Result<f64> {
    let c = rng.random_range(1..=max.min(4));
    let (h, w) = (rng.random_range(1..=max), rng.random_range(1..=max));
    let out = rng.random_range(1..=7);
    let scale = [1.0f32, 0.5, 0.25, 0.125][rng.random_range(0..4)];
    let mut grid = RoiGrid::new(out, scale);
    grid.sampling = rng.random_range(1..=3);
    let (iw, ih) = (w as f32 / scale, h as f32 / scale);
    let b = random_box_in(rng, iw, ih, 0.5 / scale);
    let x = rand_tensor(&[c, h, w], rng);
    let mut g = Graph::new();
    let v = g.input(x.clone(), false);
    let y = roi_align(&mut g, v, &[b], &grid)?;
    let want = r::roi_align(&Array::from_tensor(&x), r::ref_box(&b), out, out, scale as f64, grid.sampling);
    Ok(want.max_abs_diff(g.value(y)))
}

/// Random detections/ground truth on a coarse grid (so exact IoU ties and
/// threshold hits occur), at most `max` boxes of each kind.
pub fn random_map_instance(rng: &mut ChaCha8Rng, max: usize) -> (Vec<Detection>, Vec<GroundTruth>) {
    let images = rng.random_range(1..=2);
    let classes = rng.random_range(1..=NUM_CLASSES);
    let coarse_box = |rng: &mut ChaCha8Rng| {
        let x1 = rng.random_range(0..6) as f32 * 4.0;
        let y1 = rng.random_range(0..6) as f32 * 4.0;
        let w = rng.random_range(1..=4) as f32 * 4.0;
        let h = rng.random_range(1..=4) as f32 * 4.0;
        BoxXYXY::new(x1, y1, x1 + w, y1 + h)
    };
    let ng = rng.random_range(0..=max);
    let gts: Vec<GroundTruth> = (0..ng)
        .map(|_| GroundTruth {
            image: rng.random_range(0..images),
            class: rng.random_range(0..classes),
            bbox: coarse_box(rng),
        })
        .collect();
    let nd = rng.random_range(0..=max);
    let dets: Vec<Detection> = (0..nd)
        .map(|_| {
            let bbox = if !gts.is_empty() && rng.random_bool(0.6) {
                let g = gts[rng.random_range(0..gts.len())];
                let d = |rng: &mut ChaCha8Rng| rng.random_range(-1..=1) as f32 * 2.0;
                BoxXYXY::new(g.bbox.x1 + d(rng), g.bbox.y1 + d(rng), g.bbox.x2 + d(rng), g.bbox.y2 + d(rng))
            } else {
                coarse_box(rng)
            };
            Detection {
                image: rng.random_range(0..images),
                class: rng.random_range(0..classes),
                // coarse scores produce ties
                score: rng.random_range(1..=5) as f32 / 5.0,
                bbox,
            }
        })
        .collect();
    (dets, gts)
}

pub fn oracle_map(rng: &mut ChaCha8Rng, max: usize) -> f64 {
    let (dets, gts) = random_map_instance(rng, max);
    let table = evaluate_map(&dets, &gts, &coco_thresholds());
    let (map, ap50, ap75) = r::evaluate_map_brute(&dets, &gts, NUM_CLASSES);
    let mut worst = (table.map() - map).abs().max((table.ap50() - ap50).abs()).max((table.ap75() - ap75).abs());
    for (c, row) in table.per_class.iter().enumerate() {
        for (ti, &t) in table.thresholds.iter().enumerate() {
            let want = r::average_precision_brute(&dets, &gts, c, t);
            worst = worst.max(match (row[ti], want) {
                (Some(a), Some(b)) => (a - b).abs(),
                (None, None) => 0.0,
                _ => f64::INFINITY,
            });
        }
    }
    worst
}

pub fn oracle_stats(trials: usize, max: usize, seed: u64) -> Result<OracleStats> {
    let mut rng = rng_for(seed, 0x0AC1E);
    let mut st = OracleStats::default();
    for _ in 0..trials {
        st.attention = st.attention.max(oracle_attention(&mut rng, max)?);
        st.encode = st.encode.max(oracle_encode(&mut rng, max)?);
        st.roi_align = st.roi_align.max(oracle_roi_align(&mut rng, max)?);
        st.map = st.map.max(oracle_map(&mut rng, max.min(10)));
    }
    Ok(st)
}

pub fn oracle_suite(trials: usize, seed: u64) -> SuiteResult {
    match oracle_stats(trials, 16, seed) {
        Ok(st) => SuiteResult::new(
            "oracle_equivalence",
            st.worst() <= 1e-5,
            format!(
                "{trials} trials: max abs diff attention {:.2e}, encode {:.2e}, roi_align {:.2e}, mAP {:.2e}",
                st.attention, st.encode, st.roi_align, st.map
            ),
        ),
        Err(e) => SuiteResult::from_error("oracle_equivalence", e),
    }
}

// ---------------------------------------------------------------------------
// Exact identity laws
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IdentityCounts {
    pub zero_value_memory: usize,
    pub depth_zero: usize,
    pub scale_one: usize,
    pub zero_jitter: usize,
    pub violations: usize,
}

pub fn identity_counts(trials: usize, seed: u64) -> Result<IdentityCounts> {
    let mut rng = rng_for(seed, 0x1D);
    let mut c = IdentityCounts::default();
    for _ in 0..trials {
        // M_v = 0 over a whole stack
        let (s, ch, hw) = (rng.random_range(1..=8), rng.random_range(1..=3), rng.random_range(1..=4));
        let l = ch * hw * hw;
        let mut store = ParamStore::new();
        let depth = rng.random_range(1..=3);
        let stack = RoiAttentionStack::new(&mut store, "a", rng.random_range(1..=8), l, depth, &mut rng)?;
        for b in &stack.blocks {
            store.get_mut(b.value_memory).data_mut().fill(0.0);
        }
        let x = rand_tensor(&[s, ch, hw, hw], &mut rng);
        let mut g = Graph::new();
        let v = g.input(x.clone(), false);
        let y = stack_forward(&mut g, &store, v, &stack)?;
        c.zero_value_memory += 1;
        if g.value(y) != x.data() {
            c.violations += 1;
        }
        // depth 0
        let empty = RoiAttentionStack::default();
        let y0 = stack_forward(&mut g, &store, v, &empty)?;
        c.depth_zero += 1;
        if g.value(y0) != x.data() {
            c.violations += 1;
        }
        // scale_box(·, 1) inside the image
        let (iw, ih) = (rng.random_range(16.0..256.0f32), rng.random_range(16.0..256.0f32));
        let b = random_box_in(&mut rng, iw, ih, 1.0);
        c.scale_one += 1;
        if scale_box(&b, 1.0, iw, ih)? != b {
            c.violations += 1;
        }
        // zero-jitter proposals
        let scene = generate_scene(rng.random());
        let props = make_proposals(&scene, rng.random(), &ProposalConfig::zero_jitter());
        let k = ProposalConfig::default().positives_per_gt;
        c.zero_jitter += 1;
        let ok = scene
            .objects
            .iter()
            .enumerate()
            .all(|(i, o)| props[i * k..(i + 1) * k].iter().all(|p| *p == o.bbox));
        if !ok {
            c.violations += 1;
        }
    }
    Ok(c)
}

pub fn identity_suite(trials: usize, seed: u64) -> SuiteResult {
    match identity_counts(trials, seed) {
        Ok(c) => SuiteResult::new(
            "identity_laws",
            c.violations == 0,
            format!(
                "M_v=0 {} / depth 0 {} / scale 1 {} / zero jitter {} cases, {} violations",
                c.zero_value_memory, c.depth_zero, c.scale_one, c.zero_jitter, c.violations
            ),
        ),
        Err(e) => SuiteResult::from_error("identity_laws", e),
    }
}

// ---------------------------------------------------------------------------
// Further invariants
// ---------------------------------------------------------------------------

/// Permuting the RoIs permutes attention-stack and head outputs identically.
pub fn permutation_suite(trials: usize, seed: u64) -> SuiteResult {
    let run = || -> Result<(usize, f64)> {
        let mut rng = rng_for(seed, 0x9E);
        let mut worst = 0.0f64;
        for _ in 0..trials {
            let (store, head) = tiny_head(&mut rng)?;
            let s = rng.random_range(2..=6);
            let x = rand_tensor(&[s, 4, 7, 7], &mut rng);
            let mut perm: Vec<usize> = (0..s).collect();
            perm.shuffle(&mut rng);
            let row = x.numel() / s;
            let mut xp = Tensor::zeros(x.shape());
            for (i, &p) in perm.iter().enumerate() {
                xp.data_mut()[i * row..(i + 1) * row].copy_from_slice(&x.data()[p * row..(p + 1) * row]);
            }
            let mut g = Graph::new();
            let (a, b) = (g.input(x, false), g.input(xp, false));
            let oa = head.head_forward(&mut g, &store, a, a)?;
            let ob = head.head_forward(&mut g, &store, b, b)?;
            let sa = stack_forward(&mut g, &store, a, &head.shared_attention)?;
            let sb = stack_forward(&mut g, &store, b, &head.shared_attention)?;
            for (va, vb) in [(oa.class_logits, ob.class_logits), (oa.box_deltas, ob.box_deltas), (sa, sb)] {
                let k = g.value(va).len() / s;
                for (i, &p) in perm.iter().enumerate() {
                    let ra = &g.value(va)[p * k..(p + 1) * k];
                    let rb = &g.value(vb)[i * k..(i + 1) * k];
                    for (u, w) in ra.iter().zip(rb) {
                        worst = worst.max((u - w).abs() as f64);
                    }
                }
            }
        }
        Ok((trials, worst))
    };
    match run() {
        // Matrix products over permuted rows may reorder f32 sums in the
        // kernel; anything beyond rounding is a failure.
        Ok((n, worst)) => SuiteResult::new(
            "permutation_equivariance",
            worst <= 1e-5,
            format!("{n} trials, max deviation {worst:.2e}"),
        ),
        Err(e) => SuiteResult::from_error("permutation_equivariance", e),
    }
}

/// Bilinear sampling reproduces affine maps; crops are unchanged by padding
/// the map outside the box support.
pub fn roi_align_property_suite(trials: usize, seed: u64) -> SuiteResult {
    let run = || -> Result<(f64, f64)> {
        let mut rng = rng_for(seed, 0xB1);
        let (mut affine_err, mut pad_err) = (0.0f64, 0.0f64);
        for _ in 0..trials {
            let (h, w) = (rng.random_range(3..=10), rng.random_range(3..=10));
            let (a, b, c0) = (normal(&mut rng), normal(&mut rng), normal(&mut rng));
            // f(x, y) = a·x + b·y + c at cell centers (col + 0.5, row + 0.5)
            let map = Tensor::from_fn(&[1, h, w], |i| {
                a * ((i % w) as f32 + 0.5) + b * ((i / w) as f32 + 0.5) + c0
            });
            // keep every sample inside the cell-center hull
            let x1 = rng.random_range(0.5..(w as f32 - 1.5));
            let y1 = rng.random_range(0.5..(h as f32 - 1.5));
            let x2 = rng.random_range(x1 + 0.5..(w as f32 - 0.5));
            let y2 = rng.random_range(y1 + 0.5..(h as f32 - 0.5));
            let bx = BoxXYXY::new(x1, y1, x2, y2);
            let out = rng.random_range(1..=7);
            let mut grid = RoiGrid::new(out, 1.0);
            grid.sampling = rng.random_range(1..=3);
            let mut g = Graph::new();
            let v = g.input(map.clone(), false);
            let y = roi_align(&mut g, v, &[bx], &grid)?;
            let s = grid.sampling as f32;
            let (bw, bh) = ((x2 - x1) / out as f32, (y2 - y1) / out as f32);
            for ph in 0..out {
                for pw in 0..out {
                    // mean of an affine function over the samples is its value at their mean
                    let mx = x1 + (pw as f32 + 0.5) * bw;
                    let my = y1 + (ph as f32 + 0.5) * bh;
                    let _ = s;
                    let want = (a * mx + b * my + c0) as f64;
                    affine_err = affine_err.max((g.value(y)[ph * out + pw] as f64 - want).abs());
                }
            }
            // padding: surround the map with `p` cells of noise on the right
            // and bottom; the box, being inside the original hull and away
            // from its far border, samples the same cells.
            let p = rng.random_range(1..=3);
            let (h2, w2) = (h + p, w + p);
            let noise = rand_tensor(&[1, h2, w2], &mut rng);
            let padded = Tensor::from_fn(&[1, h2, w2], |i| {
                let (r, c) = (i / w2, i % w2);
                if r < h && c < w {
                    map.data()[r * w + c]
                } else {
                    noise.data()[i]
                }
            });
            let vp = g.input(padded, false);
            let yp = roi_align(&mut g, vp, &[bx], &grid)?;
            for (u, w) in g.value(y).iter().zip(g.value(yp)) {
                pad_err = pad_err.max((u - w).abs() as f64);
            }
        }
        Ok((affine_err, pad_err))
    };
    match run() {
        Ok((a, p)) => SuiteResult::new(
            "roi_align_properties",
            a <= 1e-4 && p == 0.0,
            format!("{trials} trials: affine reproduction err {a:.2e}, padding deviation {p:.2e}"),
        ),
        Err(e) => SuiteResult::from_error("roi_align_properties", e),
    }
}

/// `decode(encode(p, g), p) == g` within 1e-5 on random box pairs.
///
/// Sides are drawn from [4, 128] so every log size ratio stays inside the
/// decode clamp ([`MAX_LOG_SCALE`]); the clamp itself is checked separately.
pub fn delta_round_trip_suite(pairs: usize, seed: u64) -> SuiteResult {
    let mut rng = rng_for(seed, 0xDE);
    let mut worst = 0.0f64;
    let mut zero_ok = true;
    let p = BoxXYXY::new(10.0, 10.0, 20.0, 20.0);
    let huge = decode_deltas(&p, &[0.0, 0.0, 50.0, 50.0]);
    let clamp_ok = (huge.width() - 10.0 * libm::expf(MAX_LOG_SCALE)).abs() <= 1e-2 * huge.width();
    for _ in 0..pairs {
        let p = random_box_in(&mut rng, 128.0, 128.0, 4.0);
        let t = random_box_in(&mut rng, 128.0, 128.0, 4.0);
        let back = decode_deltas(&p, &encode_deltas(&p, &t));
        for (u, w) in [(back.x1, t.x1), (back.y1, t.y1), (back.x2, t.x2), (back.y2, t.y2)] {
            worst = worst.max((u - w).abs() as f64);
        }
        zero_ok &= encode_deltas(&p, &p) == [0.0; 4];
    }
    SuiteResult::new(
        "box_delta_round_trip",
        worst <= 1e-5 && zero_ok && clamp_ok,
        format!("{pairs} pairs, max coordinate error {worst:.2e}, identity deltas zero: {zero_ok}, scale clamp: {clamp_ok}"),
    )
}

/// Every jittered positive overlaps its source with IoU ≥ 0.5.
pub fn proposal_suite(draws: usize, seed: u64) -> SuiteResult {
    let mut rng = rng_for(seed, 0x9C);
    let cfg = ProposalConfig::default();
    let mut min_iou = f32::INFINITY;
    for _ in 0..draws {
        let g = random_box_in(&mut rng, 128.0, 128.0, 16.0);
        let p = jitter_box(&g, &cfg, &mut rng);
        min_iou = min_iou.min(iou(&p, &g));
    }
    let scene = generate_scene(seed);
    let count_ok = make_proposals(&scene, seed, &cfg).len() == 8 * scene.objects.len() + 24;
    SuiteResult::new(
        "proposal_jitter",
        min_iou >= 0.5 && count_ok,
        format!("{draws} draws, min IoU with source {min_iou:.4}, count rule holds: {count_ok}"),
    )
}

/// Class census and box validity over generated scenes.
pub fn scene_census_suite(scenes: usize, seed: u64) -> SuiteResult {
    let mut counts = [0usize; NUM_CLASSES];
    let mut bad = 0;
    let frame = BoxXYXY::new(0.0, 0.0, 128.0, 128.0);
    for i in 0..scenes {
        let s = generate_scene(crate::scene::derive_seed(seed, i as u64));
        if !(1..=6).contains(&s.objects.len()) {
            bad += 1;
        }
        for o in &s.objects {
            counts[o.class] += 1;
            if !o.bbox.is_valid() || !frame.contains(&o.bbox) {
                bad += 1;
            }
        }
    }
    let min = counts.iter().copied().min().unwrap_or(0);
    SuiteResult::new(
        "scene_census",
        min >= 50 && bad == 0 && generate_scene(seed) == generate_scene(seed),
        format!("{scenes} scenes, class counts {counts:?}, invalid {bad}"),
    )
}

/// Gradient on the shared attention equals the sum of the two branches'
/// isolated gradients; mutating it moves both branch outputs.
pub fn shared_attention_suite(trials: usize, seed: u64) -> SuiteResult {
    let run = || -> Result<(f64, bool)> {
        let mut rng = rng_for(seed, 0x5A);
        let mut worst = 0.0f64;
        let mut both_move = true;
        for _ in 0..trials {
            let (mut store, head) = tiny_head(&mut rng)?;
            let x = rand_tensor(&[3, 4, 7, 7], &mut rng);
            let pc: Vec<f32> = (0..15).map(|_| normal(&mut rng)).collect();
            let pr: Vec<f32> = (0..12).map(|_| normal(&mut rng)).collect();
            let grads_of = |store: &ParamStore, cls: bool, reg: bool| -> Result<(Vec<Vec<f32>>, Vec<f32>, Vec<f32>)> {
                let mut g = Graph::new();
                let v = g.input(x.clone(), false);
                let out = head.head_forward(&mut g, store, v, v)?;
                let lc = g.dot_const(out.class_logits, &pc)?;
                let lr = g.dot_const(out.box_deltas, &pr)?;
                let zero = g.scale(lc, 0.0)?;
                let loss = match (cls, reg) {
                    (true, true) => g.add(lc, lr)?,
                    (true, false) => g.add(lc, zero)?,
                    _ => g.add(lr, zero)?,
                };
                let grads = g.backward(loss)?;
                let att: Vec<Vec<f32>> = head
                    .shared_attention
                    .params()
                    .map(|id| grads.param(id).map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; store.get(id).numel()]))
                    .collect();
                Ok((att, g.value(out.class_logits).to_vec(), g.value(out.box_deltas).to_vec()))
            };
            let (both, c0, r0) = grads_of(&store, true, true)?;
            let (only_c, _, _) = grads_of(&store, true, false)?;
            let (only_r, _, _) = grads_of(&store, false, true)?;
            for ((b, c), r) in both.iter().zip(&only_c).zip(&only_r) {
                for ((u, v), w) in b.iter().zip(c).zip(r) {
                    let want = (*v as f64) + (*w as f64);
                    worst = worst.max((*u as f64 - want).abs() / (1e-5 + 1e-4 * want.abs()));
                }
            }
            let mk = head.shared_attention.blocks[0].key_memory;
            for v in store.get_mut(mk).data_mut() {
                *v += 0.5;
            }
            let (_, c1, r1) = grads_of(&store, true, true)?;
            both_move &= c0 != c1 && r0 != r1;
        }
        Ok((worst, both_move))
    };
    match run() {
        Ok((w, m)) => SuiteResult::new(
            "shared_attention",
            w <= 1.0 && m,
            format!("{trials} trials, worst sum-rule error/tol {w:.3}, both branches respond: {m}"),
        ),
        Err(e) => SuiteResult::from_error("shared_attention", e),
    }
}

/// Only the regression crops see the positional encoding: the classification
/// source is the raw backbone map, and changing the encoder moves only the
/// regression output.
pub fn regression_only_encoding_suite(seed: u64) -> SuiteResult {
    let run = || -> Result<(bool, bool, bool)> {
        let mut rng = rng_for(seed, 0x7E);
        let cfg = tiny_detector_config(Variant::Full);
        let mut store = ParamStore::new();
        let det = Detector::new(&mut store, &cfg, &mut rng)?;
        let image = Tensor::from_fn(&[3, 32, 32], |_| rng.random_range(0.0..1.0));
        let props = [BoxXYXY::new(2.0, 3.0, 20.0, 25.0), BoxXYXY::new(10.0, 8.0, 30.0, 30.0)];
        let eval = |store: &ParamStore| -> Result<(bool, Vec<f32>, Vec<f32>)> {
            let mut g = Graph::new();
            let t = det.forward(&mut g, store, &image, &props)?;
            let structural = t.cls_source == t.features && t.reg_source != t.features;
            Ok((
                structural,
                g.value(t.output.class_logits).to_vec(),
                g.value(t.output.box_deltas).to_vec(),
            ))
        };
        let (structural, c0, r0) = eval(&store)?;
        let enc = det.pos_encoder.expect("Full variant encodes");
        for v in store.get_mut(enc.weight).data_mut() {
            *v += 0.3;
        }
        let (_, c1, r1) = eval(&store)?;
        Ok((structural, c0 == c1, r0 != r1))
    };
    match run() {
        Ok((s, c, r)) => SuiteResult::new(
            "regression_only_encoding",
            s && c && r,
            format!("cls crops from raw map: {s}, cls unchanged by encoder: {c}, reg changed: {r}"),
        ),
        Err(e) => SuiteResult::from_error("regression_only_encoding", e),
    }
}

/// Loss saturation, the uniform-logit value and non-negativity.
pub fn loss_suite(trials: usize, seed: u64) -> SuiteResult {
    let run = || -> Result<(f64, f64, f32)> {
        let mut rng = rng_for(seed, 0x105);
        let (mut perfect, mut uniform_err, mut min_loss) = (0.0f64, 0.0f64, f32::INFINITY);
        for _ in 0..trials {
            let sample = tiny_training_sample(&mut rng, 128.0);
            let n = sample.labels.len();
            let k1 = NUM_CLASSES + 1;
            let mut g = Graph::new();
            // perfect: one-hot × 1e6 logits, exact deltas
            let onehot = Tensor::from_fn(&[n, k1], |i| if sample.labels[i / k1] == i % k1 { 1e6 } else { 0.0 });
            let exact = Tensor::from_fn(&[n, 4], |i| sample.targets[i / 4].map_or(0.0, |t| t[i % 4]));
            let out = crate::head::HeadOutput {
                class_logits: g.input(onehot, false),
                box_deltas: g.input(exact, false),
            };
            let l = detection_loss(&mut g, &out, &sample, 1.0 / 9.0)?;
            perfect = perfect.max(g.value(l)[0] as f64);
            // uniform logits: CE = ln 5
            let zeros = g.input(Tensor::zeros(&[n, k1]), false);
            let ce = g.cross_entropy_with_logits(zeros, &sample.labels)?;
            uniform_err = uniform_err.max((g.value(ce)[0] as f64 - libm::log(k1 as f64)).abs());
            // random outputs
            let rl = g.input(rand_tensor(&[n, k1], &mut rng), false);
            let rd = g.input(rand_tensor(&[n, 4], &mut rng), false);
            let out = crate::head::HeadOutput {
                class_logits: rl,
                box_deltas: rd,
            };
            let l = detection_loss(&mut g, &out, &sample, 1.0 / 9.0)?;
            min_loss = min_loss.min(g.value(l)[0]);
            debug_assert!(sample.labels.iter().all(|&c| c <= BACKGROUND));
        }
        Ok((perfect, uniform_err, min_loss))
    };
    match run() {
        Ok((p, u, m)) => SuiteResult::new(
            "loss_properties",
            p < 1e-3 && u <= 1e-5 && m > 0.0,
            format!("{trials} trials: perfect-prediction loss {p:.2e}, |CE − ln 5| {u:.2e}, min random loss {m:.3}"),
        ),
        Err(e) => SuiteResult::from_error("loss_properties", e),
    }
}

/// Tape matmul against a triple loop; softmax slices sum to one and stay
/// positive; a diamond graph accumulates both paths.
pub fn tape_suite(trials: usize, seed: u64) -> SuiteResult {
    let run = || -> Result<(f64, f64, bool, f64)> {
        let mut rng = rng_for(seed, 0x7A);
        let (mut mm, mut sm) = (0.0f64, 0.0f64);
        let mut positive = true;
        for _ in 0..trials {
            let n = rng.random_range(1..=24);
            let (a, b) = (rand_tensor(&[n, n], &mut rng), rand_tensor(&[n, n], &mut rng));
            let mut g = Graph::new();
            let (va, vb) = (g.input(a.clone(), false), g.input(b.clone(), false));
            let c = g.matmul(va, vb)?;
            mm = mm.max(r::matmul(&Array::from_tensor(&a), &Array::from_tensor(&b)).max_abs_diff(g.value(c)));
            let x = rand_tensor(&[6, 6], &mut rng);
            let vx = g.input(x, false);
            let s = g.softmax_dim(vx, 0)?;
            let vals = g.value(s);
            positive &= vals.iter().all(|&v| v > 0.0);
            for j in 0..6 {
                let sum: f64 = (0..6).map(|i| vals[i * 6 + j] as f64).sum();
                sm = sm.max((sum - 1.0).abs());
            }
        }
        // diamond: y = x∘x + relu(x) consumed through one shared node
        let x = rand_tensor(&[5], &mut rng);
        let mut g = Graph::new();
        let vx = g.input(x.clone(), true);
        let h = g.scale(vx, 2.0)?;
        let a = g.relu(h)?;
        let b = g.scale(h, -0.5)?;
        let y = g.add(a, b)?;
        let loss = g.sum(y)?;
        let grads = g.backward(loss)?;
        let p = f64s(x.data());
        let rep = check("diamond", &p, grads.get(vx).unwrap_or(&[]), &[0, 1, 2, 3, 4], |v| {
            v.iter().map(|&t| (2.0 * t).max(0.0) - t).sum()
        });
        let diamond = if rep.passed() { rep.worst_ratio } else { f64::INFINITY };
        Ok((mm, sm, positive, diamond))
    };
    match run() {
        Ok((mm, sm, pos, d)) => SuiteResult::new(
            "tape_core",
            mm <= 1e-5 && sm <= 1e-6 && pos && d <= 1.0,
            format!("matmul vs loops {mm:.2e}, softmax sum err {sm:.2e}, positive {pos}, diamond error/tol {d:.3}"),
        ),
        Err(e) => SuiteResult::from_error("tape_core", e),
    }
}

/// A named suite ready to run.
pub type SuiteRunner = alloc::boxed::Box<dyn Fn() -> SuiteResult + Send + Sync>;

/// Every suite, at full size or at the reduced size used by the quick test
/// runs.
pub fn suite_plan(seed: u64, full: bool) -> Vec<(&'static str, SuiteRunner)> {
    let k = move |full_n: usize, quick_n: usize| if full { full_n } else { quick_n };
    let mut plan: Vec<(&'static str, SuiteRunner)> = Vec::new();
    let mut add = |name: &'static str, f: SuiteRunner| plan.push((name, f));
    add("gradients", alloc::boxed::Box::new(move || gradient_suite(k(20, 3), seed)));
    add("double_normalization", alloc::boxed::Box::new(move || dnorm_suite(k(10_000, 1_000), seed)));
    add("oracle_equivalence", alloc::boxed::Box::new(move || oracle_suite(k(500, 100), seed)));
    add("identity_laws", alloc::boxed::Box::new(move || identity_suite(k(200, 50), seed)));
    add("tape_core", alloc::boxed::Box::new(move || tape_suite(k(100, 20), seed)));
    add("permutation_equivariance", alloc::boxed::Box::new(move || permutation_suite(k(20, 5), seed)));
    add("roi_align_properties", alloc::boxed::Box::new(move || roi_align_property_suite(k(500, 100), seed)));
    add("box_delta_round_trip", alloc::boxed::Box::new(move || delta_round_trip_suite(10_000, seed)));
    add("proposal_jitter", alloc::boxed::Box::new(move || proposal_suite(10_000, seed)));
    add("scene_census", alloc::boxed::Box::new(move || scene_census_suite(k(1000, 300), seed)));
    add("shared_attention", alloc::boxed::Box::new(move || shared_attention_suite(k(10, 3), seed)));
    add("regression_only_encoding", alloc::boxed::Box::new(move || regression_only_encoding_suite(seed)));
    add("loss_properties", alloc::boxed::Box::new(move || loss_suite(k(200, 50), seed)));
    plan
}
