//! Define-by-run tape with reverse-mode differentiation.
//!
//! A [`Graph`] records every operation as a node in execution order, so the
//! node list is already a topological order and one reverse sweep visits each
//! node exactly once. Parameters are borrowed from a [`ParamStore`] rather than
//! copied; many graphs may read the same store concurrently.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::kernels::{col2im, gemm, im2col, swap_outer, ConvGeometry};
use crate::params::{GradBuffer, ParamId, ParamStore};
use crate::roi::RoiPlan;
use crate::tensor::{split_at_dim, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Value<'p> {
    Owned(Vec<f32>),
    Borrowed(&'p [f32]),
}

impl Value<'_> {
    fn as_slice(&self) -> &[f32] {
        match self {
            Value::Owned(v) => v,
            Value::Borrowed(v) => v,
        }
    }
}

#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    Param,
    MatMul { a: Var, b: Var, trans_b: bool },
    Linear { x: Var, w: Var, b: Var },
    Add(Var, Var),
    Scale(Var, f32),
    Relu(Var),
    Softmax { x: Var, dim: usize },
    L1Normalize { x: Var, dim: usize, eps: f32 },
    Conv2d { x: Var, w: Var, b: Var, geom: ConvGeometry, out_c: usize },
    AvgPoolGlobal(Var),
    Concat { inputs: Vec<Var>, dim: usize },
    Reshape(Var),
    Dot { x: Var, weights: Vec<f32> },
    CrossEntropy { logits: Var, targets: Vec<usize> },
    SmoothL1 { pred: Var, target: Vec<f32>, row_weights: Vec<f32>, beta: f32, norm: f32 },
    RoiAlign { features: Var, plan: RoiPlan },
}

#[derive(Debug)]
struct Node<'p> {
    shape: Vec<usize>,
    value: Value<'p>,
    requires_grad: bool,
    op: Op,
}

/// The tape. `'p` is the lifetime of borrowed parameter storage.
#[derive(Debug, Default)]
pub struct Graph<'p> {
    nodes: Vec<Node<'p>>,
    params: Vec<(ParamId, Var)>,
}

fn check_finite(op: &'static str, data: &[f32]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

impl<'p> Graph<'p> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Loads a leaf tensor. Gradients are tracked iff `requires_grad`.
    pub fn input(&mut self, tensor: Tensor, requires_grad: bool) -> Var {
        let shape = tensor.shape().to_vec();
        self.nodes.push(Node {
            shape,
            value: Value::Owned(tensor.into_data()),
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.input(tensor, false)
    }

    /// Borrows a trainable parameter. Repeated calls with the same id return
    /// the same node, so gradients from every use accumulate in one place.
    pub fn param(&mut self, store: &'p ParamStore, id: ParamId) -> Var {
        if let Some(&(_, v)) = self.params.iter().find(|(p, _)| *p == id) {
            return v;
        }
        let tensor = store.get(id);
        self.nodes.push(Node {
            shape: tensor.shape().to_vec(),
            value: Value::Borrowed(tensor.data()),
            requires_grad: true,
            op: Op::Param,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.push((id, v));
        v
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[f32] {
        self.nodes[v.0].value.as_slice()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.shape(v), self.value(v).to_vec()).expect("node invariant")
    }

    pub(crate) fn push(
        &mut self,
        name: &'static str,
        shape: Vec<usize>,
        data: Vec<f32>,
        inputs: &[Var],
        op: Op,
    ) -> Result<Var> {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        check_finite(name, &data)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            shape,
            value: Value::Owned(data),
            requires_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn matrix_dims(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        match *self.shape(v) {
            [r, c] => Ok((r, c)),
            ref s => Err(Error::invalid(op, alloc::format!("expected a matrix, got shape {s:?}"))),
        }
    }

    /// Matrix product `a[m×k] · b[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// Product with a transposed right factor: `a[m×k] · b[n×k]ᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (m, k) = self.matrix_dims("matmul", a)?;
        let (br, bc) = self.matrix_dims("matmul", b)?;
        let (kb, n) = if trans_b { (bc, br) } else { (br, bc) };
        if k != kb {
            return Err(Error::shape("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        gemm(self.value(a), false, self.value(b), trans_b, &mut out, m, k, n, false);
        self.push("matmul", vec![m, n], out, &[a, b], Op::MatMul { a, b, trans_b })
    }

    /// Affine map `x[n×f] · w[f×o] + b[o]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (n, f) = self.matrix_dims("linear", x)?;
        let (wf, o) = self.matrix_dims("linear", w)?;
        if f != wf {
            return Err(Error::shape("linear", self.shape(x), self.shape(w)));
        }
        if self.shape(b) != [o] {
            return Err(Error::shape("linear", self.shape(w), self.shape(b)));
        }
        let mut out = vec![0.0; n * o];
        let bias = self.value(b);
        for row in out.chunks_exact_mut(o) {
            row.copy_from_slice(bias);
        }
        gemm(self.value(x), false, self.value(w), false, &mut out, n, f, o, true);
        self.push("linear", vec![n, o], out, &[x, w, b], Op::Linear { x, w, b })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("add", self.shape(a), self.shape(b)));
        }
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        self.push("add", shape, out, &[a, b], Op::Add(a, b))
    }

    pub fn scale(&mut self, x: Var, factor: f32) -> Result<Var> {
        let out = self.value(x).iter().map(|v| v * factor).collect();
        let shape = self.shape(x).to_vec();
        self.push("scale", shape, out, &[x], Op::Scale(x, factor))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).iter().map(|&v| v.max(0.0)).collect();
        let shape = self.shape(x).to_vec();
        self.push("relu", shape, out, &[x], Op::Relu(x))
    }

    /// Softmax along `dim`, stabilized by subtracting the slice maximum.
    pub fn softmax_dim(&mut self, x: Var, dim: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if dim >= shape.len() {
            return Err(Error::invalid("softmax_dim", alloc::format!("axis {dim} out of range for {shape:?}")));
        }
        let (outer, len, inner) = split_at_dim(&shape, dim);
        let src = self.value(x);
        let mut out = vec![0.0f32; src.len()];
        let mut exps = vec![0.0f64; len];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * len + k) * inner + i;
                let max = (0..len).map(|k| src[at(k)]).fold(f32::NEG_INFINITY, f32::max);
                let mut total = 0.0f64;
                for (k, e) in exps.iter_mut().enumerate() {
                    *e = libm::exp((src[at(k)] - max) as f64);
                    total += *e;
                }
                for (k, e) in exps.iter().enumerate() {
                    out[at(k)] = (e / total) as f32;
                }
            }
        }
        self.push("softmax_dim", shape, out, &[x], Op::Softmax { x, dim })
    }

    /// Divides every slice along `dim` by its L1 norm plus `eps`.
    pub fn l1_normalize_dim(&mut self, x: Var, dim: usize, eps: f32) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if dim >= shape.len() {
            return Err(Error::invalid("l1_normalize_dim", alloc::format!("axis {dim} out of range for {shape:?}")));
        }
        let (outer, len, inner) = split_at_dim(&shape, dim);
        let src = self.value(x);
        let mut out = vec![0.0f32; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * len + k) * inner + i;
                let norm: f64 = (0..len).map(|k| src[at(k)].abs() as f64).sum::<f64>() + eps as f64;
                for k in 0..len {
                    out[at(k)] = (src[at(k)] as f64 / norm) as f32;
                }
            }
        }
        self.push("l1_normalize_dim", shape, out, &[x], Op::L1Normalize { x, dim, eps })
    }

    /// Cross-correlation of `x[n×c×h×w]` with `weight[o×c×kh×kw]` plus `bias[o]`.
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        let (n, c, h, w) = match *self.shape(x) {
            [n, c, h, w] => (n, c, h, w),
            ref s => return Err(Error::invalid("conv2d", alloc::format!("input must be n×c×h×w, got {s:?}"))),
        };
        let (o, wc, kh, kw) = match *self.shape(weight) {
            [o, wc, kh, kw] => (o, wc, kh, kw),
            ref s => return Err(Error::invalid("conv2d", alloc::format!("weight must be o×c×kh×kw, got {s:?}"))),
        };
        if wc != c {
            return Err(Error::shape("conv2d", self.shape(x), self.shape(weight)));
        }
        if self.shape(bias) != [o] {
            return Err(Error::shape("conv2d", self.shape(weight), self.shape(bias)));
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d", "stride must be positive"));
        }
        let (ph, pw) = (h + 2 * padding, w + 2 * padding);
        if kh > ph || kw > pw {
            return Err(Error::invalid("conv2d", alloc::format!("kernel {kh}×{kw} exceeds padded input {ph}×{pw}")));
        }
        if (ph - kh) % stride != 0 || (pw - kw) % stride != 0 {
            return Err(Error::invalid(
                "conv2d",
                alloc::format!("non-integral output extent for {ph}×{pw} input, {kh}×{kw} kernel, stride {stride}"),
            ));
        }
        let geom = ConvGeometry {
            n,
            c,
            h,
            w,
            kh,
            kw,
            stride,
            pad: padding,
            oh: (ph - kh) / stride + 1,
            ow: (pw - kw) / stride + 1,
        };
        let plane = geom.oh * geom.ow;
        let mut col = vec![0.0; geom.col_rows() * geom.col_cols()];
        im2col(self.value(x), &geom, &mut col);
        // [o, n·plane] then reorder to [n, o, plane].
        let mut tmp = vec![0.0; o * geom.col_cols()];
        let bvals = self.value(bias);
        for (oc, row) in tmp.chunks_exact_mut(geom.col_cols()).enumerate() {
            row.fill(bvals[oc]);
        }
        gemm(self.value(weight), false, &col, false, &mut tmp, o, geom.col_rows(), geom.col_cols(), true);
        let mut out = vec![0.0; tmp.len()];
        swap_outer(&tmp, o, n, plane, &mut out);
        self.push(
            "conv2d",
            vec![n, o, geom.oh, geom.ow],
            out,
            &[x, weight, bias],
            Op::Conv2d { x, w: weight, b: bias, geom, out_c: o },
        )
    }

    /// Mean over the spatial extents: `[n, c, h, w] → [n, c]`.
    pub fn avg_pool_global(&mut self, x: Var) -> Result<Var> {
        let (n, c, hw) = match *self.shape(x) {
            [n, c, h, w] => (n, c, h * w),
            ref s => return Err(Error::invalid("avg_pool_global", alloc::format!("expected n×c×h×w, got {s:?}"))),
        };
        let out = self
            .value(x)
            .chunks_exact(hw.max(1))
            .map(|plane| (plane.iter().map(|&v| v as f64).sum::<f64>() / hw as f64) as f32)
            .collect();
        self.push("avg_pool_global", vec![n, c], out, &[x], Op::AvgPoolGlobal(x))
    }

    /// Concatenates along `dim`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[Var], dim: usize) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::invalid("concat", "no inputs"))?;
        let base = self.shape(first).to_vec();
        if dim >= base.len() {
            return Err(Error::invalid("concat", alloc::format!("axis {dim} out of range for {base:?}")));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            if s.len() != base.len() || s.iter().zip(&base).enumerate().any(|(i, (a, b))| i != dim && a != b) {
                return Err(Error::shape("concat", &base, s));
            }
            total += s[dim];
        }
        let (outer, _, inner) = split_at_dim(&base, dim);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let len = self.shape(v)[dim];
                out.extend_from_slice(&self.value(v)[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = base;
        shape[dim] = total;
        self.push("concat", shape, out, inputs, Op::Concat { inputs: inputs.to_vec(), dim })
    }

    /// Concatenates along the channel axis (axis 1 of `n×c×h×w`).
    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        for &v in inputs {
            if self.shape(v).len() != 4 {
                return Err(Error::invalid("concat_channels", "inputs must be n×c×h×w"));
            }
        }
        self.concat(inputs, 1)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(x).len() {
            return Err(Error::shape("reshape", self.shape(x), shape));
        }
        let out = self.value(x).to_vec();
        self.push("reshape", shape.to_vec(), out, &[x], Op::Reshape(x))
    }

    /// Flattens all trailing axes: `[n, ...] → [n, rest]`.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x);
        let n = *shape.first().ok_or_else(|| Error::invalid("flatten", "rank-0 input"))?;
        let rest = shape[1..].iter().product();
        self.reshape(x, &[n, rest])
    }

    /// Scalar `Σ xᵢ·wᵢ` against constant weights.
    pub fn dot_const(&mut self, x: Var, weights: &[f32]) -> Result<Var> {
        if weights.len() != self.value(x).len() {
            return Err(Error::shape("dot_const", self.shape(x), &[weights.len()]));
        }
        let s: f64 = self
            .value(x)
            .iter()
            .zip(weights)
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum();
        self.push("dot_const", vec![1], vec![s as f32], &[x], Op::Dot { x, weights: weights.to_vec() })
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let ones = vec![1.0; self.value(x).len()];
        self.dot_const(x, &ones)
    }

    /// Mean softmax cross-entropy of `logits[n×k]` against class indices.
    pub fn cross_entropy_with_logits(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (n, k) = self.matrix_dims("cross_entropy", logits)?;
        if targets.len() != n || n == 0 {
            return Err(Error::shape("cross_entropy", self.shape(logits), &[targets.len()]));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= k) {
            return Err(Error::invalid("cross_entropy", alloc::format!("target {t} out of range for {k} classes")));
        }
        let mut total = 0.0f64;
        for (row, &t) in self.value(logits).chunks_exact(k).zip(targets) {
            total += log_sum_exp(row) - row[t] as f64;
        }
        let loss = (total / n as f64) as f32;
        self.push(
            "cross_entropy",
            vec![1],
            vec![loss],
            &[logits],
            Op::CrossEntropy { logits, targets: targets.to_vec() },
        )
    }

    /// `Σᵢ wᵢ Σⱼ smoothL1(predᵢⱼ − targetᵢⱼ) / norm` with per-row weights.
    ///
    /// `smoothL1(d) = 0.5·d²/β` for `|d| < β`, else `|d| − 0.5·β`; `β = 0` is
    /// plain L1.
    pub fn smooth_l1(&mut self, pred: Var, target: &[f32], row_weights: &[f32], beta: f32, norm: f32) -> Result<Var> {
        let (n, k) = self.matrix_dims("smooth_l1", pred)?;
        if target.len() != n * k || row_weights.len() != n {
            return Err(Error::shape("smooth_l1", self.shape(pred), &[target.len(), row_weights.len()]));
        }
        if !(norm > 0.0) || beta < 0.0 {
            return Err(Error::invalid("smooth_l1", "norm must be positive and beta non-negative"));
        }
        let mut total = 0.0f64;
        for (i, (p, t)) in self.value(pred).chunks_exact(k).zip(target.chunks_exact(k)).enumerate() {
            if row_weights[i] == 0.0 {
                continue;
            }
            let row: f64 = p.iter().zip(t).map(|(&a, &b)| smooth_l1_value((a - b) as f64, beta as f64)).sum();
            total += row_weights[i] as f64 * row;
        }
        let loss = (total / norm as f64) as f32;
        self.push(
            "smooth_l1",
            vec![1],
            vec![loss],
            &[pred],
            Op::SmoothL1 {
                pred,
                target: target.to_vec(),
                row_weights: row_weights.to_vec(),
                beta,
                norm,
            },
        )
    }

    /// Applies a precomputed RoIAlign sampling plan to `features[c×h×w]`.
    pub(crate) fn roi_align_plan(&mut self, features: Var, plan: RoiPlan) -> Result<Var> {
        let (c, h, w) = match *self.shape(features) {
            [c, h, w] => (c, h, w),
            ref s => return Err(Error::invalid("roi_align", alloc::format!("features must be c×h×w, got {s:?}"))),
        };
        if plan.map_h != h || plan.map_w != w {
            return Err(Error::shape("roi_align", self.shape(features), &[plan.map_h, plan.map_w]));
        }
        let bins = plan.out_h * plan.out_w;
        let src = self.value(features);
        let mut out = vec![0.0f32; plan.boxes * c * bins];
        for b in 0..plan.boxes {
            for bin in 0..bins {
                let taps = plan.taps(b, bin);
                for ch in 0..c {
                    let plane = &src[ch * h * w..(ch + 1) * h * w];
                    let acc: f64 = taps.iter().map(|t| t.weight as f64 * plane[t.index as usize] as f64).sum();
                    out[(b * c + ch) * bins + bin] = acc as f32;
                }
            }
        }
        let shape = vec![plan.boxes, c, plan.out_h, plan.out_w];
        self.push("roi_align", shape, out, &[features], Op::RoiAlign { features, plan })
    }

    /// Reverse sweep from a scalar `loss`. Returns gradients of every leaf
    /// (inputs with `requires_grad` and parameters).
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::invalid("backward", alloc::format!("loss must be scalar, got {:?}", self.shape(loss))));
        }
        let mut grads: Vec<Option<Vec<f32>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut visited = 0;
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            visited += 1;
            if matches!(node.op, Op::Leaf | Op::Param) {
                grads[idx] = Some(dy);
                continue;
            }
            self.backward_node(node, &dy, &mut grads);
        }
        let mut leaf_grads = Vec::new();
        for (idx, g) in grads.into_iter().enumerate() {
            let node = &self.nodes[idx];
            let is_leaf = matches!(node.op, Op::Leaf | Op::Param);
            if let (Some(g), true, true) = (g, is_leaf, node.requires_grad) {
                leaf_grads.push((Var(idx), g));
            }
        }
        Ok(Gradients {
            grads: leaf_grads,
            params: self.params.clone(),
            visited,
        })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backward_node(&self, node: &Node<'p>, dy: &[f32], grads: &mut [Option<Vec<f32>>]) {
        let y = node.value.as_slice();
        match &node.op {
            Op::Leaf | Op::Param => {}
            &Op::MatMul { a, b, trans_b } => {
                let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
                let n = node.shape[1];
                if self.wants(a) {
                    let mut da = vec![0.0; m * k];
                    // trans_b: b stored n×k, so da = dy·b; else da = dy·bᵀ.
                    gemm(dy, false, self.value(b), !trans_b, &mut da, m, n, k, false);
                    accumulate(grads, a, &da);
                }
                if self.wants(b) {
                    let mut db = vec![0.0; k * n];
                    if trans_b {
                        gemm(dy, true, self.value(a), false, &mut db, n, m, k, false);
                    } else {
                        gemm(self.value(a), true, dy, false, &mut db, k, m, n, false);
                    }
                    accumulate(grads, b, &db);
                }
            }
            &Op::Linear { x, w, b } => {
                let (n, f) = (self.shape(x)[0], self.shape(x)[1]);
                let o = node.shape[1];
                if self.wants(x) {
                    let mut dx = vec![0.0; n * f];
                    gemm(dy, false, self.value(w), true, &mut dx, n, o, f, false);
                    accumulate(grads, x, &dx);
                }
                if self.wants(w) {
                    let mut dw = vec![0.0; f * o];
                    gemm(self.value(x), true, dy, false, &mut dw, f, n, o, false);
                    accumulate(grads, w, &dw);
                }
                if self.wants(b) {
                    let db = column_sums(dy, n, o);
                    accumulate(grads, b, &db);
                }
            }
            &Op::Add(a, b) => {
                if self.wants(a) {
                    accumulate(grads, a, dy);
                }
                if self.wants(b) {
                    accumulate(grads, b, dy);
                }
            }
            &Op::Scale(x, factor) => {
                let dx: Vec<f32> = dy.iter().map(|g| g * factor).collect();
                accumulate(grads, x, &dx);
            }
            &Op::Relu(x) => {
                let dx: Vec<f32> = dy.iter().zip(y).map(|(&g, &v)| if v > 0.0 { g } else { 0.0 }).collect();
                accumulate(grads, x, &dx);
            }
            &Op::Softmax { x, dim } => {
                let (outer, len, inner) = split_at_dim(&node.shape, dim);
                let mut dx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| (o * len + k) * inner + i;
                        let dotp: f64 = (0..len).map(|k| dy[at(k)] as f64 * y[at(k)] as f64).sum();
                        for k in 0..len {
                            dx[at(k)] = (y[at(k)] as f64 * (dy[at(k)] as f64 - dotp)) as f32;
                        }
                    }
                }
                accumulate(grads, x, &dx);
            }
            &Op::L1Normalize { x, dim, eps } => {
                let (outer, len, inner) = split_at_dim(&node.shape, dim);
                let src = self.value(x);
                let mut dx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| (o * len + k) * inner + i;
                        let norm: f64 = (0..len).map(|k| src[at(k)].abs() as f64).sum::<f64>() + eps as f64;
                        let dotp: f64 = (0..len).map(|k| dy[at(k)] as f64 * src[at(k)] as f64).sum();
                        for k in 0..len {
                            let s = src[at(k)];
                            let sign = if s > 0.0 { 1.0 } else if s < 0.0 { -1.0 } else { 0.0 };
                            dx[at(k)] = (dy[at(k)] as f64 / norm - sign * dotp / (norm * norm)) as f32;
                        }
                    }
                }
                accumulate(grads, x, &dx);
            }
            &Op::Conv2d { x, w, b, geom, out_c } => {
                let plane = geom.oh * geom.ow;
                // dy[n, o, plane] → [o, n·plane]
                let mut dy_t = vec![0.0; dy.len()];
                swap_outer(dy, geom.n, out_c, plane, &mut dy_t);
                if self.wants(b) {
                    let db: Vec<f32> = dy_t
                        .chunks_exact(geom.col_cols().max(1))
                        .map(|row| row.iter().map(|&v| v as f64).sum::<f64>() as f32)
                        .collect();
                    accumulate(grads, b, &db);
                }
                if self.wants(w) {
                    let mut col = vec![0.0; geom.col_rows() * geom.col_cols()];
                    im2col(self.value(x), &geom, &mut col);
                    let mut dw = vec![0.0; out_c * geom.col_rows()];
                    gemm(&dy_t, false, &col, true, &mut dw, out_c, geom.col_cols(), geom.col_rows(), false);
                    accumulate(grads, w, &dw);
                }
                if self.wants(x) {
                    let mut dcol = vec![0.0; geom.col_rows() * geom.col_cols()];
                    gemm(self.value(w), true, &dy_t, false, &mut dcol, geom.col_rows(), out_c, geom.col_cols(), false);
                    let mut dx = vec![0.0; self.value(x).len()];
                    col2im(&dcol, &geom, &mut dx);
                    accumulate(grads, x, &dx);
                }
            }
            &Op::AvgPoolGlobal(x) => {
                let s = self.shape(x);
                let hw = s[2] * s[3];
                let mut dx = vec![0.0; self.value(x).len()];
                for (plane, &g) in dx.chunks_exact_mut(hw.max(1)).zip(dy) {
                    plane.fill(g / hw as f32);
                }
                accumulate(grads, x, &dx);
            }
            Op::Concat { inputs, dim } => {
                let (outer, total, inner) = split_at_dim(&node.shape, *dim);
                let mut offset = 0;
                for &v in inputs {
                    let len = self.shape(v)[*dim];
                    if self.wants(v) {
                        let mut dx = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let start = (o * total + offset) * inner;
                            dx.extend_from_slice(&dy[start..start + len * inner]);
                        }
                        accumulate(grads, v, &dx);
                    }
                    offset += len;
                }
            }
            &Op::Reshape(x) => accumulate(grads, x, dy),
            Op::Dot { x, weights } => {
                let dx: Vec<f32> = weights.iter().map(|w| w * dy[0]).collect();
                accumulate(grads, *x, &dx);
            }
            Op::CrossEntropy { logits, targets } => {
                let k = self.shape(*logits)[1];
                let n = targets.len();
                let scale = dy[0] as f64 / n as f64;
                let mut dx = vec![0.0; n * k];
                for ((row, drow), &t) in self.value(*logits).chunks_exact(k).zip(dx.chunks_exact_mut(k)).zip(targets) {
                    let lse = log_sum_exp(row);
                    for (j, (d, &v)) in drow.iter_mut().zip(row).enumerate() {
                        let p = libm::exp(v as f64 - lse);
                        let onehot = if j == t { 1.0 } else { 0.0 };
                        *d = ((p - onehot) * scale) as f32;
                    }
                }
                accumulate(grads, *logits, &dx);
            }
            Op::SmoothL1 { pred, target, row_weights, beta, norm } => {
                let k = self.shape(*pred)[1];
                let mut dx = vec![0.0; target.len()];
                for (i, (d, (p, t))) in dx
                    .chunks_exact_mut(k)
                    .zip(self.value(*pred).chunks_exact(k).zip(target.chunks_exact(k)))
                    .enumerate()
                {
                    let scale = row_weights[i] as f64 * dy[0] as f64 / *norm as f64;
                    for (dd, (&a, &b)) in d.iter_mut().zip(p.iter().zip(t)) {
                        *dd = (scale * smooth_l1_slope((a - b) as f64, *beta as f64)) as f32;
                    }
                }
                accumulate(grads, *pred, &dx);
            }
            Op::RoiAlign { features, plan } => {
                let s = self.shape(*features);
                let (c, hw) = (s[0], s[1] * s[2]);
                let bins = plan.out_h * plan.out_w;
                let mut dx = vec![0.0f32; c * hw];
                for b in 0..plan.boxes {
                    for bin in 0..bins {
                        let taps = plan.taps(b, bin);
                        for ch in 0..c {
                            let g = dy[(b * c + ch) * bins + bin];
                            if g == 0.0 {
                                continue;
                            }
                            let plane = &mut dx[ch * hw..(ch + 1) * hw];
                            for t in taps {
                                plane[t.index as usize] += t.weight * g;
                            }
                        }
                    }
                }
                accumulate(grads, *features, &dx);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f32>>], v: Var, g: &[f32]) {
    match &mut grads[v.0] {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g.to_vec()),
    }
}

fn column_sums(m: &[f32], rows: usize, cols: usize) -> Vec<f32> {
    let mut acc = vec![0.0f64; cols];
    for r in 0..rows {
        for (a, &v) in acc.iter_mut().zip(&m[r * cols..(r + 1) * cols]) {
            *a += v as f64;
        }
    }
    acc.into_iter().map(|v| v as f32).collect()
}

fn log_sum_exp(row: &[f32]) -> f64 {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    max + libm::log(row.iter().map(|&v| libm::exp(v as f64 - max)).sum::<f64>())
}

pub(crate) fn smooth_l1_value(d: f64, beta: f64) -> f64 {
    let a = d.abs();
    if a < beta {
        0.5 * d * d / beta
    } else {
        a - 0.5 * beta
    }
}

fn smooth_l1_slope(d: f64, beta: f64) -> f64 {
    if d.abs() < beta {
        d / beta
    } else if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Leaf gradients produced by [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<(Var, Vec<f32>)>,
    params: Vec<(ParamId, Var)>,
    visited: usize,
}

impl Gradients {
    /// Gradient of a leaf, or `None` when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&[f32]> {
        self.grads
            .binary_search_by_key(&v, |(var, _)| *var)
            .ok()
            .map(|i| self.grads[i].1.as_slice())
    }

    pub fn param(&self, id: ParamId) -> Option<&[f32]> {
        let &(_, v) = self.params.iter().find(|(p, _)| *p == id)?;
        self.get(v)
    }

    /// Number of nodes whose backward rule ran (each at most once).
    pub fn visited(&self) -> usize {
        self.visited
    }

    /// Adds every parameter gradient into `buffer`, scaled.
    pub fn accumulate_into(&self, buffer: &mut GradBuffer, scale: f32) {
        for &(id, v) in &self.params {
            if let Some(g) = self.get(v) {
                buffer.add(id, g, scale);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f32]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_hand_cases() {
        let mut g = Graph::new();
        let i = g.constant(t(&[2, 2], &[1., 0., 0., 1.]));
        let b = g.constant(t(&[2, 2], &[3., 4., 5., 6.]));
        let c = g.matmul(i, b).unwrap();
        assert_eq!(g.value(c), &[3., 4., 5., 6.]);
        let r = g.constant(t(&[1, 2], &[1., 2.]));
        let col = g.constant(t(&[2, 1], &[3., 4.]));
        let p = g.matmul(r, col).unwrap();
        assert_eq!(g.value(p), &[11.]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        let err = g.matmul(a, b).unwrap_err();
        assert_eq!(err, Error::shape("matmul", &[2, 3], &[2, 3]));
        assert!(alloc::format!("{err}").contains("[2, 3] vs [2, 3]"));
    }

    #[test]
    fn softmax_uniform_and_stable() {
        let mut g = Graph::new();
        let z = g.constant(Tensor::zeros(&[4]));
        let s = g.softmax_dim(z, 0).unwrap();
        assert_eq!(g.value(s), &[0.25; 4]);
        let big = g.constant(t(&[2], &[1000., 1000.]));
        let s = g.softmax_dim(big, 0).unwrap();
        assert_eq!(g.value(s), &[0.5, 0.5]);
        assert!(g.softmax_dim(z, 1).is_err());
    }

    #[test]
    fn l1_normalize_cases() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2], &[2., 2.]));
        let y = g.l1_normalize_dim(x, 0, 1e-9).unwrap();
        assert_eq!(g.value(y), &[0.5, 0.5]);
        let z = g.constant(t(&[2], &[0., 0.]));
        let y = g.l1_normalize_dim(z, 0, 1e-9).unwrap();
        assert_eq!(g.value(y), &[0., 0.]);
    }

    #[test]
    fn conv_hand_cases() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn(&[1, 1, 3, 3], |i| i as f32));
        let w = g.constant(Tensor::full(&[1, 1, 1, 1], 1.0));
        let b = g.constant(Tensor::zeros(&[1]));
        let y = g.conv2d(x, w, b, 1, 0).unwrap();
        assert_eq!(g.value(y), g.value(x));

        let ones = g.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
        let k = g.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
        let y = g.conv2d(ones, k, b, 1, 0).unwrap();
        assert_eq!(g.shape(y), &[1, 1, 1, 1]);
        assert_eq!(g.value(y), &[9.0]);
    }

    #[test]
    fn conv_rejects_non_integral_extent() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 1, 4, 4]));
        let w = g.constant(Tensor::zeros(&[1, 1, 3, 3]));
        let b = g.constant(Tensor::zeros(&[1]));
        assert!(matches!(g.conv2d(x, w, b, 2, 0), Err(Error::Invalid { op: "conv2d", .. })));
        let big = g.constant(Tensor::zeros(&[1, 1, 5, 5]));
        assert!(g.conv2d(x, big, b, 1, 0).is_err());
    }

    #[test]
    fn linear_hand_cases() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 2], &[1., 1.]));
        let w = g.constant(t(&[2, 1], &[1., 2.]));
        let b = g.constant(t(&[1], &[3.]));
        let y = g.linear(x, w, b).unwrap();
        assert_eq!(g.value(y), &[6.]);
        let eye = g.constant(t(&[2, 2], &[1., 0., 0., 1.]));
        let zb = g.constant(Tensor::zeros(&[2]));
        let y = g.linear(x, eye, zb).unwrap();
        assert_eq!(g.value(y), &[1., 1.]);
    }

    #[test]
    fn relu_pool_concat_reshape_basics() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 2, 1, 2], &[-1., 2., 3., -4.]));
        let r = g.relu(x).unwrap();
        assert_eq!(g.value(r), &[0., 2., 3., 0.]);
        let p = g.avg_pool_global(x).unwrap();
        assert_eq!(g.value(p), &[0.5, -0.5]);
        let c = g.concat_channels(&[x, r]).unwrap();
        assert_eq!(g.shape(c), &[1, 4, 1, 2]);
        assert_eq!(g.value(c), &[-1., 2., 3., -4., 0., 2., 3., 0.]);
        let f = g.flatten(c).unwrap();
        assert_eq!(g.shape(f), &[1, 8]);
        let bad = g.constant(Tensor::zeros(&[1, 2, 2, 2]));
        assert!(g.concat_channels(&[x, bad]).is_err());
        assert!(g.add(x, bad).is_err());
    }

    #[test]
    fn cross_entropy_uniform_is_ln_k() {
        let mut g = Graph::new();
        let z = g.constant(Tensor::zeros(&[3, 5]));
        let l = g.cross_entropy_with_logits(z, &[0, 4, 2]).unwrap();
        assert!((g.value(l)[0] as f64 - libm::log(5.0)).abs() < 1e-6);
        assert!(g.cross_entropy_with_logits(z, &[0, 5, 2]).is_err());
    }

    #[test]
    fn smooth_l1_zones() {
        let mut g = Graph::new();
        let p = g.constant(t(&[2, 2], &[0.5, 3.0, 1.0, 1.0]));
        let l = g.smooth_l1(p, &[0.0; 4], &[1.0, 0.0], 1.0, 1.0).unwrap();
        // row 0: 0.5·0.25 + (3 − 0.5); row 1 masked out
        assert!((g.value(l)[0] - 2.625).abs() < 1e-6);
    }

    #[test]
    fn diamond_accumulates_both_paths() {
        let mut g = Graph::new();
        let x = g.input(t(&[2], &[1.5, -2.0]), true);
        let a = g.scale(x, 3.0).unwrap();
        let b = g.relu(x).unwrap();
        let c = g.add(a, b).unwrap();
        let l = g.sum(c).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[4.0, 3.0]);
        // x, a, b, c, l each visited once
        assert_eq!(grads.visited(), 5);
    }

    #[test]
    fn non_finite_forward_is_an_error() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1], &[f32::MAX]));
        assert_eq!(g.scale(x, 10.0).unwrap_err(), Error::NonFinite { op: "scale" });
    }

    #[test]
    fn shared_param_node_is_reused() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::full(&[1], 2.0));
        let mut g = Graph::new();
        let a = g.param(&store, id);
        let b = g.param(&store, id);
        assert_eq!(a, b);
        let p = g.add(a, b).unwrap();
        let l = g.sum(p).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.param(id).unwrap(), &[2.0]);
    }
}
