//! External attention across the RoIs of one image.
//!
//! A block owns two learnable memories `M_k, M_v ∈ R^{d×L}`. For RoI features
//! `X ∈ R^{s×L}` it computes
//!
//! ```text
//! A     = DNorm(X·M_kᵀ)        s×d
//! X_out = A·M_v + X            s×L
//! ```
//!
//! where `DNorm` is a softmax over the RoI axis (each memory slot's column sums
//! to one) followed by an L1 normalization over the memory axis (each RoI's
//! row sums to one). Cost is linear in `s`.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{normal_tensor, ParamId, ParamStore};

/// Guard added to each row's L1 norm.
pub const DNORM_EPS: f32 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExternalAttentionBlock {
    pub key_memory: ParamId,
    pub value_memory: ParamId,
    pub d: usize,
    pub l: usize,
}

impl ExternalAttentionBlock {
    /// Registers `M_k, M_v ~ N(0, 1/√L)` under `prefix`.
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, d: usize, l: usize, rng: &mut R) -> Result<Self> {
        if d == 0 || l == 0 {
            return Err(Error::Config(format!("attention memory needs d ≥ 1 and L ≥ 1, got d={d}, L={l}")));
        }
        let std = 1.0 / libm::sqrtf(l as f32);
        let key_memory = store.add(format!("{prefix}.key_memory"), normal_tensor(&[d, l], std, rng));
        let value_memory = store.add(format!("{prefix}.value_memory"), normal_tensor(&[d, l], std, rng));
        Ok(Self {
            key_memory,
            value_memory,
            d,
            l,
        })
    }

    fn check_input(&self, graph: &Graph<'_>, x: Var) -> Result<()> {
        match *graph.shape(x) {
            [s, l] if l == self.l && s >= 1 => Ok(()),
            ref shape => Err(Error::shape("attention", shape, &[self.d, self.l])),
        }
    }
}

/// Softmax over the RoI axis, then L1 over the memory axis, of `scores[s×d]`.
pub fn double_normalize(graph: &mut Graph<'_>, scores: Var) -> Result<Var> {
    if graph.shape(scores).len() != 2 {
        return Err(Error::invalid("double_normalize", "scores must be s×d"));
    }
    let col = graph.softmax_dim(scores, 0)?;
    graph.l1_normalize_dim(col, 1, DNORM_EPS)
}

/// The attention map `A = DNorm(X·M_kᵀ)` for `x[s×L]`.
pub fn attention_scores<'p>(
    graph: &mut Graph<'p>,
    store: &'p ParamStore,
    x: Var,
    block: &ExternalAttentionBlock,
) -> Result<Var> {
    block.check_input(graph, x)?;
    let mk = graph.param(store, block.key_memory);
    let raw = graph.matmul_t(x, mk)?;
    double_normalize(graph, raw)
}

/// `A·M_v + X` for `x[s×L]`.
pub fn attention_forward<'p>(
    graph: &mut Graph<'p>,
    store: &'p ParamStore,
    x: Var,
    block: &ExternalAttentionBlock,
) -> Result<Var> {
    let a = attention_scores(graph, store, x, block)?;
    let mv = graph.param(store, block.value_memory);
    let rebuilt = graph.matmul(a, mv)?;
    graph.add(rebuilt, x)
}

/// Blocks applied in order; all share the same `L`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RoiAttentionStack {
    pub blocks: Vec<ExternalAttentionBlock>,
}

impl RoiAttentionStack {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        d: usize,
        l: usize,
        depth: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let blocks = (0..depth)
            .map(|i| ExternalAttentionBlock::new(store, &format!("{prefix}.{i}"), d, l, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { blocks })
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    pub fn params(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.blocks.iter().flat_map(|b| [b.key_memory, b.value_memory])
    }
}

/// Flattens `x[s×c×h×w]` to `s×L`, runs every block, and restores the shape.
pub fn stack_forward<'p>(
    graph: &mut Graph<'p>,
    store: &'p ParamStore,
    x: Var,
    stack: &RoiAttentionStack,
) -> Result<Var> {
    let shape = graph.shape(x).to_vec();
    let (s, l) = match *shape.as_slice() {
        [s, c, h, w] => (s, c * h * w),
        ref other => return Err(Error::invalid("stack_forward", format!("expected s×c×h×w, got {other:?}"))),
    };
    if stack.blocks.is_empty() {
        return Ok(x);
    }
    if let Some(b) = stack.blocks.iter().find(|b| b.l != l) {
        return Err(Error::shape("stack_forward", &shape, &[b.d, b.l]));
    }
    let mut h = graph.reshape(x, &[s, l])?;
    for block in &stack.blocks {
        h = attention_forward(graph, store, h, block)?;
    }
    graph.reshape(h, &shape)
}

/// Plain dense self-attention `softmax(X·Xᵀ/√L)·X + X`, the quadratic
/// comparator for the complexity benchmark.
pub fn dense_self_attention(graph: &mut Graph<'_>, x: Var) -> Result<Var> {
    let l = match *graph.shape(x) {
        [_, l] => l,
        ref s => return Err(Error::invalid("dense_self_attention", format!("expected s×L, got {s:?}"))),
    };
    let raw = graph.matmul_t(x, x)?;
    let scaled = graph.scale(raw, 1.0 / libm::sqrtf(l as f32))?;
    let a = graph.softmax_dim(scaled, 1)?;
    let mixed = graph.matmul(a, x)?;
    graph.add(mixed, x)
}

/// Multiply-accumulates of one external-attention block: `2·s·d·L` for the two
/// memory products plus `O(s·d)` normalization and `s·L` residual work.
pub fn external_attention_macs(s: u64, l: u64, d: u64) -> u64 {
    2 * s * d * l + 3 * s * d + s * l
}

/// Multiply-accumulates of [`dense_self_attention`]: `2·s²·L + O(s²) + s·L`.
pub fn dense_attention_macs(s: u64, l: u64) -> u64 {
    2 * s * s * l + 3 * s * s + s * l
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(d: usize, l: usize, depth: usize) -> (ParamStore, RoiAttentionStack) {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut store = ParamStore::new();
        let stack = RoiAttentionStack::new(&mut store, "attn", d, l, depth, &mut rng).unwrap();
        (store, stack)
    }

    #[test]
    fn double_normalize_hand_cases() {
        let mut g = Graph::new();
        let one = g.constant(Tensor::scalar(3.7).reshape(&[1, 1]).unwrap());
        let y = double_normalize(&mut g, one).unwrap();
        assert!((g.value(y)[0] - 1.0).abs() < 1e-7);

        let z = g.constant(Tensor::zeros(&[2, 2]));
        let y = double_normalize(&mut g, z).unwrap();
        assert_eq!(g.value(y), &[0.5; 4]);

        let ln2 = core::f32::consts::LN_2;
        let x = g.constant(Tensor::new(&[2, 2], alloc::vec![ln2, 0.0, 0.0, ln2]).unwrap());
        let y = double_normalize(&mut g, x).unwrap();
        let want = [2.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 2.0 / 3.0];
        for (a, b) in g.value(y).iter().zip(want) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_input_gives_uniform_rows() {
        let (store, stack) = setup(5, 12, 1);
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[3, 12]));
        let a = attention_scores(&mut g, &store, x, &stack.blocks[0]).unwrap();
        assert!(g.value(a).iter().all(|&v| (v - 0.2).abs() < 1e-6));
    }

    #[test]
    fn single_roi_row_sums_to_one() {
        let (store, stack) = setup(10, 8, 1);
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn(&[1, 8], |i| (i as f32 * 1.7).sin() * 4.0));
        let a = attention_scores(&mut g, &store, x, &stack.blocks[0]).unwrap();
        let total: f32 = g.value(a).iter().sum();
        assert!((total - 1.0).abs() < 1e-6);
    }

    #[test]
    fn zero_value_memory_is_identity() {
        let (mut store, stack) = setup(4, 2 * 3 * 3, 2);
        for b in &stack.blocks {
            store.get_mut(b.value_memory).data_mut().fill(0.0);
        }
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn(&[5, 2, 3, 3], |i| (i as f32 * 0.37).cos()));
        let y = stack_forward(&mut g, &store, x, &stack).unwrap();
        assert_eq!(g.value(y), g.value(x));
        assert_eq!(g.shape(y), g.shape(x));
    }

    #[test]
    fn empty_stack_is_identity_and_l_mismatch_errors() {
        let (store, _) = setup(4, 8, 0);
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn(&[2, 2, 2, 2], |i| i as f32));
        let y = stack_forward(&mut g, &store, x, &RoiAttentionStack::default()).unwrap();
        assert_eq!(g.value(y), g.value(x));

        let (store, stack) = setup(4, 9, 1);
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[2, 2, 2, 2]));
        assert!(matches!(stack_forward(&mut g, &store, x, &stack), Err(Error::Shape { .. })));
        let flat = g.constant(Tensor::zeros(&[2, 8]));
        assert!(attention_forward(&mut g, &store, flat, &stack.blocks[0]).is_err());
    }

    #[test]
    fn invalid_memory_sizes_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        assert!(ExternalAttentionBlock::new(&mut store, "a", 0, 4, &mut rng).is_err());
        assert!(ExternalAttentionBlock::new(&mut store, "b", 4, 0, &mut rng).is_err());
    }

    #[test]
    fn mac_counts_scale_as_claimed() {
        let (l, d) = (256, 10);
        assert_eq!(external_attention_macs(2048, l, d), 4 * external_attention_macs(512, l, d));
        assert_eq!(4 * dense_attention_macs(512, l) - dense_attention_macs(1024, l), 4 * 512 * l - 1024 * l);
        assert!(dense_attention_macs(1024, l) >= 2 * 1024 * 1024 * l);
    }
}
