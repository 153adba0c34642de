//! Second-stage heads: the 2fc single head and the double head.
//!
//! The double head crops RoIs twice. Classification RoIs go through the shared
//! attention stack, are flattened and pass two linear layers. Regression RoIs
//! go through the same attention stack, two residual bottlenecks
//! (3×3 conv to `reg_mid`, 1×1 conv to `reg_out`, 1×1 identity projection),
//! global average pooling and a linear layer to four class-agnostic deltas.

use alloc::format;

use rand::Rng;

use crate::attention::{stack_forward, RoiAttentionStack};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::layers::{ConvLayer, Init, LinearLayer};
use crate::params::ParamStore;

/// Channel and width plan of a head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadWidths {
    /// Channels of the RoI features (backbone output).
    pub channels: usize,
    /// RoI side length.
    pub roi_size: usize,
    /// Channels of each bottleneck's 3×3 conv.
    pub reg_mid: usize,
    /// Channels of each bottleneck's 1×1 conv and identity projection.
    pub reg_out: usize,
    /// Width of the hidden fully connected layers.
    pub fc_hidden: usize,
}

impl HeadWidths {
    /// 256-channel 7×7 RoIs, 3×3×256 / 1×1×1024 bottlenecks, 1024-wide fc layers.
    pub const FULL_SCALE: HeadWidths = HeadWidths {
        channels: 256,
        roi_size: 7,
        reg_mid: 256,
        reg_out: 1024,
        fc_hidden: 1024,
    };

    /// Flattened RoI feature length `L = c·h·w`.
    pub fn roi_len(&self) -> usize {
        self.channels * self.roi_size * self.roi_size
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bottleneck {
    pub conv3x3: ConvLayer,
    pub conv1x1: ConvLayer,
    pub identity: ConvLayer,
}

impl Bottleneck {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, input: usize, mid: usize, out: usize, rng: &mut R) -> Self {
        Self {
            conv3x3: ConvLayer::new(store, &format!("{name}.conv3x3"), input, mid, 3, 1, 1, rng),
            conv1x1: ConvLayer::new(store, &format!("{name}.conv1x1"), mid, out, 1, 1, 0, rng),
            identity: ConvLayer::new(store, &format!("{name}.identity"), input, out, 1, 1, 0, rng),
        }
    }

    /// `relu(conv1x1(relu(conv3x3(x))) + identity(x))`
    pub fn forward<'p>(&self, graph: &mut Graph<'p>, store: &'p ParamStore, x: Var) -> Result<Var> {
        let a = self.conv3x3.forward(graph, store, x)?;
        let a = graph.relu(a)?;
        let b = self.conv1x1.forward(graph, store, a)?;
        let id = self.identity.forward(graph, store, x)?;
        let sum = graph.add(b, id)?;
        graph.relu(sum)
    }
}

/// Class logits `s×(K+1)` and class-agnostic deltas `s×4`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadOutput {
    pub class_logits: Var,
    pub box_deltas: Var,
}

fn roi_count(graph: &Graph<'_>, rois: Var, widths: &HeadWidths, op: &'static str) -> Result<usize> {
    let want = [widths.channels, widths.roi_size, widths.roi_size];
    match *graph.shape(rois) {
        [s, c, h, w] if [c, h, w] == want => {
            if s == 0 {
                Err(Error::invalid(op, "at least one RoI is required"))
            } else {
                Ok(s)
            }
        }
        ref other => Err(Error::shape(op, other, &want)),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DoubleHeadParams {
    pub widths: HeadWidths,
    /// One stack, referenced by both branches.
    pub shared_attention: RoiAttentionStack,
    pub attach_attention_cls: bool,
    pub attach_attention_reg: bool,
    pub cls_fc1: LinearLayer,
    pub cls_fc2: LinearLayer,
    pub reg_blocks: [Bottleneck; 2],
    pub reg_out: LinearLayer,
}

impl DoubleHeadParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        widths: HeadWidths,
        num_classes: usize,
        d: usize,
        depth: usize,
        attach_attention_cls: bool,
        attach_attention_reg: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let shared_attention = if attach_attention_cls || attach_attention_reg {
            RoiAttentionStack::new(store, "head.attention", d, widths.roi_len(), depth, rng)?
        } else {
            RoiAttentionStack::default()
        };
        let w = widths;
        Ok(Self {
            widths,
            shared_attention,
            attach_attention_cls,
            attach_attention_reg,
            cls_fc1: LinearLayer::new(store, "head.cls_fc1", w.roi_len(), w.fc_hidden, Init::Kaiming, rng),
            cls_fc2: LinearLayer::new(store, "head.cls_fc2", w.fc_hidden, num_classes + 1, Init::Normal(0.01), rng),
            reg_blocks: [
                Bottleneck::new(store, "head.reg_block0", w.channels, w.reg_mid, w.reg_out, rng),
                Bottleneck::new(store, "head.reg_block1", w.reg_out, w.reg_mid, w.reg_out, rng),
            ],
            reg_out: LinearLayer::new(store, "head.reg_out", w.reg_out, 4, Init::Normal(0.001), rng),
        })
    }

    /// `attention → flatten → linear → relu → linear`
    pub fn forward_cls<'p>(&self, graph: &mut Graph<'p>, store: &'p ParamStore, rois: Var) -> Result<Var> {
        roi_count(graph, rois, &self.widths, "forward_cls")?;
        let x = if self.attach_attention_cls {
            stack_forward(graph, store, rois, &self.shared_attention)?
        } else {
            rois
        };
        let x = graph.flatten(x)?;
        let h = self.cls_fc1.forward(graph, store, x)?;
        let h = graph.relu(h)?;
        self.cls_fc2.forward(graph, store, h)
    }

    /// `attention → bottleneck ×2 → average pool → linear`
    pub fn forward_reg<'p>(&self, graph: &mut Graph<'p>, store: &'p ParamStore, rois: Var) -> Result<Var> {
        roi_count(graph, rois, &self.widths, "forward_reg")?;
        let mut x = if self.attach_attention_reg {
            stack_forward(graph, store, rois, &self.shared_attention)?
        } else {
            rois
        };
        for block in &self.reg_blocks {
            x = block.forward(graph, store, x)?;
        }
        let pooled = graph.avg_pool_global(x)?;
        self.reg_out.forward(graph, store, pooled)
    }

    pub fn head_forward<'p>(
        &self,
        graph: &mut Graph<'p>,
        store: &'p ParamStore,
        cls_rois: Var,
        reg_rois: Var,
    ) -> Result<HeadOutput> {
        let (sc, sr) = (graph.shape(cls_rois)[0], graph.shape(reg_rois)[0]);
        if sc != sr {
            return Err(Error::shape("head_forward", graph.shape(cls_rois), graph.shape(reg_rois)));
        }
        Ok(HeadOutput {
            class_logits: self.forward_cls(graph, store, cls_rois)?,
            box_deltas: self.forward_reg(graph, store, reg_rois)?,
        })
    }

    /// `(kernel, in, out)` of every regression-branch conv, in execution order
    /// per block: 3×3, 1×1, identity.
    pub fn reg_channel_plan(&self) -> [(usize, usize, usize); 6] {
        let c = |l: &ConvLayer| (l.kernel, l.in_channels, l.out_channels);
        let [a, b] = &self.reg_blocks;
        [c(&a.conv3x3), c(&a.conv1x1), c(&a.identity), c(&b.conv3x3), c(&b.conv1x1), c(&b.identity)]
    }
}

/// Faster R-CNN style head: optional attention, two shared fc layers, then
/// sibling classification and regression layers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SingleHeadParams {
    pub widths: HeadWidths,
    pub attention: Option<RoiAttentionStack>,
    pub fc1: LinearLayer,
    pub fc2: LinearLayer,
    pub cls: LinearLayer,
    pub reg: LinearLayer,
}

impl SingleHeadParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        widths: HeadWidths,
        num_classes: usize,
        attention: Option<(usize, usize)>,
        rng: &mut R,
    ) -> Result<Self> {
        let attention = match attention {
            Some((d, depth)) => Some(RoiAttentionStack::new(store, "head.attention", d, widths.roi_len(), depth, rng)?),
            None => None,
        };
        let w = widths;
        Ok(Self {
            widths,
            attention,
            fc1: LinearLayer::new(store, "head.fc1", w.roi_len(), w.fc_hidden, Init::Kaiming, rng),
            fc2: LinearLayer::new(store, "head.fc2", w.fc_hidden, w.fc_hidden, Init::Kaiming, rng),
            cls: LinearLayer::new(store, "head.cls", w.fc_hidden, num_classes + 1, Init::Normal(0.01), rng),
            reg: LinearLayer::new(store, "head.reg", w.fc_hidden, 4, Init::Normal(0.001), rng),
        })
    }

    pub fn forward<'p>(&self, graph: &mut Graph<'p>, store: &'p ParamStore, rois: Var) -> Result<HeadOutput> {
        roi_count(graph, rois, &self.widths, "single_head")?;
        let x = match &self.attention {
            Some(stack) => stack_forward(graph, store, rois, stack)?,
            None => rois,
        };
        let x = graph.flatten(x)?;
        let h = self.fc1.forward(graph, store, x)?;
        let h = graph.relu(h)?;
        let h = self.fc2.forward(graph, store, h)?;
        let h = graph.relu(h)?;
        Ok(HeadOutput {
            class_logits: self.cls.forward(graph, store, h)?,
            box_deltas: self.reg.forward(graph, store, h)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const TINY: HeadWidths = HeadWidths {
        channels: 4,
        roi_size: 7,
        reg_mid: 6,
        reg_out: 8,
        fc_hidden: 10,
    };

    fn tiny_head(store: &mut ParamStore) -> DoubleHeadParams {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        DoubleHeadParams::new(store, TINY, 4, 4, 1, true, true, &mut rng).unwrap()
    }

    #[test]
    fn zero_cls_weights_give_zero_logits() {
        let mut store = ParamStore::new();
        let head = tiny_head(&mut store);
        for id in [head.cls_fc2.weight, head.cls_fc2.bias] {
            store.get_mut(id).data_mut().fill(0.0);
        }
        let mut g = Graph::new();
        let rois = g.constant(Tensor::from_fn(&[3, 4, 7, 7], |i| (i as f32 * 0.1).sin()));
        let logits = head.forward_cls(&mut g, &store, rois).unwrap();
        assert_eq!(g.shape(logits), &[3, 5]);
        assert!(g.value(logits).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicated_roi_matches_single_roi() {
        let mut store = ParamStore::new();
        let head = tiny_head(&mut store);
        let one = Tensor::from_fn(&[1, 4, 7, 7], |i| (i as f32 * 0.3).cos());
        let mut two = one.data().to_vec();
        two.extend_from_slice(one.data());
        let mut g = Graph::new();
        let a = g.constant(one);
        let b = g.constant(Tensor::new(&[2, 4, 7, 7], two).unwrap());
        let ya = head.forward_cls(&mut g, &store, a).unwrap();
        let yb = head.forward_cls(&mut g, &store, b).unwrap();
        let (ra, rb) = (g.value(ya).to_vec(), g.value(yb).to_vec());
        assert_eq!(&rb[..5], &rb[5..]);
        for (x, y) in ra.iter().zip(&rb[..5]) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_input_zero_biases_zero_value_memory_gives_zero_deltas() {
        let mut store = ParamStore::new();
        let head = tiny_head(&mut store);
        let biases: alloc::vec::Vec<_> = store.iter().filter(|(_, p)| p.name.ends_with(".bias")).map(|(id, _)| id).collect();
        for id in biases {
            store.get_mut(id).data_mut().fill(0.0);
        }
        for id in head.shared_attention.blocks.iter().map(|b| b.value_memory) {
            store.get_mut(id).data_mut().fill(0.0);
        }
        let mut g = Graph::new();
        let rois = g.constant(Tensor::zeros(&[2, 4, 7, 7]));
        let deltas = head.forward_reg(&mut g, &store, rois).unwrap();
        assert_eq!(g.shape(deltas), &[2, 4]);
        assert!(g.value(deltas).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zeroed_conv_path_leaves_identity_projection() {
        let mut store = ParamStore::new();
        let head = tiny_head(&mut store);
        let block = head.reg_blocks[0];
        for id in [block.conv1x1.weight, block.conv1x1.bias] {
            store.get_mut(id).data_mut().fill(0.0);
        }
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn(&[2, 4, 7, 7], |i| (i as f32 * 0.7).sin()));
        let out = block.forward(&mut g, &store, x).unwrap();
        let id = block.identity.forward(&mut g, &store, x).unwrap();
        let id = g.relu(id).unwrap();
        assert_eq!(g.value(out), g.value(id));
    }

    #[test]
    fn full_scale_channel_plan() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let head = DoubleHeadParams::new(&mut store, HeadWidths::FULL_SCALE, 4, 10, 1, true, true, &mut rng).unwrap();
        assert_eq!(
            head.reg_channel_plan(),
            [(3, 256, 256), (1, 256, 1024), (1, 256, 1024), (3, 1024, 256), (1, 256, 1024), (1, 1024, 1024)]
        );
        assert_eq!(head.cls_fc1.in_features, 256 * 7 * 7);
        assert_eq!(head.cls_fc1.out_features, 1024);
    }

    #[test]
    fn roi_count_mismatch_and_empty_rejected() {
        let mut store = ParamStore::new();
        let head = tiny_head(&mut store);
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 4, 7, 7]));
        let b = g.constant(Tensor::zeros(&[3, 4, 7, 7]));
        assert!(head.head_forward(&mut g, &store, a, b).is_err());
        let empty = g.constant(Tensor::zeros(&[0, 4, 7, 7]));
        assert!(head.forward_cls(&mut g, &store, empty).is_err());
    }
}
