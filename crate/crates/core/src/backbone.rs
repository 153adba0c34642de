//! Four-layer strided conv stack producing one stride-8 feature level.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::layers::ConvLayer;
use crate::params::ParamStore;

pub const STRIDE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Backbone {
    pub layers: [ConvLayer; 4],
    pub out_channels: usize,
}

impl Backbone {
    /// Three 4×4 stride-2 convs (padding 1, so even maps halve exactly) and a
    /// final 3×3 stride-1 conv, each followed by relu.
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, channels: usize, rng: &mut R) -> Self {
        let c1 = (channels / 4).max(16);
        let c2 = (channels / 2).max(16);
        Self {
            layers: [
                ConvLayer::new(store, "backbone.conv1", 3, c1, 4, 2, 1, rng),
                ConvLayer::new(store, "backbone.conv2", c1, c2, 4, 2, 1, rng),
                ConvLayer::new(store, "backbone.conv3", c2, channels, 4, 2, 1, rng),
                ConvLayer::new(store, "backbone.conv4", channels, channels, 3, 1, 1, rng),
            ],
            out_channels: channels,
        }
    }

    /// `image[3×H×W]` (H, W multiples of 8) to `features[C×H/8×W/8]`.
    pub fn forward<'p>(&self, graph: &mut Graph<'p>, store: &'p ParamStore, image: Var) -> Result<Var> {
        let (h, w) = match *graph.shape(image) {
            [3, h, w] if h % STRIDE == 0 && w % STRIDE == 0 && h > 0 && w > 0 => (h, w),
            ref s => return Err(Error::shape("backbone", s, &[3, STRIDE, STRIDE])),
        };
        let mut x = graph.reshape(image, &[1, 3, h, w])?;
        for layer in &self.layers {
            x = layer.forward(graph, store, x)?;
            x = graph.relu(x)?;
        }
        graph.reshape(x, &[self.out_channels, h / STRIDE, w / STRIDE])
    }
}
