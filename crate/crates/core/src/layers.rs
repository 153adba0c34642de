//! Parameterized linear and convolution layers.

use alloc::format;

use rand::Rng;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::{kaiming_tensor, normal_tensor, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// He-normal, for layers feeding a relu.
    Kaiming,
    /// Zero-mean normal with a fixed standard deviation.
    Normal(f32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearLayer {
    /// `[in_features, out_features]`
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl LinearLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_features: usize,
        out_features: usize,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let shape = [in_features, out_features];
        let w = match init {
            Init::Kaiming => kaiming_tensor(&shape, in_features, rng),
            Init::Normal(std) => normal_tensor(&shape, std, rng),
        };
        Self {
            weight: store.add(format!("{name}.weight"), w),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[out_features])),
            in_features,
            out_features,
        }
    }

    pub fn forward<'p>(&self, graph: &mut Graph<'p>, store: &'p ParamStore, x: Var) -> Result<Var> {
        let w = graph.param(store, self.weight);
        let b = graph.param(store, self.bias);
        graph.linear(x, w, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLayer {
    /// `[out_channels, in_channels, kernel, kernel]`
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let shape = [out_channels, in_channels, kernel, kernel];
        let w = kaiming_tensor(&shape, in_channels * kernel * kernel, rng);
        Self {
            weight: store.add(format!("{name}.weight"), w),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[out_channels])),
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    pub fn forward<'p>(&self, graph: &mut Graph<'p>, store: &'p ParamStore, x: Var) -> Result<Var> {
        let w = graph.param(store, self.weight);
        let b = graph.param(store, self.bias);
        graph.conv2d(x, w, b, self.stride, self.padding)
    }
}
