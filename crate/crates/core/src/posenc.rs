//! Coordinate-channel positional encoding.
//!
//! Two normalized coordinate maps are appended to a `C×H×W` feature map and a
//! 1×1 convolution fuses the `C+2` channels back to `C`. One convolution is
//! shared across every feature level it encodes.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{normal_tensor, ParamId, ParamStore};
use crate::tensor::Tensor;

/// `C_x[row, col] = col / W` and `C_y[row, col] = row / H`, both `H×W`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordMaps {
    pub h: usize,
    pub w: usize,
    pub cx: Tensor,
    pub cy: Tensor,
}

pub fn make_coord_maps(h: usize, w: usize) -> Result<CoordMaps> {
    if h == 0 || w == 0 {
        return Err(Error::invalid("make_coord_maps", format!("extents must be ≥ 1, got {h}×{w}")));
    }
    let cx = Tensor::from_fn(&[h, w], |i| (i % w) as f32 / w as f32);
    let cy = Tensor::from_fn(&[h, w], |i| (i / w) as f32 / h as f32);
    Ok(CoordMaps { h, w, cx, cy })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PosEncoder {
    /// `[C, C+2, 1, 1]`; input channels are the features then `C_x`, `C_y`.
    pub weight: ParamId,
    pub bias: ParamId,
    pub channels: usize,
}

impl PosEncoder {
    /// Starts as a near no-op: identity on the feature channels plus small
    /// noise, zero weight on the coordinate channels, zero bias.
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, channels: usize, rng: &mut R) -> Self {
        let mut weight = normal_tensor(&[channels, channels + 2, 1, 1], 0.01, rng);
        for (o, row) in weight.data_mut().chunks_exact_mut(channels + 2).enumerate() {
            row[o] += 1.0;
            row[channels] = 0.0;
            row[channels + 1] = 0.0;
        }
        Self {
            weight: store.add(format!("{prefix}.weight"), weight),
            bias: store.add(format!("{prefix}.bias"), Tensor::zeros(&[channels])),
            channels,
        }
    }
}

/// Encodes one `C×H×W` map.
pub fn encode<'p>(graph: &mut Graph<'p>, store: &'p ParamStore, x: Var, enc: &PosEncoder) -> Result<Var> {
    let (c, h, w) = match *graph.shape(x) {
        [c, h, w] => (c, h, w),
        ref s => return Err(Error::invalid("encode", format!("expected C×H×W, got {s:?}"))),
    };
    if c != enc.channels {
        return Err(Error::shape("encode", graph.shape(x), &[enc.channels]));
    }
    let maps = make_coord_maps(h, w)?;
    let x4 = graph.reshape(x, &[1, c, h, w])?;
    let cx = graph.constant(maps.cx.reshape(&[1, 1, h, w])?);
    let cy = graph.constant(maps.cy.reshape(&[1, 1, h, w])?);
    let stacked = graph.concat_channels(&[x4, cx, cy])?;
    let weight = graph.param(store, enc.weight);
    let bias = graph.param(store, enc.bias);
    let fused = graph.conv2d(stacked, weight, bias, 1, 0)?;
    graph.reshape(fused, &[c, h, w])
}

/// Encodes several maps of different spatial sizes with the one shared conv.
pub fn encode_levels<'p>(
    graph: &mut Graph<'p>,
    store: &'p ParamStore,
    levels: &[Var],
    enc: &PosEncoder,
) -> Result<Vec<Var>> {
    levels.iter().map(|&x| encode(graph, store, x, enc)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coord_map_definitions() {
        let m = make_coord_maps(1, 1).unwrap();
        assert_eq!(m.cx.data(), &[0.0]);
        assert_eq!(m.cy.data(), &[0.0]);
        let m = make_coord_maps(3, 4).unwrap();
        assert_eq!(&m.cx.data()[..4], &[0.0, 0.25, 0.5, 0.75]);
        let m = make_coord_maps(2, 3).unwrap();
        assert_eq!(m.cy.data(), &[0.0, 0.0, 0.0, 0.5, 0.5, 0.5]);
        assert!(make_coord_maps(0, 3).is_err());
    }

    #[test]
    fn channel_mismatch_is_an_error() {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(1);
        let mut store = ParamStore::new();
        let enc = PosEncoder::new(&mut store, "pe", 3, &mut rng);
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[4, 2, 2]));
        assert!(matches!(encode(&mut g, &store, x, &enc), Err(Error::Shape { .. })));
    }
}
