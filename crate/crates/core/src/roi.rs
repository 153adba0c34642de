//! Box scaling and RoIAlign crop-and-resize.
//!
//! Coordinates are continuous and half-open: a box `[x1, x2)` covers feature
//! cells whose centers lie at `j + 0.5`. Bilinear sampling is pixel-center
//! aligned and clamps to the border cells, so constant maps are reproduced
//! exactly everywhere.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxXYXY {
    pub x1: f32,
    pub y1: f32,
    pub x2: f32,
    pub y2: f32,
}

impl BoxXYXY {
    pub const fn new(x1: f32, y1: f32, x2: f32, y2: f32) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn from_center(cx: f32, cy: f32, w: f32, h: f32) -> Self {
        Self::new(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)
    }

    pub fn width(&self) -> f32 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f32 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f32 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f32, f32) {
        (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))
    }

    pub fn is_valid(&self) -> bool {
        [self.x1, self.y1, self.x2, self.y2].iter().all(|v| v.is_finite())
            && self.x2 > self.x1
            && self.y2 > self.y1
    }

    pub fn clip(&self, image_w: f32, image_h: f32) -> Self {
        Self::new(
            self.x1.clamp(0.0, image_w),
            self.y1.clamp(0.0, image_h),
            self.x2.clamp(0.0, image_w),
            self.y2.clamp(0.0, image_h),
        )
    }

    pub fn contains(&self, other: &BoxXYXY) -> bool {
        self.x1 <= other.x1 && self.y1 <= other.y1 && self.x2 >= other.x2 && self.y2 >= other.y2
    }
}

/// Scales `b` about its center by `factor`, then clips to the image.
pub fn scale_box(b: &BoxXYXY, factor: f32, image_w: f32, image_h: f32) -> Result<BoxXYXY> {
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::invalid("scale_box", alloc::format!("factor must be positive, got {factor}")));
    }
    if factor == 1.0 {
        return Ok(b.clip(image_w, image_h));
    }
    let (cx, cy) = b.center();
    let (hw, hh) = (0.5 * b.width() * factor, 0.5 * b.height() * factor);
    Ok(BoxXYXY::new(cx - hw, cy - hh, cx + hw, cy + hh).clip(image_w, image_h))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoiGrid {
    pub out_h: usize,
    pub out_w: usize,
    /// Feature-map cells per image pixel (reciprocal of the backbone stride).
    pub spatial_scale: f32,
    /// Bilinear samples per bin along each axis.
    pub sampling: usize,
}

impl RoiGrid {
    pub fn new(out: usize, spatial_scale: f32) -> Self {
        Self {
            out_h: out,
            out_w: out,
            spatial_scale,
            sampling: 2,
        }
    }
}

impl Default for RoiGrid {
    fn default() -> Self {
        Self::new(7, 1.0 / 8.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Tap {
    pub index: u32,
    pub weight: f32,
}

/// Precomputed bilinear taps for a batch of boxes on one map size.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct RoiPlan {
    pub boxes: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub map_h: usize,
    pub map_w: usize,
    taps_per_bin: usize,
    taps: Vec<Tap>,
}

impl RoiPlan {
    pub fn taps(&self, b: usize, bin: usize) -> &[Tap] {
        let start = (b * self.out_h * self.out_w + bin) * self.taps_per_bin;
        &self.taps[start..start + self.taps_per_bin]
    }

    fn build(boxes: &[BoxXYXY], grid: &RoiGrid, map_h: usize, map_w: usize) -> Result<Self> {
        if grid.out_h == 0 || grid.out_w == 0 || grid.sampling == 0 {
            return Err(Error::invalid("roi_align", "grid extents and sampling must be positive"));
        }
        if !(grid.spatial_scale > 0.0) {
            return Err(Error::invalid("roi_align", "spatial scale must be positive"));
        }
        let s = grid.sampling;
        let taps_per_bin = s * s * 4;
        let norm = 1.0 / (s * s) as f32;
        let (img_w, img_h) = (map_w as f32 / grid.spatial_scale, map_h as f32 / grid.spatial_scale);
        let mut taps = Vec::with_capacity(boxes.len() * grid.out_h * grid.out_w * taps_per_bin);
        for (index, raw) in boxes.iter().enumerate() {
            let b = raw.clip(img_w, img_h);
            if !b.is_valid() {
                return Err(Error::DegenerateBox { index, bbox: *raw });
            }
            let (x0, y0) = (b.x1 * grid.spatial_scale, b.y1 * grid.spatial_scale);
            let bin_w = b.width() * grid.spatial_scale / grid.out_w as f32;
            let bin_h = b.height() * grid.spatial_scale / grid.out_h as f32;
            for ph in 0..grid.out_h {
                for pw in 0..grid.out_w {
                    for iy in 0..s {
                        let y = y0 + (ph as f32 + (iy as f32 + 0.5) / s as f32) * bin_h;
                        let (ylo, yhi, ly) = bilinear_axis(y, map_h);
                        for ix in 0..s {
                            let x = x0 + (pw as f32 + (ix as f32 + 0.5) / s as f32) * bin_w;
                            let (xlo, xhi, lx) = bilinear_axis(x, map_w);
                            for (yy, wy) in [(ylo, 1.0 - ly), (yhi, ly)] {
                                for (xx, wx) in [(xlo, 1.0 - lx), (xhi, lx)] {
                                    taps.push(Tap {
                                        index: (yy * map_w + xx) as u32,
                                        weight: wy * wx * norm,
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(Self {
            boxes: boxes.len(),
            out_h: grid.out_h,
            out_w: grid.out_w,
            map_h,
            map_w,
            taps_per_bin,
            taps,
        })
    }
}

/// Neighbouring cell indices and the fractional weight of the upper one for a
/// continuous coordinate `pos` on an axis of `len` cells.
pub(crate) fn bilinear_axis(pos: f32, len: usize) -> (usize, usize, f32) {
    let u = (pos - 0.5).clamp(0.0, (len - 1) as f32);
    let lo = libm::floorf(u) as usize;
    let hi = (lo + 1).min(len - 1);
    (lo, hi, u - lo as f32)
}

/// RoIAlign of every box over `features[c×h×w]`, giving `[s, c, out_h, out_w]`.
/// Boxes are in image pixels; they are clipped to the image implied by the map
/// size and the grid's spatial scale.
pub fn roi_align(graph: &mut Graph<'_>, features: Var, boxes: &[BoxXYXY], grid: &RoiGrid) -> Result<Var> {
    let (h, w) = match *graph.shape(features) {
        [_, h, w] => (h, w),
        ref s => return Err(Error::invalid("roi_align", alloc::format!("features must be c×h×w, got {s:?}"))),
    };
    let plan = RoiPlan::build(boxes, grid, h, w)?;
    graph.roi_align_plan(features, plan)
}

/// Crops the classification RoIs at scale 1 and the regression RoIs at
/// `reg_scale` (both clipped to the image) from their respective maps.
pub fn extract_dual(
    graph: &mut Graph<'_>,
    features_cls: Var,
    features_reg: Var,
    boxes: &[BoxXYXY],
    grid: &RoiGrid,
    reg_scale: f32,
) -> Result<(Var, Var)> {
    if graph.shape(features_cls) != graph.shape(features_reg) {
        return Err(Error::shape("extract_dual", graph.shape(features_cls), graph.shape(features_reg)));
    }
    let (img_w, img_h) = image_extent(graph.shape(features_cls), grid)?;
    let cls_boxes = boxes
        .iter()
        .map(|b| scale_box(b, 1.0, img_w, img_h))
        .collect::<Result<Vec<_>>>()?;
    let reg_boxes = boxes
        .iter()
        .map(|b| scale_box(b, reg_scale, img_w, img_h))
        .collect::<Result<Vec<_>>>()?;
    let cls = roi_align(graph, features_cls, &cls_boxes, grid)?;
    let reg = roi_align(graph, features_reg, &reg_boxes, grid)?;
    Ok((cls, reg))
}

fn image_extent(shape: &[usize], grid: &RoiGrid) -> Result<(f32, f32)> {
    match *shape {
        [_, h, w] => Ok((w as f32 / grid.spatial_scale, h as f32 / grid.spatial_scale)),
        ref s => Err(Error::invalid("extract_dual", alloc::format!("features must be c×h×w, got {s:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn scale_box_cases() {
        let b = BoxXYXY::new(10., 10., 30., 30.);
        assert_eq!(scale_box(&b, 1.0, 100., 100.).unwrap(), b);
        assert_eq!(scale_box(&b, 1.3, 100., 100.).unwrap(), BoxXYXY::new(7., 7., 33., 33.));
        let corner = BoxXYXY::new(0., 0., 20., 20.);
        assert_eq!(scale_box(&corner, 1.3, 100., 100.).unwrap(), BoxXYXY::new(0., 0., 23., 23.));
        assert!(scale_box(&b, 0.0, 100., 100.).is_err());
    }

    #[test]
    fn constant_map_is_reproduced() {
        let mut g = Graph::new();
        let f = g.constant(Tensor::full(&[2, 6, 5], 3.25));
        let grid = RoiGrid::new(7, 0.25);
        let boxes = [BoxXYXY::new(0.5, 1.0, 19.0, 23.5), BoxXYXY::new(3., 3., 4., 4.)];
        let out = roi_align(&mut g, f, &boxes, &grid).unwrap();
        assert_eq!(g.shape(out), &[2, 2, 7, 7]);
        assert!(g.value(out).iter().all(|&v| (v - 3.25).abs() < 1e-6));
    }

    #[test]
    fn single_cell_box_reads_that_cell() {
        let mut g = Graph::new();
        let f = g.constant(Tensor::from_fn(&[1, 4, 4], |i| i as f32));
        let grid = RoiGrid { out_h: 1, out_w: 1, spatial_scale: 1.0, sampling: 1 };
        let out = roi_align(&mut g, f, &[BoxXYXY::new(2., 1., 3., 2.)], &grid).unwrap();
        assert_eq!(g.value(out), &[6.0]);
    }

    #[test]
    fn degenerate_box_is_reported() {
        let mut g = Graph::new();
        let f = g.constant(Tensor::zeros(&[1, 4, 4]));
        let grid = RoiGrid::new(2, 1.0);
        let boxes = [BoxXYXY::new(0., 0., 2., 2.), BoxXYXY::new(5., 1., 9., 3.)];
        match roi_align(&mut g, f, &boxes, &grid) {
            Err(Error::DegenerateBox { index: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dual_extraction_edge_cases() {
        let mut g = Graph::new();
        let f = g.constant(Tensor::from_fn(&[2, 8, 8], |i| (i % 13) as f32));
        let grid = RoiGrid::new(3, 0.5);
        let (a, b) = extract_dual(&mut g, f, f, &[], &grid, 1.3).unwrap();
        assert_eq!(g.shape(a), &[0, 2, 3, 3]);
        assert_eq!(g.shape(b), &[0, 2, 3, 3]);
        let boxes = [BoxXYXY::new(1., 2., 9., 12.)];
        let (a, b) = extract_dual(&mut g, f, f, &boxes, &grid, 1.0).unwrap();
        assert_eq!(g.value(a), g.value(b));
    }
}
