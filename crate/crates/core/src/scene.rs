//! Deterministic synthetic 4-class shape scenes, proposal generation and
//! second-stage target assignment.
//!
//! Classes: 0 disc, 1 ring, 2 star, 3 ellipse, drawn in bright random colors
//! over a dark smooth-noise texture. Every scene is a pure function of its seed.

use alloc::vec;
use alloc::vec::Vec;
use core::f32::consts::PI;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::boxes::{encode_deltas, iou};
use crate::roi::BoxXYXY;
use crate::tensor::Tensor;
use crate::{BACKGROUND, NUM_CLASSES};

pub const IMAGE_SIZE: usize = 128;
pub const MAX_OBJECTS: usize = 6;
pub const CLASS_NAMES: [&str; NUM_CLASSES] = ["disc", "ring", "star", "ellipse"];

const MIN_SIZE: f32 = 20.0;
const MAX_SIZE: f32 = 52.0;
const MAX_PLACEMENT_OVERLAP: f32 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtObject {
    pub class: usize,
    pub bbox: BoxXYXY,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    /// `3×128×128`, values in `[0, 1]`.
    pub image: Tensor,
    pub objects: Vec<GtObject>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Eval,
}

/// Seed of scene `index` in a split. Splits never share seeds for the same base.
pub fn scene_seed(base: u64, split: Split, index: usize) -> u64 {
    let tag: u64 = match split {
        Split::Train => 0x5452_4149_4e00_0000,
        Split::Val => 0x5641_4c00_0000_0000,
        Split::Eval => 0x4556_414c_0000_0000,
    };
    splitmix(base ^ tag).wrapping_add(index as u64)
}

/// Derives an independent stream seed from `(seed, salt)`.
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    splitmix(seed ^ splitmix(salt))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

enum Shape {
    Disc { r: f32 },
    Ring { r: f32, inner: f32 },
    Star { vertices: [(f32, f32); 10] },
    Ellipse { a: f32, b: f32 },
}

impl Shape {
    fn random<R: Rng + ?Sized>(class: usize, rng: &mut R) -> Self {
        let size = rng.random_range(MIN_SIZE..MAX_SIZE);
        let r = 0.5 * size;
        match class {
            0 => Shape::Disc { r },
            1 => Shape::Ring { r, inner: r * rng.random_range(0.45..0.6) },
            2 => {
                let rot = rng.random_range(0.0..2.0 * PI);
                let mut vertices = [(0.0, 0.0); 10];
                for (k, v) in vertices.iter_mut().enumerate() {
                    let rad = if k % 2 == 0 { r } else { 0.45 * r };
                    let ang = rot + k as f32 * PI / 5.0;
                    *v = (rad * libm::cosf(ang), rad * libm::sinf(ang));
                }
                Shape::Star { vertices }
            }
            _ => {
                let minor = r * rng.random_range(0.45..0.65);
                if rng.random_bool(0.5) {
                    Shape::Ellipse { a: r, b: minor }
                } else {
                    Shape::Ellipse { a: minor, b: r }
                }
            }
        }
    }

    /// Extent relative to the center: `(min_x, min_y, max_x, max_y)`.
    fn extent(&self) -> (f32, f32, f32, f32) {
        match *self {
            Shape::Disc { r } | Shape::Ring { r, .. } => (-r, -r, r, r),
            Shape::Ellipse { a, b } => (-a, -b, a, b),
            Shape::Star { vertices } => vertices.iter().fold(
                (f32::MAX, f32::MAX, f32::MIN, f32::MIN),
                |(x0, y0, x1, y1), &(x, y)| (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
            ),
        }
    }

    fn contains(&self, dx: f32, dy: f32) -> bool {
        match *self {
            Shape::Disc { r } => dx * dx + dy * dy <= r * r,
            Shape::Ring { r, inner } => {
                let q = dx * dx + dy * dy;
                q <= r * r && q >= inner * inner
            }
            Shape::Ellipse { a, b } => (dx / a) * (dx / a) + (dy / b) * (dy / b) <= 1.0,
            Shape::Star { vertices } => point_in_polygon(&vertices, dx, dy),
        }
    }
}

fn point_in_polygon(poly: &[(f32, f32)], x: f32, y: f32) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn background<R: Rng + ?Sized>(rng: &mut R) -> Vec<f32> {
    const GRID: usize = 5;
    let n = IMAGE_SIZE;
    let mut img = vec![0.0f32; 3 * n * n];
    for ch in 0..3 {
        let coarse: Vec<f32> = (0..GRID * GRID).map(|_| rng.random_range(0.05..0.35)).collect();
        for y in 0..n {
            let gy = y as f32 / (n - 1) as f32 * (GRID - 1) as f32;
            let (y0, ty) = (libm::floorf(gy).min((GRID - 2) as f32) as usize, 0.0);
            let ty = gy - y0 as f32 + ty;
            for x in 0..n {
                let gx = x as f32 / (n - 1) as f32 * (GRID - 1) as f32;
                let x0 = libm::floorf(gx).min((GRID - 2) as f32) as usize;
                let tx = gx - x0 as f32;
                let at = |yy: usize, xx: usize| coarse[yy * GRID + xx];
                let v = (1.0 - ty) * ((1.0 - tx) * at(y0, x0) + tx * at(y0, x0 + 1))
                    + ty * ((1.0 - tx) * at(y0 + 1, x0) + tx * at(y0 + 1, x0 + 1));
                img[(ch * n + y) * n + x] = v;
            }
        }
    }
    for v in img.iter_mut() {
        *v = (*v + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0);
    }
    img
}

pub fn generate_scene(seed: u64) -> SyntheticScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = IMAGE_SIZE;
    let mut img = background(&mut rng);
    let count = rng.random_range(1..=MAX_OBJECTS);
    let mut objects: Vec<GtObject> = Vec::with_capacity(count);
    for _ in 0..count {
        let class = rng.random_range(0..NUM_CLASSES);
        let shape = Shape::random(class, &mut rng);
        let (ex0, ey0, ex1, ey1) = shape.extent();
        let color = [
            rng.random_range(0.55..1.0f32),
            rng.random_range(0.55..1.0f32),
            rng.random_range(0.55..1.0f32),
        ];
        let mut placed = None;
        for _ in 0..30 {
            let cx = rng.random_range(-ex0..n as f32 - ex1);
            let cy = rng.random_range(-ey0..n as f32 - ey1);
            let bbox = BoxXYXY::new(cx + ex0, cy + ey0, cx + ex1, cy + ey1);
            if objects.iter().all(|o| iou(&o.bbox, &bbox) <= MAX_PLACEMENT_OVERLAP) {
                placed = Some((cx, cy, bbox));
                break;
            }
        }
        let Some((cx, cy, bbox)) = placed else { continue };
        let xs = libm::floorf(bbox.x1) as usize..(libm::ceilf(bbox.x2) as usize).min(n);
        let ys = libm::floorf(bbox.y1) as usize..(libm::ceilf(bbox.y2) as usize).min(n);
        for y in ys {
            for x in xs.clone() {
                // 2×2 supersampled coverage
                let mut hits = 0;
                for (sx, sy) in [(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)] {
                    if shape.contains(x as f32 + sx - cx, y as f32 + sy - cy) {
                        hits += 1;
                    }
                }
                if hits == 0 {
                    continue;
                }
                let cover = hits as f32 / 4.0;
                for (ch, &c) in color.iter().enumerate() {
                    let p = &mut img[(ch * n + y) * n + x];
                    *p = (1.0 - cover) * *p + cover * c;
                }
            }
        }
        objects.push(GtObject { class, bbox });
    }
    SyntheticScene {
        image: Tensor::new(&[3, n, n], img).expect("image size"),
        objects,
        seed,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProposalConfig {
    pub positives_per_gt: usize,
    pub negatives: usize,
    /// Maximum center shift as a fraction of the GT width/height.
    pub center_jitter: f32,
    pub scale_min: f32,
    pub scale_max: f32,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        Self {
            positives_per_gt: 8,
            negatives: 24,
            center_jitter: 0.15,
            scale_min: 0.8,
            scale_max: 1.25,
        }
    }
}

impl ProposalConfig {
    pub fn zero_jitter() -> Self {
        Self {
            center_jitter: 0.0,
            scale_min: 1.0,
            scale_max: 1.0,
            ..Self::default()
        }
    }
}

/// One jittered copy of `gt`: center shifted uniformly within
/// `±center_jitter` of the box size, each side scaled log-uniformly within
/// `[scale_min, scale_max]`, then clipped to the image.
pub fn jitter_box<R: Rng + ?Sized>(gt: &BoxXYXY, cfg: &ProposalConfig, rng: &mut R) -> BoxXYXY {
    let (cx, cy) = gt.center();
    let (w, h) = (gt.width(), gt.height());
    let mut draw_shift = || {
        if cfg.center_jitter > 0.0 {
            rng.random_range(-cfg.center_jitter..=cfg.center_jitter)
        } else {
            0.0
        }
    };
    let (sx, sy) = (draw_shift(), draw_shift());
    let (lo, hi) = (libm::logf(cfg.scale_min), libm::logf(cfg.scale_max));
    let mut draw_scale = || if hi > lo { libm::expf(rng.random_range(lo..=hi)) } else { cfg.scale_min };
    let (kw, kh) = (draw_scale(), draw_scale());
    if sx == 0.0 && sy == 0.0 && kw == 1.0 && kh == 1.0 {
        return *gt;
    }
    BoxXYXY::from_center(cx + sx * w, cy + sy * h, w * kw, h * kh).clip(IMAGE_SIZE as f32, IMAGE_SIZE as f32)
}

/// `positives_per_gt` jittered copies of every GT box followed by
/// `negatives` uniformly random boxes (sides 16–64 px).
pub fn make_proposals(scene: &SyntheticScene, seed: u64, cfg: &ProposalConfig) -> Vec<BoxXYXY> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(cfg.positives_per_gt * scene.objects.len() + cfg.negatives);
    for obj in &scene.objects {
        for _ in 0..cfg.positives_per_gt {
            out.push(jitter_box(&obj.bbox, cfg, &mut rng));
        }
    }
    let n = IMAGE_SIZE as f32;
    for _ in 0..cfg.negatives {
        let w = rng.random_range(16.0..64.0f32);
        let h = rng.random_range(16.0..64.0f32);
        let x1 = rng.random_range(0.0..n - w);
        let y1 = rng.random_range(0.0..n - h);
        out.push(BoxXYXY::new(x1, y1, x1 + w, y1 + h));
    }
    out
}

/// IoU threshold at or above which a proposal is foreground.
pub const FG_IOU: f32 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub proposals: Vec<BoxXYXY>,
    /// Class index, or [`BACKGROUND`].
    pub labels: Vec<usize>,
    /// Regression targets, present exactly for foreground proposals.
    pub targets: Vec<Option<[f32; 4]>>,
}

impl TrainingSample {
    pub fn num_foreground(&self) -> usize {
        self.targets.iter().filter(|t| t.is_some()).count()
    }
}

/// Max-IoU assignment: each proposal takes the GT it overlaps most (first on
/// ties) and is foreground iff that IoU is at least [`FG_IOU`].
pub fn assign_and_encode(proposals: &[BoxXYXY], gt: &[GtObject]) -> TrainingSample {
    let mut labels = Vec::with_capacity(proposals.len());
    let mut targets = Vec::with_capacity(proposals.len());
    for p in proposals {
        let best = gt
            .iter()
            .map(|g| (iou(p, &g.bbox), g))
            .fold(None::<(f32, &GtObject)>, |acc, (v, g)| match acc {
                Some((bv, _)) if bv >= v => acc,
                _ => Some((v, g)),
            });
        match best {
            Some((v, g)) if v >= FG_IOU => {
                labels.push(g.class);
                targets.push(Some(encode_deltas(p, &g.bbox)));
            }
            _ => {
                labels.push(BACKGROUND);
                targets.push(None);
            }
        }
    }
    TrainingSample {
        proposals: proposals.to_vec(),
        labels,
        targets,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenes_are_deterministic() {
        assert_eq!(generate_scene(42), generate_scene(42));
        assert_ne!(generate_scene(42).image, generate_scene(43).image);
    }

    #[test]
    fn gt_boxes_are_valid_and_inside() {
        let frame = BoxXYXY::new(0.0, 0.0, IMAGE_SIZE as f32, IMAGE_SIZE as f32);
        for seed in 0..200 {
            let s = generate_scene(seed);
            assert!((1..=MAX_OBJECTS).contains(&s.objects.len()));
            for o in &s.objects {
                assert!(o.bbox.is_valid() && frame.contains(&o.bbox), "{o:?}");
                assert!(o.class < NUM_CLASSES);
            }
            assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn proposal_count_and_zero_jitter() {
        let s = generate_scene(5);
        let p = make_proposals(&s, 9, &ProposalConfig::default());
        assert_eq!(p.len(), 8 * s.objects.len() + 24);
        let z = make_proposals(&s, 9, &ProposalConfig::zero_jitter());
        for (i, o) in s.objects.iter().enumerate() {
            assert!(z[i * 8..(i + 1) * 8].iter().all(|b| *b == o.bbox));
        }
    }

    #[test]
    fn assignment_labels_and_targets() {
        let g = [GtObject { class: 2, bbox: BoxXYXY::new(10., 10., 40., 40.) }];
        let props = [g[0].bbox, BoxXYXY::new(80., 80., 100., 100.)];
        let t = assign_and_encode(&props, &g);
        assert_eq!(t.labels, vec![2, BACKGROUND]);
        assert_eq!(t.targets, vec![Some([0.0; 4]), None]);
        assert_eq!(t.num_foreground(), 1);
    }
}
