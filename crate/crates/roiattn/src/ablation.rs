//! Ablation drivers: the d × depth grid and the head-structure variants.

use roiattn_core::config::{DetectionConfig, Variant};
use roiattn_core::train::{train, Executor};

/// Memory sizes and depths of the grid, in report order (depth-major).
pub const GRID_D: [usize; 4] = [10, 20, 40, 80];
pub const GRID_DEPTH: [usize; 3] = [1, 2, 3];

/// Reference AP (percent) for each grid cell, indexed `[depth-1][d index]`.
pub const GRID_REFERENCE_AP: [[f32; 4]; 3] = [[45.4, 45.1, 45.1, 45.0], [44.9, 45.3, 45.0, 45.2], [45.1, 45.0, 44.9, 45.1]];

pub fn grid_reference_ap(d: usize, depth: usize) -> Option<f32> {
    let di = GRID_D.iter().position(|&x| x == d)?;
    let ki = GRID_DEPTH.iter().position(|&x| x == depth)?;
    Some(GRID_REFERENCE_AP[ki][di])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthRow {
    pub d: usize,
    pub depth: usize,
    pub map: f64,
    pub ap50: f64,
    pub ap75: f64,
    pub reference_ap: f32,
}

/// The grid configurations: single head with attention, no double head or
/// positional encoding, everything else from `base`.
pub fn grid_configs(base: &DetectionConfig) -> Vec<DetectionConfig> {
    let mut out = Vec::new();
    for depth in GRID_DEPTH {
        for d in GRID_D {
            let mut cfg = base.clone();
            Variant::Attention.apply(&mut cfg);
            cfg.d = d;
            cfg.depth = depth;
            out.push(cfg);
        }
    }
    out
}

/// Trains and validates every grid cell; rows carry the final-epoch
/// validation metrics.
pub fn run_depth_grid<E: Executor>(
    base: &DetectionConfig,
    exec: &E,
    on_row: &mut dyn FnMut(&DepthRow),
) -> anyhow::Result<Vec<DepthRow>> {
    let mut rows = Vec::new();
    for cfg in grid_configs(base) {
        let outcome = train(&cfg, exec, &mut |_| {})?;
        let last = outcome.history.last().copied();
        let row = DepthRow {
            d: cfg.d,
            depth: cfg.depth,
            map: last.map_or(0.0, |m| m.map),
            ap50: last.map_or(0.0, |m| m.ap50),
            ap75: last.map_or(0.0, |m| m.ap75),
            reference_ap: grid_reference_ap(cfg.d, cfg.depth).expect("grid cell"),
        };
        on_row(&row);
        rows.push(row);
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariantRow {
    pub variant: Variant,
    pub seed: u64,
    pub map: f64,
    pub ap50: f64,
    pub ap75: f64,
}

/// Trains each variant under each seed.
pub fn run_variants<E: Executor>(
    base: &DetectionConfig,
    variants: &[Variant],
    seeds: &[u64],
    exec: &E,
    on_row: &mut dyn FnMut(&VariantRow),
) -> anyhow::Result<Vec<VariantRow>> {
    let mut rows = Vec::new();
    for &seed in seeds {
        for &variant in variants {
            let mut cfg = base.clone();
            variant.apply(&mut cfg);
            cfg.seed = seed;
            let outcome = train(&cfg, exec, &mut |_| {})?;
            let last = outcome.history.last().copied();
            let row = VariantRow {
                variant,
                seed,
                map: last.map_or(0.0, |m| m.map),
                ap50: last.map_or(0.0, |m| m.ap50),
                ap75: last.map_or(0.0, |m| m.ap75),
            };
            on_row(&row);
            rows.push(row);
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariantMean {
    pub variant: Variant,
    pub map: f64,
    pub ap50: f64,
    pub ap75: f64,
}

/// An expected `lower ≤ upper` relation between mean APs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderingCheck {
    pub lower: Variant,
    pub upper: Variant,
    pub lower_ap: f64,
    pub upper_ap: f64,
}

impl OrderingCheck {
    pub fn holds(&self) -> bool {
        self.lower_ap <= self.upper_ap
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantSummary {
    pub means: Vec<VariantMean>,
    pub orderings: Vec<OrderingCheck>,
}

impl VariantSummary {
    pub fn inversions(&self) -> Vec<&OrderingCheck> {
        self.orderings.iter().filter(|c| !c.holds()).collect()
    }
}

/// Orderings reported by the variant ablation.
pub const EXPECTED_ORDERINGS: [(Variant, Variant); 2] = [(Variant::Baseline, Variant::Attention), (Variant::Both, Variant::Full)];

pub fn summarize(rows: &[VariantRow]) -> VariantSummary {
    let mut means = Vec::new();
    for v in Variant::ALL {
        let sel: Vec<&VariantRow> = rows.iter().filter(|r| r.variant == v).collect();
        if sel.is_empty() {
            continue;
        }
        let n = sel.len() as f64;
        means.push(VariantMean {
            variant: v,
            map: sel.iter().map(|r| r.map).sum::<f64>() / n,
            ap50: sel.iter().map(|r| r.ap50).sum::<f64>() / n,
            ap75: sel.iter().map(|r| r.ap75).sum::<f64>() / n,
        });
    }
    let mean_of = |v: Variant| means.iter().find(|m| m.variant == v).map(|m| m.map);
    let orderings = EXPECTED_ORDERINGS
        .iter()
        .filter_map(|&(lo, hi)| {
            Some(OrderingCheck {
                lower: lo,
                upper: hi,
                lower_ap: mean_of(lo)?,
                upper_ap: mean_of(hi)?,
            })
        })
        .collect();
    VariantSummary { means, orderings }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_has_twelve_cells_with_references() {
        let cfgs = grid_configs(&DetectionConfig::default());
        assert_eq!(cfgs.len(), 12);
        assert_eq!(grid_reference_ap(10, 1), Some(45.4));
        assert_eq!(grid_reference_ap(20, 2), Some(45.3));
        assert_eq!(grid_reference_ap(80, 3), Some(45.1));
        for c in &cfgs {
            assert!(!c.use_double_head && !c.use_pos_encoding && c.uses_attention());
        }
    }

    #[test]
    fn summary_flags_inversions() {
        let row = |variant, seed, map| VariantRow {
            variant,
            seed,
            map,
            ap50: map,
            ap75: map,
        };
        let rows = [
            row(Variant::Baseline, 0, 0.4),
            row(Variant::Baseline, 1, 0.6),
            row(Variant::Attention, 0, 0.55),
            row(Variant::Attention, 1, 0.55),
            row(Variant::Both, 0, 0.7),
            row(Variant::Full, 0, 0.6),
        ];
        let s = summarize(&rows);
        assert_eq!(s.means.len(), 4);
        assert!((s.means[0].map - 0.5).abs() < 1e-12);
        assert_eq!(s.orderings.len(), 2);
        assert!(s.orderings[0].holds());
        let inv = s.inversions();
        assert_eq!(inv.len(), 1);
        assert_eq!((inv[0].lower, inv[0].upper), (Variant::Both, Variant::Full));
    }
}
