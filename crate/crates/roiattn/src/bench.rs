//! Wall-clock comparison of external attention against dense s×s
//! self-attention.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use roiattn_core::attention::{attention_forward, dense_self_attention, ExternalAttentionBlock};
use roiattn_core::graph::Graph;
use roiattn_core::params::ParamStore;
use roiattn_core::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mechanism {
    External,
    Dense,
}

impl Mechanism {
    pub fn name(self) -> &'static str {
        match self {
            Mechanism::External => "external",
            Mechanism::Dense => "dense",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchRow {
    pub variant: Mechanism,
    pub s: usize,
    pub l: usize,
    pub d: usize,
    pub median_us: f64,
}

/// `smin, 2·smin, 4·smin, …` up to and including `smax`.
pub fn doubling_range(smin: usize, smax: usize) -> Vec<usize> {
    let mut v = Vec::new();
    let mut s = smin.max(1);
    while s <= smax {
        v.push(s);
        s *= 2;
    }
    v
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Median forward time (µs) of each mechanism at each `s`, external rows
/// first. Each timed call builds its own graph, so both mechanisms pay the
/// same bookkeeping.
pub fn bench_attention(s_values: &[usize], l: usize, d: usize, repeats: usize) -> anyhow::Result<Vec<BenchRow>> {
    anyhow::ensure!(!s_values.is_empty(), "empty s range");
    anyhow::ensure!(repeats > 0 && l > 0 && d > 0, "L, d and repeats must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(0xBE4C);
    let mut store = ParamStore::new();
    let block = ExternalAttentionBlock::new(&mut store, "bench", d, l, &mut rng)?;
    let mut rows = Vec::new();
    let mut dense_rows = Vec::new();
    for &s in s_values {
        let x = Tensor::from_fn(&[s, l], |_| StandardNormal.sample(&mut rng));
        let time = |mech: Mechanism| -> anyhow::Result<f64> {
            let mut samples = Vec::with_capacity(repeats);
            // one untimed warm-up call
            for rep in 0..=repeats {
                let start = Instant::now();
                let mut g = Graph::new();
                let v = g.input(x.clone(), false);
                let y = match mech {
                    Mechanism::External => attention_forward(&mut g, &store, v, &block)?,
                    Mechanism::Dense => dense_self_attention(&mut g, v)?,
                };
                std::hint::black_box(g.value(y));
                if rep > 0 {
                    samples.push(start.elapsed().as_secs_f64() * 1e6);
                }
            }
            Ok(median(samples))
        };
        let ext = time(Mechanism::External)?;
        let dense = time(Mechanism::Dense)?;
        rows.push(BenchRow {
            variant: Mechanism::External,
            s,
            l,
            d,
            median_us: ext,
        });
        dense_rows.push(BenchRow {
            variant: Mechanism::Dense,
            s,
            l,
            d,
            median_us: dense,
        });
    }
    rows.extend(dense_rows);
    Ok(rows)
}

/// `time(2s) / time(s)` for consecutive doublings of one mechanism.
pub fn doubling_ratios(rows: &[BenchRow], mech: Mechanism) -> Vec<(usize, f64)> {
    let sel: Vec<&BenchRow> = rows.iter().filter(|r| r.variant == mech).collect();
    sel.windows(2)
        .filter(|w| w[1].s == 2 * w[0].s)
        .map(|w| (w[0].s, w[1].median_us / w[0].median_us))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range() {
        assert_eq!(doubling_range(64, 512), vec![64, 128, 256, 512]);
        assert_eq!(doubling_range(100, 300), vec![100, 200]);
        assert!(doubling_range(10, 5).is_empty());
    }

    #[test]
    fn median_even_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn rows_shape() {
        let rows = bench_attention(&[4, 8], 16, 3, 2).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(doubling_ratios(&rows, Mechanism::External).len(), 1);
        assert!(bench_attention(&[], 16, 3, 2).is_err());
    }
}
