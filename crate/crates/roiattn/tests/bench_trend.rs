use roiattn::bench::{bench_attention, doubling_range, Mechanism};

// External attention is linear in the RoI count and dense attention is
// quadratic, so their time ratio must shrink as the count grows.
#[test]
fn external_to_dense_ratio_falls_with_roi_count() {
    let sizes = doubling_range(64, 2048);
    let rows = bench_attention(&sizes, 256, 10, 3).unwrap();
    let time = |m: Mechanism, s: usize| rows.iter().find(|r| r.variant == m && r.s == s).unwrap().median_us;
    let ratios: Vec<f64> = sizes
        .iter()
        .map(|&s| time(Mechanism::External, s) / time(Mechanism::Dense, s))
        .collect();
    for (w, pair) in ratios.windows(2).enumerate() {
        assert!(
            pair[1] <= pair[0] * 1.1,
            "ratio rose from {:.4} at s={} to {:.4} at s={}: {ratios:?}",
            pair[0],
            sizes[w],
            pair[1],
            sizes[w + 1]
        );
    }
    assert!(ratios[ratios.len() - 1] < ratios[0] / 4.0, "{ratios:?}");
}
