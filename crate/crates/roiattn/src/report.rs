//! CSV renderings of metrics, ablations and benchmark rows.
//!
//! Numbers are printed with fixed precision so identical runs give
//! byte-identical files.

use roiattn_core::train::EpochMetrics;

use crate::ablation::{DepthRow, VariantRow, VariantSummary};
use crate::bench::BenchRow;

pub const METRICS_HEADER: &str = "epoch,loss,mAP,AP50,AP75";

pub fn metrics_csv(history: &[EpochMetrics]) -> String {
    let mut s = format!("{METRICS_HEADER}\n");
    for m in history {
        s.push_str(&metrics_line(m));
        s.push('\n');
    }
    s
}

pub fn metrics_line(m: &EpochMetrics) -> String {
    format!("{},{:.6},{:.6},{:.6},{:.6}", m.epoch, m.loss, m.map, m.ap50, m.ap75)
}

/// AP columns in percent, like the reference column.
pub fn depth_csv(rows: &[DepthRow]) -> String {
    let mut s = String::from("d,depth,AP,AP50,AP75,reference_AP\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{:.2},{:.2},{:.2},{:.1}\n",
            r.d,
            r.depth,
            100.0 * r.map,
            100.0 * r.ap50,
            100.0 * r.ap75,
            r.reference_ap
        ));
    }
    s
}

pub fn variants_csv(rows: &[VariantRow]) -> String {
    let mut s = String::from("variant,seed,AP,AP50,AP75,reference_AP\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{:.2},{:.2},{:.2},{:.1}\n",
            r.variant.name(),
            r.seed,
            100.0 * r.map,
            100.0 * r.ap50,
            100.0 * r.ap75,
            r.variant.reference_ap()
        ));
    }
    s
}

/// Per-variant means followed by one `# ordering` line per checked pair.
pub fn variant_summary_csv(summary: &VariantSummary) -> String {
    let mut s = String::from("variant,mean_AP,mean_AP50,mean_AP75,reference_AP\n");
    for m in &summary.means {
        s.push_str(&format!(
            "{},{:.2},{:.2},{:.2},{:.1}\n",
            m.variant.name(),
            100.0 * m.map,
            100.0 * m.ap50,
            100.0 * m.ap75,
            m.variant.reference_ap()
        ));
    }
    for c in &summary.orderings {
        s.push_str(&format!(
            "# ordering {} <= {}: {:.2} vs {:.2} {}\n",
            c.lower.name(),
            c.upper.name(),
            100.0 * c.lower_ap,
            100.0 * c.upper_ap,
            if c.holds() { "ok" } else { "INVERTED" }
        ));
    }
    s
}

pub const BENCH_HEADER: &str = "variant,s,L,d,median_us";

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = format!("{BENCH_HEADER}\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{},{:.1}\n", r.variant.name(), r.s, r.l, r.d, r.median_us));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_format() {
        let m = EpochMetrics {
            epoch: 3,
            loss: 0.25,
            map: 0.5,
            ap50: 0.75,
            ap75: 0.125,
        };
        assert_eq!(metrics_csv(&[m]), "epoch,loss,mAP,AP50,AP75\n3,0.250000,0.500000,0.750000,0.125000\n");
    }
}
