//! Central finite-difference gradient checking against `f64` references.
//!
//! The analytic gradient comes from the tape (in `f32`); the numeric one from
//! central differences of an `f64` reference function. A coordinate passes
//! when `|analytic − numeric| ≤ abs_tol + rel_tol·|numeric|`.
//!
//! A coordinate sits near a kink (relu, smooth-L1) when its central
//! difference moves between steps `h`, `h/2` and `h/4`, or when its scaled
//! second difference fails to halve with the step. Such coordinates are re-checked
//! at [`FINE_STEP`], which the `f64` reference resolves without cancellation
//! trouble, and skipped only if still kinked there. A check fails outright
//! when more than [`MAX_SKIP_FRACTION`] of its coordinates were skipped.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

pub const STEP: f64 = 1e-3;
pub const FINE_STEP: f64 = 1e-6;
pub const REL_TOL: f64 = 1e-3;
pub const ABS_TOL: f64 = 1e-5;
pub const MAX_SKIP_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradReport {
    pub checked: usize,
    pub skipped: usize,
    /// Largest `|a − n| / (abs_tol + rel_tol·|n|)` seen; ≤ 1 passes.
    pub worst_ratio: f64,
    /// Descriptions of the first few failing coordinates.
    pub failures: Vec<String>,
    pub failed: usize,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.failed == 0 && self.skip_fraction() <= MAX_SKIP_FRACTION
    }

    pub fn skip_fraction(&self) -> f64 {
        let total = self.checked + self.skipped;
        if total == 0 {
            0.0
        } else {
            self.skipped as f64 / total as f64
        }
    }

    pub fn merge(&mut self, other: GradReport) {
        self.checked += other.checked;
        self.skipped += other.skipped;
        self.failed += other.failed;
        self.worst_ratio = self.worst_ratio.max(other.worst_ratio);
        for f in other.failures {
            if self.failures.len() < 8 {
                self.failures.push(f);
            }
        }
    }
}

fn tolerance(numeric: f64) -> f64 {
    ABS_TOL + REL_TOL * numeric.abs()
}

/// Checks `analytic[i]` for every `i` in `coords` against central differences
/// of `f` around `point`. `f` receives the perturbed point.
pub fn check(
    label: &str,
    point: &[f64],
    analytic: &[f32],
    coords: &[usize],
    mut f: impl FnMut(&[f64]) -> f64,
) -> GradReport {
    assert_eq!(point.len(), analytic.len(), "gradient length for {label}");
    let mut x = point.to_vec();
    let mut report = GradReport::default();
    for &i in coords {
        let Some(numeric) = [STEP, FINE_STEP].into_iter().find_map(|h| smooth_estimate(i, h, &mut x, &mut f)) else {
            report.skipped += 1;
            continue;
        };
        report.checked += 1;
        let a = analytic[i] as f64;
        let ratio = (a - numeric).abs() / tolerance(numeric);
        report.worst_ratio = report.worst_ratio.max(ratio);
        if ratio > 1.0 {
            report.failed += 1;
            if report.failures.len() < 8 {
                report
                    .failures
                    .push(format!("{label}[{i}]: analytic {a:.6e} vs numeric {numeric:.6e}"));
            }
        }
    }
    report
}

/// Central difference at step `h`, or `None` when a kink lies within `h`.
///
/// With a slope jump at distance `δ`, the probes below change by at least a
/// sixth of the jump for every `δ < h` while the coarse estimate is off by at
/// most half of it, so flagging at a quarter of the tolerance leaves no
/// kink large enough to matter undetected.
fn smooth_estimate(i: usize, h: f64, x: &mut [f64], f: &mut impl FnMut(&[f64]) -> f64) -> Option<f64> {
    let orig = x[i];
    let mut at = |d: f64, x: &mut [f64]| {
        x[i] = orig + d;
        let v = f(x);
        x[i] = orig;
        v
    };
    let centre = at(0.0, x);
    let steps = [h, 0.5 * h, 0.25 * h];
    let pairs = steps.map(|s| (at(s, x), at(-s, x)));
    let central: [f64; 3] = core::array::from_fn(|k| (pairs[k].0 - pairs[k].1) / (2.0 * steps[k]));
    // (f(x+s) − 2f(x) + f(x−s)) / s is s·f'' when smooth; a kink at x makes
    // it the slope jump regardless of s.
    let second: [f64; 2] = core::array::from_fn(|k| (pairs[k].0 - 2.0 * centre + pairs[k].1) / steps[k]);
    let limit = 0.25 * tolerance(central[2]);
    let kinked = (central[0] - central[1]).abs() > limit
        || (central[1] - central[2]).abs() > limit
        || (second[0] - 2.0 * second[1]).abs() > limit;
    (!kinked).then_some(central[0])
}

/// Up to `max` distinct coordinates of a length-`n` vector, spread evenly
/// with a seed-dependent offset; all of them when `n ≤ max`.
pub fn sample_coords(n: usize, max: usize, seed: u64) -> Vec<usize> {
    if n <= max {
        return (0..n).collect();
    }
    let stride = n as f64 / max as f64;
    let offset = (seed % 997) as f64 / 997.0;
    (0..max).map(|k| (((k as f64 + offset) * stride) as usize).min(n - 1)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_gradient_passes() {
        let point = [0.3, -1.2, 2.0];
        let analytic = [2.0 * 0.3f32, 2.0 * -1.2, 4.0];
        let r = check("sq", &point, &analytic, &[0, 1, 2], |x| x.iter().map(|v| v * v).sum());
        assert!(r.passed(), "{r:?}");
        assert_eq!(r.checked, 3);
    }

    #[test]
    fn wrong_gradient_fails() {
        let r = check("sq", &[1.0], &[2.1], &[0], |x| x[0] * x[0]);
        assert!(!r.passed());
        assert_eq!(r.failed, 1);
    }

    #[test]
    fn nearby_kink_is_rechecked_finely() {
        // |x| at 2e-4 is within the coarse step of its kink
        let r = check("abs", &[2e-4], &[1.0], &[0], |x| x[0].abs());
        assert_eq!((r.checked, r.skipped), (1, 0));
        assert!(r.passed(), "{r:?}");
        let r = check("abs", &[2e-4], &[0.0], &[0], |x| x[0].abs());
        assert_eq!(r.failed, 1);
    }

    #[test]
    fn kink_at_the_point_is_skipped() {
        // both central differences agree on 1.5 here, which is neither slope
        let f = |x: &[f64]| if x[0] > 0.0 { 2.0 * x[0] } else { x[0] };
        let r = check("bend", &[0.0], &[1.0], &[0], f);
        assert_eq!(r.skipped, 1);
        assert!(!r.passed(), "a fully skipped check must not pass");
    }

    #[test]
    fn kink_at_a_third_of_the_step_is_caught() {
        let f = |x: &[f64]| (x[0] - STEP / 3.0).max(0.0) * 5.0 + x[0];
        let r = check("relu", &[0.0], &[1.0], &[0], f);
        assert!(r.passed(), "{r:?}");
    }
}
