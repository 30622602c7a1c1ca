//! Shared inputs for the criterion benches.

use riskclear_core::model::{bundled, SystemCase};

/// n evenly spaced points on [lo, hi].
pub fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1).max(1) as f64).collect()
}

pub fn cases() -> Vec<(&'static str, SystemCase)> {
    vec![("illustrative", bundled::illustrative()), ("isone8", bundled::isone8())]
}
