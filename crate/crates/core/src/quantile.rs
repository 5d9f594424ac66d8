//! Order-statistic helpers shared by the calibration routines.

use crate::error::{Error, Result};

/// Slack for treating a rank computed in floating point as an exact integer,
/// e.g. `0.9 * 10` must yield rank 9 rather than 10.
const RANK_SLACK: f64 = 1e-9;

/// `⌈x⌉`, snapping values within rounding noise of an integer onto it.
pub(crate) fn ceil_rank(x: f64) -> usize {
    let r = x.round();
    let v = if (x - r).abs() <= RANK_SLACK * x.abs().max(1.0) {
        r
    } else {
        x.ceil()
    };
    v.max(0.0) as usize
}

/// `⌊x⌋`, with the same snapping as [`ceil_rank`].
pub(crate) fn floor_rank(x: f64) -> usize {
    let r = x.round();
    let v = if (x - r).abs() <= RANK_SLACK * x.abs().max(1.0) {
        r
    } else {
        x.floor()
    };
    v.max(0.0) as usize
}

pub(crate) fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Ceiling-rank empirical quantile: the `k`-th smallest value with
/// `k = max(1, ⌈beta·n⌉)`. No interpolation.
pub fn empirical_quantile(values: &[f64], beta: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptySample);
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::InvalidParameter(format!("quantile level {beta} outside [0, 1]")));
    }
    let v = sorted(values);
    Ok(quantile_of_sorted(&v, beta))
}

/// As [`empirical_quantile`] on an already ascending slice.
pub(crate) fn quantile_of_sorted(sorted: &[f64], beta: f64) -> f64 {
    let n = sorted.len();
    let k = ceil_rank(beta * n as f64).clamp(1, n);
    sorted[k - 1]
}
