//! Split conformal prediction on a single bound used as a point predictor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interval::{strengthen_with, BoundedSample, Interval};
use crate::ncp::BoundSide;
use crate::quantile::{ceil_rank, floor_rank, sorted};

/// Residual offsets around a base predictor `B(x)`; predictions are
/// `[B(x) + offset_lo, B(x) + offset_hi] ∩ [b_lo, b_hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitCpModel {
    pub base: BoundSide,
    pub offset_lo: f64,
    pub offset_hi: f64,
    pub alpha: f64,
}

impl SplitCpModel {
    pub fn predict(&self, sample: &BoundedSample) -> Interval {
        let b = sample.bounds();
        let center = self.base.pick(b);
        strengthen_with(Interval::new(center + self.offset_lo, center + self.offset_hi), b)
    }
}

/// Fits split CP with signed residuals `y - B(x)`.
///
/// The lower offset is the `⌊(α/2)(N+1)⌋`-th smallest residual (`-∞` when
/// that rank is 0) and the upper offset the `⌈(1-α/2)(N+1)⌉`-th (`+∞` when
/// it exceeds `N`).
pub fn split_cp_fit(base: BoundSide, cal_set: &[BoundedSample], alpha: f64) -> Result<SplitCpModel> {
    if cal_set.is_empty() {
        return Err(Error::EmptySample);
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha {alpha} outside (0, 1)")));
    }
    let residuals: Vec<f64> = cal_set.iter().map(|s| s.y - base.pick(s.bounds())).collect();
    let r = sorted(&residuals);
    let n = r.len();
    let n1 = n as f64 + 1.0;

    let k_lo = floor_rank(alpha / 2.0 * n1);
    let offset_lo = if k_lo == 0 {
        f64::NEG_INFINITY
    } else {
        r[k_lo.min(n) - 1]
    };
    let k_hi = ceil_rank((1.0 - alpha / 2.0) * n1).max(1);
    let offset_hi = if k_hi > n { f64::INFINITY } else { r[k_hi - 1] };

    Ok(SplitCpModel {
        base,
        offset_lo,
        offset_hi,
        alpha,
    })
}
