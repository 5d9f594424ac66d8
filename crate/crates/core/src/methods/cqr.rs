//! CQR with the certified bounds standing in for the quantile regressors,
//! and its gap-scaled variant CQR-r.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interval::{BoundedSample, Bounds, Interval};
use crate::ncp::{calibrate, smallest_true, BoundSide, CalibratedModel, NestedFamily, OffsetFamily, ParamDomain};

/// `[b_lo - t, b_hi + t]`.
pub fn cqr_family() -> OffsetFamily {
    OffsetFamily::new(BoundSide::Lower, 0.0, BoundSide::Upper, 0.0)
}

/// Valid bounds give scores `max(b_lo - y, y - b_hi) <= 0`, so `τ <= 0` unless
/// the rank exceeds the sample size.
pub fn cqr_fit(cal_set: &[BoundedSample], alpha: f64) -> Result<CalibratedModel<OffsetFamily>> {
    calibrate(cqr_family(), cal_set, alpha)
}

/// `[b_lo - tΔ(x), b_hi + tΔ(x)]` with `Δ(x) = b_hi - b_lo`.
///
/// When `Δ(x) = 0` the interval is the point `{b_lo}` for every `t`, so the
/// score is `-∞`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RelativeFamily;

impl RelativeFamily {
    pub fn score_closed_form(bounds: Bounds, y: f64) -> f64 {
        let gap = bounds.gap();
        if gap == 0.0 {
            0.0
        } else {
            (bounds.lo - y).max(y - bounds.hi) / gap
        }
    }
}

impl NestedFamily for RelativeFamily {
    fn interval(&self, bounds: Bounds, t: f64) -> Interval {
        let gap = bounds.gap();
        if gap == 0.0 {
            return Interval::point(bounds.lo);
        }
        Interval::new(bounds.lo - t * gap, bounds.hi + t * gap)
    }

    fn min_covering_t(&self, sample: &BoundedSample) -> Result<f64> {
        let bounds = sample.bounds();
        if bounds.gap() == 0.0 {
            // every t covers the point interval
            return Ok(f64::NEG_INFINITY);
        }
        let y = sample.y;
        smallest_true(
            |t| self.interval(bounds, t).contains(y),
            Self::score_closed_form(bounds, y),
            ParamDomain::REAL_LINE,
        )
        .ok_or(Error::CannotCover { y })
    }
}

pub fn cqr_r_fit(cal_set: &[BoundedSample], alpha: f64) -> Result<CalibratedModel<RelativeFamily>> {
    calibrate(RelativeFamily, cal_set, alpha)
}
