//! Conformal prediction from upper and lower bound models.
//!
//! Residuals `r_l = y - b_lo >= 0` and `r_u = y - b_hi <= 0` are summarized on
//! the training set by their `α/2` and `1-α/2` quantiles, giving four shifted
//! endpoints
//!
//! ```text
//! L_l = b_lo + Q_l(α/2)    U_l = b_lo + Q_l(1-α/2)
//! L_u = b_hi + Q_u(α/2)    U_u = b_hi + Q_u(1-α/2)
//! ```
//!
//! which combine into four offset families `[L_a - t, U_b + t]`. Each one is
//! calibrated on the calibration set and the variant with the smallest mean
//! strengthened width there is kept for all predictions.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interval::{BoundedSample, Bounds, Interval};
use crate::ncp::{calibrate, BoundSide, CalibratedModel, NestedFamily, OffsetFamily, ParamDomain};
use crate::quantile::{quantile_of_sorted, sorted};

/// Training-set quantiles of the lower and upper residuals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualQuantiles {
    pub q_l_lo: f64,
    pub q_l_hi: f64,
    pub q_u_lo: f64,
    pub q_u_hi: f64,
    pub alpha: f64,
}

pub fn cpul_residual_quantiles(train_set: &[BoundedSample], alpha: f64) -> Result<ResidualQuantiles> {
    if train_set.is_empty() {
        return Err(Error::EmptySample);
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha {alpha} outside (0, 1)")));
    }
    let r_l = sorted(&train_set.iter().map(|s| s.y - s.b_lo).collect::<Vec<_>>());
    let r_u = sorted(&train_set.iter().map(|s| s.y - s.b_hi).collect::<Vec<_>>());
    let (lo, hi) = (alpha / 2.0, 1.0 - alpha / 2.0);
    Ok(ResidualQuantiles {
        q_l_lo: quantile_of_sorted(&r_l, lo),
        q_l_hi: quantile_of_sorted(&r_l, hi),
        q_u_lo: quantile_of_sorted(&r_u, lo),
        q_u_hi: quantile_of_sorted(&r_u, hi),
        alpha,
    })
}

/// The four ways of pairing a shifted lower endpoint with a shifted upper one.
/// Declaration order is the tie-break order for model selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CpulVariant {
    /// `[L_l - t, U_l + t]`
    Ll,
    /// `[L_l - t, U_u + t]`
    Lu,
    /// `[L_u - t, U_l + t]`
    Ul,
    /// `[L_u - t, U_u + t]`
    Uu,
}

impl CpulVariant {
    pub const ALL: [CpulVariant; 4] = [CpulVariant::Ll, CpulVariant::Lu, CpulVariant::Ul, CpulVariant::Uu];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn tag(self) -> &'static str {
        match self {
            CpulVariant::Ll => "ll",
            CpulVariant::Lu => "lu",
            CpulVariant::Ul => "ul",
            CpulVariant::Uu => "uu",
        }
    }

    /// The offset family for this variant under the given quantiles.
    pub fn family(self, q: &ResidualQuantiles) -> OffsetFamily {
        let (lower_side, lower_shift) = match self {
            CpulVariant::Ll | CpulVariant::Lu => (BoundSide::Lower, q.q_l_lo),
            CpulVariant::Ul | CpulVariant::Uu => (BoundSide::Upper, q.q_u_lo),
        };
        let (upper_side, upper_shift) = match self {
            CpulVariant::Ll | CpulVariant::Ul => (BoundSide::Lower, q.q_l_hi),
            CpulVariant::Lu | CpulVariant::Uu => (BoundSide::Upper, q.q_u_hi),
        };
        OffsetFamily::new(lower_side, lower_shift, upper_side, upper_shift)
    }
}

impl fmt::Display for CpulVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Four calibrated variants and the one selected by calibration-set width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpulModel<F = OffsetFamily> {
    pub quantiles: ResidualQuantiles,
    pub selected: CpulVariant,
    /// Indexed by [`CpulVariant::index`].
    pub variants: [CalibratedModel<F>; 4],
    /// Mean strengthened width of each variant on the calibration set.
    pub mean_widths: [f64; 4],
}

impl<F: NestedFamily> CpulModel<F> {
    pub fn selected_model(&self) -> &CalibratedModel<F> {
        &self.variants[self.selected.index()]
    }

    pub fn tau(&self, variant: CpulVariant) -> f64 {
        self.variants[variant.index()].tau
    }

    pub fn predict(&self, sample: &BoundedSample) -> Interval {
        self.selected_model().predict(sample)
    }
}

/// Index of the smallest width; earlier entries win ties.
pub(crate) fn argmin_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v < values[best] {
            best = i;
        }
    }
    best
}

/// Picks the calibrated variant with the smallest mean width on `cal_set`.
pub fn select_variant<F: NestedFamily>(
    quantiles: ResidualQuantiles,
    variants: [CalibratedModel<F>; 4],
    cal_set: &[BoundedSample],
) -> CpulModel<F> {
    let mean_widths = [0, 1, 2, 3].map(|i| variants[i].mean_width(cal_set));
    let selected = CpulVariant::ALL[argmin_first(&mean_widths)];
    CpulModel {
        quantiles,
        selected,
        variants,
        mean_widths,
    }
}

pub fn cpul_fit_with_quantiles(
    quantiles: ResidualQuantiles,
    cal_set: &[BoundedSample],
    alpha: f64,
) -> Result<CpulModel> {
    let mut fitted = Vec::with_capacity(4);
    for v in CpulVariant::ALL {
        fitted.push(calibrate(v.family(&quantiles), cal_set, alpha)?);
    }
    let variants: [CalibratedModel<OffsetFamily>; 4] = fitted.try_into().expect("four variants");
    Ok(select_variant(quantiles, variants, cal_set))
}

pub fn cpul_fit(train_set: &[BoundedSample], cal_set: &[BoundedSample], alpha: f64) -> Result<CpulModel> {
    let q = cpul_residual_quantiles(train_set, alpha)?;
    cpul_fit_with_quantiles(q, cal_set, alpha)
}

/// Adapted SFD construction: the `ul` family calibrated on its own.
pub fn sfd_fit(
    train_set: &[BoundedSample],
    cal_set: &[BoundedSample],
    alpha: f64,
) -> Result<CalibratedModel<OffsetFamily>> {
    let q = cpul_residual_quantiles(train_set, alpha)?;
    calibrate(CpulVariant::Ul.family(&q), cal_set, alpha)
}

/// Count-sketch form `[max(0, B_u - t), min(B_u, t)]` with a hard zero lower
/// bound, on `t ∈ [0, ∞)`. Kept as a reference for non-negative targets; the
/// benchmarks use [`sfd_fit`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SketchSfdFamily;

impl NestedFamily for SketchSfdFamily {
    fn domain(&self) -> ParamDomain {
        ParamDomain {
            inf: 0.0,
            sup: f64::INFINITY,
        }
    }

    fn interval(&self, bounds: Bounds, t: f64) -> Interval {
        Interval::new((bounds.hi - t).max(0.0), bounds.hi.min(t))
    }
}
