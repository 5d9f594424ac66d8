//! Interval-construction methods and a uniform fit/predict surface over them.

pub mod cpul;
pub mod cqr;
pub mod omlt;
pub mod split;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interval::{BoundedSample, Interval};
use crate::ncp::{BoundSide, CalibratedModel, OffsetFamily};

pub use cpul::{
    cpul_fit, cpul_fit_with_quantiles, cpul_residual_quantiles, sfd_fit, CpulModel, CpulVariant, ResidualQuantiles,
    SketchSfdFamily,
};
pub use cqr::{cqr_family, cqr_fit, cqr_r_fit, RelativeFamily};
pub use omlt::{
    omlt_fit, omlt_fit_with_quantiles, omlt_wrap, split_reserved, EllGrid, OmltConfig, OmltFamily, OmltModel,
};
pub use split::{split_cp_fit, SplitCpModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MethodKind {
    #[serde(rename = "split-cp-l")]
    SplitCpLower,
    #[serde(rename = "split-cp-u")]
    SplitCpUpper,
    #[serde(rename = "sfd")]
    Sfd,
    #[serde(rename = "cqr")]
    Cqr,
    #[serde(rename = "cqr-r")]
    CqrR,
    #[serde(rename = "cpul")]
    Cpul,
    #[serde(rename = "cpul-omlt")]
    CpulOmlt,
}

impl MethodKind {
    pub const ALL: [MethodKind; 7] = [
        MethodKind::SplitCpLower,
        MethodKind::SplitCpUpper,
        MethodKind::Sfd,
        MethodKind::Cqr,
        MethodKind::CqrR,
        MethodKind::Cpul,
        MethodKind::CpulOmlt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MethodKind::SplitCpLower => "split-cp-l",
            MethodKind::SplitCpUpper => "split-cp-u",
            MethodKind::Sfd => "sfd",
            MethodKind::Cqr => "cqr",
            MethodKind::CqrR => "cqr-r",
            MethodKind::Cpul => "cpul",
            MethodKind::CpulOmlt => "cpul-omlt",
        }
    }

    pub fn valid_names() -> String {
        Self::ALL.map(MethodKind::name).join(", ")
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s.trim())
            .ok_or_else(|| Error::UnknownMethod {
                name: s.to_string(),
                valid: Self::valid_names(),
            })
    }
}

fn default_reserved_fraction() -> f64 {
    0.2
}

/// Declarative method settings as they appear in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub method: MethodKind,
    /// Minimal-length grid for `cpul-omlt`.
    #[serde(default)]
    pub ell_grid: EllGrid,
    /// Share of the calibration set reserved for the minimal-length search.
    #[serde(default = "default_reserved_fraction")]
    pub reserved_fraction: f64,
}

impl MethodConfig {
    pub fn new(method: MethodKind) -> Self {
        MethodConfig {
            method,
            ell_grid: EllGrid::default(),
            reserved_fraction: default_reserved_fraction(),
        }
    }

    pub fn reserved_count(&self, n_cal: usize) -> usize {
        (self.reserved_fraction * n_cal as f64).round() as usize
    }

    pub fn validate(&self, n_cal: usize) -> Result<()> {
        if self.method == MethodKind::CpulOmlt {
            if !(self.reserved_fraction > 0.0 && self.reserved_fraction < 1.0) {
                return Err(Error::Config(format!(
                    "reserved_fraction {} must lie in (0, 1)",
                    self.reserved_fraction
                )));
            }
            let r = self.reserved_count(n_cal);
            if r == 0 || r >= n_cal {
                return Err(Error::Config(format!(
                    "reserved count {r} leaves no usable split of {n_cal} calibration samples"
                )));
            }
            if let EllGrid::Explicit(v) = &self.ell_grid {
                if v.is_empty() || !v.contains(&0.0) || v.iter().any(|x| !(*x >= 0.0)) {
                    return Err(Error::Config(
                        "explicit ell grid must be non-empty, >= 0 and contain 0".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// A fitted model of any method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FittedMethod {
    SplitCp(SplitCpModel),
    Offset(CalibratedModel<OffsetFamily>),
    Relative(CalibratedModel<RelativeFamily>),
    Cpul(CpulModel),
    Omlt(OmltModel),
}

impl FittedMethod {
    pub fn predict(&self, sample: &BoundedSample) -> Interval {
        match self {
            FittedMethod::SplitCp(m) => m.predict(sample),
            FittedMethod::Offset(m) => m.predict(sample),
            FittedMethod::Relative(m) => m.predict(sample),
            FittedMethod::Cpul(m) => m.predict(sample),
            FittedMethod::Omlt(m) => m.predict(sample),
        }
    }

    /// Selection summary for the CPUL-based methods.
    pub fn cpul_selection(&self) -> Option<(CpulVariant, [f64; 4])> {
        match self {
            FittedMethod::Cpul(m) => Some((m.selected, m.mean_widths)),
            FittedMethod::Omlt(m) => Some((m.inner.selected, m.inner.mean_widths)),
            _ => None,
        }
    }
}

pub fn method_predict(model: &FittedMethod, sample: &BoundedSample) -> Interval {
    model.predict(sample)
}

/// Fits one configured method. `seed` drives the reserved-set shuffle of
/// `cpul-omlt` and is ignored by the other methods.
pub fn fit_method(
    config: &MethodConfig,
    train_set: &[BoundedSample],
    cal_set: &[BoundedSample],
    alpha: f64,
    seed: u64,
) -> Result<FittedMethod> {
    Ok(match config.method {
        MethodKind::SplitCpLower => FittedMethod::SplitCp(split_cp_fit(BoundSide::Lower, cal_set, alpha)?),
        MethodKind::SplitCpUpper => FittedMethod::SplitCp(split_cp_fit(BoundSide::Upper, cal_set, alpha)?),
        MethodKind::Sfd => FittedMethod::Offset(sfd_fit(train_set, cal_set, alpha)?),
        MethodKind::Cqr => FittedMethod::Offset(cqr_fit(cal_set, alpha)?),
        MethodKind::CqrR => FittedMethod::Relative(cqr_r_fit(cal_set, alpha)?),
        MethodKind::Cpul => FittedMethod::Cpul(cpul_fit(train_set, cal_set, alpha)?),
        MethodKind::CpulOmlt => {
            config.validate(cal_set.len())?;
            let omlt_config = OmltConfig {
                ell_grid: config.ell_grid.clone(),
                reserved_count: config.reserved_count(cal_set.len()),
                seed,
            };
            FittedMethod::Omlt(omlt_fit(train_set, cal_set, alpha, &omlt_config)?)
        }
    })
}
