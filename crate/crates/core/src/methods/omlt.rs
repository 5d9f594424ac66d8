//! Minimal-length thresholding on top of the CPUL families.
//!
//! For a threshold `ℓ >= 0`, let `κ_ℓ(x)` be the smallest `t` at which the
//! strengthened interval reaches width `ℓ`. The wrapped family is
//!
//! ```text
//! C̄_{ℓ,t}(x) = [b_lo, b_hi]          if Δ(x) < ℓ
//!              C̃_{max(t, κ_ℓ(x))}(x)  otherwise
//! ```
//!
//! so intervals never shrink below `ℓ` where the bounds leave room for it.
//! At `Δ(x) = ℓ > 0` both branches give `[b_lo, b_hi]`, and `ℓ = 0` leaves
//! the strengthened family unchanged.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cpul::{argmin_first, cpul_residual_quantiles, select_variant, CpulModel, CpulVariant, ResidualQuantiles};
use crate::error::{Error, Result};
use crate::interval::{strengthen_with, BoundedSample, Bounds, Interval};
use crate::ncp::{calibrate, CalibratedModel, NestedFamily, OffsetFamily};
use crate::quantile::{quantile_of_sorted, sorted};

const KAPPA_MAX_ITERS: usize = 200;

/// An offset family with a minimal-length floor `ell`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OmltFamily {
    pub inner: OffsetFamily,
    pub ell: f64,
}

pub fn omlt_wrap(inner: OffsetFamily, ell: f64) -> Result<OmltFamily> {
    if !(ell >= 0.0) || !ell.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "minimal length {ell} must be finite and >= 0"
        )));
    }
    Ok(OmltFamily { inner, ell })
}

fn strengthened_width(inner: &OffsetFamily, bounds: Bounds, t: f64) -> f64 {
    strengthen_with(inner.interval(bounds, t), bounds).width()
}

impl OmltFamily {
    /// `κ_ℓ(x)`; `-∞` for `ℓ = 0`. Only meaningful when `Δ(x) >= ℓ`.
    pub fn kappa(&self, bounds: Bounds) -> f64 {
        if self.ell == 0.0 {
            return f64::NEG_INFINITY;
        }
        let (l, u) = self.inner.endpoints(bounds);
        let k = (self.ell - (u - l)) / 2.0;
        if l - k >= bounds.lo && u + k <= bounds.hi {
            k
        } else {
            self.kappa_bisect(bounds)
        }
    }

    /// `κ_ℓ(x)` by bisection on the strengthened width, which is
    /// nondecreasing in `t` and reaches `Δ(x)`.
    pub fn kappa_bisect(&self, bounds: Bounds) -> f64 {
        if self.ell == 0.0 {
            return f64::NEG_INFINITY;
        }
        let (l, u) = self.inner.endpoints(bounds);
        // width 0 at or below the collapse point; full gap once both ends are clipped
        let mut lo = (l - u) / 2.0 - 1.0;
        let mut hi = (l - bounds.lo).max(bounds.hi - u).max(lo + 1.0);
        for _ in 0..KAPPA_MAX_ITERS {
            if hi - lo <= 1e-13 * hi.abs().max(1.0) {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if strengthened_width(&self.inner, bounds, mid) >= self.ell {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }

    fn below_floor(&self, bounds: Bounds) -> bool {
        bounds.gap() < self.ell
    }
}

impl NestedFamily for OmltFamily {
    fn interval(&self, bounds: Bounds, t: f64) -> Interval {
        if self.below_floor(bounds) {
            return bounds.as_interval();
        }
        let t = t.max(self.kappa(bounds));
        strengthen_with(self.inner.interval(bounds, t), bounds)
    }

    fn min_covering_t(&self, sample: &BoundedSample) -> Result<f64> {
        let bounds = sample.bounds();
        if self.below_floor(bounds) {
            return Ok(f64::NEG_INFINITY);
        }
        let kappa = self.kappa(bounds);
        if strengthen_with(self.inner.interval(bounds, kappa), bounds).contains(sample.y) {
            return Ok(f64::NEG_INFINITY);
        }
        self.inner.min_covering_t(sample)
    }
}

/// How candidate thresholds are generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EllGrid {
    /// `{0}` plus `levels` quantiles of the reserved-set gaps `Δ(x)` at
    /// equally spaced levels from 2% to 50%.
    DeltaQuantiles {
        levels: usize,
    },
    Explicit(Vec<f64>),
}

impl Default for EllGrid {
    fn default() -> Self {
        EllGrid::DeltaQuantiles { levels: 24 }
    }
}

impl EllGrid {
    pub fn resolve(&self, reserved: &[BoundedSample]) -> Result<Vec<f64>> {
        match self {
            EllGrid::Explicit(values) => {
                if values.is_empty() {
                    return Err(Error::InvalidParameter("empty minimal-length grid".into()));
                }
                if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                    return Err(Error::InvalidParameter(
                        "minimal-length grid values must be finite and >= 0".into(),
                    ));
                }
                if !values.contains(&0.0) {
                    return Err(Error::InvalidParameter("minimal-length grid must contain 0".into()));
                }
                Ok(values.clone())
            }
            EllGrid::DeltaQuantiles { levels } => {
                if reserved.is_empty() {
                    return Err(Error::EmptySample);
                }
                let gaps = sorted(&reserved.iter().map(BoundedSample::gap).collect::<Vec<_>>());
                let mut grid = vec![0.0];
                let n = *levels;
                for i in 0..n {
                    let level = if n == 1 {
                        0.02
                    } else {
                        0.02 + 0.48 * i as f64 / (n - 1) as f64
                    };
                    grid.push(quantile_of_sorted(&gaps, level));
                }
                Ok(grid)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmltConfig {
    pub ell_grid: EllGrid,
    pub reserved_count: usize,
    /// Seed for the shuffle that picks the reserved calibration samples.
    pub seed: u64,
}

/// CPUL over minimal-length-wrapped families, with per-variant thresholds
/// chosen on a reserved part of the calibration set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmltModel {
    /// Threshold of the selected variant.
    pub ell: f64,
    pub ell_per_variant: [f64; 4],
    pub inner: CpulModel<OmltFamily>,
    pub reserved_fraction: f64,
    pub grid: Vec<f64>,
}

impl OmltModel {
    pub fn predict(&self, sample: &BoundedSample) -> Interval {
        self.inner.predict(sample)
    }
}

/// Seeded shuffle of the calibration set, split into `(reserved, remainder)`.
pub fn split_reserved(
    cal_set: &[BoundedSample],
    reserved_count: usize,
    seed: u64,
) -> Result<(Vec<BoundedSample>, Vec<BoundedSample>)> {
    if reserved_count == 0 || reserved_count >= cal_set.len() {
        return Err(Error::InvalidParameter(format!(
            "reserved count {reserved_count} must be in [1, {})",
            cal_set.len()
        )));
    }
    let mut idx: Vec<usize> = (0..cal_set.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let reserved = idx[..reserved_count].iter().map(|&i| cal_set[i].clone()).collect();
    let remainder = idx[reserved_count..].iter().map(|&i| cal_set[i].clone()).collect();
    Ok((reserved, remainder))
}

/// Mean width on `reserved` of each `(variant, ℓ)` pair after calibrating there.
fn grid_widths(
    quantiles: &ResidualQuantiles,
    grid: &[f64],
    reserved: &[BoundedSample],
    alpha: f64,
) -> Result<Vec<[f64; 4]>> {
    grid.par_iter()
        .map(|&ell| {
            let mut row = [0.0; 4];
            for v in CpulVariant::ALL {
                let model = calibrate(omlt_wrap(v.family(quantiles), ell)?, reserved, alpha)?;
                row[v.index()] = model.mean_width(reserved);
            }
            Ok(row)
        })
        .collect()
}

pub fn omlt_fit_with_quantiles(
    quantiles: ResidualQuantiles,
    cal_set: &[BoundedSample],
    alpha: f64,
    config: &OmltConfig,
) -> Result<OmltModel> {
    let (reserved, remainder) = split_reserved(cal_set, config.reserved_count, config.seed)?;
    let grid = config.ell_grid.resolve(&reserved)?;
    let widths = grid_widths(&quantiles, &grid, &reserved, alpha)?;

    let mut ell_per_variant = [0.0; 4];
    let mut variants = Vec::with_capacity(4);
    for v in CpulVariant::ALL {
        let column: Vec<f64> = widths.iter().map(|row| row[v.index()]).collect();
        let ell = grid[argmin_first(&column)];
        ell_per_variant[v.index()] = ell;
        variants.push(calibrate(omlt_wrap(v.family(&quantiles), ell)?, &remainder, alpha)?);
    }
    let variants: [CalibratedModel<OmltFamily>; 4] = variants.try_into().expect("four variants");
    let inner = select_variant(quantiles, variants, &remainder);
    Ok(OmltModel {
        ell: ell_per_variant[inner.selected.index()],
        ell_per_variant,
        inner,
        reserved_fraction: config.reserved_count as f64 / cal_set.len() as f64,
        grid,
    })
}

pub fn omlt_fit(
    train_set: &[BoundedSample],
    cal_set: &[BoundedSample],
    alpha: f64,
    config: &OmltConfig,
) -> Result<OmltModel> {
    let q = cpul_residual_quantiles(train_set, alpha)?;
    omlt_fit_with_quantiles(q, cal_set, alpha, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::methods::cpul::cpul_fit;
    use crate::ncp::BoundSide;
    use proptest::prelude::*;

    fn sample(y: f64, lo: f64, hi: f64) -> BoundedSample {
        BoundedSample::new(vec![], y, lo, hi).unwrap()
    }

    fn fam(ls: f64, us: f64) -> OffsetFamily {
        OffsetFamily::new(BoundSide::Lower, ls, BoundSide::Upper, us)
    }

    #[test]
    fn zero_threshold_is_strengthened_original() {
        let inner = fam(0.3, -0.4);
        let w = omlt_wrap(inner, 0.0).unwrap();
        let b = Bounds::new(1.0, 2.0).unwrap();
        for i in -20..20 {
            let t = i as f64 * 0.05;
            assert_eq!(w.interval(b, t), strengthen_with(inner.interval(b, t), b));
        }
    }

    #[test]
    fn narrow_bounds_return_bounds() {
        let w = omlt_wrap(fam(0.1, -0.1), 1.0).unwrap();
        let b = Bounds::new(3.0, 3.5).unwrap();
        for t in [-10.0, -0.2, 0.0, 5.0] {
            assert_eq!(w.interval(b, t), Interval::new(3.0, 3.5));
        }
    }

    #[test]
    fn kappa_closed_form_no_truncation() {
        // L = 4, U = 5 inside bounds [0, 10]; ell = 2 -> kappa = 0.5
        let w = omlt_wrap(fam(4.0, -5.0), 2.0).unwrap();
        let b = Bounds::new(0.0, 10.0).unwrap();
        assert_eq!(w.kappa(b), 0.5);
        assert!((w.kappa_bisect(b) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn kappa_with_truncation() {
        // L = b_lo - 1 already clipped; U = b_lo + 0.5; ell = 2 on bounds [0, 10]
        let w = omlt_wrap(OffsetFamily::new(BoundSide::Lower, -1.0, BoundSide::Lower, 0.5), 2.0).unwrap();
        let b = Bounds::new(0.0, 10.0).unwrap();
        // strengthened width = 0.5 + t for t >= -1 -> kappa = 1.5
        assert!((w.kappa(b) - 1.5).abs() < 1e-9);
    }

    #[test]
    fn negative_threshold_rejected() {
        assert!(omlt_wrap(fam(0.0, 0.0), -0.1).is_err());
        assert!(omlt_wrap(fam(0.0, 0.0), f64::NAN).is_err());
    }

    #[test]
    fn grid_resolution() {
        let reserved: Vec<_> = (1..=100).map(|i| sample(0.0, 0.0, i as f64)).collect();
        let grid = EllGrid::default().resolve(&reserved).unwrap();
        assert_eq!(grid.len(), 25);
        assert_eq!(grid[0], 0.0);
        assert_eq!(grid[1], 2.0);
        assert_eq!(grid[24], 50.0);
        assert!(EllGrid::Explicit(vec![0.5]).resolve(&reserved).is_err());
        assert!(EllGrid::Explicit(vec![]).resolve(&reserved).is_err());
    }

    fn synthetic(n: usize, seed: u64) -> Vec<BoundedSample> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let y: f64 = rng.random_range(50.0..150.0);
                let gap_scale: f64 = if rng.random_bool(0.2) { 0.01 } else { 1.0 };
                let lo = y - gap_scale * rng.random_range(0.0..2.0);
                let hi = y + gap_scale * rng.random_range(0.0..3.0);
                sample(y, lo, hi)
            })
            .collect()
    }

    #[test]
    fn zero_grid_reproduces_cpul() {
        let data = synthetic(900, 3);
        let (train, cal) = data.split_at(300);
        let cfg = OmltConfig {
            ell_grid: EllGrid::Explicit(vec![0.0]),
            reserved_count: 200,
            seed: 11,
        };
        let omlt = omlt_fit(train, cal, 0.1, &cfg).unwrap();
        let (_, remainder) = split_reserved(cal, 200, 11).unwrap();
        let cpul = cpul_fit(train, &remainder, 0.1).unwrap();
        assert_eq!(omlt.inner.selected, cpul.selected);
        for v in CpulVariant::ALL {
            assert_eq!(omlt.inner.tau(v), cpul.tau(v));
        }
        for s in &data {
            assert_eq!(omlt.predict(s), cpul.predict(s));
        }
    }

    #[test]
    fn selected_threshold_beats_zero_on_reserved() {
        let data = synthetic(1200, 5);
        let (train, cal) = data.split_at(400);
        let cfg = OmltConfig {
            ell_grid: EllGrid::default(),
            reserved_count: 300,
            seed: 2,
        };
        let model = omlt_fit(train, cal, 0.1, &cfg).unwrap();
        let (reserved, _) = split_reserved(cal, 300, 2).unwrap();
        let q = model.inner.quantiles;
        for v in CpulVariant::ALL {
            let chosen = calibrate(
                omlt_wrap(v.family(&q), model.ell_per_variant[v.index()]).unwrap(),
                &reserved,
                0.1,
            )
            .unwrap()
            .mean_width(&reserved);
            let zero = calibrate(omlt_wrap(v.family(&q), 0.0).unwrap(), &reserved, 0.1)
                .unwrap()
                .mean_width(&reserved);
            assert!(chosen <= zero);
        }
    }

    #[test]
    fn reserved_count_must_leave_remainder() {
        let data = synthetic(20, 1);
        let cfg = OmltConfig {
            ell_grid: EllGrid::default(),
            reserved_count: 10,
            seed: 0,
        };
        assert!(omlt_fit(&data, &data[..10], 0.1, &cfg).is_err());
    }

    proptest! {
        #[test]
        fn wrapped_family_nests(ls in -2.0f64..2.0, us in -2.0f64..2.0, b_lo in -5.0f64..5.0, gap in 0.0f64..4.0,
                                ell in 0.0f64..3.0, t in -4.0f64..4.0, dt in 0.0f64..4.0) {
            let w = omlt_wrap(fam(ls, us), ell).unwrap();
            let b = Bounds::new(b_lo, b_lo + gap).unwrap();
            prop_assert!(w.interval(b, t).is_subset_of(&w.interval(b, t + dt)));
        }

        #[test]
        fn wrapped_score_is_membership_inverse(ls in -2.0f64..2.0, us in -2.0f64..2.0, b_lo in -5.0f64..5.0,
                                               gap in 0.0f64..4.0, frac in 0.0f64..=1.0, ell in 0.0f64..3.0,
                                               t in -4.0f64..4.0) {
            let w = omlt_wrap(fam(ls, us), ell).unwrap();
            let s = sample(b_lo + frac * gap, b_lo, b_lo + gap);
            let score = w.min_covering_t(&s).unwrap();
            prop_assert_eq!(w.interval(s.bounds(), t).contains(s.y), t >= score);
        }

        #[test]
        fn floor_is_respected(ls in -2.0f64..2.0, us in -2.0f64..2.0, gap in 0.0f64..4.0, ell in 0.0f64..3.0,
                              t in -4.0f64..4.0) {
            let w = omlt_wrap(fam(ls, us), ell).unwrap();
            let b = Bounds::new(0.0, gap).unwrap();
            let width = w.interval(b, t).width();
            if gap < ell {
                prop_assert_eq!(width, gap);
            } else {
                prop_assert!(width >= ell - 1e-9);
            }
        }
    }
}
