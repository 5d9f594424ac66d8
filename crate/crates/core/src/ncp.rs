//! Nested conformal prediction: monotone interval families, score
//! computation, threshold calibration and strengthened prediction.
//!
//! A [`NestedFamily`] maps a bound pair and a parameter `t` to an interval,
//! with `t ≤ t'` implying `C_t ⊆ C_t'`. Calibration computes, for every
//! calibration sample, the smallest `t` whose interval covers the label and
//! takes the `⌈(1-α)(N+1)⌉`-th smallest of those scores as the threshold.
//! If that rank exceeds `N` the threshold is the top of the domain, where the
//! family returns the whole line and strengthening leaves `[b_lo, b_hi]`.
//!
//! Scores are exact in floating point: `y ∈ C_t(x)` holds iff
//! `t >= min_covering_t`, where `C_t` is evaluated with the same arithmetic
//! the family uses at prediction time.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interval::{strengthen_with, BoundedSample, Bounds, Interval};
use crate::quantile::{ceil_rank, sorted};

/// Parameter domain `T` of a family, an interval of the extended real line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamDomain {
    pub inf: f64,
    pub sup: f64,
}

impl ParamDomain {
    pub const REAL_LINE: ParamDomain = ParamDomain {
        inf: f64::NEG_INFINITY,
        sup: f64::INFINITY,
    };

    pub fn clamp(&self, t: f64) -> f64 {
        t.max(self.inf).min(self.sup)
    }
}

/// A monotone one-parameter family of prediction intervals.
pub trait NestedFamily {
    fn domain(&self) -> ParamDomain {
        ParamDomain::REAL_LINE
    }

    /// Raw (unstrengthened) interval `C_t(x)`.
    fn interval(&self, bounds: Bounds, t: f64) -> Interval;

    /// Smallest `t` in the domain with `y ∈ C_t(x)`.
    fn min_covering_t(&self, sample: &BoundedSample) -> Result<f64> {
        bisect_min_covering_t(self, sample)
    }
}

impl<F: NestedFamily + ?Sized> NestedFamily for &F {
    fn domain(&self) -> ParamDomain {
        (**self).domain()
    }
    fn interval(&self, bounds: Bounds, t: f64) -> Interval {
        (**self).interval(bounds, t)
    }
    fn min_covering_t(&self, sample: &BoundedSample) -> Result<f64> {
        (**self).min_covering_t(sample)
    }
}

/// Generic score by bisection over the domain, resolved down to adjacent
/// floating-point values.
pub fn bisect_min_covering_t<F: NestedFamily + ?Sized>(family: &F, sample: &BoundedSample) -> Result<f64> {
    let bounds = sample.bounds();
    let domain = family.domain();
    let y = sample.y;
    smallest_true(|t| family.interval(bounds, t).contains(y), domain.clamp(0.0), domain).ok_or(Error::CannotCover { y })
}

/// Maps an `f64` onto a `u64` whose unsigned order matches the float order.
fn order_key(x: f64) -> u64 {
    let bits = x.to_bits();
    if bits >> 63 == 1 {
        !bits
    } else {
        bits | (1 << 63)
    }
}

fn from_order_key(k: u64) -> f64 {
    if k >> 63 == 1 {
        f64::from_bits(k & !(1 << 63))
    } else {
        f64::from_bits(!k)
    }
}

/// Smallest `t` in `domain` for which the monotone predicate holds, searched
/// outward from `guess` and then bisected on the float lattice.
pub(crate) fn smallest_true(pred: impl Fn(f64) -> bool, guess: f64, domain: ParamDomain) -> Option<f64> {
    let guess = domain.clamp(guess);
    let (mut lo, mut hi);
    if pred(guess) {
        hi = guess;
        if guess == domain.inf {
            return Some(guess);
        }
        let mut step = guess.abs().max(1.0) * 1e-12;
        loop {
            let cand = domain.clamp(guess - step);
            if !pred(cand) {
                lo = cand;
                break;
            }
            hi = cand;
            if cand == domain.inf {
                return Some(cand);
            }
            step *= 4.0;
        }
    } else {
        lo = guess;
        if guess == domain.sup {
            return None;
        }
        let mut step = guess.abs().max(1.0) * 1e-12;
        loop {
            let cand = domain.clamp(guess + step);
            if pred(cand) {
                hi = cand;
                break;
            }
            lo = cand;
            if cand == domain.sup {
                return None;
            }
            step *= 4.0;
        }
    }
    let (mut klo, mut khi) = (order_key(lo), order_key(hi));
    while khi - klo > 1 {
        let mid = klo + (khi - klo) / 2;
        if pred(from_order_key(mid)) {
            khi = mid;
        } else {
            klo = mid;
        }
    }
    hi = from_order_key(khi);
    Some(hi)
}

/// Which certified bound an offset endpoint is anchored to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundSide {
    Lower,
    Upper,
}

impl BoundSide {
    pub fn pick(self, bounds: Bounds) -> f64 {
        match self {
            BoundSide::Lower => bounds.lo,
            BoundSide::Upper => bounds.hi,
        }
    }
}

/// `C_t(x) = [L(x) - t, U(x) + t]` where each endpoint is one of the
/// certified bounds plus a constant shift. Domain is the whole real line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffsetFamily {
    pub lower_side: BoundSide,
    pub lower_shift: f64,
    pub upper_side: BoundSide,
    pub upper_shift: f64,
}

impl OffsetFamily {
    pub fn new(lower_side: BoundSide, lower_shift: f64, upper_side: BoundSide, upper_shift: f64) -> Self {
        OffsetFamily {
            lower_side,
            lower_shift,
            upper_side,
            upper_shift,
        }
    }

    /// `(L(x), U(x))`, the interval at `t = 0`.
    pub fn endpoints(&self, bounds: Bounds) -> (f64, f64) {
        (
            self.lower_side.pick(bounds) + self.lower_shift,
            self.upper_side.pick(bounds) + self.upper_shift,
        )
    }

    /// `max(L(x) - y, y - U(x))` in real arithmetic.
    pub fn score_closed_form(&self, bounds: Bounds, y: f64) -> f64 {
        let (l, u) = self.endpoints(bounds);
        (l - y).max(y - u)
    }
}

impl NestedFamily for OffsetFamily {
    fn interval(&self, bounds: Bounds, t: f64) -> Interval {
        let (l, u) = self.endpoints(bounds);
        Interval::new(l - t, u + t)
    }

    fn min_covering_t(&self, sample: &BoundedSample) -> Result<f64> {
        let bounds = sample.bounds();
        let guess = self.score_closed_form(bounds, sample.y);
        let y = sample.y;
        smallest_true(|t| self.interval(bounds, t).contains(y), guess, ParamDomain::REAL_LINE)
            .ok_or(Error::CannotCover { y })
    }
}

/// `C̃_t(x) = C_t(x) ∩ [b_lo, b_hi]`, the pre-strengthened version of a family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Strengthened<F>(pub F);

impl<F: NestedFamily> NestedFamily for Strengthened<F> {
    fn domain(&self) -> ParamDomain {
        self.0.domain()
    }

    fn interval(&self, bounds: Bounds, t: f64) -> Interval {
        strengthen_with(self.0.interval(bounds, t), bounds)
    }

    fn min_covering_t(&self, sample: &BoundedSample) -> Result<f64> {
        // Labels lie inside their bounds, so membership in C̃_t and C_t coincide.
        self.0.min_covering_t(sample)
    }
}

/// Conformity scores `t_i = inf{t : y_i ∈ C_t(x_i)}` over a calibration set.
pub fn calibration_scores<F: NestedFamily + ?Sized>(family: &F, cal_set: &[BoundedSample]) -> Result<Vec<f64>> {
    cal_set.iter().map(|s| family.min_covering_t(s)).collect()
}

/// Rank `⌈(1-α)(N+1)⌉` used to pick the threshold among `N` scores.
pub fn conformal_rank(n_cal: usize, alpha: f64) -> usize {
    ceil_rank((1.0 - alpha) * (n_cal as f64 + 1.0))
}

/// Threshold from raw scores: the rank-`k` order statistic, or `sup` when `k > N`.
pub fn threshold_from_scores(scores: &[f64], alpha: f64, sup: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::EmptySample);
    }
    let k = conformal_rank(scores.len(), alpha).max(1);
    if k > scores.len() {
        return Ok(sup);
    }
    Ok(sorted(scores)[k - 1])
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha {alpha} outside (0, 1)")));
    }
    Ok(())
}

/// A family together with its calibrated threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedModel<F> {
    pub family: F,
    pub tau: f64,
    pub alpha: f64,
    pub strengthen: bool,
}

impl<F: NestedFamily> CalibratedModel<F> {
    pub fn predict(&self, sample: &BoundedSample) -> Interval {
        self.predict_bounds(sample.bounds())
    }

    /// `C_τ(x)`, strengthened with the bound pair.
    pub fn predict_bounds(&self, bounds: Bounds) -> Interval {
        let raw = self.family.interval(bounds, self.tau);
        if self.strengthen {
            strengthen_with(raw, bounds)
        } else {
            raw
        }
    }

    /// Mean predicted width over a sample set.
    pub fn mean_width(&self, samples: &[BoundedSample]) -> f64 {
        if samples.is_empty() {
            return 0.0;
        }
        samples.iter().map(|s| self.predict(s).width()).sum::<f64>() / samples.len() as f64
    }
}

/// Calibrates `family` on `cal_set` at miscoverage level `alpha`.
pub fn calibrate<F: NestedFamily>(family: F, cal_set: &[BoundedSample], alpha: f64) -> Result<CalibratedModel<F>> {
    if cal_set.is_empty() {
        return Err(Error::EmptySample);
    }
    check_alpha(alpha)?;
    let scores = calibration_scores(&family, cal_set)?;
    let tau = threshold_from_scores(&scores, alpha, family.domain().sup)?;
    Ok(CalibratedModel {
        family,
        tau,
        alpha,
        strengthen: true,
    })
}

/// `η = sqrt(ln(8)/2) + 1/3`.
pub fn selection_eta() -> f64 {
    (8f64.ln() / 2.0).sqrt() + 1.0 / 3.0
}

/// Finite-sample coverage lower bound for the interval chosen by four-way
/// model selection: `((1+N)/N)(1-α) - η/√N`.
pub fn selection_coverage_bound(n_cal: usize, alpha: f64) -> Result<f64> {
    if n_cal == 0 {
        return Err(Error::InvalidParameter("n_cal must be positive".into()));
    }
    let n = n_cal as f64;
    Ok((1.0 + n) / n * (1.0 - alpha) - selection_eta() / n.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample(y: f64, lo: f64, hi: f64) -> BoundedSample {
        BoundedSample::new(vec![], y, lo, hi).unwrap()
    }

    /// Family with `L = 2`, `U = 3` at `t = 0` when bounds are `(0, 10)`.
    fn fixed_family() -> OffsetFamily {
        OffsetFamily::new(BoundSide::Lower, 2.0, BoundSide::Lower, 3.0)
    }

    #[test]
    fn score_above_upper_endpoint() {
        let s = sample(5.0, 0.0, 10.0);
        let t = fixed_family().min_covering_t(&s).unwrap();
        assert!((t - 2.0).abs() < 1e-12);
        assert!(fixed_family().interval(s.bounds(), t).contains(5.0));
    }

    #[test]
    fn score_interior_is_negative() {
        let s = sample(2.5, 0.0, 10.0);
        let t = fixed_family().min_covering_t(&s).unwrap();
        assert!((t + 0.5).abs() < 1e-12);
        assert!(!fixed_family()
            .interval(s.bounds(), t - t.abs() * 1e-15 - 1e-300)
            .contains(2.5));
    }

    #[test]
    fn closed_form_matches_bisection() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let lo_shift = rng.random_range(-2.0..2.0);
            let fam = OffsetFamily::new(
                BoundSide::Lower,
                lo_shift,
                BoundSide::Upper,
                rng.random_range(-2.0..2.0),
            );
            let b_lo = rng.random_range(-5.0..5.0);
            let b_hi = b_lo + rng.random_range(0.0..4.0);
            let s = sample(rng.random_range(b_lo..=b_hi), b_lo, b_hi);
            let closed = fam.score_closed_form(s.bounds(), s.y);
            let bisected = bisect_min_covering_t(&fam, &s).unwrap();
            assert!((closed - bisected).abs() <= 1e-9, "{closed} vs {bisected}");
        }
    }

    #[test]
    fn calibrate_picks_rank_k_score() {
        // scores 0.1..0.9 via y - U with U = b_lo
        let fam = OffsetFamily::new(BoundSide::Lower, -100.0, BoundSide::Lower, 0.0);
        let cal: Vec<_> = (1..=9).map(|i| sample(i as f64 / 10.0, 0.0, 1.0)).collect();
        let model = calibrate(fam, &cal, 0.5).unwrap();
        assert_eq!(conformal_rank(9, 0.5), 5);
        assert_eq!(model.tau, fam.min_covering_t(&cal[4]).unwrap());
        assert!((model.tau - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rank_beyond_sample_size_gives_bounds() {
        let fam = OffsetFamily::new(BoundSide::Lower, 1.0, BoundSide::Lower, 2.0);
        let cal: Vec<_> = (0..4).map(|i| sample(1.0 + i as f64 * 0.1, 0.0, 10.0)).collect();
        let model = calibrate(fam, &cal, 0.1).unwrap();
        assert_eq!(model.tau, f64::INFINITY);
        assert_eq!(model.predict(&sample(3.0, 0.5, 7.0)), Interval::new(0.5, 7.0));
    }

    #[test]
    fn predict_direct_evaluation() {
        let model = CalibratedModel {
            family: OffsetFamily::new(BoundSide::Lower, 1.0, BoundSide::Lower, 2.0),
            tau: 0.5,
            alpha: 0.1,
            strengthen: true,
        };
        // Bounds (0, 10) give L = 1, U = 2.
        assert_eq!(model.predict(&sample(1.0, 0.0, 10.0)), Interval::new(0.5, 2.5));
    }

    #[test]
    fn predict_strengthening_binds() {
        let model = CalibratedModel {
            family: OffsetFamily::new(BoundSide::Lower, 0.0, BoundSide::Lower, 1.0),
            tau: 0.5,
            alpha: 0.1,
            strengthen: true,
        };
        // L = 1, U = 2 with b_lo = 1; raw [0.5, 2.5] clipped to [1.0, 2.2].
        assert_eq!(model.predict(&sample(1.5, 1.0, 2.2)), Interval::new(1.0, 2.2));
    }

    #[test]
    fn calibrate_rejects_empty_and_bad_alpha() {
        let fam = fixed_family();
        assert!(matches!(calibrate(fam, &[], 0.1), Err(Error::EmptySample)));
        assert!(calibrate(fam, &[sample(1.0, 0.0, 2.0)], 1.0).is_err());
    }

    #[test]
    fn eta_value() {
        let eta = selection_eta();
        assert!((eta - ((8.0f64).ln() / 2.0).sqrt() - 1.0 / 3.0).abs() < 1e-15);
        assert!((eta - 1.3530003235).abs() < 1e-9);
    }

    #[test]
    fn coverage_bound_at_hundred() {
        let b = selection_coverage_bound(100, 0.1).unwrap();
        // Independent evaluation: 0.909 - eta/10 with eta from its decimal value.
        let eta = 1.353_000_323_502_142_f64;
        assert!((b - (0.909 - eta / 10.0)).abs() < 1e-12);
    }

    #[test]
    fn coverage_bound_limit() {
        let b = selection_coverage_bound(100_000_000, 0.2).unwrap();
        assert!((b - 0.8).abs() < 2e-4);
        assert!(selection_coverage_bound(0, 0.1).is_err());
    }

    #[test]
    fn generic_family_without_coverage_errors() {
        struct Capped;
        impl NestedFamily for Capped {
            fn domain(&self) -> ParamDomain {
                ParamDomain { inf: 0.0, sup: 1.0 }
            }
            fn interval(&self, _b: Bounds, t: f64) -> Interval {
                Interval::new(-t, t)
            }
        }
        let err = Capped.min_covering_t(&sample(5.0, 0.0, 10.0)).unwrap_err();
        assert!(err.to_string().contains("cannot cover"));
        assert_eq!(Capped.min_covering_t(&sample(0.5, 0.0, 10.0)).unwrap(), 0.5);
    }

    #[test]
    fn order_key_roundtrip_and_order() {
        let xs = [f64::NEG_INFINITY, -1e300, -1.0, -0.0, 0.0, 1e-300, 1.0, f64::INFINITY];
        for w in xs.windows(2) {
            assert!(order_key(w[0]) <= order_key(w[1]));
        }
        for &x in &xs {
            assert_eq!(from_order_key(order_key(x)).to_bits(), x.to_bits());
        }
    }

    proptest! {
        #[test]
        fn score_is_exact_membership_inverse(
            ls in -3.0f64..3.0, us in -3.0f64..3.0, b_lo in -10.0f64..10.0, gap in 0.0f64..5.0,
            frac in 0.0f64..=1.0, t in -5.0f64..5.0,
        ) {
            let fam = OffsetFamily::new(BoundSide::Upper, ls, BoundSide::Lower, us);
            let s = sample(b_lo + frac * gap, b_lo, b_lo + gap);
            let score = fam.min_covering_t(&s).unwrap();
            prop_assert_eq!(fam.interval(s.bounds(), t).contains(s.y), t >= score);
            prop_assert!(fam.interval(s.bounds(), score).contains(s.y));
        }

        #[test]
        fn offset_family_nests(ls in -3.0f64..3.0, us in -3.0f64..3.0, b_lo in -10.0f64..10.0,
                               gap in 0.0f64..5.0, t in -5.0f64..5.0, dt in 0.0f64..5.0) {
            let fam = OffsetFamily::new(BoundSide::Lower, ls, BoundSide::Upper, us);
            let b = Bounds::new(b_lo, b_lo + gap).unwrap();
            prop_assert!(fam.interval(b, t).is_subset_of(&fam.interval(b, t + dt)));
            prop_assert!(Strengthened(fam).interval(b, t).is_subset_of(&Strengthened(fam).interval(b, t + dt)));
        }

        #[test]
        fn calibration_set_coverage_identity(ys in prop::collection::vec(0.0f64..1.0, 1..80), alpha in 0.01f64..0.99) {
            let fam = OffsetFamily::new(BoundSide::Lower, 0.3, BoundSide::Upper, -0.3);
            let cal: Vec<_> = ys.iter().map(|&y| sample(y, 0.0, 1.0)).collect();
            let model = calibrate(fam, &cal, alpha).unwrap();
            let n = cal.len() as f64;
            let covered = cal.iter().filter(|s| model.predict(s).contains(s.y)).count() as f64;
            if conformal_rank(cal.len(), alpha) <= cal.len() {
                prop_assert!(covered / n >= (1.0 - alpha) * (n + 1.0) / n - 1e-12);
            } else {
                prop_assert_eq!(covered, n);
            }
        }
    }
}
