//! Closed real intervals and labelled samples carrying certified bounds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A closed interval `[lo, hi]` on the extended real line, or the empty set.
///
/// Endpoints may be infinite so that a family evaluated at the top of its
/// parameter domain can return the whole line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Interval {
    Empty,
    Closed { lo: f64, hi: f64 },
}

impl Interval {
    /// Builds `[lo, hi]`, normalizing `lo > hi` (or a NaN endpoint) to the empty set.
    pub fn new(lo: f64, hi: f64) -> Self {
        if lo <= hi {
            Interval::Closed { lo, hi }
        } else {
            Interval::Empty
        }
    }

    pub fn point(v: f64) -> Self {
        Interval::new(v, v)
    }

    pub fn full() -> Self {
        Interval::Closed {
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
        }
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, Interval::Empty)
    }

    pub fn lo(&self) -> Option<f64> {
        match *self {
            Interval::Closed { lo, .. } => Some(lo),
            Interval::Empty => None,
        }
    }

    pub fn hi(&self) -> Option<f64> {
        match *self {
            Interval::Closed { hi, .. } => Some(hi),
            Interval::Empty => None,
        }
    }

    /// `hi - lo`, and exactly 0 for the empty interval.
    pub fn width(&self) -> f64 {
        match *self {
            Interval::Closed { lo, hi } => hi - lo,
            Interval::Empty => 0.0,
        }
    }

    pub fn contains(&self, y: f64) -> bool {
        match *self {
            Interval::Closed { lo, hi } => lo <= y && y <= hi,
            Interval::Empty => false,
        }
    }

    /// Set inclusion `self ⊆ other`.
    pub fn is_subset_of(&self, other: &Interval) -> bool {
        match (*self, *other) {
            (Interval::Empty, _) => true,
            (Interval::Closed { .. }, Interval::Empty) => false,
            (Interval::Closed { lo: a, hi: b }, Interval::Closed { lo: c, hi: d }) => c <= a && b <= d,
        }
    }

    pub fn intersect(&self, other: &Interval) -> Interval {
        match (*self, *other) {
            (Interval::Closed { lo: a, hi: b }, Interval::Closed { lo: c, hi: d }) => Interval::new(a.max(c), b.min(d)),
            _ => Interval::Empty,
        }
    }
}

/// A certified bound pair `[b_lo, b_hi]` on the target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lo: f64,
    pub hi: f64,
}

impl Bounds {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if lo > hi || lo.is_nan() || hi.is_nan() {
            return Err(Error::InvalidBoundPair { lo, hi });
        }
        Ok(Bounds { lo, hi })
    }

    /// Width of the certified interval, `Δ(x) = b_hi - b_lo`.
    pub fn gap(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn as_interval(&self) -> Interval {
        Interval::new(self.lo, self.hi)
    }
}

/// Intersects `interval` with `[b_lo, b_hi]`.
pub fn strengthen(interval: Interval, b_lo: f64, b_hi: f64) -> Result<Interval> {
    let bounds = Bounds::new(b_lo, b_hi)?;
    Ok(strengthen_with(interval, bounds))
}

/// Infallible form of [`strengthen`] for an already validated bound pair.
#[inline]
pub fn strengthen_with(interval: Interval, bounds: Bounds) -> Interval {
    interval.intersect(&bounds.as_interval())
}

/// One labelled instance: problem parameters, true optimum, and valid bounds on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundedSample {
    pub features: Vec<f64>,
    pub y: f64,
    pub b_lo: f64,
    pub b_hi: f64,
}

impl BoundedSample {
    /// Validates finiteness and `b_lo <= y <= b_hi`.
    pub fn new(features: Vec<f64>, y: f64, b_lo: f64, b_hi: f64) -> Result<Self> {
        if !(y.is_finite() && b_lo.is_finite() && b_hi.is_finite()) {
            return Err(Error::InvalidSample(format!(
                "non-finite values (y={y}, b_lo={b_lo}, b_hi={b_hi})"
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSample("non-finite feature".into()));
        }
        if !(b_lo <= y && y <= b_hi) {
            return Err(Error::InvalidSample(format!(
                "bounds do not sandwich the target: {b_lo} <= {y} <= {b_hi} fails"
            )));
        }
        Ok(BoundedSample {
            features,
            y,
            b_lo,
            b_hi,
        })
    }

    pub fn bounds(&self) -> Bounds {
        Bounds {
            lo: self.b_lo,
            hi: self.b_hi,
        }
    }

    pub fn gap(&self) -> f64 {
        self.b_hi - self.b_lo
    }
}
