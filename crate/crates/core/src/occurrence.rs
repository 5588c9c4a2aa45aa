//! Occurrence rate classes and their prior-probability intervals.
//!
//! Class 1 covers the closed interval `[0, 1e-6]`; every other class `k`
//! covers the half-open interval `(lower_k, upper_k]`, with
//! `upper_k == lower_{k+1}`.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Interval endpoints; class `k` spans `BOUNDS[k - 1]..=BOUNDS[k]`.
const BOUNDS: [f64; 11] = [
    0.0, 1e-6, 50e-6, 100e-6, 1e-3, 2e-3, 5e-3, 10e-3, 20e-3, 50e-3, 1.0,
];

/// Lower bound used in place of zero when taking the geometric mean of class 1.
pub const PRIOR_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum OccurrenceError {
    #[error("occurrence class {0} is outside 1..=10")]
    ClassOutOfRange(i64),
    #[error("probability {0} is outside [0, 1]")]
    ProbabilityOutOfRange(f64),
}

/// An FMEA occurrence rate class, 1 (practically never) to 10 (very often).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "u8")]
pub struct OccurrenceClass(u8);

impl OccurrenceClass {
    pub const MIN: OccurrenceClass = OccurrenceClass(1);
    pub const MAX: OccurrenceClass = OccurrenceClass(10);

    pub fn new(class: i64) -> Result<Self, OccurrenceError> {
        if (1..=10).contains(&class) {
            Ok(OccurrenceClass(class as u8))
        } else {
            Err(OccurrenceError::ClassOutOfRange(class))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn all() -> impl Iterator<Item = OccurrenceClass> {
        (1..=10).map(OccurrenceClass)
    }

    pub fn interval(self) -> ProbabilityInterval {
        let k = self.0 as usize;
        ProbabilityInterval {
            lower: BOUNDS[k - 1],
            upper: BOUNDS[k],
            lower_closed: k == 1,
        }
    }

    /// Geometric mean of the interval endpoints, with the zero lower bound of
    /// class 1 floored at [`PRIOR_FLOOR`].
    pub fn representative_prior(self) -> f64 {
        let iv = self.interval();
        (iv.lower.max(PRIOR_FLOOR) * iv.upper).sqrt()
    }

    /// The class whose interval contains `p`.
    pub fn from_probability(p: f64) -> Result<Self, OccurrenceError> {
        if !(0.0..=1.0).contains(&p) {
            return Err(OccurrenceError::ProbabilityOutOfRange(p));
        }
        let k = (1..=10).find(|&k| p <= BOUNDS[k]).unwrap_or(10);
        Ok(OccurrenceClass(k as u8))
    }
}

impl TryFrom<i64> for OccurrenceClass {
    type Error = OccurrenceError;

    fn try_from(value: i64) -> Result<Self, Self::Error> {
        OccurrenceClass::new(value)
    }
}

impl From<OccurrenceClass> for u8 {
    fn from(c: OccurrenceClass) -> u8 {
        c.0
    }
}

impl fmt::Display for OccurrenceClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A probability interval `(lower, upper]`, or `[lower, upper]` when
/// `lower_closed` is set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityInterval {
    pub lower: f64,
    pub upper: f64,
    pub lower_closed: bool,
}

impl ProbabilityInterval {
    pub fn contains(&self, p: f64) -> bool {
        let above = if self.lower_closed {
            p >= self.lower
        } else {
            p > self.lower
        };
        above && p <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

pub fn class_to_interval(class: i64) -> Result<ProbabilityInterval, OccurrenceError> {
    Ok(OccurrenceClass::new(class)?.interval())
}

pub fn probability_to_class(p: f64) -> Result<OccurrenceClass, OccurrenceError> {
    OccurrenceClass::from_probability(p)
}

pub fn representative_prior(class: i64) -> Result<f64, OccurrenceError> {
    Ok(OccurrenceClass::new(class)?.representative_prior())
}
