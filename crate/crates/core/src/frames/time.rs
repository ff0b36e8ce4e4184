use std::fmt;
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};

/// Nanoseconds on a monotonic run clock.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(pub u64);

pub const NANOS_PER_SEC: u64 = 1_000_000_000;

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0);

    pub fn from_nanos(nanos: u64) -> Self {
        Timestamp(nanos)
    }

    /// Negative and non-finite inputs clamp to zero.
    pub fn from_secs_f64(secs: f64) -> Self {
        if !secs.is_finite() || secs <= 0.0 {
            return Timestamp(0);
        }
        Timestamp((secs * NANOS_PER_SEC as f64).round() as u64)
    }

    pub fn from_millis(ms: u64) -> Self {
        Timestamp(ms * 1_000_000)
    }

    pub fn nanos(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / NANOS_PER_SEC as f64
    }

    /// Signed difference `self - earlier` in seconds.
    pub fn seconds_since(self, earlier: Timestamp) -> f64 {
        if self.0 >= earlier.0 {
            (self.0 - earlier.0) as f64 / NANOS_PER_SEC as f64
        } else {
            -((earlier.0 - self.0) as f64 / NANOS_PER_SEC as f64)
        }
    }

    pub fn saturating_sub_nanos(self, nanos: u64) -> Timestamp {
        Timestamp(self.0.saturating_sub(nanos))
    }

    pub fn plus_secs(self, secs: f64) -> Timestamp {
        if secs >= 0.0 {
            Timestamp(self.0 + (secs * NANOS_PER_SEC as f64).round() as u64)
        } else {
            self.saturating_sub_nanos((-secs * NANOS_PER_SEC as f64).round() as u64)
        }
    }
}

impl Add<u64> for Timestamp {
    type Output = Timestamp;
    fn add(self, nanos: u64) -> Timestamp {
        Timestamp(self.0 + nanos)
    }
}

impl Sub for Timestamp {
    type Output = u64;
    /// Saturating difference in nanoseconds.
    fn sub(self, rhs: Timestamp) -> u64 {
        self.0.saturating_sub(rhs.0)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.9}s", self.as_secs_f64())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn secs_round_trip() {
        let t = Timestamp::from_secs_f64(1.5);
        assert_eq!(t.nanos(), 1_500_000_000);
        assert_eq!(t.as_secs_f64(), 1.5);
        assert_eq!(Timestamp::from_secs_f64(-3.0), Timestamp::ZERO);
    }

    #[test]
    fn signed_difference() {
        let a = Timestamp::from_millis(100);
        let b = Timestamp::from_millis(350);
        assert!((b.seconds_since(a) - 0.25).abs() < 1e-12);
        assert!((a.seconds_since(b) + 0.25).abs() < 1e-12);
        assert_eq!(a - b, 0);
    }
}
