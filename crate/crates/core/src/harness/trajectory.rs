use serde::{Deserialize, Serialize};

use crate::frames::{RigidTransform, Timestamp, NANOS_PER_SEC};

/// Time-stamped map→vehicle poses with strictly increasing stamps.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    samples: Vec<(Timestamp, RigidTransform)>,
}

impl Trajectory {
    /// Panics if stamps are not strictly increasing.
    pub fn new(samples: Vec<(Timestamp, RigidTransform)>) -> Self {
        assert!(samples.windows(2).all(|w| w[0].0 < w[1].0), "trajectory stamps must increase strictly");
        Trajectory { samples }
    }

    pub fn samples(&self) -> &[(Timestamp, RigidTransform)] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn start(&self) -> Option<Timestamp> {
        self.samples.first().map(|s| s.0)
    }

    pub fn end(&self) -> Option<Timestamp> {
        self.samples.last().map(|s| s.0)
    }

    pub fn duration(&self) -> f64 {
        match (self.start(), self.end()) {
            (Some(a), Some(b)) => b.seconds_since(a),
            _ => 0.0,
        }
    }

    /// Interpolated pose, clamped to the first/last sample outside the span.
    pub fn pose_at(&self, t: Timestamp) -> Option<RigidTransform> {
        let first = self.samples.first()?;
        if t <= first.0 {
            return Some(first.1);
        }
        let i = self.samples.partition_point(|s| s.0 <= t);
        if i == self.samples.len() {
            return Some(self.samples[i - 1].1);
        }
        let (t0, a) = self.samples[i - 1];
        if t0 == t {
            return Some(a);
        }
        let (t1, b) = self.samples[i];
        let s = (t.0 - t0.0) as f64 / (t1.0 - t0.0) as f64;
        Some(RigidTransform::interpolate(&a, &b, s))
    }

    /// Inserts a standstill of `duration` seconds at `start`: samples before
    /// `start` are kept, the vehicle holds its pose at `start`, and everything
    /// later happens `duration` seconds later. Resampled on the original
    /// sample spacing (taken from the first interval).
    pub fn with_pause(&self, start: f64, duration: f64) -> Trajectory {
        if self.samples.len() < 2 || duration <= 0.0 {
            return self.clone();
        }
        let step = self.samples[1].0 .0 - self.samples[0].0 .0;
        let t0 = self.samples[0].0;
        let pause_start = t0.plus_secs(start.max(0.0));
        let shift = (duration * NANOS_PER_SEC as f64).round() as u64;
        let end = self.end().unwrap().0 + shift;
        let mut out = Vec::new();
        let mut t = t0.0;
        while t <= end {
            let src = if t < pause_start.0 {
                Timestamp(t)
            } else if t < pause_start.0 + shift {
                pause_start
            } else {
                Timestamp(t - shift)
            };
            out.push((Timestamp(t), self.pose_at(src).unwrap()));
            t += step;
        }
        Trajectory { samples: out }
    }
}
