use std::fmt;

use serde::{Deserialize, Serialize};

/// Capture timestamp in integer nanoseconds since the Unix epoch.
///
/// Nanosecond integers keep window arithmetic exact; `f64` seconds lose
/// sub-microsecond precision at present-day epoch values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(pub i64);

impl Timestamp {
    pub const NANOS_PER_SEC: i64 = 1_000_000_000;

    pub fn from_parts(secs: i64, nanos: i64) -> Self {
        Timestamp(secs * Self::NANOS_PER_SEC + nanos)
    }

    pub fn from_secs(secs: i64) -> Self {
        Timestamp(secs * Self::NANOS_PER_SEC)
    }

    pub fn from_millis(ms: i64) -> Self {
        Timestamp(ms * 1_000_000)
    }

    pub fn as_nanos(self) -> i64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        let secs = self.0.div_euclid(Self::NANOS_PER_SEC);
        let frac = self.0.rem_euclid(Self::NANOS_PER_SEC);
        secs as f64 + frac as f64 / 1e9
    }

    /// Elapsed milliseconds from `earlier` to `self`.
    pub fn millis_since(self, earlier: Timestamp) -> f64 {
        (self.0 - earlier.0) as f64 / 1e6
    }

    pub fn add_nanos(self, nanos: i64) -> Self {
        Timestamp(self.0 + nanos)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let secs = self.0.div_euclid(Self::NANOS_PER_SEC);
        let frac = self.0.rem_euclid(Self::NANOS_PER_SEC);
        write!(f, "{secs}.{frac:09}")
    }
}
