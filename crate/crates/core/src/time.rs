//! Millisecond-resolution epoch timestamps and measurement windows.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TimeError {
    #[error("non-finite timestamp")]
    NonFinite,
    #[error("window start {start} must be before end {end}")]
    EmptyWindow { start: Timestamp, end: Timestamp },
    #[error("cannot parse timestamp `{0}`")]
    Parse(String),
}

/// Epoch time in UTC, integer milliseconds.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Timestamp(i64);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0);

    pub const fn from_millis(ms: i64) -> Self {
        Timestamp(ms)
    }

    pub const fn from_secs(s: i64) -> Self {
        Timestamp(s * 1000)
    }

    /// Rounds to the nearest millisecond.
    pub fn from_secs_f64(s: f64) -> Result<Self, TimeError> {
        if !s.is_finite() {
            return Err(TimeError::NonFinite);
        }
        Ok(Timestamp((s * 1000.0).round() as i64))
    }

    pub const fn millis(self) -> i64 {
        self.0
    }

    pub fn secs_f64(self) -> f64 {
        self.0 as f64 / 1000.0
    }

    pub const fn add_millis(self, ms: i64) -> Self {
        Timestamp(self.0 + ms)
    }

    /// Wall-clock now.
    pub fn now() -> Self {
        let d = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .unwrap_or_default();
        Timestamp(d.as_millis() as i64)
    }

    /// Decimal seconds with exactly three fractional digits, e.g. `12.500`.
    pub fn to_decimal_secs(self) -> String {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        format!("{sign}{}.{:03}", abs / 1000, abs % 1000)
    }

    /// Parses decimal seconds (`12`, `12.5`, `-3.250`) exactly to the millisecond.
    /// Falls back to float parsing for exponent forms.
    pub fn parse_decimal_secs(s: &str) -> Result<Self, TimeError> {
        let t = s.trim();
        let err = || TimeError::Parse(s.to_string());
        if t.contains(['e', 'E']) {
            let v: f64 = t.parse().map_err(|_| err())?;
            return Self::from_secs_f64(v);
        }
        let (neg, body) = match t.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, t),
        };
        let (int, frac) = body.split_once('.').unwrap_or((body, ""));
        if int.is_empty() && frac.is_empty() {
            return Err(err());
        }
        if !int.bytes().all(|b| b.is_ascii_digit()) || !frac.bytes().all(|b| b.is_ascii_digit())
        {
            return Err(err());
        }
        let whole: i64 = if int.is_empty() { 0 } else { int.parse().map_err(|_| err())? };
        let mut ms = 0i64;
        for (i, b) in frac.bytes().take(3).enumerate() {
            ms += i64::from(b - b'0') * 10i64.pow(2 - i as u32);
        }
        // round half up on the fourth fractional digit
        if let Some(b) = frac.as_bytes().get(3).copied() {
            if b >= b'5' {
                ms += 1;
            }
        }
        let total = whole.checked_mul(1000).and_then(|w| w.checked_add(ms)).ok_or_else(err)?;
        Ok(Timestamp(if neg { -total } else { total }))
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_decimal_secs())
    }
}

/// Closed measurement interval `[start, end]`, `start < end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawWindow", into = "RawWindow")]
pub struct TimeWindow {
    start: Timestamp,
    end: Timestamp,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWindow {
    start_ms: i64,
    end_ms: i64,
}

impl TryFrom<RawWindow> for TimeWindow {
    type Error = TimeError;

    fn try_from(raw: RawWindow) -> Result<Self, Self::Error> {
        TimeWindow::new(Timestamp(raw.start_ms), Timestamp(raw.end_ms))
    }
}

impl From<TimeWindow> for RawWindow {
    fn from(w: TimeWindow) -> Self {
        RawWindow {
            start_ms: w.start.0,
            end_ms: w.end.0,
        }
    }
}

impl TimeWindow {
    pub fn new(start: Timestamp, end: Timestamp) -> Result<Self, TimeError> {
        if start >= end {
            return Err(TimeError::EmptyWindow { start, end });
        }
        Ok(TimeWindow { start, end })
    }

    pub fn from_secs(start: i64, end: i64) -> Result<Self, TimeError> {
        Self::new(Timestamp::from_secs(start), Timestamp::from_secs(end))
    }

    pub fn start(&self) -> Timestamp {
        self.start
    }

    pub fn end(&self) -> Timestamp {
        self.end
    }

    pub fn len_millis(&self) -> i64 {
        self.end.0 - self.start.0
    }

    pub fn contains(&self, t: Timestamp) -> bool {
        self.start <= t && t <= self.end
    }
}

impl fmt::Display for TimeWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.start, self.end)
    }
}
