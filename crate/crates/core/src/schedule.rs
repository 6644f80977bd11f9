//! Clock times, day labels and the daily schedule policy.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const MONTH_ABBREV: [&str; 12] = [
    "Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec",
];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("invalid clock time `{0}`, expected HH:MM")]
    BadClock(String),
    #[error("invalid month {0}")]
    BadMonth(u32),
    #[error("away start {away} must be before deadline {deadline}")]
    InvertedWindow {
        away: ClockTime,
        deadline: ClockTime,
    },
    #[error("target temperature must be finite")]
    BadTarget,
}

/// Wall-clock time of day with minute resolution. `24:00` is allowed and
/// denotes the end of the same calendar day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClockTime(u16);

impl ClockTime {
    pub const MIDNIGHT: ClockTime = ClockTime(0);
    pub const END_OF_DAY: ClockTime = ClockTime(24 * 60);

    pub fn from_minutes(minutes: u32) -> Option<Self> {
        (minutes <= 24 * 60).then_some(ClockTime(minutes as u16))
    }

    pub fn hm(hour: u32, minute: u32) -> Option<Self> {
        if minute >= 60 {
            return None;
        }
        Self::from_minutes(hour * 60 + minute)
    }

    pub fn minutes(self) -> u32 {
        u32::from(self.0)
    }

    pub fn seconds(self) -> i64 {
        i64::from(self.0) * 60
    }

    pub fn hour(self) -> u32 {
        self.minutes() / 60
    }

    pub fn minute(self) -> u32 {
        self.minutes() % 60
    }
}

impl fmt::Display for ClockTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:02}:{:02}", self.hour(), self.minute())
    }
}

impl FromStr for ClockTime {
    type Err = ScheduleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ScheduleError::BadClock(s.to_owned());
        let (h, m) = s.trim().split_once(':').ok_or_else(bad)?;
        if h.is_empty() || h.len() > 2 || m.len() != 2 {
            return Err(bad());
        }
        let hour: u32 = h.parse().map_err(|_| bad())?;
        let minute: u32 = m.parse().map_err(|_| bad())?;
        ClockTime::hm(hour, minute).ok_or_else(bad)
    }
}

impl Serialize for ClockTime {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ClockTime {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Seconds from `now` until `deadline`, clamped at zero.
pub fn remaining_seconds(now: ClockTime, deadline: ClockTime) -> i64 {
    (deadline.seconds() - now.seconds()).max(0)
}

/// `"<d>/<Mon>"`, e.g. `1/Apr`.
pub fn day_label(month: u32, day: u32) -> Result<String, ScheduleError> {
    Ok(format!("{day}/{}", month_abbrev(month)?))
}

pub fn month_abbrev(month: u32) -> Result<&'static str, ScheduleError> {
    month
        .checked_sub(1)
        .and_then(|i| MONTH_ABBREV.get(i as usize))
        .copied()
        .ok_or(ScheduleError::BadMonth(month))
}

/// Days in `month` of a non-leap year, the calendar the weather files use.
pub fn days_in_month(month: u32) -> Result<u32, ScheduleError> {
    const DAYS: [u32; 12] = [31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31];
    month
        .checked_sub(1)
        .and_then(|i| DAYS.get(i as usize))
        .copied()
        .ok_or(ScheduleError::BadMonth(month))
}

/// The occupant's day: away from `away_start`, back at `deadline`, wanting
/// `target_c` on return.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulePolicy {
    pub away_start: ClockTime,
    pub deadline: ClockTime,
    pub target_c: f64,
    /// Cadence of the interpolated temperature feed.
    pub step_minutes: u32,
}

impl Default for SchedulePolicy {
    fn default() -> Self {
        Self {
            away_start: ClockTime(8 * 60),
            deadline: ClockTime(18 * 60),
            target_c: 20.0,
            step_minutes: 15,
        }
    }
}

impl SchedulePolicy {
    pub fn validate(&self) -> Result<(), ScheduleError> {
        if self.away_start >= self.deadline {
            return Err(ScheduleError::InvertedWindow {
                away: self.away_start,
                deadline: self.deadline,
            });
        }
        if !self.target_c.is_finite() {
            return Err(ScheduleError::BadTarget);
        }
        Ok(())
    }

    pub fn contains(&self, t: ClockTime) -> bool {
        self.away_start <= t && t <= self.deadline
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> ClockTime {
        s.parse().unwrap()
    }

    #[test]
    fn parses_and_formats() {
        assert_eq!(t("09:15").to_string(), "09:15");
        assert_eq!(t("9:15").to_string(), "09:15");
        assert_eq!(t("24:00"), ClockTime::END_OF_DAY);
        for bad in ["", "9", "24:01", "10:60", "10:5", "ab:cd", "-1:00"] {
            assert!(bad.parse::<ClockTime>().is_err(), "{bad}");
        }
    }

    #[test]
    fn remaining_to_deadline() {
        let deadline = t("18:00");
        assert_eq!(remaining_seconds(t("17:45"), deadline), 900);
        assert_eq!(remaining_seconds(t("18:00"), deadline), 0);
        assert_eq!(remaining_seconds(t("08:00"), deadline), 36000);
        assert_eq!(remaining_seconds(t("19:00"), deadline), 0);
    }

    #[test]
    fn labels() {
        assert_eq!(day_label(4, 1).unwrap(), "1/Apr");
        assert_eq!(day_label(1, 31).unwrap(), "31/Jan");
        assert!(day_label(13, 1).is_err());
        assert_eq!(days_in_month(2).unwrap(), 28);
    }

    #[test]
    fn policy_defaults_and_validation() {
        let p = SchedulePolicy::default();
        assert_eq!(p.away_start.to_string(), "08:00");
        assert_eq!(p.deadline.to_string(), "18:00");
        assert_eq!(p.target_c, 20.0);
        p.validate().unwrap();
        let inverted = SchedulePolicy {
            away_start: t("18:00"),
            deadline: t("08:00"),
            ..p
        };
        assert!(inverted.validate().is_err());
    }
}
