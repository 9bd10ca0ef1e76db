//! Calendar dates and time windows in the fixed study timezone.

use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, Days, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

const DAY_S: i64 = 86_400;

/// A calendar date in the study timezone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DateKey(pub NaiveDate);

impl DateKey {
    pub fn from_ymd(y: i32, m: u32, d: u32) -> Option<Self> {
        NaiveDate::from_ymd_opt(y, m, d).map(DateKey)
    }

    pub fn succ(self) -> Self {
        DateKey(self.0 + Days::new(1))
    }

    pub fn add_days(self, n: u64) -> Self {
        DateKey(self.0 + Days::new(n))
    }

    pub fn is_weekend(self) -> bool {
        matches!(self.0.weekday(), Weekday::Sat | Weekday::Sun)
    }

    /// Days since 1970-01-01.
    pub fn epoch_day(self) -> i64 {
        self.0
            .signed_duration_since(NaiveDate::from_ymd_opt(1970, 1, 1).unwrap())
            .num_days()
    }

    pub fn from_epoch_day(day: i64) -> Self {
        let epoch = NaiveDate::from_ymd_opt(1970, 1, 1).unwrap();
        DateKey(epoch + chrono::Duration::days(day))
    }

    /// Inclusive date range iterator.
    pub fn range_inclusive(from: DateKey, to: DateKey) -> impl Iterator<Item = DateKey> {
        let n = (to.epoch_day() - from.epoch_day() + 1).max(0) as u64;
        (0..n).map(move |i| from.add_days(i))
    }
}

impl fmt::Display for DateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.format("%Y-%m-%d"))
    }
}

impl FromStr for DateKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d")
            .map(DateKey)
            .map_err(|e| format!("invalid date {s:?}: {e}"))
    }
}

/// Half-open interval `[start, end)` of epoch seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start: i64,
    pub end: i64,
}

impl TimeWindow {
    /// `None` when `end < start`. Zero-length windows are allowed and match nothing.
    pub fn new(start: i64, end: i64) -> Option<Self> {
        (start <= end).then_some(Self { start, end })
    }

    pub fn contains(&self, ts: i64) -> bool {
        ts >= self.start && ts < self.end
    }

    pub fn len_s(&self) -> i64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn hours(&self) -> f64 {
        self.len_s() as f64 / 3600.0
    }
}

/// Fixed-offset study timezone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyClock {
    pub utc_offset_s: i32,
}

impl StudyClock {
    pub fn from_hours(hours: i32) -> Self {
        Self {
            utc_offset_s: hours * 3600,
        }
    }

    fn local(&self, ts: i64) -> i64 {
        ts + self.utc_offset_s as i64
    }

    pub fn date_of(&self, ts: i64) -> DateKey {
        DateKey::from_epoch_day(self.local(ts).div_euclid(DAY_S))
    }

    /// Local hour of day, 0..24.
    pub fn hour_of(&self, ts: i64) -> usize {
        (self.local(ts).rem_euclid(DAY_S) / 3600) as usize
    }

    pub fn day_start(&self, date: DateKey) -> i64 {
        date.epoch_day() * DAY_S - self.utc_offset_s as i64
    }

    pub fn day_window(&self, date: DateKey) -> TimeWindow {
        let start = self.day_start(date);
        TimeWindow {
            start,
            end: start + DAY_S,
        }
    }

    /// `[date + from_hour, date + to_hour)`; hours may reach 24.
    pub fn hour_window(&self, date: DateKey, from_hour: u32, to_hour: u32) -> Option<TimeWindow> {
        if from_hour >= to_hour || to_hour > 24 {
            return None;
        }
        let s = self.day_start(date);
        TimeWindow::new(s + from_hour as i64 * 3600, s + to_hour as i64 * 3600)
    }
}

impl Default for StudyClock {
    fn default() -> Self {
        Self::from_hours(8)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dates_follow_offset() {
        let clock = StudyClock::from_hours(8);
        let d = DateKey::from_ymd(2019, 9, 1).unwrap();
        let start = clock.day_start(d);
        // 2019-09-01T00:00+08:00
        assert_eq!(start, 1_567_267_200);
        assert_eq!(clock.date_of(start), d);
        assert_eq!(
            clock.date_of(start - 1),
            DateKey::from_ymd(2019, 8, 31).unwrap()
        );
        assert_eq!(clock.hour_of(start + 7 * 3600 + 600), 7);
        assert_eq!(clock.hour_of(start - 1), 23);
        assert_eq!(clock.day_window(d).len_s(), 86_400);
    }

    #[test]
    fn date_parsing_and_iteration() {
        let a: DateKey = "2019-09-28".parse().unwrap();
        assert!(a.is_weekend());
        assert!(!a.add_days(2).is_weekend());
        let days: Vec<_> = DateKey::range_inclusive(a, a.add_days(3)).collect();
        assert_eq!(days.len(), 4);
        assert_eq!(days[3].to_string(), "2019-10-01");
        assert!("2019-13-01".parse::<DateKey>().is_err());
        assert_eq!(DateKey::from_epoch_day(a.epoch_day()), a);
    }

    #[test]
    fn windows() {
        assert!(TimeWindow::new(5, 4).is_none());
        let w = TimeWindow::new(10, 10).unwrap();
        assert!(w.is_empty() && !w.contains(10));
        let w = TimeWindow::new(0, 7200).unwrap();
        assert!(w.contains(0) && !w.contains(7200));
        assert_eq!(w.hours(), 2.0);
        let clock = StudyClock::default();
        let d = DateKey::from_ymd(2019, 9, 2).unwrap();
        assert!(clock.hour_window(d, 9, 7).is_none());
        assert_eq!(clock.hour_window(d, 0, 24).unwrap(), clock.day_window(d));
    }
}
