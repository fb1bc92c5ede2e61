//! Shared domain types.
//!
//! Every event type validates its invariants in its constructor, so values
//! that reach the geo, feature and dataset stages are always well formed.
//! All day-boundary logic works on local time: each timestamp carries the
//! UTC offset that was in effect when it was recorded.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MS_PER_SECOND: i64 = 1_000;
pub const MS_PER_MINUTE: i64 = 60 * MS_PER_SECOND;
pub const MS_PER_HOUR: i64 = 60 * MS_PER_MINUTE;
pub const MS_PER_DAY: i64 = 24 * MS_PER_HOUR;

/// Largest UTC offset in use anywhere (UTC+14 / UTC-14), in minutes.
pub const MAX_OFFSET_MIN: i32 = 840;

/// Opaque subject token, unique within a cohort.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SubjectId(String);

impl SubjectId {
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.trim().is_empty() {
            return Err(Error::Invalid("subject id must be non-empty".into()));
        }
        Ok(SubjectId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for SubjectId {
    type Error = Error;

    fn try_from(value: String) -> Result<Self> {
        SubjectId::new(value)
    }
}

impl From<SubjectId> for String {
    fn from(value: SubjectId) -> Self {
        value.0
    }
}

impl fmt::Display for SubjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A UTC instant plus the local UTC offset at which it was observed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Timestamp {
    ms: i64,
    offset_min: i16,
}

impl Timestamp {
    pub fn new(ms: i64, offset_min: i32) -> Result<Self> {
        if !(-MAX_OFFSET_MIN..=MAX_OFFSET_MIN).contains(&offset_min) {
            return Err(Error::Invalid(format!(
                "utc offset {offset_min} min outside [-840, 840]"
            )));
        }
        Ok(Timestamp {
            ms,
            offset_min: offset_min as i16,
        })
    }

    /// UTC epoch milliseconds.
    pub fn ms(self) -> i64 {
        self.ms
    }

    pub fn offset_min(self) -> i32 {
        self.offset_min as i32
    }

    /// Milliseconds since the epoch on the local wall clock.
    pub fn local_ms(self) -> i64 {
        self.ms + self.offset_min as i64 * MS_PER_MINUTE
    }

    /// Local calendar day counted from 1970-01-01.
    pub fn local_epoch_day(self) -> i64 {
        self.local_ms().div_euclid(MS_PER_DAY)
    }

    /// Milliseconds since local midnight.
    pub fn local_ms_of_day(self) -> i64 {
        self.local_ms().rem_euclid(MS_PER_DAY)
    }

    /// Fractional local hour of day in `[0, 24)`.
    pub fn local_hour(self) -> f64 {
        self.local_ms_of_day() as f64 / MS_PER_HOUR as f64
    }

    /// The same offset, shifted in time.
    pub fn plus_ms(self, delta: i64) -> Self {
        Timestamp {
            ms: self.ms + delta,
            offset_min: self.offset_min,
        }
    }

    /// UTC instant of the local midnight that starts this timestamp's day.
    pub fn local_midnight_ms(self) -> i64 {
        self.ms - self.local_ms_of_day()
    }
}

impl PartialOrd for Timestamp {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Timestamp {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.ms
            .cmp(&other.ms)
            .then(self.offset_min.cmp(&other.offset_min))
    }
}

/// 1-based study day of `t`, counted in local calendar days from `study_start`.
pub fn local_day_index(t: Timestamp, study_start: Timestamp) -> Result<u32> {
    if t.ms() < study_start.ms() {
        return Err(Error::BeforeStudyStart);
    }
    let day = t.local_epoch_day() - study_start.local_epoch_day() + 1;
    if day < 1 {
        // offset moved west across midnight right after the start
        return Err(Error::BeforeStudyStart);
    }
    u32::try_from(day).map_err(|_| Error::Invalid(format!("day index {day} out of range")))
}

/// Local calendar day (from the epoch) that is study day `day_index`.
pub fn study_epoch_day(study_start: Timestamp, day_index: u32) -> i64 {
    study_start.local_epoch_day() + day_index as i64 - 1
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpsFix {
    t: Timestamp,
    lat: f64,
    lon: f64,
    accuracy: f64,
    speed: f64,
}

impl GpsFix {
    /// `speed` may be negative, which devices use to flag an invalid reading.
    pub fn new(t: Timestamp, lat: f64, lon: f64, accuracy: f64, speed: f64) -> Result<Self> {
        if !lat.is_finite() || !(-90.0..=90.0).contains(&lat) {
            return Err(Error::Invalid("lat out of range".into()));
        }
        if !lon.is_finite() || !(-180.0..=180.0).contains(&lon) {
            return Err(Error::Invalid("lon out of range".into()));
        }
        if !accuracy.is_finite() || accuracy < 0.0 {
            return Err(Error::Invalid("accuracy must be finite and >= 0".into()));
        }
        if !speed.is_finite() {
            return Err(Error::Invalid("speed must be finite".into()));
        }
        Ok(GpsFix {
            t,
            lat,
            lon,
            accuracy,
            speed,
        })
    }

    pub fn t(&self) -> Timestamp {
        self.t
    }
    pub fn lat(&self) -> f64 {
        self.lat
    }
    pub fn lon(&self) -> f64 {
        self.lon
    }
    pub fn accuracy(&self) -> f64 {
        self.accuracy
    }
    pub fn speed(&self) -> f64 {
        self.speed
    }

    pub(crate) fn with_speed(mut self, speed: f64) -> Self {
        self.speed = speed;
        self
    }

    pub(crate) fn with_time(mut self, t: Timestamp) -> Self {
        self.t = t;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallDirection {
    Incoming,
    Outgoing,
    Missed,
}

impl CallDirection {
    pub fn as_str(self) -> &'static str {
        match self {
            CallDirection::Incoming => "incoming",
            CallDirection::Outgoing => "outgoing",
            CallDirection::Missed => "missed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "incoming" => Some(CallDirection::Incoming),
            "outgoing" => Some(CallDirection::Outgoing),
            "missed" => Some(CallDirection::Missed),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CallEvent {
    t: Timestamp,
    direction: CallDirection,
    duration_s: f64,
    contact: String,
}

impl CallEvent {
    pub fn new(
        t: Timestamp,
        direction: CallDirection,
        duration_s: f64,
        contact: impl Into<String>,
    ) -> Result<Self> {
        if !duration_s.is_finite() || duration_s < 0.0 {
            return Err(Error::Invalid("call duration must be finite and >= 0".into()));
        }
        if direction == CallDirection::Missed && duration_s != 0.0 {
            return Err(Error::Invalid("missed call must have duration 0".into()));
        }
        Ok(CallEvent {
            t,
            direction,
            duration_s,
            contact: contact.into(),
        })
    }

    pub fn t(&self) -> Timestamp {
        self.t
    }
    pub fn direction(&self) -> CallDirection {
        self.direction
    }
    pub fn duration_s(&self) -> f64 {
        self.duration_s
    }
    pub fn contact(&self) -> &str {
        &self.contact
    }

    /// Answered or placed, i.e. not missed.
    pub fn is_connected(&self) -> bool {
        self.direction != CallDirection::Missed
    }

    pub(crate) fn with_time(mut self, t: Timestamp) -> Self {
        self.t = t;
        self
    }
}

/// Closed time span shared by usage sessions and lock intervals.
pub trait TimeSpan {
    fn start(&self) -> Timestamp;
    fn end(&self) -> Timestamp;

    fn duration_ms(&self) -> i64 {
        self.end().ms() - self.start().ms()
    }
}

fn check_span(start: Timestamp, end: Timestamp) -> Result<()> {
    if end.ms() < start.ms() {
        return Err(Error::Invalid("end before start".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UsageSession {
    start: Timestamp,
    end: Timestamp,
}

impl UsageSession {
    pub fn new(start: Timestamp, end: Timestamp) -> Result<Self> {
        check_span(start, end)?;
        Ok(UsageSession { start, end })
    }
}

impl TimeSpan for UsageSession {
    fn start(&self) -> Timestamp {
        self.start
    }
    fn end(&self) -> Timestamp {
        self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LockEvent {
    start: Timestamp,
    end: Timestamp,
}

impl LockEvent {
    pub fn new(start: Timestamp, end: Timestamp) -> Result<Self> {
        check_span(start, end)?;
        Ok(LockEvent { start, end })
    }
}

impl TimeSpan for LockEvent {
    fn start(&self) -> Timestamp {
        self.start
    }
    fn end(&self) -> Timestamp {
        self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AppEvent {
    t: Timestamp,
    app: String,
}

impl AppEvent {
    pub fn new(t: Timestamp, app: impl Into<String>) -> Result<Self> {
        let app = app.into();
        if app.trim().is_empty() {
            return Err(Error::Invalid("app id must be non-empty".into()));
        }
        Ok(AppEvent { t, app })
    }

    pub fn t(&self) -> Timestamp {
        self.t
    }
    pub fn app(&self) -> &str {
        &self.app
    }

    pub(crate) fn with_time(mut self, t: Timestamp) -> Self {
        self.t = t;
        self
    }
}

pub const PHQ_MAX: u8 = 27;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhqObservation {
    subject: SubjectId,
    day_index: u32,
    score: u8,
}

impl PhqObservation {
    pub fn new(subject: SubjectId, day_index: u32, score: u8) -> Result<Self> {
        if day_index < 1 {
            return Err(Error::Invalid("day_index must be >= 1".into()));
        }
        if score > PHQ_MAX {
            return Err(Error::Invalid(format!("PHQ-9 score {score} outside [0, 27]")));
        }
        Ok(PhqObservation {
            subject,
            day_index,
            score,
        })
    }

    pub fn subject(&self) -> &SubjectId {
        &self.subject
    }
    pub fn day_index(&self) -> u32 {
        self.day_index
    }
    pub fn score(&self) -> u8 {
        self.score
    }
}

/// All raw passive streams of one subject, each sorted by time.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorLog {
    pub subject: SubjectId,
    pub study_start: Timestamp,
    pub calls: Vec<CallEvent>,
    pub usage: Vec<UsageSession>,
    pub apps: Vec<AppEvent>,
    pub locks: Vec<LockEvent>,
    pub gps: Vec<GpsFix>,
}

impl SensorLog {
    pub fn empty(subject: SubjectId, study_start: Timestamp) -> Self {
        SensorLog {
            subject,
            study_start,
            calls: Vec::new(),
            usage: Vec::new(),
            apps: Vec::new(),
            locks: Vec::new(),
            gps: Vec::new(),
        }
    }

    /// Last study day touched by any event, or 0 for an empty log.
    pub fn last_day(&self) -> u32 {
        let start = self.study_start;
        let day = |t: Timestamp| local_day_index(t, start).unwrap_or(0);
        let calls = self.calls.iter().map(|c| day(c.t()));
        let apps = self.apps.iter().map(|a| day(a.t()));
        let gps = self.gps.iter().map(|g| day(g.t()));
        let usage = self.usage.iter().map(|s| day(last_instant(s)));
        let locks = self.locks.iter().map(|s| day(last_instant(s)));
        calls
            .chain(apps)
            .chain(gps)
            .chain(usage)
            .chain(locks)
            .max()
            .unwrap_or(0)
    }

    /// Applies `shift_ms` to every timestamp; study start is left alone.
    pub fn shifted(&self, shift_ms: i64) -> SensorLog {
        let sh = |t: Timestamp| t.plus_ms(shift_ms);
        SensorLog {
            subject: self.subject.clone(),
            study_start: self.study_start,
            calls: self
                .calls
                .iter()
                .map(|c| c.clone().with_time(sh(c.t())))
                .collect(),
            usage: self
                .usage
                .iter()
                .map(|s| UsageSession {
                    start: sh(s.start),
                    end: sh(s.end),
                })
                .collect(),
            apps: self
                .apps
                .iter()
                .map(|a| a.clone().with_time(sh(a.t())))
                .collect(),
            locks: self
                .locks
                .iter()
                .map(|s| LockEvent {
                    start: sh(s.start),
                    end: sh(s.end),
                })
                .collect(),
            gps: self.gps.iter().map(|g| g.with_time(sh(g.t()))).collect(),
        }
    }
}

// A span ending exactly at midnight does not touch the next day.
fn last_instant(span: &impl TimeSpan) -> Timestamp {
    if span.end().ms() > span.start().ms() {
        span.end().plus_ms(-1)
    } else {
        span.end()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ts(ms: i64, off: i32) -> Timestamp {
        Timestamp::new(ms, off).unwrap()
    }

    // 2024-01-01T00:00:00Z
    const JAN1: i64 = 1_704_067_200_000;

    #[test]
    fn day_index_first_instant_is_day_one() {
        let start = ts(JAN1, 60);
        assert_eq!(local_day_index(start, start).unwrap(), 1);
    }

    #[test]
    fn day_index_after_25_hours_is_day_two() {
        let start = ts(JAN1, 0);
        let t = start.plus_ms(25 * MS_PER_HOUR);
        assert_eq!(local_day_index(t, start).unwrap(), 2);
    }

    #[test]
    fn day_index_crosses_local_midnight_within_23_hours() {
        // start 10:00 local (UTC+2 => 08:00Z); +23 h is 09:00 local next day
        let start = ts(JAN1 + 8 * MS_PER_HOUR, 120);
        let t = start.plus_ms(23 * MS_PER_HOUR);
        assert_eq!(local_day_index(t, start).unwrap(), 2);

        // offset jumps +60 -> +120 between the two instants: start 00:30 local,
        // 23 h later the local clock reads 00:30 of the following day
        let start = ts(JAN1 - 30 * MS_PER_MINUTE, 60);
        assert_eq!(start.local_ms_of_day(), 30 * MS_PER_MINUTE);
        let t = ts(start.ms() + 23 * MS_PER_HOUR, 120);
        assert_eq!(t.local_ms_of_day(), 30 * MS_PER_MINUTE);
        assert_eq!(local_day_index(t, start).unwrap(), 2);
        // and one hour earlier it is still day 1
        let t = ts(start.ms() + 22 * MS_PER_HOUR, 120);
        assert_eq!(local_day_index(t, start).unwrap(), 1);
    }

    #[test]
    fn day_index_before_start_is_error() {
        let start = ts(JAN1, 0);
        let t = start.plus_ms(-1);
        assert!(matches!(
            local_day_index(t, start),
            Err(Error::BeforeStudyStart)
        ));
    }

    #[test]
    fn negative_local_times_floor_correctly() {
        let t = ts(-1, 0);
        assert_eq!(t.local_epoch_day(), -1);
        assert_eq!(t.local_ms_of_day(), MS_PER_DAY - 1);
    }

    #[test]
    fn constructors_reject_invalid_values() {
        assert!(Timestamp::new(0, 841).is_err());
        assert!(Timestamp::new(0, -840).is_ok());
        assert!(SubjectId::new("").is_err());
        let t = ts(JAN1, 0);
        assert!(GpsFix::new(t, 91.0, 0.0, 5.0, 0.0).is_err());
        assert!(GpsFix::new(t, 0.0, -180.5, 5.0, 0.0).is_err());
        assert!(GpsFix::new(t, 0.0, 0.0, f64::INFINITY, 0.0).is_err());
        assert!(GpsFix::new(t, 0.0, 0.0, 5.0, -1.0).is_ok());
        assert!(CallEvent::new(t, CallDirection::Missed, 3.0, "c").is_err());
        assert!(CallEvent::new(t, CallDirection::Incoming, -3.0, "c").is_err());
        assert!(UsageSession::new(t, t.plus_ms(-1)).is_err());
        assert!(LockEvent::new(t, t).is_ok());
        assert!(AppEvent::new(t, " ").is_err());
        let s = SubjectId::new("s1").unwrap();
        assert!(PhqObservation::new(s.clone(), 7, 28).is_err());
        assert!(PhqObservation::new(s.clone(), 0, 3).is_err());
        assert!(PhqObservation::new(s, 7, 27).is_ok());
    }

    proptest::proptest! {
        #[test]
        fn day_index_is_monotone(
            start in -1_000_000_000_000i64..2_000_000_000_000,
            off in -840i32..=840,
            a in 0i64..(60 * MS_PER_DAY),
            b in 0i64..(60 * MS_PER_DAY),
        ) {
            let s = ts(start, off);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let dl = local_day_index(s.plus_ms(lo), s).unwrap();
            let dh = local_day_index(s.plus_ms(hi), s).unwrap();
            proptest::prop_assert!(dl <= dh);
        }
    }
}
