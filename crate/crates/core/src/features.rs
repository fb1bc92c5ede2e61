//! The nineteen daily behavioral features.
//!
//! Count features treat "no events" as a true zero. Sleep time and the GPS
//! block have no meaningful zero, so they are flagged in the missing mask
//! instead and carry [`MISSING`] until imputation.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{entropy_of, GpsFeatures};
use crate::ingest::csv_writer;
use crate::types::{
    AppEvent, CallEvent, LockEvent, SubjectId, TimeSpan, UsageSession, MS_PER_DAY, MS_PER_HOUR,
    MS_PER_MINUTE, MS_PER_SECOND,
};

pub const N_FEATURES: usize = 19;

/// Sentinel stored in masked feature cells.
pub const MISSING: f64 = f64::NAN;

pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "call_freq",
    "call_dur_min",
    "nonwork_call_freq",
    "nonwork_call_dur_min",
    "missed_calls",
    "n_contacts",
    "call_entropy",
    "norm_call_entropy",
    "usage_freq",
    "usage_dur_s",
    "lock_dur_s",
    "n_apps",
    "n_midnight_apps",
    "sleep_time_h",
    "loc_variance",
    "loc_entropy",
    "norm_loc_entropy",
    "time_at_home",
    "total_distance_m",
];

pub const SLEEP_IDX: usize = 13;

/// Feature families, used for ablation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureGroup {
    Calls,
    Usage,
    Activity,
    Gps,
}

impl FeatureGroup {
    pub const ALL: [FeatureGroup; 4] = [
        FeatureGroup::Calls,
        FeatureGroup::Usage,
        FeatureGroup::Activity,
        FeatureGroup::Gps,
    ];

    pub fn range(self) -> Range<usize> {
        match self {
            FeatureGroup::Calls => 0..8,
            FeatureGroup::Usage => 8..10,
            FeatureGroup::Activity => 10..14,
            FeatureGroup::Gps => 14..19,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureGroup::Calls => "calls",
            FeatureGroup::Usage => "usage",
            FeatureGroup::Activity => "activity",
            FeatureGroup::Gps => "gps",
        }
    }
}

// 08:00 to 18:00 local is working time
const WORK_START_MS: i64 = 8 * MS_PER_HOUR;
const WORK_END_MS: i64 = 18 * MS_PER_HOUR;
const MIDNIGHT_APPS_END_MS: i64 = 5 * MS_PER_HOUR;
const SLEEP_ANCHOR_END_MS: i64 = 2 * MS_PER_HOUR;
const WAKE_FROM_MS: i64 = 5 * MS_PER_HOUR;

#[derive(Debug, Clone, PartialEq)]
pub struct DailyFeatures {
    pub subject: SubjectId,
    pub day_index: u32,
    pub values: [f64; N_FEATURES],
    pub missing: [bool; N_FEATURES],
}

impl DailyFeatures {
    /// A day with every feature masked.
    pub fn all_missing(subject: SubjectId, day_index: u32) -> Self {
        DailyFeatures {
            subject,
            day_index,
            values: [MISSING; N_FEATURES],
            missing: [true; N_FEATURES],
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        let i = FEATURE_NAMES.iter().position(|n| *n == name)?;
        (!self.missing[i]).then_some(self.values[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CallFeatures {
    pub freq: f64,
    pub dur_min: f64,
    pub nonwork_freq: f64,
    pub nonwork_dur_min: f64,
    pub missed: f64,
    pub n_contacts: f64,
    pub entropy: f64,
    pub norm_entropy: f64,
}

impl CallFeatures {
    pub fn to_array(self) -> [f64; 8] {
        [
            self.freq,
            self.dur_min,
            self.nonwork_freq,
            self.nonwork_dur_min,
            self.missed,
            self.n_contacts,
            self.entropy,
            self.norm_entropy,
        ]
    }
}

/// Call features for the calls that started on one local day.
pub fn call_features(events: &[CallEvent]) -> CallFeatures {
    let connected: Vec<&CallEvent> = events.iter().filter(|c| c.is_connected()).collect();
    let nonwork: Vec<&&CallEvent> = connected
        .iter()
        .filter(|c| {
            let tod = c.t().local_ms_of_day();
            !(WORK_START_MS..WORK_END_MS).contains(&tod)
        })
        .collect();

    // contact -> total seconds, in first-seen order
    let mut per_contact: Vec<(&str, f64)> = Vec::new();
    let mut slot: HashMap<&str, usize> = HashMap::new();
    for c in &connected {
        let i = *slot.entry(c.contact()).or_insert_with(|| {
            per_contact.push((c.contact(), 0.0));
            per_contact.len() - 1
        });
        per_contact[i].1 += c.duration_s();
    }
    let n_contacts = per_contact.len();
    let weights: Vec<f64> = per_contact.iter().map(|(_, d)| *d).collect();
    let (entropy, _) = entropy_of(&weights);
    let norm_entropy = if n_contacts > 1 {
        (entropy / (n_contacts as f64).ln()).clamp(0.0, 1.0)
    } else {
        0.0
    };

    CallFeatures {
        freq: connected.len() as f64,
        dur_min: connected.iter().map(|c| c.duration_s()).sum::<f64>() / 60.0,
        nonwork_freq: nonwork.len() as f64,
        nonwork_dur_min: nonwork.iter().map(|c| c.duration_s()).sum::<f64>() / 60.0,
        missed: events.iter().filter(|c| !c.is_connected()).count() as f64,
        n_contacts: n_contacts as f64,
        entropy,
        norm_entropy,
    }
}

/// UTC bounds of local calendar day `epoch_day` for a given offset.
fn day_bounds(epoch_day: i64, offset_min: i32) -> (i64, i64) {
    let start = epoch_day * MS_PER_DAY - offset_min as i64 * MS_PER_MINUTE;
    (start, start + MS_PER_DAY)
}

/// The part of `span` inside local day `epoch_day`, if the span touches it.
fn clip_to_day(span: &impl TimeSpan, epoch_day: i64) -> Option<(i64, i64)> {
    let (lo, hi) = day_bounds(epoch_day, span.start().offset_min());
    let (s, e) = (span.start().ms(), span.end().ms());
    if s == e {
        return (lo..hi).contains(&s).then_some((s, s));
    }
    let (a, b) = (s.max(lo), e.min(hi));
    (b > a).then_some((a, b))
}

/// `(count, seconds)` of usage within local day `epoch_day`; sessions that
/// cross midnight are split at the boundary.
pub fn usage_features(sessions: &[UsageSession], epoch_day: i64) -> (f64, f64) {
    let mut n = 0usize;
    let mut ms = 0i64;
    for s in sessions {
        if let Some((a, b)) = clip_to_day(s, epoch_day) {
            n += 1;
            ms += b - a;
        }
    }
    (n as f64, ms as f64 / MS_PER_SECOND as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActivityFeatures {
    pub lock_dur_s: f64,
    pub n_apps: f64,
    pub n_midnight_apps: f64,
    pub sleep_time_h: Option<f64>,
}

/// User-activity features for local day `epoch_day`. `apps` and
/// `prev_day_apps` hold the app events of that day and of the day before;
/// `locks` may contain intervals from neighbouring days, they are clipped.
pub fn activity_features(
    epoch_day: i64,
    apps: &[AppEvent],
    locks: &[LockEvent],
    prev_day_apps: &[AppEvent],
) -> ActivityFeatures {
    let lock_ms: i64 = locks
        .iter()
        .filter_map(|l| clip_to_day(l, epoch_day))
        .map(|(a, b)| b - a)
        .sum();
    let distinct = |it: &mut dyn Iterator<Item = &AppEvent>| it.map(|a| a.app()).collect::<HashSet<_>>().len();
    let n_apps = distinct(&mut apps.iter());
    let n_midnight = distinct(&mut apps.iter().filter(|a| a.t().local_ms_of_day() < MIDNIGHT_APPS_END_MS));

    let wake = apps
        .iter()
        .filter(|a| a.t().local_ms_of_day() >= WAKE_FROM_MS)
        .map(|a| a.t().ms())
        .min();
    let anchor = apps
        .iter()
        .filter(|a| a.t().local_ms_of_day() < SLEEP_ANCHOR_END_MS)
        .map(|a| a.t().ms())
        .max()
        .or_else(|| prev_day_apps.iter().map(|a| a.t().ms()).max());
    let sleep_time_h = match (anchor, wake) {
        (Some(a), Some(w)) if w >= a => Some((w - a) as f64 / MS_PER_HOUR as f64),
        _ => None,
    };

    ActivityFeatures {
        lock_dur_s: lock_ms as f64 / MS_PER_SECOND as f64,
        n_apps: n_apps as f64,
        n_midnight_apps: n_midnight as f64,
        sleep_time_h,
    }
}

/// Concatenates the per-stream features in canonical order.
pub fn assemble_daily(
    subject: SubjectId,
    day_index: u32,
    calls: CallFeatures,
    usage: (f64, f64),
    activity: ActivityFeatures,
    gps: Option<GpsFeatures>,
) -> DailyFeatures {
    let mut values = [0.0; N_FEATURES];
    let mut missing = [false; N_FEATURES];
    values[0..8].copy_from_slice(&calls.to_array());
    values[8] = usage.0;
    values[9] = usage.1;
    values[10] = activity.lock_dur_s;
    values[11] = activity.n_apps;
    values[12] = activity.n_midnight_apps;
    match activity.sleep_time_h {
        Some(h) => values[SLEEP_IDX] = h,
        None => {
            values[SLEEP_IDX] = MISSING;
            missing[SLEEP_IDX] = true;
        }
    }
    match gps {
        Some(g) => {
            match g.location_variance {
                Some(v) => values[14] = v,
                None => {
                    values[14] = MISSING;
                    missing[14] = true;
                }
            }
            values[15] = g.location_entropy;
            values[16] = g.normalized_location_entropy;
            values[17] = g.time_at_home;
            values[18] = g.total_distance_m;
        }
        None => {
            for i in FeatureGroup::Gps.range() {
                values[i] = MISSING;
                missing[i] = true;
            }
        }
    }
    DailyFeatures {
        subject,
        day_index,
        values,
        missing,
    }
}

/// Groups items by key, preserving input order inside each group.
pub(crate) fn bucket<T: Clone>(items: &[T], key: impl Fn(&T) -> Option<u32>) -> BTreeMap<u32, Vec<T>> {
    let mut map: BTreeMap<u32, Vec<T>> = BTreeMap::new();
    for it in items {
        if let Some(k) = key(it) {
            map.entry(k).or_default().push(it.clone());
        }
    }
    map
}

// ---------------------------------------------------------------------------
// features.csv

pub fn features_header() -> Vec<String> {
    let mut h = vec!["subject".to_owned(), "day".to_owned()];
    h.extend(FEATURE_NAMES.iter().map(|s| s.to_string()));
    h.extend(FEATURE_NAMES.iter().map(|s| format!("{s}_missing")));
    h
}

pub fn write_features(path: &Path, rows: &[DailyFeatures]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(features_header()).map_err(|e| Error::csv(path, e))?;
    for r in rows {
        let mut rec = vec![r.subject.to_string(), r.day_index.to_string()];
        rec.extend(r.values.iter().map(|v| v.to_string()));
        rec.extend(r.missing.iter().map(|m| (*m as u8).to_string()));
        w.write_record(&rec).map_err(|e| Error::csv(path, e))?;
    }
    let mut inner = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    inner.flush().map_err(|e| Error::io(path, e))
}

pub fn read_features(path: &Path) -> Result<Vec<DailyFeatures>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let header = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
    let expected = features_header();
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::HeaderMismatch {
            path: path.to_path_buf(),
            expected: expected.join(","),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let bad = |what: &str| Error::Invalid(format!("{}: bad {what}", path.display()));
        let subject = SubjectId::new(&rec[0])?;
        let day_index: u32 = rec[1].parse().map_err(|_| bad("day"))?;
        let mut values = [0.0; N_FEATURES];
        let mut missing = [false; N_FEATURES];
        for i in 0..N_FEATURES {
            values[i] = rec[2 + i].parse().map_err(|_| bad(FEATURE_NAMES[i]))?;
            missing[i] = match &rec[2 + N_FEATURES + i] {
                "0" => false,
                "1" => true,
                _ => return Err(bad("mask bit")),
            };
        }
        rows.push(DailyFeatures {
            subject,
            day_index,
            values,
            missing,
        });
    }
    Ok(rows)
}
