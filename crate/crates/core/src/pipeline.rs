//! Raw logs to daily feature rows: preprocessing, place clustering and the
//! per-day feature extractors, wired together per subject.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{
    activity_features, assemble_daily, bucket, call_features, usage_features, DailyFeatures,
};
use crate::geo::{cohort_accuracy_cutoff, gps_features, preprocess, ClusterParams, SignificantPlaces};
use crate::types::{local_day_index, study_epoch_day, SensorLog, SubjectId, TimeSpan, Timestamp};

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectExtraction {
    pub subject: SubjectId,
    pub places: SignificantPlaces,
    pub days: Vec<DailyFeatures>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    /// `None` when the cohort has no GPS data at all.
    pub accuracy_cutoff: Option<f64>,
    pub subjects: Vec<SubjectExtraction>,
}

impl Extraction {
    /// All daily rows, subject by subject in cohort order.
    pub fn rows(&self) -> Vec<DailyFeatures> {
        self.subjects.iter().flat_map(|s| s.days.iter().cloned()).collect()
    }
}

fn span_days(span: &impl TimeSpan, start: Timestamp) -> Vec<u32> {
    let first = local_day_index(span.start(), start).unwrap_or(1);
    match local_day_index(span.end(), start) {
        Ok(last) => (first..=last).collect(),
        Err(_) => Vec::new(),
    }
}

/// Features for study days `1..=log.last_day()` of one subject. Events
/// before the study start are ignored.
pub fn extract_subject(log: &SensorLog, accuracy_cutoff: Option<f64>, params: &ClusterParams) -> SubjectExtraction {
    let start = log.study_start;
    let day_of = |t: Timestamp| local_day_index(t, start).ok();

    let pre = match accuracy_cutoff {
        Some(c) => preprocess(&log.gps, c),
        None => Default::default(),
    };
    let mut places = params.cluster(&pre.stationary);
    places.assign_home(&pre.all_valid);

    let calls = bucket(&log.calls, |c| day_of(c.t()));
    let apps = bucket(&log.apps, |a| day_of(a.t()));
    let gps = bucket(&pre.all_valid, |g| day_of(g.t()));
    let mut usage: BTreeMap<u32, Vec<_>> = Default::default();
    for s in &log.usage {
        for d in span_days(s, start) {
            usage.entry(d).or_default().push(*s);
        }
    }
    let mut locks: BTreeMap<u32, Vec<_>> = Default::default();
    for s in &log.locks {
        for d in span_days(s, start) {
            locks.entry(d).or_default().push(*s);
        }
    }

    let days = (1..=log.last_day())
        .map(|d| {
            let epoch_day = study_epoch_day(start, d);
            let day_calls = calls.get(&d).map(Vec::as_slice).unwrap_or(&[]);
            let day_apps = apps.get(&d).map(Vec::as_slice).unwrap_or(&[]);
            let prev_apps = apps.get(&(d - 1)).map(Vec::as_slice).unwrap_or(&[]);
            let day_usage = usage.get(&d).map(Vec::as_slice).unwrap_or(&[]);
            let day_locks = locks.get(&d).map(Vec::as_slice).unwrap_or(&[]);
            let gps_feats = gps
                .get(&d)
                .filter(|fixes| !fixes.is_empty())
                .map(|fixes| gps_features(fixes, &places));
            assemble_daily(
                log.subject.clone(),
                d,
                call_features(day_calls),
                usage_features(day_usage, epoch_day),
                activity_features(epoch_day, day_apps, day_locks, prev_apps),
                gps_feats,
            )
        })
        .collect();

    SubjectExtraction {
        subject: log.subject.clone(),
        places,
        days,
    }
}

/// Extracts every subject with a shared cohort-wide accuracy cutoff.
pub fn extract_cohort(logs: &[SensorLog], params: &ClusterParams) -> Result<Extraction> {
    if logs.is_empty() {
        return Err(Error::EmptyInput("cohort has no subjects"));
    }
    params.validate()?;
    let all_fixes = logs.iter().flat_map(|l| l.gps.iter());
    let accuracy_cutoff = cohort_accuracy_cutoff(all_fixes).ok();
    let subjects = logs
        .par_iter()
        .map(|log| extract_subject(log, accuracy_cutoff, params))
        .collect();
    Ok(Extraction {
        accuracy_cutoff,
        subjects,
    })
}
