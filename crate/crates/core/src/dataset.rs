//! Weekly samples, fold-local imputation and scaling, subject-wise folds.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{DailyFeatures, FEATURE_NAMES, N_FEATURES};
use crate::ingest::csv_writer;
use crate::types::{PhqObservation, SubjectId};

pub const DAYS_PER_WEEK: u32 = 7;
pub const DEFAULT_FOLDS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Week w's features, PHQ-9 at the end of week w.
    Diagnosis,
    /// Week w's features, PHQ-9 at the end of week w + 1.
    Forecast,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Diagnosis => "diagnosis",
            Task::Forecast => "forecast",
        }
    }

    fn target_week(self, week: u32) -> u32 {
        match self {
            Task::Diagnosis => week,
            Task::Forecast => week + 1,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diagnosis" => Ok(Task::Diagnosis),
            "forecast" | "forecasting" => Ok(Task::Forecast),
            other => Err(Error::Invalid(format!("unknown task `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub subject: SubjectId,
    pub week: u32,
    /// Days `7(week-1)+1 ..= 7*week`; days without data are fully masked rows.
    pub seq: Vec<DailyFeatures>,
    pub target: f64,
    pub task: Task,
}

/// Snaps each observation to the week whose last day is within one day of
/// it. When two observations land on the same week the closer one wins.
pub fn week_targets(phq: &[PhqObservation]) -> HashMap<(SubjectId, u32), f64> {
    let mut best: HashMap<(SubjectId, u32), (u32, u32, f64)> = HashMap::new();
    for obs in phq {
        let d = obs.day_index();
        let week = (d + DAYS_PER_WEEK / 2) / DAYS_PER_WEEK;
        if week == 0 {
            continue;
        }
        let dist = d.abs_diff(week * DAYS_PER_WEEK);
        if dist > 1 {
            continue;
        }
        let key = (obs.subject().clone(), week);
        let cand = (dist, d, obs.score() as f64);
        match best.get(&key) {
            Some(cur) if (cur.0, cur.1) <= (cand.0, cand.1) => {}
            _ => {
                best.insert(key, cand);
            }
        }
    }
    best.into_iter().map(|(k, (_, _, s))| (k, s)).collect()
}

/// One sample per subject-week that has feature data and a target.
pub fn build_samples(daily: &[DailyFeatures], phq: &[PhqObservation], task: Task) -> Vec<Sample> {
    let targets = week_targets(phq);
    let mut by_subject: BTreeMap<&SubjectId, BTreeMap<u32, &DailyFeatures>> = BTreeMap::new();
    for d in daily {
        by_subject.entry(&d.subject).or_default().insert(d.day_index, d);
    }
    let with_phq: BTreeSet<&SubjectId> = phq.iter().map(|o| o.subject()).collect();

    let mut samples = Vec::new();
    for (subject, days) in by_subject {
        if !with_phq.contains(subject) {
            log::warn!("subject {subject} has no PHQ-9 observations; no samples");
            continue;
        }
        let last_day = *days.keys().next_back().expect("non-empty");
        let n_weeks = last_day.div_ceil(DAYS_PER_WEEK);
        for week in 1..=n_weeks {
            let Some(&target) = targets.get(&(subject.clone(), task.target_week(week))) else {
                continue;
            };
            let range = (week - 1) * DAYS_PER_WEEK + 1..=week * DAYS_PER_WEEK;
            if days.range(range.clone()).next().is_none() {
                continue;
            }
            let seq = range
                .map(|d| match days.get(&d) {
                    Some(row) => (*row).clone(),
                    None => DailyFeatures::all_missing(subject.clone(), d),
                })
                .collect();
            samples.push(Sample {
                subject: subject.clone(),
                week,
                seq,
                target,
                task,
            });
        }
    }
    samples
}

/// Per-feature mean and standard deviation over unmasked training cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: [f64; N_FEATURES],
    pub std: [f64; N_FEATURES],
    /// Zero spread or no observed values; scaled to 0.
    pub constant: [bool; N_FEATURES],
}

impl NormStats {
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a DailyFeatures>) -> Self {
        let mut n = [0usize; N_FEATURES];
        let mut sum = [0.0; N_FEATURES];
        let rows: Vec<&DailyFeatures> = rows.into_iter().collect();
        for r in &rows {
            for i in 0..N_FEATURES {
                if !r.missing[i] {
                    n[i] += 1;
                    sum[i] += r.values[i];
                }
            }
        }
        let mut mean = [0.0; N_FEATURES];
        for i in 0..N_FEATURES {
            if n[i] > 0 {
                mean[i] = sum[i] / n[i] as f64;
            }
        }
        let mut ss = [0.0; N_FEATURES];
        for r in &rows {
            for i in 0..N_FEATURES {
                if !r.missing[i] {
                    ss[i] += (r.values[i] - mean[i]).powi(2);
                }
            }
        }
        let mut std = [0.0; N_FEATURES];
        let mut constant = [true; N_FEATURES];
        for i in 0..N_FEATURES {
            if n[i] > 0 {
                std[i] = (ss[i] / n[i] as f64).sqrt();
                constant[i] = !(std[i] > 1e-12 * mean[i].abs().max(1.0));
            }
        }
        NormStats {
            mean,
            std,
            constant,
        }
    }

    /// Statistics over every day of the given samples.
    pub fn fit_samples<'a>(samples: impl IntoIterator<Item = &'a Sample>) -> Self {
        NormStats::fit(samples.into_iter().flat_map(|s| s.seq.iter()))
    }
}

/// Replaces masked cells with the training mean; the mask is kept.
pub fn impute(seq: &[DailyFeatures], stats: &NormStats) -> Vec<DailyFeatures> {
    seq.iter()
        .map(|d| {
            let mut out = d.clone();
            for i in 0..N_FEATURES {
                if d.missing[i] {
                    out.values[i] = stats.mean[i];
                }
            }
            out
        })
        .collect()
}

/// Z-scores every cell; constant features map to 0.
pub fn normalize(seq: &[DailyFeatures], stats: &NormStats) -> Vec<DailyFeatures> {
    seq.iter()
        .map(|d| {
            let mut out = d.clone();
            for i in 0..N_FEATURES {
                out.values[i] = if stats.constant[i] {
                    0.0
                } else {
                    (d.values[i] - stats.mean[i]) / stats.std[i]
                };
            }
            out
        })
        .collect()
}

/// Imputed, z-scored model input for a sample: one row per day.
pub fn prepare_inputs(seq: &[DailyFeatures], stats: &NormStats) -> Vec<Vec<f64>> {
    normalize(&impute(seq, stats), stats)
        .into_iter()
        .map(|d| d.values.to_vec())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<Vec<SubjectId>>,
}

impl FoldPlan {
    pub fn test_subjects(&self, fold: usize) -> BTreeSet<&SubjectId> {
        self.folds[fold].iter().collect()
    }

    pub fn train_subjects(&self, fold: usize) -> BTreeSet<&SubjectId> {
        self.folds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != fold)
            .flat_map(|(_, f)| f.iter())
            .collect()
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Seeded shuffle of the distinct subjects, cut into `k` folds whose sizes
/// differ by at most one.
pub fn subject_kfold(subjects: &[SubjectId], k: usize, seed: u64) -> Result<FoldPlan> {
    let mut ids: Vec<SubjectId> = subjects.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    if k == 0 || ids.len() < k {
        return Err(Error::TooFewSubjects {
            subjects: ids.len(),
            folds: k,
        });
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (ids.len() / k, ids.len() % k);
    let mut folds = Vec::with_capacity(k);
    let mut it = ids.into_iter();
    for f in 0..k {
        let size = base + usize::from(f < extra);
        folds.push(it.by_ref().take(size).collect());
    }
    Ok(FoldPlan { k, seed, folds })
}

/// `samples.csv`: one row per sample-day with z-scored features.
pub fn write_samples(path: &Path, rows: &[(Sample, Vec<Vec<f64>>)]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["subject", "week", "day", "task", "target"];
    header.extend(FEATURE_NAMES);
    w.write_record(&header).map_err(|e| Error::csv(path, e))?;
    for (s, inputs) in rows {
        for (day, x) in s.seq.iter().zip(inputs) {
            let mut rec = vec![
                s.subject.to_string(),
                s.week.to_string(),
                day.day_index.to_string(),
                s.task.to_string(),
                s.target.to_string(),
            ];
            rec.extend(x.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(|e| Error::csv(path, e))?;
        }
    }
    let mut inner = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    inner.flush().map_err(|e| Error::io(path, e))
}
