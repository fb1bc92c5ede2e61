//! Cross-validated evaluation against the mean baseline, feature ablation
//! and report files.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{prepare_inputs, FoldPlan, NormStats, Sample, Task};
use crate::error::{Error, Result};
use crate::features::{FeatureGroup, N_FEATURES};
use crate::geo::Algorithm;
use crate::ingest::csv_writer;
use crate::model::{train, Lstm, TrainConfig, TrainExample};
use crate::types::PHQ_MAX;

pub const MAJOR_DEPRESSION_CUTOFF: f64 = 10.0;

pub fn clip_score(x: f64) -> f64 {
    x.clamp(0.0, PHQ_MAX as f64)
}

pub fn rmse(preds: &[f64], targets: &[f64]) -> Result<f64> {
    if preds.len() != targets.len() {
        return Err(Error::Invalid(format!(
            "{} predictions for {} targets",
            preds.len(),
            targets.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::EmptyInput("rmse of an empty set"));
    }
    let ss: f64 = preds.iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((ss / preds.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Minimal,
    Mild,
    Moderate,
    ModeratelySevere,
    Severe,
}

impl Severity {
    pub fn as_str(self) -> &'static str {
        match self {
            Severity::Minimal => "minimal",
            Severity::Mild => "mild",
            Severity::Moderate => "moderate",
            Severity::ModeratelySevere => "moderately_severe",
            Severity::Severe => "severe",
        }
    }
}

/// 0-4 minimal, 5-9 mild, 10-14 moderate, 15-19 moderately severe, 20-27 severe.
/// Fractional scores change class at 5, 10, 15 and 20.
pub fn severity_class(score: f64) -> Severity {
    let s = clip_score(score);
    if s < 5.0 {
        Severity::Minimal
    } else if s < 10.0 {
        Severity::Mild
    } else if s < 15.0 {
        Severity::Moderate
    } else if s < 20.0 {
        Severity::ModeratelySevere
    } else {
        Severity::Severe
    }
}

/// Major depression: PHQ-9 >= 10.
pub fn is_major(score: f64) -> bool {
    clip_score(score) >= MAJOR_DEPRESSION_CUTOFF
}

pub fn baseline_predict(train_targets: &[f64]) -> Result<f64> {
    if train_targets.is_empty() {
        return Err(Error::EmptyInput("baseline needs training targets"));
    }
    Ok(train_targets.iter().sum::<f64>() / train_targets.len() as f64)
}

/// RMSE and accuracies (percent) of clipped predictions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse: f64,
    pub binary_acc: f64,
    pub severity_acc: f64,
}

impl Metrics {
    pub fn compute(preds: &[f64], targets: &[f64]) -> Result<Metrics> {
        let clipped: Vec<f64> = preds.iter().map(|p| clip_score(*p)).collect();
        let rmse = rmse(&clipped, targets)?;
        let n = targets.len() as f64;
        let pairs = || clipped.iter().zip(targets);
        let binary = pairs().filter(|(p, t)| is_major(**p) == is_major(**t)).count() as f64;
        let severity = pairs()
            .filter(|(p, t)| severity_class(**p) == severity_class(**t))
            .count() as f64;
        Ok(Metrics {
            rmse,
            binary_acc: 100.0 * binary / n,
            severity_acc: 100.0 * severity / n,
        })
    }

    fn map(values: &[Metrics], f: impl Fn(&[f64]) -> f64) -> Metrics {
        let col = |g: fn(&Metrics) -> f64| f(&values.iter().map(g).collect::<Vec<_>>());
        Metrics {
            rmse: col(|m| m.rmse),
            binary_acc: col(|m| m.binary_acc),
            severity_acc: col(|m| m.severity_acc),
        }
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn population_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Mean and population standard deviation across evaluated folds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: Metrics,
    pub std: Metrics,
    pub n_folds: usize,
}

impl Aggregate {
    pub fn of(per_fold: &[Metrics]) -> Option<Aggregate> {
        if per_fold.is_empty() {
            return None;
        }
        Some(Aggregate {
            mean: Metrics::map(per_fold, mean),
            std: Metrics::map(per_fold, population_std),
            n_folds: per_fold.len(),
        })
    }
}

/// Input dimensions the model may see; the rest are zeroed after scaling.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum FeatureSet {
    All,
    Groups(BTreeSet<FeatureGroup>),
}

impl FeatureSet {
    pub fn groups(groups: impl IntoIterator<Item = FeatureGroup>) -> Result<FeatureSet> {
        let set: BTreeSet<FeatureGroup> = groups.into_iter().collect();
        if set.is_empty() {
            return Err(Error::Invalid("empty feature set".into()));
        }
        Ok(FeatureSet::Groups(set))
    }

    pub fn single(group: FeatureGroup) -> FeatureSet {
        FeatureSet::Groups(BTreeSet::from([group]))
    }

    pub fn mask(&self) -> [bool; N_FEATURES] {
        match self {
            FeatureSet::All => [true; N_FEATURES],
            FeatureSet::Groups(gs) => {
                let mut m = [false; N_FEATURES];
                for g in gs {
                    m[g.range()].iter_mut().for_each(|x| *x = true);
                }
                m
            }
        }
    }

    /// Zeroes every dimension outside the set.
    pub fn apply(&self, inputs: &mut [Vec<f64>]) {
        if let FeatureSet::Groups(_) = self {
            let mask = self.mask();
            for row in inputs {
                for (v, keep) in row.iter_mut().zip(mask) {
                    if !keep {
                        *v = 0.0;
                    }
                }
            }
        }
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureSet::All => f.write_str("all"),
            FeatureSet::Groups(gs) => {
                let names: Vec<&str> = gs.iter().map(|g| g.as_str()).collect();
                f.write_str(&names.join("+"))
            }
        }
    }
}

impl std::str::FromStr for FeatureSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.trim() == "all" {
            return Ok(FeatureSet::All);
        }
        let groups = s
            .split(['+', ','])
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(|p| {
                FeatureGroup::ALL
                    .into_iter()
                    .find(|g| g.as_str() == p)
                    .ok_or_else(|| Error::Invalid(format!("unknown feature group `{p}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        FeatureSet::groups(groups)
    }
}

impl TryFrom<String> for FeatureSet {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<FeatureSet> for String {
    fn from(f: FeatureSet) -> String {
        f.to_string()
    }
}

/// Model inputs for one fold, scaled with statistics of its training
/// subjects only.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldInputs<'a> {
    pub stats: NormStats,
    pub baseline: f64,
    pub train: Vec<TrainExample>,
    pub test: Vec<TrainExample>,
    pub test_samples: Vec<&'a Sample>,
}

pub fn prepare_fold<'a>(
    samples: &'a [Sample],
    plan: &FoldPlan,
    fold: usize,
    features: &FeatureSet,
) -> Result<FoldInputs<'a>> {
    let test_subjects = plan.test_subjects(fold);
    let train_subjects = plan.train_subjects(fold);
    let train_samples: Vec<&Sample> = samples.iter().filter(|s| train_subjects.contains(&s.subject)).collect();
    let test_samples: Vec<&Sample> = samples.iter().filter(|s| test_subjects.contains(&s.subject)).collect();
    let stats = NormStats::fit_samples(train_samples.iter().copied());
    let targets: Vec<f64> = train_samples.iter().map(|s| s.target).collect();
    let baseline = baseline_predict(&targets)?;
    let to_examples = |set: &[&Sample]| -> Vec<TrainExample> {
        set.iter()
            .map(|s| {
                let mut inputs = prepare_inputs(&s.seq, &stats);
                features.apply(&mut inputs);
                TrainExample {
                    inputs,
                    target: s.target,
                }
            })
            .collect()
    };
    Ok(FoldInputs {
        train: to_examples(&train_samples),
        test: to_examples(&test_samples),
        stats,
        baseline,
        test_samples,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldFit {
    pub predictions: Vec<f64>,
    pub loss_trace: Vec<f64>,
    pub model: Option<Lstm>,
}

/// Something that learns on one fold and predicts the held-out samples.
pub trait Regressor: Sync {
    fn name(&self) -> &str;
    fn fit_predict(&self, train: &[TrainExample], test: &[TrainExample], fold: usize) -> Result<FoldFit>;
}

/// LSTM trained from scratch per fold; fold `k` uses seed `config.seed + k`.
#[derive(Debug, Clone)]
pub struct LstmRegressor {
    pub config: TrainConfig,
}

impl Regressor for LstmRegressor {
    fn name(&self) -> &str {
        "lstm"
    }

    fn fit_predict(&self, train_set: &[TrainExample], test: &[TrainExample], fold: usize) -> Result<FoldFit> {
        let config = TrainConfig {
            seed: self.config.seed.wrapping_add(fold as u64),
            ..self.config.clone()
        };
        let trained = train(train_set, &config)?;
        let predictions = test
            .iter()
            .map(|e| trained.model.predict(&e.inputs))
            .collect::<Result<_>>()?;
        Ok(FoldFit {
            predictions,
            loss_trace: trained.loss_trace,
            model: Some(trained.model),
        })
    }
}

/// Predicts the training mean for everything.
#[derive(Debug, Clone, Copy, Default)]
pub struct MeanRegressor;

impl Regressor for MeanRegressor {
    fn name(&self) -> &str {
        "mean"
    }

    fn fit_predict(&self, train_set: &[TrainExample], test: &[TrainExample], _fold: usize) -> Result<FoldFit> {
        let targets: Vec<f64> = train_set.iter().map(|e| e.target).collect();
        let m = baseline_predict(&targets)?;
        Ok(FoldFit {
            predictions: vec![m; test.len()],
            loss_trace: Vec::new(),
            model: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum FoldStatus {
    Evaluated,
    EmptyTest,
    EmptyTrain,
    Diverged { epoch: usize, loss: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub subject: String,
    pub week: u32,
    pub target: f64,
    /// Raw model output, before clipping.
    pub prediction: f64,
    pub baseline: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub fold: usize,
    pub status: FoldStatus,
    pub n_train: usize,
    pub n_test: usize,
    pub model: Option<Metrics>,
    pub baseline: Option<Metrics>,
    pub predictions: Vec<Prediction>,
    pub loss_trace: Vec<f64>,
    pub fitted: Option<Lstm>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub task: Task,
    pub algorithm: Option<Algorithm>,
    pub features: FeatureSet,
    pub folds: Vec<FoldResult>,
    pub model: Aggregate,
    pub baseline: Aggregate,
    pub notes: Vec<String>,
}

impl EvalReport {
    pub fn diverged(&self) -> bool {
        self.folds.iter().any(|f| matches!(f.status, FoldStatus::Diverged { .. }))
    }

    pub fn evaluated(&self) -> impl Iterator<Item = &FoldResult> {
        self.folds.iter().filter(|f| f.status == FoldStatus::Evaluated)
    }
}

fn run_fold(
    samples: &[Sample],
    plan: &FoldPlan,
    fold: usize,
    regressor: &dyn Regressor,
    features: &FeatureSet,
) -> Result<FoldResult> {
    let mut result = FoldResult {
        fold,
        status: FoldStatus::EmptyTest,
        n_train: 0,
        n_test: 0,
        model: None,
        baseline: None,
        predictions: Vec::new(),
        loss_trace: Vec::new(),
        fitted: None,
    };
    let inputs = match prepare_fold(samples, plan, fold, features) {
        Ok(i) => i,
        Err(Error::EmptyInput(_)) => {
            result.status = FoldStatus::EmptyTrain;
            return Ok(result);
        }
        Err(e) => return Err(e),
    };
    result.n_train = inputs.train.len();
    result.n_test = inputs.test.len();
    if inputs.test.is_empty() {
        return Ok(result);
    }
    let fit = match regressor.fit_predict(&inputs.train, &inputs.test, fold) {
        Ok(f) => f,
        Err(Error::Diverged { epoch, loss }) => {
            result.status = FoldStatus::Diverged { epoch, loss };
            return Ok(result);
        }
        Err(e) => return Err(e),
    };
    let targets: Vec<f64> = inputs.test.iter().map(|e| e.target).collect();
    result.model = Some(Metrics::compute(&fit.predictions, &targets)?);
    result.baseline = Some(Metrics::compute(&vec![inputs.baseline; targets.len()], &targets)?);
    result.predictions = inputs
        .test_samples
        .iter()
        .zip(&fit.predictions)
        .map(|(s, p)| Prediction {
            subject: s.subject.to_string(),
            week: s.week,
            target: s.target,
            prediction: *p,
            baseline: inputs.baseline,
        })
        .collect();
    result.loss_trace = fit.loss_trace;
    result.fitted = fit.model;
    result.status = FoldStatus::Evaluated;
    Ok(result)
}

/// Trains on all folds but one and scores the held-out subjects, for every
/// fold. Folds run in parallel; results come back in fold order.
pub fn evaluate_cv(
    samples: &[Sample],
    plan: &FoldPlan,
    regressor: &dyn Regressor,
    features: &FeatureSet,
) -> Result<EvalReport> {
    let Some(task) = samples.first().map(|s| s.task) else {
        return Err(Error::EmptyInput("no samples to evaluate"));
    };
    if samples.iter().any(|s| s.task != task) {
        return Err(Error::Invalid("samples mix diagnosis and forecast tasks".into()));
    }
    let folds = (0..plan.folds.len())
        .into_par_iter()
        .map(|k| run_fold(samples, plan, k, regressor, features))
        .collect::<Result<Vec<_>>>()?;

    let mut notes = Vec::new();
    for f in &folds {
        match &f.status {
            FoldStatus::Evaluated => {}
            FoldStatus::EmptyTest => {
                log::warn!("fold {} has no test samples; skipped", f.fold);
                notes.push(format!("fold {} skipped: no test samples", f.fold));
            }
            FoldStatus::EmptyTrain => {
                log::warn!("fold {} has no training samples; skipped", f.fold);
                notes.push(format!("fold {} skipped: no training samples", f.fold));
            }
            FoldStatus::Diverged { epoch, loss } => {
                log::error!("fold {} diverged at epoch {epoch} (loss {loss})", f.fold);
                notes.push(format!("fold {} diverged at epoch {epoch}", f.fold));
            }
        }
    }
    let model: Vec<Metrics> = folds.iter().filter_map(|f| f.model).collect();
    let baseline: Vec<Metrics> = folds.iter().filter_map(|f| f.baseline).collect();
    let (Some(model), Some(baseline)) = (Aggregate::of(&model), Aggregate::of(&baseline)) else {
        for f in &folds {
            if let FoldStatus::Diverged { epoch, loss } = &f.status {
                return Err(Error::Diverged { epoch: *epoch, loss: *loss });
            }
        }
        return Err(Error::EmptyInput("no fold could be evaluated"));
    };
    Ok(EvalReport {
        task,
        algorithm: None,
        features: features.clone(),
        folds,
        model,
        baseline,
        notes,
    })
}

/// One cross-validation run per feature set.
pub fn feature_ablation(
    samples: &[Sample],
    plan: &FoldPlan,
    regressor: &dyn Regressor,
    sets: &[FeatureSet],
) -> Result<Vec<EvalReport>> {
    if sets.is_empty() {
        return Err(Error::Invalid("no feature sets given".into()));
    }
    sets.iter().map(|fs| evaluate_cv(samples, plan, regressor, fs)).collect()
}

fn metric_cells(a: &Aggregate) -> [String; 6] {
    [
        a.mean.rmse.to_string(),
        a.std.rmse.to_string(),
        a.mean.binary_acc.to_string(),
        a.std.binary_acc.to_string(),
        a.mean.severity_acc.to_string(),
        a.std.severity_acc.to_string(),
    ]
}

const METRIC_COLUMNS: [&str; 6] = [
    "rmse",
    "rmse_std",
    "binary_acc",
    "binary_acc_std",
    "severity_acc",
    "severity_acc_std",
];

/// One row for the baseline and one per clustering algorithm; columns are
/// task x metric with the across-fold standard deviation next to each mean.
pub fn write_report(path: &Path, reports: &[EvalReport]) -> Result<()> {
    let tasks = [Task::Diagnosis, Task::Forecast];
    let mut header = vec!["method".to_string()];
    for t in tasks {
        header.extend(METRIC_COLUMNS.iter().map(|m| format!("{t}_{m}")));
    }
    let mut w = csv_writer(path)?;
    w.write_record(&header).map_err(|e| Error::csv(path, e))?;

    let find = |task: Task, alg: Option<Algorithm>| {
        reports
            .iter()
            .find(|r| r.task == task && (alg.is_none() || r.algorithm == alg))
    };
    let row = |name: String, pick: &dyn Fn(Task) -> Option<Aggregate>| {
        let mut rec = vec![name];
        for t in tasks {
            match pick(t) {
                Some(a) => rec.extend(metric_cells(&a)),
                None => rec.extend(std::iter::repeat(String::new()).take(METRIC_COLUMNS.len())),
            }
        }
        rec
    };
    w.write_record(row("baseline".into(), &|t| find(t, None).map(|r| r.baseline)))
        .map_err(|e| Error::csv(path, e))?;
    let algorithms: BTreeSet<Option<Algorithm>> = reports.iter().map(|r| r.algorithm).collect();
    for alg in algorithms {
        let name = alg.map_or("lstm".to_string(), |a| a.as_str().to_string());
        let rec = row(name, &|t| {
            reports
                .iter()
                .find(|r| r.task == t && r.algorithm == alg)
                .map(|r| r.model)
        });
        w.write_record(rec).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Feature-set comparison: one row per (algorithm, feature set, task).
pub fn write_ablation(path: &Path, reports: &[EvalReport]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["algorithm", "feature_set", "task"];
    header.extend(METRIC_COLUMNS);
    header.extend(["baseline_rmse", "baseline_binary_acc", "baseline_severity_acc"]);
    w.write_record(&header).map_err(|e| Error::csv(path, e))?;
    for r in reports {
        let alg = r.algorithm.map_or(String::new(), |a| a.to_string());
        let mut rec = vec![alg, r.features.to_string(), r.task.to_string()];
        rec.extend(metric_cells(&r.model));
        rec.extend([
            r.baseline.mean.rmse.to_string(),
            r.baseline.mean.binary_acc.to_string(),
            r.baseline.mean.severity_acc.to_string(),
        ]);
        w.write_record(&rec).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Per-fold metrics for model and baseline, plus skipped/diverged folds.
pub fn write_folds(path: &Path, reports: &[EvalReport]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "algorithm",
        "feature_set",
        "task",
        "fold",
        "status",
        "n_train",
        "n_test",
        "rmse",
        "binary_acc",
        "severity_acc",
        "baseline_rmse",
        "baseline_binary_acc",
        "baseline_severity_acc",
    ])
    .map_err(|e| Error::csv(path, e))?;
    for r in reports {
        for f in &r.folds {
            let status = match &f.status {
                FoldStatus::Evaluated => "evaluated",
                FoldStatus::EmptyTest => "empty_test",
                FoldStatus::EmptyTrain => "empty_train",
                FoldStatus::Diverged { .. } => "diverged",
            };
            let cells = |m: Option<Metrics>| match m {
                Some(m) => [m.rmse.to_string(), m.binary_acc.to_string(), m.severity_acc.to_string()],
                None => Default::default(),
            };
            let mut rec = vec![
                r.algorithm.map_or(String::new(), |a| a.to_string()),
                r.features.to_string(),
                r.task.to_string(),
                f.fold.to_string(),
                status.to_string(),
                f.n_train.to_string(),
                f.n_test.to_string(),
            ];
            rec.extend(cells(f.model));
            rec.extend(cells(f.baseline));
            w.write_record(&rec).map_err(|e| Error::csv(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_predictions(path: &Path, report: &EvalReport) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["fold", "subject", "week", "target", "prediction", "baseline"])
        .map_err(|e| Error::csv(path, e))?;
    for f in &report.folds {
        for p in &f.predictions {
            w.write_record([
                f.fold.to_string(),
                p.subject.clone(),
                p.week.to_string(),
                p.target.to_string(),
                p.prediction.to_string(),
                p.baseline.to_string(),
            ])
            .map_err(|e| Error::csv(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
