use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use moodsense::dataset::{build_samples, prepare_inputs, subject_kfold, write_samples, Sample, Task, DEFAULT_FOLDS};
use moodsense::eval::{
    evaluate_cv, write_ablation, write_folds, write_predictions, write_report, EvalReport, FeatureSet,
    LstmRegressor,
};
use moodsense::features::{read_features, write_features};
use moodsense::geo::write_places;
use moodsense::ingest::{load_cohort, parse_phq, write_phq, write_rejections, CohortManifest, Cohort};
use moodsense::model::{write_checkpoint, write_loss_trace, ReluPlacement, TrainConfig};
use moodsense::pipeline::extract_cohort;
use moodsense::synth::{self, generate, verify_pipeline, write_cohort, write_discrepancies, Effects, SynthConfig};
use moodsense::{Algorithm, ClusterParams, DailyFeatures, FeatureGroup, PhqObservation, SubjectId};
use serde::Serialize;
use serde_json::{json, Value};

use crate::args::{ClusterArgs, ExtractArgs, RunArgs, SynthArgs, VerifyArgs};

/// Failure with its process exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags or config: exit 1.
    Usage(String),
    /// Unreadable, malformed or insufficient data: exit 2.
    Data(String),
    /// At least one fold diverged; outputs are still written: exit 3.
    Diverged(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Diverged(_) => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage: {m}"),
            Failure::Data(m) => write!(f, "{m}"),
            Failure::Diverged(m) => write!(f, "{m}"),
        }
    }
}

impl From<moodsense::Error> for Failure {
    fn from(e: moodsense::Error) -> Self {
        match e {
            moodsense::Error::Diverged { .. } => Failure::Diverged(e.to_string()),
            other => Failure::Data(other.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

fn usage<T>(msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure::Usage(msg.into()))
}

fn required<T>(v: Option<T>, flag: &str) -> Result<T, Failure> {
    v.ok_or_else(|| Failure::Usage(format!("--{flag} is required (flag or config file)")))
}

/// Deterministic record of everything needed to rerun a command.
fn write_metadata(dir: &Path, command: &str, config: Value, results: Value) -> Outcome {
    let meta = json!({
        "tool": "moodsense",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "config": config,
        "results": results,
    });
    let path = dir.join("metadata.json");
    std::fs::create_dir_all(dir).map_err(|e| Failure::Data(format!("{}: {e}", dir.display())))?;
    let text = serde_json::to_string_pretty(&meta).expect("metadata serializes") + "\n";
    std::fs::write(&path, text).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn to_value(v: &impl Serialize) -> Value {
    serde_json::to_value(v).expect("config serializes")
}

// ---------------------------------------------------------------------------
// synth

pub fn synth(args: SynthArgs) -> Outcome {
    let out = required(args.out, "out")?;
    let d = SynthConfig::default();
    let e = Effects::default();
    let config = SynthConfig {
        n_subjects: args.subjects.unwrap_or(d.n_subjects),
        n_weeks: args.weeks.unwrap_or(d.n_weeks),
        seed: args.seed.unwrap_or(d.seed),
        noise: args.noise.unwrap_or(d.noise),
        effects: Effects {
            calls: args.effect_calls.unwrap_or(e.calls),
            usage: args.effect_usage.unwrap_or(e.usage),
            activity: args.effect_activity.unwrap_or(e.activity),
            gps: args.effect_gps.unwrap_or(e.gps),
        },
    };
    config.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let cohort = generate(&config)?;
    write_cohort(&out, &cohort)?;
    info!("wrote {} subjects x {} days to {}", config.n_subjects, config.n_days(), out.display());
    let results = json!({
        "accuracy_cutoff": cohort.truth.accuracy_cutoff,
        "phq_observations": cohort.phq.len(),
        "files": [synth::MANIFEST_FILE, synth::TRUTH_FEATURES_FILE, synth::TRUTH_PHQ_FILE],
    });
    write_metadata(&out, "synth", json!({ "out": out, "synth": to_value(&config) }), results)
}

// ---------------------------------------------------------------------------
// clustering flags

fn algorithm(name: &str) -> Result<Algorithm, Failure> {
    name.parse().map_err(|e: moodsense::Error| Failure::Usage(e.to_string()))
}

fn cluster_params(args: &ClusterArgs, alg: Algorithm) -> Result<ClusterParams, Failure> {
    let p = match ClusterParams::default_for(alg) {
        ClusterParams::TimeBased { d_time_m, t_time_s } => ClusterParams::TimeBased {
            d_time_m: args.d_time.unwrap_or(d_time_m),
            t_time_s: args.t_time.map_or(t_time_s, |m| m * 60.0),
        },
        ClusterParams::Kmeans { d_kmeans_m, seed } => ClusterParams::Kmeans {
            d_kmeans_m: args.d_kmeans.unwrap_or(d_kmeans_m),
            seed: args.kmeans_seed.unwrap_or(seed),
        },
        ClusterParams::Dbscan { eps_m, min_samples } => ClusterParams::Dbscan {
            eps_m: args.eps.unwrap_or(eps_m),
            min_samples: args.min_samples.unwrap_or(min_samples),
        },
    };
    p.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(p)
}

const DEFAULT_ALGORITHM: Algorithm = Algorithm::TimeBased;

fn single_algorithm(args: &ClusterArgs) -> Result<ClusterParams, Failure> {
    let alg = match args.cluster.as_deref() {
        None => DEFAULT_ALGORITHM,
        Some("all") => return usage("this command runs exactly one clustering algorithm"),
        Some(name) => algorithm(name)?,
    };
    cluster_params(args, alg)
}

fn manifest_path(p: PathBuf) -> PathBuf {
    if p.is_dir() {
        p.join(synth::MANIFEST_FILE)
    } else {
        p
    }
}

fn load(manifest: PathBuf) -> Result<Cohort, Failure> {
    let manifest = CohortManifest::load(&manifest_path(manifest))?;
    if manifest.subjects.is_empty() {
        return Err(Failure::Data("cohort manifest lists no subjects".into()));
    }
    let cohort = load_cohort(&manifest)?;
    if !cohort.rejected.is_empty() {
        warn!("{} malformed rows quarantined", cohort.rejected.len());
    }
    Ok(cohort)
}

// ---------------------------------------------------------------------------
// extract

pub fn extract(args: ExtractArgs) -> Outcome {
    let manifest = required(args.manifest, "manifest")?;
    let out = required(args.out, "out")?;
    let params = single_algorithm(&args.cluster)?;
    let cohort = load(manifest.clone())?;
    let ex = extract_cohort(&cohort.logs, &params)?;
    let rows = ex.rows();

    write_features(&out.join("features.csv"), &rows)?;
    write_phq(&out.join("phq.csv"), &cohort.phq)?;
    write_rejections(&out.join("rejected.csv"), &cohort.rejected)?;
    for s in &ex.subjects {
        write_places(&out.join("places").join(format!("{}.csv", s.subject)), &s.places)?;
    }

    let mut log = String::new();
    writeln!(log, "algorithm {}", params.algorithm()).unwrap();
    match ex.accuracy_cutoff {
        Some(c) => writeln!(log, "accuracy cutoff {c} m").unwrap(),
        None => writeln!(log, "accuracy cutoff none (no GPS fixes)").unwrap(),
    }
    for (summary, s) in cohort.summaries.iter().zip(&ex.subjects) {
        let streams: Vec<String> = summary
            .streams
            .iter()
            .map(|st| format!("{}={}/{}d", st.kind.name(), st.events, st.days))
            .collect();
        writeln!(
            log,
            "{} days={} places={} home={} {}{}",
            s.subject,
            s.days.len(),
            s.places.places.len(),
            s.places.home.map_or("none".to_string(), |h| h.to_string()),
            streams.join(" "),
            if summary.flagged { " FLAGGED" } else { "" }
        )
        .unwrap();
    }
    writeln!(log, "rejected rows {}", cohort.rejected.len()).unwrap();
    let log_path = out.join("extract_log.txt");
    std::fs::write(&log_path, log).map_err(|e| Failure::Data(format!("{}: {e}", log_path.display())))?;

    info!("{} daily rows for {} subjects", rows.len(), ex.subjects.len());
    let config = json!({
        "manifest": manifest,
        "out": out,
        "clustering": to_value(&params),
    });
    let results = json!({
        "accuracy_cutoff": ex.accuracy_cutoff,
        "subjects": ex.subjects.len(),
        "rows": rows.len(),
        "rejected_rows": cohort.rejected.len(),
    });
    write_metadata(&out, "extract", config, results)
}

// ---------------------------------------------------------------------------
// run

fn tasks(name: &str) -> Result<Vec<Task>, Failure> {
    match name {
        "both" => Ok(vec![Task::Diagnosis, Task::Forecast]),
        other => other
            .parse()
            .map(|t| vec![t])
            .map_err(|e: moodsense::Error| Failure::Usage(e.to_string())),
    }
}

fn feature_sets(args: &RunArgs) -> Result<Vec<FeatureSet>, Failure> {
    let mut sets: Vec<FeatureSet> = Vec::new();
    for s in args.features.clone().unwrap_or_else(|| vec!["all".into()]) {
        let fs: FeatureSet = s.parse().map_err(|e: moodsense::Error| Failure::Usage(e.to_string()))?;
        if !sets.contains(&fs) {
            sets.push(fs);
        }
    }
    if args.ablation.unwrap_or(false) {
        for fs in std::iter::once(FeatureSet::All).chain(FeatureGroup::ALL.map(FeatureSet::single)) {
            if !sets.contains(&fs) {
                sets.push(fs);
            }
        }
    }
    Ok(sets)
}

fn train_config(args: &RunArgs) -> Result<TrainConfig, Failure> {
    let d = TrainConfig::default();
    let relu = match args.relu.as_deref() {
        None => d.relu,
        Some(r) => r.parse::<ReluPlacement>().map_err(|e| Failure::Usage(e.to_string()))?,
    };
    let cfg = TrainConfig {
        epochs: args.epochs.unwrap_or(d.epochs),
        batch_size: args.batch_size.unwrap_or(d.batch_size),
        seed: args.seed.unwrap_or(d.seed),
        patience: args.patience.or(d.patience),
        prefix_augmentation: args.prefix_augmentation.unwrap_or(d.prefix_augmentation),
        relu,
        hidden: args.hidden.unwrap_or(d.hidden),
        lr: args.lr.unwrap_or(d.lr),
        init_output_bias_to_mean: d.init_output_bias_to_mean,
    };
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(cfg)
}

fn file_tag(fs: &FeatureSet) -> String {
    fs.to_string().replace(['+', ','], "-")
}

/// Every sample scaled with the statistics of the fold that holds it out.
fn held_out_inputs(samples: &[Sample], plan: &moodsense::dataset::FoldPlan) -> Vec<(Sample, Vec<Vec<f64>>)> {
    let mut rows = Vec::with_capacity(samples.len());
    for k in 0..plan.folds.len() {
        let test = plan.test_subjects(k);
        let train = plan.train_subjects(k);
        let train_samples = samples.iter().filter(|s| train.contains(&s.subject));
        let stats = moodsense::dataset::NormStats::fit_samples(train_samples);
        for s in samples.iter().filter(|s| test.contains(&s.subject)) {
            rows.push((s.clone(), prepare_inputs(&s.seq, &stats)));
        }
    }
    rows.sort_by(|a, b| (&a.0.subject, a.0.week).cmp(&(&b.0.subject, b.0.week)));
    rows
}

pub fn run(args: RunArgs) -> Outcome {
    let out = required(args.out.clone(), "out")?;
    let params = single_algorithm(&args.cluster)?;
    let tasks = tasks(args.task.as_deref().unwrap_or("both"))?;
    let sets = feature_sets(&args)?;
    let train = train_config(&args)?;
    let k = args.folds.unwrap_or(DEFAULT_FOLDS);
    if k < 2 {
        return usage("--folds must be at least 2");
    }
    let fold_seed = args.seed.unwrap_or(0);

    let (rows, phq, source): (Vec<DailyFeatures>, Vec<PhqObservation>, Value) = match (&args.manifest, &args.features_csv) {
        (Some(m), _) => {
            let cohort = load(m.clone())?;
            let ex = extract_cohort(&cohort.logs, &params)?;
            (ex.rows(), cohort.phq, json!({ "manifest": m }))
        }
        (None, Some(f)) => {
            let phq_path = args
                .phq
                .clone()
                .unwrap_or_else(|| f.parent().unwrap_or(Path::new(".")).join("phq.csv"));
            let parsed = parse_phq(&phq_path)?;
            if !parsed.rejected.is_empty() {
                warn!("{} malformed PHQ-9 rows ignored", parsed.rejected.len());
            }
            (read_features(f)?, parsed.events, json!({ "features_csv": f, "phq": phq_path }))
        }
        (None, None) => return usage("either --manifest or --features-csv is required"),
    };
    if rows.is_empty() {
        return Err(Failure::Data("no daily feature rows".into()));
    }
    // a precomputed matrix only carries an algorithm label when one is given
    let labelled = (args.manifest.is_some() || args.cluster.cluster.is_some()).then_some(params);

    let per_task: Vec<(Task, Vec<Sample>)> = tasks.iter().map(|&t| (t, build_samples(&rows, &phq, t))).collect();
    // one split for every task so that a subject is held out together everywhere
    let mut subjects: Vec<SubjectId> = per_task.iter().flat_map(|(_, s)| s.iter().map(|x| x.subject.clone())).collect();
    subjects.sort();
    subjects.dedup();
    let plan = subject_kfold(&subjects, k, fold_seed)?;
    std::fs::create_dir_all(&out).map_err(|e| Failure::Data(format!("{}: {e}", out.display())))?;
    plan.write_json(&out.join("folds.json"))?;

    let regressor = LstmRegressor { config: train.clone() };
    let mut reports: Vec<EvalReport> = Vec::new();
    let mut results = BTreeMap::new();
    for (task, samples) in &per_task {
        if samples.is_empty() {
            return Err(Failure::Data(format!("no {task} samples: no week has both features and a PHQ-9 score")));
        }
        write_samples(&out.join(format!("samples_{task}.csv")), &held_out_inputs(samples, &plan))?;
        for fs in &sets {
            info!("{task}, features {fs}: {} samples, {k} folds", samples.len());
            let mut report = evaluate_cv(samples, &plan, &regressor, fs)?;
            report.algorithm = labelled.map(|p| p.algorithm());
            let tag = format!("{task}_{}", file_tag(fs));
            write_predictions(&out.join(format!("predictions_{tag}.csv")), &report)?;
            for f in &report.folds {
                if let Some(model) = &f.fitted {
                    write_checkpoint(&out.join("checkpoints").join(format!("{tag}_fold{}.ckpt", f.fold)), model, &train)?;
                }
                if !f.loss_trace.is_empty() {
                    write_loss_trace(&out.join("loss").join(format!("{tag}_fold{}.csv", f.fold)), &f.loss_trace)?;
                }
            }
            results.insert(
                tag,
                json!({
                    "samples": samples.len(),
                    "model": to_value(&report.model),
                    "baseline": to_value(&report.baseline),
                    "notes": report.notes,
                }),
            );
            reports.push(report);
        }
    }

    let primary = &sets[0];
    let main: Vec<EvalReport> = reports.iter().filter(|r| &r.features == primary).cloned().collect();
    write_report(&out.join("report.csv"), &main)?;
    write_ablation(&out.join("ablation.csv"), &reports)?;
    write_folds(&out.join("folds.csv"), &reports)?;

    let config = json!({
        "input": source,
        "out": out,
        "clustering": labelled.map(|p| to_value(&p)),
        "tasks": tasks.iter().map(|t| t.to_string()).collect::<Vec<_>>(),
        "feature_sets": sets.iter().map(|s| s.to_string()).collect::<Vec<_>>(),
        "folds": k,
        "fold_seed": fold_seed,
        "train": to_value(&train),
        "accuracy_unit": "sample (subject-week)",
    });
    write_metadata(&out, "run", config, to_value(&results))?;

    let diverged: Vec<String> = reports
        .iter()
        .filter(|r| r.diverged())
        .map(|r| format!("{} / {}", r.task, r.features))
        .collect();
    if !diverged.is_empty() {
        return Err(Failure::Diverged(format!("training diverged in: {}", diverged.join(", "))));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// verify

pub fn verify(args: VerifyArgs) -> Outcome {
    let cohort = required(args.cohort.clone(), "cohort")?;
    let algorithms = match args.cluster.cluster.as_deref() {
        None | Some("all") => vec![Algorithm::TimeBased, Algorithm::Kmeans, Algorithm::Dbscan],
        Some(name) => vec![algorithm(name)?],
    };
    let params: Vec<ClusterParams> = algorithms
        .iter()
        .map(|a| cluster_params(&args.cluster, *a))
        .collect::<Result<_, _>>()?;

    let mut failed = Vec::new();
    let mut results = BTreeMap::new();
    for p in &params {
        let report = verify_pipeline(&cohort, p)?;
        println!(
            "{}: {} rows, {} rejected, {} discrepancies",
            report.algorithm,
            report.rows_compared,
            report.rejected_rows,
            report.discrepancies.len()
        );
        for d in report.discrepancies.iter().take(10) {
            println!("  {} day {} {}: expected {:?}, found {:?}", d.subject, d.day, d.feature, d.expected, d.found);
        }
        if let Some(out) = &args.out {
            write_discrepancies(&out.join(format!("discrepancies_{}.csv", report.algorithm)), &report)?;
        }
        if !report.passed() {
            failed.push(report.algorithm.clone());
        }
        results.insert(
            report.algorithm.clone(),
            json!({
                "rows": report.rows_compared,
                "rejected_rows": report.rejected_rows,
                "discrepancies": report.discrepancies.len(),
            }),
        );
    }
    if let Some(out) = &args.out {
        let config = json!({
            "cohort": cohort,
            "clustering": params.iter().map(to_value).collect::<Vec<_>>(),
        });
        write_metadata(out, "verify", config, to_value(&results))?;
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Data(format!("pipeline disagrees with truth for {}", failed.join(", "))))
    }
}
