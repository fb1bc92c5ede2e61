//! Flags and the optional TOML config file.
//!
//! Every flag is optional at parse time so that a config file can fill it
//! in; a flag given on the command line always wins. The file holds one
//! table per subcommand with the flag names in snake case:
//!
//! ```toml
//! [extract]
//! cluster = "dbscan"
//! eps = 30.0
//! min_samples = 3
//! ```

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use toml::Table;

#[derive(Debug, Parser)]
#[command(name = "moodsense", version, about = "Phone-sensing features and weekly PHQ-9 prediction")]
pub struct Cli {
    /// TOML file with defaults for the subcommand's flags.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort with known features.
    Synth(SynthArgs),
    /// Ingest a cohort and write the daily feature matrix.
    Extract(ExtractArgs),
    /// Subject-independent cross-validation of the LSTM against the mean baseline.
    Run(RunArgs),
    /// Run the pipeline on a synthetic cohort and diff against its truth.
    Verify(VerifyArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Extract(_) => "extract",
            Command::Run(_) => "run",
            Command::Verify(_) => "verify",
        }
    }
}

/// Fills every `None` field of `self` from `file`.
macro_rules! merge {
    ($ty:ident { $($field:ident),* $(,)? }) => {
        impl $ty {
            pub fn or(self, file: $ty) -> $ty {
                $ty { $($field: self.$field.or(file.$field)),* }
            }
        }
    };
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    /// Output directory; created if missing.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Number of subjects (default 48).
    #[arg(long)]
    pub subjects: Option<usize>,
    /// Study length in weeks (default 8).
    #[arg(long)]
    pub weeks: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Scales all random variation; 0 makes every subject identical.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub effect_calls: Option<f64>,
    #[arg(long)]
    pub effect_usage: Option<f64>,
    #[arg(long)]
    pub effect_activity: Option<f64>,
    #[arg(long)]
    pub effect_gps: Option<f64>,
}

merge!(SynthArgs { out, subjects, weeks, seed, noise, effect_calls, effect_usage, effect_activity, effect_gps });

/// Place clustering choice and thresholds.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct ClusterArgs {
    /// time_based, kmeans or dbscan.
    #[arg(long)]
    pub cluster: Option<String>,
    /// Time-based: maximum distance from the running centroid, meters.
    #[arg(long)]
    pub d_time: Option<f64>,
    /// Time-based: minimum stay, minutes.
    #[arg(long)]
    pub t_time: Option<f64>,
    /// K-means: radius every member must fall within, meters.
    #[arg(long)]
    pub d_kmeans: Option<f64>,
    #[arg(long)]
    pub kmeans_seed: Option<u64>,
    /// DBSCAN neighbourhood radius, meters.
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub min_samples: Option<usize>,
}

merge!(ClusterArgs { cluster, d_time, t_time, d_kmeans, kmeans_seed, eps, min_samples });

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct ExtractArgs {
    /// Cohort manifest, or a directory holding `manifest.csv`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub cluster: ClusterArgs,
}

impl ExtractArgs {
    pub fn or(self, file: ExtractArgs) -> ExtractArgs {
        ExtractArgs {
            manifest: self.manifest.or(file.manifest),
            out: self.out.or(file.out),
            cluster: self.cluster.or(file.cluster),
        }
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct RunArgs {
    /// Cohort manifest (or its directory); features are extracted in memory.
    #[arg(long, conflicts_with = "features_csv")]
    pub manifest: Option<PathBuf>,
    /// Precomputed feature matrix from `extract`.
    #[arg(long)]
    pub features_csv: Option<PathBuf>,
    /// PHQ-9 observations; defaults to `phq.csv` next to the feature matrix.
    #[arg(long)]
    pub phq: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// diagnosis, forecast or both.
    #[arg(long)]
    pub task: Option<String>,
    /// Feature set for the report (all, calls, usage, activity, gps, or a
    /// `+`-joined combination). Repeat to evaluate more sets.
    #[arg(long = "features", value_name = "SET")]
    pub features: Option<Vec<String>>,
    /// Also evaluate each feature group on its own.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub ablation: Option<bool>,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Seeds the fold split and every fold's training.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Stop a fold after this many epochs without a lower training loss.
    #[arg(long)]
    pub patience: Option<usize>,
    /// output (after the head) or hidden (on every hidden state).
    #[arg(long)]
    pub relu: Option<String>,
    /// Train on every prefix of each week as well.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub prefix_augmentation: Option<bool>,
    #[command(flatten)]
    #[serde(flatten)]
    pub cluster: ClusterArgs,
}

impl RunArgs {
    pub fn or(self, file: RunArgs) -> RunArgs {
        RunArgs {
            manifest: self.manifest.or(file.manifest),
            features_csv: self.features_csv.or(file.features_csv),
            phq: self.phq.or(file.phq),
            out: self.out.or(file.out),
            task: self.task.or(file.task),
            features: self.features.or(file.features),
            ablation: self.ablation.or(file.ablation),
            folds: self.folds.or(file.folds),
            seed: self.seed.or(file.seed),
            epochs: self.epochs.or(file.epochs),
            batch_size: self.batch_size.or(file.batch_size),
            hidden: self.hidden.or(file.hidden),
            lr: self.lr.or(file.lr),
            patience: self.patience.or(file.patience),
            relu: self.relu.or(file.relu),
            prefix_augmentation: self.prefix_augmentation.or(file.prefix_augmentation),
            cluster: self.cluster.or(file.cluster),
        }
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct VerifyArgs {
    /// Directory written by `synth`.
    #[arg(long)]
    pub cohort: Option<PathBuf>,
    /// Where to write `discrepancies.csv` and metadata; nothing is written
    /// when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// One algorithm, or `all` (the default).
    #[command(flatten)]
    #[serde(flatten)]
    pub cluster: ClusterArgs,
}

impl VerifyArgs {
    pub fn or(self, file: VerifyArgs) -> VerifyArgs {
        VerifyArgs {
            cohort: self.cohort.or(file.cohort),
            out: self.out.or(file.out),
            cluster: self.cluster.or(file.cluster),
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub synth: SynthArgs,
    #[serde(default)]
    pub extract: ExtractArgs,
    #[serde(default)]
    pub run: RunArgs,
    #[serde(default)]
    pub verify: VerifyArgs,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<ConfigFile, String> {
        let err = |e: &dyn std::fmt::Display| format!("{}: {e}", path.display());
        let text = std::fs::read_to_string(path).map_err(|e| err(&e))?;
        let table: Table = text.parse().map_err(|e| err(&e))?;
        // flattened tables cannot deny unknown fields themselves
        for (section, value) in &table {
            let known = match section.as_str() {
                "synth" => flag_ids::<SynthArgs>(),
                "extract" => flag_ids::<ExtractArgs>(),
                "run" => flag_ids::<RunArgs>(),
                "verify" => flag_ids::<VerifyArgs>(),
                other => return Err(err(&format!("unknown section `{other}`"))),
            };
            let Some(keys) = value.as_table() else {
                return Err(err(&format!("`{section}` must be a table")));
            };
            if let Some(k) = keys.keys().find(|k| !known.contains(k)) {
                return Err(err(&format!("unknown key `{k}` in [{section}]")));
            }
        }
        table.try_into().map_err(|e| err(&e))
    }
}

fn flag_ids<A: Args>() -> Vec<String> {
    A::augment_args(clap::Command::new("probe"))
        .get_arguments()
        .map(|a| a.get_id().to_string())
        .collect()
}
