//! GPS preprocessing, significant-place clustering and daily GPS features.
//!
//! Clustering runs once over a subject's whole study; the per-day features
//! then attribute each day's fixes to the resulting places.

mod dbscan;
mod kmeans;
mod time_based;

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{GpsFix, MS_PER_HOUR, MS_PER_SECOND};

pub use dbscan::cluster_dbscan;
pub use kmeans::{cluster_kmeans_adaptive, lloyd};
pub use time_based::cluster_time_based;

/// Mean Earth radius used for all great-circle distances.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Fixes faster than this are in transit and excluded from clustering.
pub const STATIONARY_MAX_SPEED_MPS: f64 = 1.4;

/// Percentile of cohort accuracy above which fixes are discarded.
pub const ACCURACY_PERCENTILE: f64 = 80.0;

pub const DEFAULT_D_TIME_M: f64 = 40.0;
pub const DEFAULT_T_TIME_S: f64 = 15.0 * 60.0;
pub const DEFAULT_D_KMEANS_M: f64 = 500.0;
pub const DEFAULT_EPS_M: f64 = 30.0;
pub const DEFAULT_MIN_SAMPLES: usize = 3;
pub const DEFAULT_KMEANS_SEED: u64 = 0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(Error::Invalid(format!("point ({lat}, {lon}) out of range")));
        }
        Ok(GeoPoint { lat, lon })
    }

    pub fn of(fix: &GpsFix) -> Self {
        GeoPoint {
            lat: fix.lat(),
            lon: fix.lon(),
        }
    }
}

/// Great-circle distance in meters.
pub fn haversine(a: GeoPoint, b: GeoPoint) -> f64 {
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Arithmetic mean of latitudes and longitudes.
pub fn centroid<'a>(fixes: impl IntoIterator<Item = &'a GpsFix>) -> Option<GeoPoint> {
    let (mut lat, mut lon, mut n) = (0.0, 0.0, 0usize);
    for f in fixes {
        lat += f.lat();
        lon += f.lon();
        n += 1;
    }
    (n > 0).then(|| GeoPoint {
        lat: lat / n as f64,
        lon: lon / n as f64,
    })
}

/// Percentile with linear interpolation between order statistics.
pub fn percentile(values: &[f64], pct: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput("percentile of an empty set"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = pct / 100.0 * (v.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    Ok(v[lo] + (rank - lo as f64) * (v[hi] - v[lo]))
}

/// 80th percentile of accuracy over every fix of every subject.
pub fn cohort_accuracy_cutoff<'a>(fixes: impl IntoIterator<Item = &'a GpsFix>) -> Result<f64> {
    let acc: Vec<f64> = fixes.into_iter().map(GpsFix::accuracy).collect();
    if acc.is_empty() {
        return Err(Error::EmptyInput("no GPS fixes in cohort"));
    }
    percentile(&acc, ACCURACY_PERCENTILE)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Preprocessed {
    /// Valid fixes at walking speed or slower; the clustering input.
    pub stationary: Vec<GpsFix>,
    /// Fixes with acceptable accuracy and a non-negative speed.
    pub all_valid: Vec<GpsFix>,
}

pub fn preprocess(fixes: &[GpsFix], accuracy_cutoff: f64) -> Preprocessed {
    let all_valid: Vec<GpsFix> = fixes
        .iter()
        .filter(|f| f.accuracy() <= accuracy_cutoff && f.speed() >= 0.0)
        .copied()
        .collect();
    let stationary = all_valid
        .iter()
        .filter(|f| f.speed() <= STATIONARY_MAX_SPEED_MPS)
        .copied()
        .collect();
    Preprocessed {
        stationary,
        all_valid,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    TimeBased,
    Kmeans,
    Dbscan,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::TimeBased => "time_based",
            Algorithm::Kmeans => "kmeans",
            Algorithm::Dbscan => "dbscan",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "time_based" | "time-based" | "time" => Ok(Algorithm::TimeBased),
            "kmeans" | "k-means" => Ok(Algorithm::Kmeans),
            "dbscan" => Ok(Algorithm::Dbscan),
            other => Err(Error::Invalid(format!("unknown clustering algorithm `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "snake_case")]
pub enum ClusterParams {
    TimeBased { d_time_m: f64, t_time_s: f64 },
    Kmeans { d_kmeans_m: f64, seed: u64 },
    Dbscan { eps_m: f64, min_samples: usize },
}

impl ClusterParams {
    pub fn default_for(algorithm: Algorithm) -> Self {
        match algorithm {
            Algorithm::TimeBased => ClusterParams::TimeBased {
                d_time_m: DEFAULT_D_TIME_M,
                t_time_s: DEFAULT_T_TIME_S,
            },
            Algorithm::Kmeans => ClusterParams::Kmeans {
                d_kmeans_m: DEFAULT_D_KMEANS_M,
                seed: DEFAULT_KMEANS_SEED,
            },
            Algorithm::Dbscan => ClusterParams::Dbscan {
                eps_m: DEFAULT_EPS_M,
                min_samples: DEFAULT_MIN_SAMPLES,
            },
        }
    }

    pub fn algorithm(&self) -> Algorithm {
        match self {
            ClusterParams::TimeBased { .. } => Algorithm::TimeBased,
            ClusterParams::Kmeans { .. } => Algorithm::Kmeans,
            ClusterParams::Dbscan { .. } => Algorithm::Dbscan,
        }
    }

    /// Distance from a place centroid within which a fix belongs to the place.
    pub fn radius_m(&self) -> f64 {
        match *self {
            ClusterParams::TimeBased { d_time_m, .. } => d_time_m,
            ClusterParams::Kmeans { d_kmeans_m, .. } => d_kmeans_m,
            ClusterParams::Dbscan { eps_m, .. } => eps_m,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            ClusterParams::TimeBased { d_time_m, t_time_s } => d_time_m > 0.0 && t_time_s > 0.0,
            ClusterParams::Kmeans { d_kmeans_m, .. } => d_kmeans_m > 0.0,
            ClusterParams::Dbscan { eps_m, min_samples } => eps_m > 0.0 && min_samples > 0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid(format!("clustering thresholds must be positive: {self:?}")))
        }
    }

    /// Runs the configured algorithm over time-sorted stationary fixes.
    pub fn cluster(&self, stationary: &[GpsFix]) -> SignificantPlaces {
        match *self {
            ClusterParams::TimeBased { d_time_m, t_time_s } => {
                cluster_time_based(stationary, d_time_m, t_time_s)
            }
            ClusterParams::Kmeans { d_kmeans_m, seed } => {
                cluster_kmeans_adaptive(stationary, d_kmeans_m, seed)
            }
            ClusterParams::Dbscan { eps_m, min_samples } => {
                cluster_dbscan(stationary, eps_m, min_samples)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlaceCluster {
    pub id: u32,
    pub centroid: GeoPoint,
    pub members: Vec<GpsFix>,
    /// Sum of intervals between consecutive clustered fixes both in this place.
    pub dwell_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignificantPlaces {
    pub places: Vec<PlaceCluster>,
    pub params: ClusterParams,
    /// Index into `places` of the home place, once assigned.
    pub home: Option<usize>,
}

impl SignificantPlaces {
    pub fn algorithm(&self) -> Algorithm {
        self.params.algorithm()
    }

    /// Index of the nearest place whose centroid is within the membership radius.
    pub fn place_of(&self, p: GeoPoint) -> Option<usize> {
        let radius = self.params.radius_m();
        let mut best: Option<(usize, f64)> = None;
        for (i, place) in self.places.iter().enumerate() {
            let d = haversine(place.centroid, p);
            if d <= radius && best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        best.map(|(i, _)| i)
    }

    /// Home is the place with the most dwell between 00:00 and 06:00 local
    /// time over the whole study. Returns the chosen index.
    pub fn assign_home(&mut self, all_valid: &[GpsFix]) -> Option<usize> {
        let mut night = vec![0.0; self.places.len()];
        for (a, b) in same_day_pairs(all_valid) {
            let (Some(pa), Some(pb)) = (self.place_of(GeoPoint::of(a)), self.place_of(GeoPoint::of(b))) else {
                continue;
            };
            if pa != pb {
                continue;
            }
            let midnight = a.t().local_midnight_ms();
            let lo = a.t().ms().max(midnight);
            let hi = b.t().ms().min(midnight + 6 * MS_PER_HOUR);
            if hi > lo {
                night[pa] += (hi - lo) as f64 / MS_PER_SECOND as f64;
            }
        }
        self.home = night
            .iter()
            .enumerate()
            .filter(|(_, d)| **d > 0.0)
            .fold(None, |best: Option<(usize, f64)>, (i, &d)| match best {
                Some((_, bd)) if bd >= d => best,
                _ => Some((i, d)),
            })
            .map(|(i, _)| i);
        self.home
    }
}

/// Builds places from per-fix labels (`None` = unclustered). Ids are dense
/// in label order.
pub(crate) fn places_from_labels(
    fixes: &[GpsFix],
    labels: &[Option<usize>],
    params: ClusterParams,
) -> SignificantPlaces {
    let n_labels = labels.iter().flatten().max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<GpsFix>> = vec![Vec::new(); n_labels];
    for (fix, label) in fixes.iter().zip(labels) {
        if let Some(l) = label {
            members[*l].push(*fix);
        }
    }
    let mut dwell = vec![0.0; n_labels];
    for i in 1..fixes.len() {
        if let (Some(a), Some(b)) = (labels[i - 1], labels[i]) {
            if a == b {
                dwell[a] += (fixes[i].t().ms() - fixes[i - 1].t().ms()) as f64 / MS_PER_SECOND as f64;
            }
        }
    }
    let places = members
        .into_iter()
        .zip(dwell)
        .filter(|(m, _)| !m.is_empty())
        .enumerate()
        .map(|(id, (members, dwell_s))| PlaceCluster {
            id: id as u32,
            centroid: centroid(&members).expect("non-empty"),
            members,
            dwell_s,
        })
        .collect();
    SignificantPlaces {
        places,
        params,
        home: None,
    }
}

/// Consecutive pairs of time-sorted fixes that share a local calendar day.
fn same_day_pairs(fixes: &[GpsFix]) -> impl Iterator<Item = (&GpsFix, &GpsFix)> {
    fixes
        .windows(2)
        .map(|w| (&w[0], &w[1]))
        .filter(|(a, b)| a.t().local_epoch_day() == b.t().local_epoch_day())
}

/// Seconds spent in each place during one day. An interval between
/// consecutive fixes counts toward a place only if both ends belong to it.
pub fn dwell_attribution(day_fixes: &[GpsFix], places: &SignificantPlaces) -> Vec<f64> {
    let mut dwell = vec![0.0; places.places.len()];
    let labels: Vec<Option<usize>> = day_fixes
        .iter()
        .map(|f| places.place_of(GeoPoint::of(f)))
        .collect();
    for i in 1..day_fixes.len() {
        if let (Some(a), Some(b)) = (labels[i - 1], labels[i]) {
            if a == b {
                dwell[a] += (day_fixes[i].t().ms() - day_fixes[i - 1].t().ms()) as f64
                    / MS_PER_SECOND as f64;
            }
        }
    }
    dwell
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpsFeatures {
    /// `ln(var(lat) + var(lon))`; `None` with fewer than two fixes or no spread.
    pub location_variance: Option<f64>,
    pub location_entropy: f64,
    pub normalized_location_entropy: f64,
    pub time_at_home: f64,
    pub total_distance_m: f64,
}

/// Shannon entropy (nats) of non-negative weights, and the same divided by
/// `ln(count of positive weights)` (0 when at most one is positive).
pub fn entropy_of(weights: &[f64]) -> (f64, f64) {
    let total: f64 = weights.iter().sum();
    let n = weights.iter().filter(|w| **w > 0.0).count();
    if total <= 0.0 || n <= 1 {
        return (0.0, 0.0);
    }
    let h = -weights
        .iter()
        .filter(|w| **w > 0.0)
        .map(|w| {
            let p = w / total;
            p * p.ln()
        })
        .sum::<f64>();
    let norm = (h / (n as f64).ln()).clamp(0.0, 1.0);
    (h.max(0.0), norm)
}

/// Features of one subject-day; `day_fixes` are that day's valid fixes in
/// time order and `places` come from the subject's whole study.
pub fn gps_features(day_fixes: &[GpsFix], places: &SignificantPlaces) -> GpsFeatures {
    let n = day_fixes.len() as f64;
    let location_variance = if day_fixes.len() >= 2 {
        let mean_lat = day_fixes.iter().map(GpsFix::lat).sum::<f64>() / n;
        let mean_lon = day_fixes.iter().map(GpsFix::lon).sum::<f64>() / n;
        let var_lat = day_fixes.iter().map(|f| (f.lat() - mean_lat).powi(2)).sum::<f64>() / n;
        let var_lon = day_fixes.iter().map(|f| (f.lon() - mean_lon).powi(2)).sum::<f64>() / n;
        let total = var_lat + var_lon;
        (total > 0.0).then(|| total.ln())
    } else {
        None
    };

    let dwell = dwell_attribution(day_fixes, places);
    let total_dwell: f64 = dwell.iter().sum();
    let (location_entropy, normalized_location_entropy) = entropy_of(&dwell);
    let time_at_home = match places.home {
        Some(h) if total_dwell > 0.0 => dwell[h] / total_dwell,
        _ => 0.0,
    };
    let total_distance_m = day_fixes
        .windows(2)
        .map(|w| haversine(GeoPoint::of(&w[0]), GeoPoint::of(&w[1])))
        .sum();

    GpsFeatures {
        location_variance,
        location_entropy,
        normalized_location_entropy,
        time_at_home,
        total_distance_m,
    }
}

/// Debug dump `place_id,lat,lon,dwell_s,algorithm`.
pub fn write_places(path: &Path, places: &SignificantPlaces) -> Result<()> {
    let mut w = crate::ingest::csv_writer(path)?;
    w.write_record(["place_id", "lat", "lon", "dwell_s", "algorithm"])
        .map_err(|e| Error::csv(path, e))?;
    for p in &places.places {
        w.write_record([
            p.id.to_string(),
            p.centroid.lat.to_string(),
            p.centroid.lon.to_string(),
            p.dwell_s.to_string(),
            places.algorithm().to_string(),
        ])
        .map_err(|e| Error::csv(path, e))?;
    }
    use std::io::Write;
    let mut inner = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    inner.flush().map_err(|e| Error::io(path, e))
}
