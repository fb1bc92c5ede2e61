use super::{haversine, places_from_labels, ClusterParams, GeoPoint, SignificantPlaces};
use crate::types::{GpsFix, MS_PER_SECOND};

struct Running {
    first: usize,
    last: usize,
    lat_sum: f64,
    lon_sum: f64,
}

impl Running {
    fn start(i: usize, f: &GpsFix) -> Self {
        Running {
            first: i,
            last: i,
            lat_sum: f.lat(),
            lon_sum: f.lon(),
        }
    }

    fn len(&self) -> usize {
        self.last - self.first + 1
    }

    fn centroid(&self) -> GeoPoint {
        let n = self.len() as f64;
        GeoPoint {
            lat: self.lat_sum / n,
            lon: self.lon_sum / n,
        }
    }
}

struct Place {
    lat_sum: f64,
    lon_sum: f64,
    n: usize,
}

impl Place {
    fn centroid(&self) -> GeoPoint {
        GeoPoint {
            lat: self.lat_sum / self.n as f64,
            lon: self.lon_sum / self.n as f64,
        }
    }
}

/// Incremental clustering along the time axis.
///
/// A fix joins the running cluster while it lies within `d_time_m` of the
/// running centroid. When a fix breaks the run, the run becomes a significant
/// place if it lasted at least `t_time_s`; a new significant place whose
/// centroid is closer than `d_time_m / 3` to an existing one is merged into it.
/// Runs that are too short are dropped.
pub fn cluster_time_based(fixes: &[GpsFix], d_time_m: f64, t_time_s: f64) -> SignificantPlaces {
    let params = ClusterParams::TimeBased { d_time_m, t_time_s };
    let mut labels: Vec<Option<usize>> = vec![None; fixes.len()];
    let mut places: Vec<Place> = Vec::new();
    let merge_m = d_time_m / 3.0;

    let mut close = |run: &Running, labels: &mut [Option<usize>]| {
        let span_s = (fixes[run.last].t().ms() - fixes[run.first].t().ms()) as f64 / MS_PER_SECOND as f64;
        if span_s < t_time_s {
            return;
        }
        let c = run.centroid();
        let target = places
            .iter()
            .enumerate()
            .map(|(i, p)| (i, haversine(p.centroid(), c)))
            .filter(|(_, d)| *d < merge_m)
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i);
        let id = match target {
            Some(i) => {
                places[i].lat_sum += run.lat_sum;
                places[i].lon_sum += run.lon_sum;
                places[i].n += run.len();
                i
            }
            None => {
                places.push(Place {
                    lat_sum: run.lat_sum,
                    lon_sum: run.lon_sum,
                    n: run.len(),
                });
                places.len() - 1
            }
        };
        for l in &mut labels[run.first..=run.last] {
            *l = Some(id);
        }
    };

    let mut run: Option<Running> = None;
    for (i, fix) in fixes.iter().enumerate() {
        match run.as_mut() {
            Some(r) if haversine(r.centroid(), GeoPoint::of(fix)) <= d_time_m => {
                r.last = i;
                r.lat_sum += fix.lat();
                r.lon_sum += fix.lon();
            }
            Some(r) => {
                close(r, &mut labels);
                run = Some(Running::start(i, fix));
            }
            None => run = Some(Running::start(i, fix)),
        }
    }
    if let Some(r) = run {
        close(&r, &mut labels);
    }
    places_from_labels(fixes, &labels, params)
}
