//! Density clustering over haversine distance.
//!
//! Exact duplicate coordinates are collapsed into weighted points first and
//! neighbours are found through a lat/lon grid with cells at least `eps`
//! wide, so dense stays sampled every few minutes stay cheap. Results are
//! identical to running the textbook algorithm over individual fixes in
//! input order: clusters are numbered by their lowest-index core fix and a
//! border fix joins the first cluster that reaches it.

use std::collections::HashMap;

use super::{haversine, places_from_labels, ClusterParams, GeoPoint, SignificantPlaces, EARTH_RADIUS_M};
use crate::types::GpsFix;

struct Grid {
    lat_cell: f64,
    lon_cell: f64,
    cells: HashMap<(i64, i64), Vec<usize>>,
}

impl Grid {
    /// `None` when a grid cannot bound neighbourhoods (polar or antimeridian data).
    fn build(points: &[GeoPoint], eps_m: f64) -> Option<Grid> {
        let max_abs_lat = points.iter().map(|p| p.lat.abs()).fold(0.0, f64::max);
        let near_antimeridian = points.iter().any(|p| p.lon.abs() > 179.0);
        if max_abs_lat > 80.0 || near_antimeridian {
            return None;
        }
        let lat_cell = (eps_m / EARTH_RADIUS_M).to_degrees() * 1.01;
        let lon_cell = lat_cell / max_abs_lat.to_radians().cos();
        let mut cells: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells
                .entry(((p.lat / lat_cell).floor() as i64, (p.lon / lon_cell).floor() as i64))
                .or_default()
                .push(i);
        }
        Some(Grid {
            lat_cell,
            lon_cell,
            cells,
        })
    }

    fn candidates<'a>(&'a self, p: GeoPoint) -> impl Iterator<Item = usize> + 'a {
        let (ci, cj) = ((p.lat / self.lat_cell).floor() as i64, (p.lon / self.lon_cell).floor() as i64);
        (-1..=1)
            .flat_map(move |di| (-1..=1).map(move |dj| (ci + di, cj + dj)))
            .filter_map(move |key| self.cells.get(&key))
            .flatten()
            .copied()
    }
}

struct Neighbours<'a> {
    points: &'a [GeoPoint],
    grid: Option<Grid>,
    eps_m: f64,
}

impl Neighbours<'_> {
    fn of(&self, i: usize, out: &mut Vec<usize>) {
        out.clear();
        let p = self.points[i];
        match &self.grid {
            Some(g) => out.extend(g.candidates(p).filter(|&j| haversine(p, self.points[j]) <= self.eps_m)),
            None => out.extend((0..self.points.len()).filter(|&j| haversine(p, self.points[j]) <= self.eps_m)),
        }
        out.sort_unstable();
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Label {
    Unvisited,
    Noise,
    Cluster(usize),
}

/// Core fix: at least `min_samples` fixes (itself included) within `eps_m`.
pub fn cluster_dbscan(fixes: &[GpsFix], eps_m: f64, min_samples: usize) -> SignificantPlaces {
    let params = ClusterParams::Dbscan { eps_m, min_samples };

    // unique coordinates in order of first appearance
    let mut index: HashMap<(u64, u64), usize> = HashMap::new();
    let mut points: Vec<GeoPoint> = Vec::new();
    let mut weight: Vec<usize> = Vec::new();
    let mut fix_to_point = Vec::with_capacity(fixes.len());
    for f in fixes {
        let key = (f.lat().to_bits(), f.lon().to_bits());
        let u = *index.entry(key).or_insert_with(|| {
            points.push(GeoPoint::of(f));
            weight.push(0);
            points.len() - 1
        });
        weight[u] += 1;
        fix_to_point.push(u);
    }

    let nb = Neighbours {
        points: &points,
        grid: Grid::build(&points, eps_m),
        eps_m,
    };
    let mut buf = Vec::new();
    let core: Vec<bool> = (0..points.len())
        .map(|i| {
            nb.of(i, &mut buf);
            buf.iter().map(|&j| weight[j]).sum::<usize>() >= min_samples
        })
        .collect();

    let mut labels = vec![Label::Unvisited; points.len()];
    let mut next_cluster = 0;
    let mut queue = Vec::new();
    for i in 0..points.len() {
        if labels[i] != Label::Unvisited {
            continue;
        }
        if !core[i] {
            labels[i] = Label::Noise;
            continue;
        }
        let c = next_cluster;
        next_cluster += 1;
        labels[i] = Label::Cluster(c);
        queue.push(i);
        while let Some(v) = queue.pop() {
            nb.of(v, &mut buf);
            for &w in &buf {
                match labels[w] {
                    Label::Unvisited => {
                        labels[w] = Label::Cluster(c);
                        if core[w] {
                            queue.push(w);
                        }
                    }
                    Label::Noise => labels[w] = Label::Cluster(c),
                    Label::Cluster(_) => {}
                }
            }
        }
    }

    let fix_labels: Vec<Option<usize>> = fix_to_point
        .iter()
        .map(|&u| match labels[u] {
            Label::Cluster(c) => Some(c),
            _ => None,
        })
        .collect();
    places_from_labels(fixes, &fix_labels, params)
}
