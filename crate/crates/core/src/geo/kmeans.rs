use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{haversine, places_from_labels, ClusterParams, GeoPoint, SignificantPlaces};
use crate::types::GpsFix;

const MAX_ITERATIONS: usize = 100;

/// Lloyd's algorithm with farthest-point seeding. Distances are haversine
/// meters, means are taken over raw lat/lon. Returns the centers (means of
/// their final members, or the seed point for an empty cluster) and the
/// assignment of every point.
pub fn lloyd(points: &[GeoPoint], k: usize, seed: u64) -> (Vec<GeoPoint>, Vec<usize>) {
    assert!(k >= 1 && k <= points.len(), "need 1 <= k <= n");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.gen_range(0..points.len());
    let mut centers = vec![points[first]];
    let mut nearest: Vec<f64> = points.iter().map(|p| haversine(*p, points[first])).collect();
    while centers.len() < k {
        let (far, _) = nearest
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &d)| if d > best.1 { (i, d) } else { best });
        centers.push(points[far]);
        for (p, d) in points.iter().zip(nearest.iter_mut()) {
            *d = d.min(haversine(*p, points[far]));
        }
    }

    let assign = |centers: &[GeoPoint]| -> Vec<usize> {
        points
            .iter()
            .map(|p| {
                let mut best = (0, f64::INFINITY);
                for (j, c) in centers.iter().enumerate() {
                    let d = haversine(*p, *c);
                    if d < best.1 {
                        best = (j, d);
                    }
                }
                best.0
            })
            .collect()
    };
    let means = |assignment: &[usize], centers: &mut [GeoPoint]| {
        let mut sums = vec![(0.0, 0.0, 0usize); centers.len()];
        for (p, &a) in points.iter().zip(assignment) {
            sums[a].0 += p.lat;
            sums[a].1 += p.lon;
            sums[a].2 += 1;
        }
        for (c, (lat, lon, n)) in centers.iter_mut().zip(sums) {
            if n > 0 {
                *c = GeoPoint {
                    lat: lat / n as f64,
                    lon: lon / n as f64,
                };
            }
        }
    };

    let mut assignment = assign(&centers);
    means(&assignment, &mut centers);
    for _ in 1..MAX_ITERATIONS {
        let next = assign(&centers);
        if next == assignment {
            break;
        }
        assignment = next;
        means(&assignment, &mut centers);
    }
    (centers, assignment)
}

/// Farthest distance from any member to its own center, per cluster.
pub(crate) fn cluster_radii(points: &[GeoPoint], centers: &[GeoPoint], assignment: &[usize]) -> Vec<f64> {
    let mut radii = vec![0.0f64; centers.len()];
    for (p, &a) in points.iter().zip(assignment) {
        radii[a] = radii[a].max(haversine(*p, centers[a]));
    }
    radii
}

/// Raises k from 1 until every member lies strictly within `d_kmeans_m` of
/// its cluster center. Every resulting cluster is a significant place.
pub fn cluster_kmeans_adaptive(fixes: &[GpsFix], d_kmeans_m: f64, seed: u64) -> SignificantPlaces {
    let params = ClusterParams::Kmeans { d_kmeans_m, seed };
    if fixes.is_empty() {
        return places_from_labels(fixes, &[], params);
    }
    let points: Vec<GeoPoint> = fixes.iter().map(GeoPoint::of).collect();
    for k in 1..=points.len() {
        let (centers, assignment) = lloyd(&points, k, seed);
        if cluster_radii(&points, &centers, &assignment)
            .iter()
            .all(|r| *r < d_kmeans_m)
        {
            let labels: Vec<Option<usize>> = assignment.into_iter().map(Some).collect();
            return places_from_labels(fixes, &labels, params);
        }
    }
    unreachable!("k = n always satisfies the radius condition")
}
