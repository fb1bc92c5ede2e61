//! Analytic BPTT gradients against central finite differences.

use moodsense::model::{Lstm, ReluPlacement};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;
/// Denominator floor. Differences at h = 1e-5 carry ~1e-10 of truncation
/// and rounding error, so coordinates smaller than this are compared to
/// within `TOL * FLOOR` absolute.
const FLOOR: f64 = 1e-5;

/// `loss(+h) - loss(-h)` written as `(p+ - p-)(p+ + p- - 2t)`, which is the
/// same quantity without cancelling two large squares against each other.
fn loss_diff(up: f64, down: f64, target: f64) -> f64 {
    (up - down) * (up + down - 2.0 * target)
}

/// Largest relative error over all coordinates, or `None` when the draw sits
/// too close to a ReLU kink for differences to be meaningful.
fn max_rel_error(m: &Lstm, seq: &[Vec<f64>], target: f64) -> Option<f64> {
    let cache = m.forward(seq).unwrap();
    if cache.relu_inputs().iter().any(|z| z.abs() < 1e-3) {
        return None;
    }
    let analytic = m.backward(&cache, target);
    let mut probe = m.clone();
    let mut worst: f64 = 0.0;
    for k in 0..m.params.len() {
        let p = m.params[k];
        probe.params[k] = p + H;
        let up = probe.predict(seq).unwrap();
        probe.params[k] = p - H;
        let down = probe.predict(seq).unwrap();
        probe.params[k] = p;
        let numeric = loss_diff(up, down, target) / (2.0 * H);
        let a = analytic[k];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
        worst = worst.max(rel);
    }
    Some(worst)
}

fn draw(rng: &mut ChaCha8Rng, relu: ReluPlacement) -> (Lstm, Vec<Vec<f64>>, f64) {
    let d = 19;
    let t = rng.gen_range(1..=7);
    let mut m = Lstm::init_uniform(d, 4, relu, rng);
    m.set_b_out(rng.gen_range(0.5..3.0));
    let seq = (0..t).map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
    (m, seq, rng.gen_range(0.0..27.0))
}

fn check(relu: ReluPlacement, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    while checked < 100 {
        let (m, seq, target) = draw(&mut rng, relu);
        if let Some(e) = max_rel_error(&m, &seq, target) {
            worst = worst.max(e);
            checked += 1;
        }
    }
    assert!(worst < TOL, "max relative error {worst:e}");
}

#[test]
fn bptt_matches_finite_differences() {
    check(ReluPlacement::Output, 11);
}

#[test]
fn bptt_matches_finite_differences_with_hidden_relu() {
    check(ReluPlacement::Hidden, 12);
}

#[test]
fn three_step_sequence() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut m = Lstm::init_uniform(19, 4, ReluPlacement::Output, &mut rng);
    m.set_b_out(2.0);
    let seq: Vec<Vec<f64>> = (0..3).map(|_| (0..19).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let e = max_rel_error(&m, &seq, 9.0).expect("away from the kink");
    assert!(e < TOL, "{e:e}");
}
