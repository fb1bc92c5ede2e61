//! Synthetic cohorts with known answers.
//!
//! Each subject gets a handful of well-separated places, a daily routine
//! (sleep, app use, calls, phone sessions, movement between places) whose
//! intensity tracks a latent weekly depression level, and weekly PHQ-9
//! scores drawn from that level. While generating, the routine is recorded
//! in a form that lets the expected daily feature vectors be worked out
//! directly from what was planted, without going through the extraction
//! code. [`verify_pipeline`] then runs the real pipeline on the emitted
//! files and diffs the two.
//!
//! Layout guarantees that make the planted places unambiguous for every
//! clustering algorithm at its default parameters:
//! * places of one subject are at least 2 km apart;
//! * stationary fixes scatter at most 5 m around the place center, plus at
//!   most ~0.8 m of coordinate rounding, so any two stays at one place have
//!   centroids closer than 40/3 m;
//! * every visit lasts at least an hour and its first and last fixes always
//!   pass preprocessing;
//! * transit fixes move faster than 1.4 m/s and lie at least 1 km from every
//!   place.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{read_features, write_features, DailyFeatures, FEATURE_NAMES, N_FEATURES};
use crate::geo::ClusterParams;
use crate::ingest::{csv_writer, load_cohort, write_log, CohortManifest};
use crate::pipeline::extract_cohort;
use crate::types::{
    AppEvent, CallDirection, CallEvent, GpsFix, LockEvent, PhqObservation, SensorLog, SubjectId, TimeSpan,
    Timestamp, UsageSession, PHQ_MAX,
};

const MIN: i64 = 60_000;
const HOUR: i64 = 60 * MIN;
const DAY: i64 = 24 * HOUR;
/// 2024-01-08, a Monday.
const FIRST_EPOCH_DAY: i64 = 19_730;
const GPS_STEP: i64 = 5 * MIN;
const R_EARTH: f64 = 6_371_000.0;
const DAYTIME_END: i64 = 20 * HOUR + 30 * MIN;
/// Standard deviation of the weekly latent innovation, in PHQ-9 points.
const WALK_STEP: f64 = 0.7;

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const TRUTH_FEATURES_FILE: &str = "truth_features.csv";
pub const TRUTH_PHQ_FILE: &str = "truth_phq.csv";

/// How strongly each feature family follows the latent weekly level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Effects {
    pub calls: f64,
    pub usage: f64,
    pub activity: f64,
    pub gps: f64,
}

impl Default for Effects {
    fn default() -> Self {
        Effects {
            calls: 0.4,
            usage: 0.45,
            activity: 1.75,
            gps: 0.8,
        }
    }
}

impl Effects {
    pub const ZERO: Effects = Effects {
        calls: 0.0,
        usage: 0.0,
        activity: 0.0,
        gps: 0.0,
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub n_weeks: u32,
    pub seed: u64,
    pub effects: Effects,
    /// Scales day-to-day and between-subject variation and the weekly
    /// random walk. At 0 every subject follows the same template.
    pub noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_subjects: 48,
            n_weeks: 8,
            seed: 0,
            effects: Effects::default(),
            noise: 1.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_subjects < 10 {
            return Err(Error::Invalid("synthetic cohort needs at least 10 subjects".into()));
        }
        if self.n_weeks == 0 {
            return Err(Error::Invalid("synthetic cohort needs at least one week".into()));
        }
        let e = self.effects;
        if ![e.calls, e.usage, e.activity, e.gps].iter().all(|x| x.is_finite()) {
            return Err(Error::Invalid("effect sizes must be finite".into()));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::Invalid("noise must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn n_days(&self) -> u32 {
        7 * self.n_weeks
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectTruth {
    pub subject: SubjectId,
    pub days: Vec<DailyFeatures>,
    /// Latent level for weeks 1..=n_weeks.
    pub latent: Vec<f64>,
    pub phq: Vec<PhqObservation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub accuracy_cutoff: f64,
    pub subjects: Vec<SubjectTruth>,
}

impl GroundTruth {
    pub fn features(&self) -> Vec<DailyFeatures> {
        self.subjects.iter().flat_map(|s| s.days.iter().cloned()).collect()
    }

    pub fn phq(&self) -> Vec<PhqObservation> {
        self.subjects.iter().flat_map(|s| s.phq.iter().cloned()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCohort {
    pub config: SynthConfig,
    pub logs: Vec<SensorLog>,
    pub phq: Vec<PhqObservation>,
    pub truth: GroundTruth,
}

// ---------------------------------------------------------------------------
// Geometry, written out here so the truth does not lean on `geo`.

fn gc_distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (la1, la2) = (a.0.to_radians(), b.0.to_radians());
    let dla = la2 - la1;
    let dlo = (b.1 - a.1).to_radians();
    let s = (dla / 2.0).sin().powi(2) + la1.cos() * la2.cos() * (dlo / 2.0).sin().powi(2);
    2.0 * R_EARTH * s.sqrt().min(1.0).asin()
}

fn displace(p: (f64, f64), north_m: f64, east_m: f64) -> (f64, f64) {
    let deg_m = std::f64::consts::PI * R_EARTH / 180.0;
    (p.0 + north_m / deg_m, p.1 + east_m / (deg_m * p.0.to_radians().cos()))
}

fn round5(x: f64) -> f64 {
    (x * 1e5).round() / 1e5
}

// ---------------------------------------------------------------------------
// Planting

#[derive(Debug, Clone, Copy, PartialEq)]
enum Spot {
    Place(usize),
    Transit,
}

#[derive(Debug, Clone)]
struct PlantedFix {
    local: i64,
    lat: f64,
    lon: f64,
    accuracy: f64,
    speed: f64,
    spot: Spot,
}

#[derive(Debug, Clone)]
struct PlantedCall {
    local: i64,
    direction: CallDirection,
    duration_s: u32,
    contact: String,
}

/// Everything planted for one study day, times in local ms since the
/// study's first local midnight.
#[derive(Debug, Clone, Default)]
struct DayPlan {
    calls: Vec<PlantedCall>,
    /// `(start, end)`.
    usage: Vec<(i64, i64)>,
    locks: Vec<(i64, i64)>,
    apps: Vec<(i64, String)>,
    gps: Vec<PlantedFix>,
}

struct Subject {
    id: SubjectId,
    offset_min: i32,
    places: Vec<(f64, f64)>,
    latent: Vec<f64>,
    phq: Vec<PhqObservation>,
    /// Indexed by study day, entry 0 unused.
    days: Vec<DayPlan>,
}

struct Traits {
    bed: f64,
    sleep: f64,
    apps: f64,
    lock: f64,
    usage: f64,
    calls: f64,
    out: f64,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn day_start(d: u32) -> i64 {
    (d as i64 - 1) * DAY
}

fn pick_places(rng: &mut ChaCha8Rng, center: (f64, f64)) -> Vec<(f64, f64)> {
    let n = 2 + rng.gen_range(1..=3);
    let mut places = vec![center];
    while places.len() < n {
        let p = displace(center, rng.gen_range(-12_000.0..12_000.0), rng.gen_range(-12_000.0..12_000.0));
        if places.iter().all(|q| gc_distance(p, *q) >= 2_000.0) {
            places.push(p);
        }
    }
    places
}

fn transit_point(rng: &mut ChaCha8Rng, places: &[(f64, f64)]) -> (f64, f64) {
    loop {
        let p = displace(places[0], rng.gen_range(-15_000.0..15_000.0), rng.gen_range(-15_000.0..15_000.0));
        if places.iter().all(|q| gc_distance(p, *q) >= 1_000.0) {
            return p;
        }
    }
}

fn accuracy(rng: &mut ChaCha8Rng) -> f64 {
    if rng.gen_bool(0.92) {
        rng.gen_range(3..=12) as f64
    } else {
        rng.gen_range(40..=150) as f64
    }
}

fn stationary_fix(rng: &mut ChaCha8Rng, local: i64, place: usize, center: (f64, f64), anchor: bool) -> PlantedFix {
    let r = 5.0 * rng.gen::<f64>().sqrt();
    let th = rng.gen_range(0.0..std::f64::consts::TAU);
    let (lat, lon) = displace(center, r * th.cos(), r * th.sin());
    let (accuracy, speed) = if anchor {
        (rng.gen_range(3..=8) as f64, 0.0)
    } else {
        let speed = if rng.gen_bool(0.01) { -1.0 } else { (rng.gen_range(0.0..0.8) * 100.0f64).round() / 100.0 };
        (accuracy(rng), speed)
    };
    PlantedFix {
        local,
        lat: round5(lat),
        lon: round5(lon),
        accuracy,
        speed,
        spot: Spot::Place(place),
    }
}

fn transit_fix(rng: &mut ChaCha8Rng, local: i64, places: &[(f64, f64)]) -> PlantedFix {
    let (lat, lon) = transit_point(rng, places);
    let speed = if rng.gen_bool(0.01) { -1.0 } else { (rng.gen_range(2.0..15.0) * 100.0f64).round() / 100.0 };
    PlantedFix {
        local,
        lat: round5(lat),
        lon: round5(lon),
        accuracy: accuracy(rng),
        speed,
        spot: Spot::Transit,
    }
}

/// One GPS day: home, optionally a trip to work and another place, home.
fn plan_gps(rng: &mut ChaCha8Rng, d: u32, places: &[(f64, f64)], s: f64, t: &Traits, cfg: &SynthConfig) -> Vec<PlantedFix> {
    if cfg.noise > 0.0 && rng.gen_bool((0.04 * cfg.noise).min(0.5)) {
        return Vec::new();
    }
    let e = cfg.effects.gps;
    let n_steps = (DAY / GPS_STEP) as usize;
    let mut spots = vec![Spot::Place(0); n_steps];
    let p_out = (t.out - 0.45 * e * s).clamp(0.05, 1.0);
    if rng.gen_bool(p_out) {
        let mut k = rng.gen_range(84..114); // 07:00 - 09:30
        let mut visits = vec![(1usize, ((6.0 - 3.0 * e * s + normal(rng) * cfg.noise).clamp(1.0, 9.0) * 12.0) as usize)];
        if places.len() > 2 && rng.gen_bool((0.5 - 0.3 * e * s).clamp(0.0, 1.0)) {
            visits.push((rng.gen_range(2..places.len()), rng.gen_range(12..=36)));
        }
        for (place, len) in visits {
            let transit = rng.gen_range(2..=6);
            if k + transit + len + 12 >= n_steps - 6 {
                break;
            }
            spots[k..k + transit].iter_mut().for_each(|x| *x = Spot::Transit);
            k += transit;
            spots[k..k + len].iter_mut().for_each(|x| *x = Spot::Place(place));
            k += len;
        }
        let back = rng.gen_range(2..=6);
        spots[k..k + back].iter_mut().for_each(|x| *x = Spot::Transit);
    }

    let base = day_start(d);
    let mut fixes = Vec::with_capacity(n_steps);
    for (i, spot) in spots.iter().enumerate() {
        let local = base + i as i64 * GPS_STEP;
        let fix = match *spot {
            Spot::Transit => transit_fix(rng, local, places),
            Spot::Place(p) => {
                // the ends of every away visit always survive preprocessing
                let edge = p != 0 && (spots.get(i.wrapping_sub(1)) != Some(spot) || spots.get(i + 1) != Some(spot));
                stationary_fix(rng, local, p, places[p], edge)
            }
        };
        fixes.push(fix);
    }
    fixes
}

fn app_name(i: usize) -> String {
    format!("app{i:02}")
}

fn latent_walk(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Vec<f64> {
    let max = PHQ_MAX as f64;
    let base: f64 = rng.gen_range(1.0..26.0);
    let mut x = (base + 1.5 * cfg.noise * normal(rng)).clamp(0.0, max);
    let mut out = Vec::with_capacity(cfg.n_weeks as usize + 1);
    for _ in 0..=cfg.n_weeks {
        out.push(x);
        x = (x + 0.15 * (base - x) + WALK_STEP * cfg.noise * normal(rng)).clamp(0.0, max);
    }
    out
}

fn plan_subject(index: usize, cfg: &SynthConfig) -> Subject {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    if cfg.noise > 0.0 {
        rng.set_stream(index as u64 + 1);
    }
    let id = SubjectId::new(format!("s{:03}", index + 1)).expect("valid id");
    let offset_min = if cfg.noise > 0.0 { [0, 60, 120, -300, 330, 540][rng.gen_range(0..6)] } else { 0 };
    let center = (48.0 + rng.gen_range(0.0..0.5), 11.0 + rng.gen_range(0.0..0.5));
    let places = pick_places(&mut rng, center);
    let latent = latent_walk(&mut rng, cfg);
    let n = cfg.noise;
    let traits = Traits {
        bed: 23.0 + 0.3 * n * normal(&mut rng),
        sleep: 7.5 + 0.4 * n * normal(&mut rng),
        apps: 12.0 + 1.5 * n * normal(&mut rng),
        lock: 3.0 + 0.4 * n * normal(&mut rng),
        usage: 40.0 + 5.0 * n * normal(&mut rng),
        calls: 4.0 + 0.8 * n * normal(&mut rng),
        out: 0.85,
    };
    let contacts: Vec<String> = (0..8).map(|_| format!("{:016x}", rng.gen::<u64>())).collect();

    let n_days = cfg.n_days();
    let level = |d: u32| {
        let w = ((d.max(1) - 1) / 7) as usize;
        (latent[w.min(latent.len() - 1)] - 13.5) / 13.5
    };
    let ea = cfg.effects.activity;

    // bedtime before day d (hours after the previous midnight) and wake on day d
    let mut bed = vec![0i64; n_days as usize + 2];
    let mut wake = vec![0i64; n_days as usize + 2];
    for d in 1..=n_days as usize + 1 {
        let s = level(d as u32);
        let b = (traits.bed + 1.0 * ea * s + 0.5 * n * normal(&mut rng)).clamp(21.0, 25.7);
        let sl = traits.sleep + 1.5 * ea * s + 0.5 * n * normal(&mut rng);
        let w = (b + sl - 24.0).clamp(5.5, 10.5);
        bed[d] = (b * HOUR as f64) as i64 / MIN * MIN - DAY;
        wake[d] = (w * HOUR as f64) as i64 / MIN * MIN;
    }

    let mut days = vec![DayPlan::default(); n_days as usize + 1];
    for d in 1..=n_days {
        let di = d as usize;
        let s = level(d);
        let base = day_start(d);
        let plan = &mut days[di];

        // apps
        let mut pool: Vec<usize> = (0..30).collect();
        if bed[di] >= 0 {
            let k = (1.0 + 2.0 * ea * s + 0.7 * n * normal(&mut rng)).round().clamp(0.0, 5.0) as usize;
            for _ in 0..k {
                let t = rng.gen_range(0..bed[di].max(1));
                plan.apps.push((base + t, app_name(rng.gen_range(20..30))));
            }
            plan.apps.push((base + bed[di], app_name(rng.gen_range(0..30))));
        }
        plan.apps.push((base + wake[di], app_name(rng.gen_range(0..10))));
        let n_apps = (traits.apps - 4.0 * ea * s + 1.5 * n * normal(&mut rng)).round().clamp(3.0, 25.0) as usize;
        for i in 0..n_apps {
            let j = rng.gen_range(i..pool.len());
            pool.swap(i, j);
        }
        let day_lo = wake[di] + MIN;
        for (k, &app) in pool[..n_apps].iter().enumerate() {
            let reps = if k % 3 == 0 { 3 } else { 1 };
            for _ in 0..reps {
                plan.apps.push((base + rng.gen_range(day_lo..DAYTIME_END), app_name(app)));
            }
        }
        if di < n_days as usize && bed[di + 1] < 0 {
            plan.apps.push((base + DAY + bed[di + 1], app_name(rng.gen_range(0..30))));
        }

        // locks: the night ending this morning unless it was planted the
        // day before, daytime locks, and tonight's lock when it starts
        // before midnight
        if bed[di] >= 0 {
            plan.locks.push((base + bed[di], base + wake[di]));
        } else if d == 1 {
            plan.locks.push((base, base + wake[di]));
        }
        let lock_h = (traits.lock + 1.5 * ea * s + 0.7 * n * normal(&mut rng)).clamp(0.5, 8.0);
        let pieces = rng.gen_range(3..=8);
        let window = DAYTIME_END - day_lo;
        let slot = window / pieces;
        let each = ((lock_h * HOUR as f64) as i64 / pieces).min(slot - MIN);
        for p in 0..pieces {
            let lo = day_lo + p * slot;
            let start = lo + rng.gen_range(0..=(slot - each - MIN).max(0));
            plan.locks.push((base + start, base + start + each));
        }
        if di < n_days as usize && bed[di + 1] < 0 {
            plan.locks.push((base + DAY + bed[di + 1], base + DAY + wake[di + 1]));
        }

        // usage sessions
        let eu = cfg.effects.usage;
        let n_sessions = (traits.usage - 15.0 * eu * s + 6.0 * n * normal(&mut rng)).round().clamp(5.0, 90.0) as usize;
        for _ in 0..n_sessions {
            let start = rng.gen_range(day_lo..DAYTIME_END - 10 * MIN);
            let secs = rng.gen_range(20.0..300.0) * (1.0 + 0.5 * eu * s);
            plan.usage.push((base + start, base + start + (secs * 1000.0) as i64));
        }
        if d < n_days && rng.gen_bool(0.1) {
            let start = DAY - rng.gen_range(MIN..10 * MIN);
            let len = rng.gen_range(11 * MIN..20 * MIN);
            plan.usage.push((base + start, base + start + len));
        }

        // calls
        let ec = cfg.effects.calls;
        let n_calls = (traits.calls - 2.0 * ec * s + 1.5 * n * normal(&mut rng)).round().clamp(0.0, 12.0) as usize;
        for _ in 0..n_calls {
            let local = base + rng.gen_range(6 * HOUR..22 * HOUR);
            let u: f64 = rng.gen();
            let (direction, duration_s) = if u < 0.15 {
                (CallDirection::Missed, 0)
            } else {
                let dir = if u < 0.55 { CallDirection::Incoming } else { CallDirection::Outgoing };
                let dur = if rng.gen_bool(0.03) { 0 } else { rng.gen_range(10..900) };
                (dir, dur)
            };
            plan.calls.push(PlantedCall {
                local,
                direction,
                duration_s,
                contact: contacts[rng.gen_range(0..contacts.len())].clone(),
            });
        }

        plan.gps = plan_gps(&mut rng, d, &places, s, &traits, cfg);
    }

    let mut phq = Vec::new();
    for w in 1..=cfg.n_weeks {
        let jitter = if n > 0.0 && rng.gen_bool(0.3) { [-1i64, 1][rng.gen_range(0..2)] } else { 0 };
        let day = (7 * w as i64 + jitter) as u32;
        let score = latent[w as usize - 1].round().clamp(0.0, PHQ_MAX as f64) as u8;
        phq.push(PhqObservation::new(id.clone(), day, score).expect("valid PHQ"));
    }

    Subject {
        id,
        offset_min,
        places,
        latent: latent[..cfg.n_weeks as usize].to_vec(),
        phq,
        days,
    }
}

// ---------------------------------------------------------------------------
// Emission

fn emit(subject: &Subject) -> SensorLog {
    let off = subject.offset_min;
    let origin = FIRST_EPOCH_DAY * DAY - off as i64 * MIN;
    let ts = |local: i64| Timestamp::new(origin + local, off).expect("valid offset");
    let mut log = SensorLog::empty(subject.id.clone(), ts(0));
    for plan in &subject.days[1..] {
        for c in &plan.calls {
            log.calls.push(
                CallEvent::new(ts(c.local), c.direction, c.duration_s as f64, c.contact.clone()).expect("valid call"),
            );
        }
        for &(a, b) in &plan.usage {
            log.usage.push(UsageSession::new(ts(a), ts(b)).expect("ordered span"));
        }
        for &(a, b) in &plan.locks {
            log.locks.push(LockEvent::new(ts(a), ts(b)).expect("ordered span"));
        }
        for (t, app) in &plan.apps {
            log.apps.push(AppEvent::new(ts(*t), app.clone()).expect("valid app"));
        }
        for f in &plan.gps {
            log.gps
                .push(GpsFix::new(ts(f.local), f.lat, f.lon, f.accuracy, f.speed).expect("valid fix"));
        }
    }
    log.calls.sort_by(|a, b| {
        (a.t().ms(), a.direction().as_str(), a.contact())
            .cmp(&(b.t().ms(), b.direction().as_str(), b.contact()))
            .then(a.duration_s().total_cmp(&b.duration_s()))
    });
    log.usage.sort_by_key(|s| (s.start().ms(), s.end().ms()));
    log.locks.sort_by_key(|s| (s.start().ms(), s.end().ms()));
    log.apps.sort_by(|a, b| (a.t().ms(), a.app()).cmp(&(b.t().ms(), b.app())));
    log
}

// ---------------------------------------------------------------------------
// Expected features, computed from the plans.

fn linear_percentile(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = q * (values.len() - 1) as f64;
    let i = pos as usize;
    if i + 1 >= values.len() {
        return values[values.len() - 1];
    }
    values[i] + (pos - i as f64) * (values[i + 1] - values[i])
}

fn nats(weights: &[f64]) -> f64 {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let mut h = 0.0;
    for &w in weights.iter().filter(|w| **w > 0.0) {
        let p = w / total;
        h -= p * p.ln();
    }
    h.max(0.0)
}

fn overlap(a: (i64, i64), lo: i64, hi: i64) -> Option<i64> {
    let (s, e) = (a.0.max(lo), a.1.min(hi));
    (e > s).then_some(e - s)
}

fn expected_day(subject: &Subject, d: u32, cutoff: f64, home: Option<usize>) -> DailyFeatures {
    let lo = day_start(d);
    let hi = lo + DAY;
    let plan = &subject.days[d as usize];
    let mut row = DailyFeatures::all_missing(subject.id.clone(), d);
    let v = &mut row.values;

    // calls: all planted on their own day
    let connected: Vec<&PlantedCall> = plan.calls.iter().filter(|c| c.direction != CallDirection::Missed).collect();
    let work = |c: &&PlantedCall| (8 * HOUR..18 * HOUR).contains(&(c.local - lo));
    let mut by_contact: BTreeMap<&str, f64> = BTreeMap::new();
    for c in &connected {
        *by_contact.entry(c.contact.as_str()).or_default() += c.duration_s as f64;
    }
    let n_contacts = by_contact.len();
    let h_calls = nats(&by_contact.values().copied().collect::<Vec<_>>());
    v[0] = connected.len() as f64;
    v[1] = connected.iter().map(|c| c.duration_s as f64).sum::<f64>() / 60.0;
    v[2] = connected.iter().filter(|c| !work(c)).count() as f64;
    v[3] = connected.iter().filter(|c| !work(c)).map(|c| c.duration_s as f64).sum::<f64>() / 60.0;
    v[4] = (plan.calls.len() - connected.len()) as f64;
    v[5] = n_contacts as f64;
    v[6] = h_calls;
    v[7] = if n_contacts > 1 { (h_calls / (n_contacts as f64).ln()).min(1.0) } else { 0.0 };

    // usage and locks may spill over from the previous day's plan
    let prev = d.checked_sub(1).filter(|p| *p >= 1).map(|p| &subject.days[p as usize]);
    let spans = |f: fn(&DayPlan) -> &Vec<(i64, i64)>| {
        prev.into_iter()
            .chain(std::iter::once(plan))
            .flat_map(f)
            .filter_map(|s| overlap(*s, lo, hi))
            .collect::<Vec<i64>>()
    };
    let usage = spans(|p| &p.usage);
    v[8] = usage.len() as f64;
    v[9] = usage.iter().sum::<i64>() as f64 / 1000.0;
    v[10] = spans(|p| &p.locks).iter().sum::<i64>() as f64 / 1000.0;

    // apps
    let names = |pred: &dyn Fn(i64) -> bool| plan.apps.iter().filter(|(t, _)| pred(*t - lo)).map(|(_, a)| a.as_str()).collect::<BTreeSet<_>>().len();
    v[11] = names(&|_| true) as f64;
    v[12] = names(&|t| t < 5 * HOUR) as f64;
    let wake = plan.apps.iter().map(|(t, _)| *t).filter(|t| *t - lo >= 5 * HOUR).min();
    let early = plan.apps.iter().map(|(t, _)| *t).filter(|t| *t - lo < 2 * HOUR).max();
    let anchor = early.or_else(|| prev.and_then(|p| p.apps.iter().map(|(t, _)| *t).max()));
    match (anchor, wake) {
        (Some(a), Some(w)) if w >= a => {
            v[13] = (w - a) as f64 / HOUR as f64;
        }
        _ => {}
    }

    // gps
    let valid: Vec<&PlantedFix> = plan.gps.iter().filter(|f| f.accuracy <= cutoff && f.speed >= 0.0).collect();
    if !valid.is_empty() {
        let n = valid.len() as f64;
        if valid.len() >= 2 {
            let (ml, mo) = (
                valid.iter().map(|f| f.lat).sum::<f64>() / n,
                valid.iter().map(|f| f.lon).sum::<f64>() / n,
            );
            let var = valid.iter().map(|f| (f.lat - ml).powi(2) + (f.lon - mo).powi(2)).sum::<f64>() / n;
            if var > 0.0 {
                v[14] = var.ln();
            }
        }
        let mut dwell = vec![0.0; subject.places.len()];
        for w in valid.windows(2) {
            if let (Spot::Place(a), Spot::Place(b)) = (w[0].spot, w[1].spot) {
                if a == b {
                    dwell[a] += (w[1].local - w[0].local) as f64 / 1000.0;
                }
            }
        }
        let total: f64 = dwell.iter().sum();
        let visited = dwell.iter().filter(|x| **x > 0.0).count();
        let h = nats(&dwell);
        v[15] = if visited > 1 { h } else { 0.0 };
        v[16] = if visited > 1 { (h / (visited as f64).ln()).min(1.0) } else { 0.0 };
        v[17] = match home {
            Some(hp) if total > 0.0 => dwell[hp] / total,
            _ => 0.0,
        };
        v[18] = valid.windows(2).map(|w| gc_distance((w[0].lat, w[0].lon), (w[1].lat, w[1].lon))).sum();
    }

    for i in 0..N_FEATURES {
        row.missing[i] = row.values[i].is_nan();
    }
    row
}

fn night_home(subject: &Subject, cutoff: f64) -> Option<usize> {
    let mut night = vec![0i64; subject.places.len()];
    for (d, plan) in subject.days.iter().enumerate().skip(1) {
        let lo = day_start(d as u32);
        let valid: Vec<&PlantedFix> = plan.gps.iter().filter(|f| f.accuracy <= cutoff && f.speed >= 0.0).collect();
        for w in valid.windows(2) {
            if let (Spot::Place(a), Spot::Place(b)) = (w[0].spot, w[1].spot) {
                if a == b {
                    night[a] += overlap((w[0].local, w[1].local), lo, lo + 6 * HOUR).unwrap_or(0);
                }
            }
        }
    }
    let best = night.iter().copied().max()?;
    (best > 0).then(|| night.iter().position(|x| *x == best).unwrap())
}

fn expected_subject(subject: &Subject, cutoff: f64) -> SubjectTruth {
    let home = night_home(subject, cutoff);
    let days = (1..subject.days.len() as u32)
        .map(|d| expected_day(subject, d, cutoff, home))
        .collect();
    SubjectTruth {
        subject: subject.id.clone(),
        days,
        latent: subject.latent.clone(),
        phq: subject.phq.clone(),
    }
}

/// Generates a cohort; the same config always gives the same cohort.
pub fn generate(config: &SynthConfig) -> Result<SynthCohort> {
    config.validate()?;
    let subjects: Vec<Subject> = (0..config.n_subjects)
        .into_par_iter()
        .map(|i| plan_subject(i, config))
        .collect();
    let mut acc: Vec<f64> = subjects
        .iter()
        .flat_map(|s| s.days.iter().flat_map(|d| d.gps.iter().map(|f| f.accuracy)))
        .collect();
    if acc.is_empty() {
        return Err(Error::EmptyInput("generated cohort has no GPS fixes"));
    }
    let cutoff = linear_percentile(&mut acc, 0.8);
    let truth: Vec<SubjectTruth> = subjects.par_iter().map(|s| expected_subject(s, cutoff)).collect();
    let logs = subjects.par_iter().map(emit).collect();
    let phq = subjects.iter().flat_map(|s| s.phq.iter().cloned()).collect();
    Ok(SynthCohort {
        config: config.clone(),
        logs,
        phq,
        truth: GroundTruth {
            accuracy_cutoff: cutoff,
            subjects: truth,
        },
    })
}

/// Writes one directory per subject in the ingestion schemas, the manifest
/// and both truth files. Returns the manifest.
pub fn write_cohort(dir: &Path, cohort: &SynthCohort) -> Result<CohortManifest> {
    let mut entries = Vec::with_capacity(cohort.logs.len());
    for (log, truth) in cohort.logs.iter().zip(&cohort.truth.subjects) {
        entries.push(write_log(&dir.join(log.subject.as_str()), log, &truth.phq)?);
    }
    let manifest = CohortManifest::new(entries)?;
    manifest.write(&dir.join(MANIFEST_FILE))?;
    write_features(&dir.join(TRUTH_FEATURES_FILE), &cohort.truth.features())?;
    write_truth_phq(&dir.join(TRUTH_PHQ_FILE), &cohort.truth)?;
    Ok(manifest)
}

fn write_truth_phq(path: &Path, truth: &GroundTruth) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["subject", "week", "day_index", "latent", "score"])
        .map_err(|e| Error::csv(path, e))?;
    for s in &truth.subjects {
        for (i, obs) in s.phq.iter().enumerate() {
            w.write_record([
                s.subject.to_string(),
                (i + 1).to_string(),
                obs.day_index().to_string(),
                s.latent[i].to_string(),
                obs.score().to_string(),
            ])
            .map_err(|e| Error::csv(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Verification

/// Features that are counts and must match exactly.
const COUNT_FEATURES: [usize; 7] = [0, 2, 4, 5, 8, 11, 12];
pub const DERIVED_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Discrepancy {
    pub subject: String,
    pub day: u32,
    pub feature: String,
    pub expected: Option<f64>,
    pub found: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub algorithm: String,
    pub rows_compared: usize,
    pub rejected_rows: usize,
    pub discrepancies: Vec<Discrepancy>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.discrepancies.is_empty() && self.rejected_rows == 0
    }
}

fn cell(row: &DailyFeatures, i: usize) -> Option<f64> {
    (!row.missing[i]).then_some(row.values[i])
}

/// Feature-by-feature comparison. Counts must be equal, everything else
/// within [`DERIVED_TOLERANCE`] (relative above magnitude 1), masks equal.
pub fn diff_features(found: &[DailyFeatures], expected: &[DailyFeatures]) -> Vec<Discrepancy> {
    let key = |r: &DailyFeatures| (r.subject.to_string(), r.day_index);
    let found: BTreeMap<_, _> = found.iter().map(|r| (key(r), r)).collect();
    let expected: BTreeMap<_, _> = expected.iter().map(|r| (key(r), r)).collect();
    let mut out = Vec::new();
    let keys: BTreeSet<_> = found.keys().chain(expected.keys()).cloned().collect();
    for k in keys {
        let (Some(f), Some(e)) = (found.get(&k), expected.get(&k)) else {
            out.push(Discrepancy {
                subject: k.0.clone(),
                day: k.1,
                feature: if found.contains_key(&k) { "unexpected_row" } else { "missing_row" }.into(),
                expected: None,
                found: None,
            });
            continue;
        };
        for i in 0..N_FEATURES {
            let (a, b) = (cell(f, i), cell(e, i));
            let same = match (a, b) {
                (None, None) => true,
                (Some(x), Some(y)) if COUNT_FEATURES.contains(&i) => x == y,
                (Some(x), Some(y)) => (x - y).abs() <= DERIVED_TOLERANCE * y.abs().max(1.0),
                _ => false,
            };
            if !same {
                out.push(Discrepancy {
                    subject: k.0.clone(),
                    day: k.1,
                    feature: FEATURE_NAMES[i].into(),
                    expected: b,
                    found: a,
                });
            }
        }
    }
    out
}

/// Runs ingestion and extraction on a cohort written by [`write_cohort`]
/// and compares the result with its truth file.
pub fn verify_pipeline(dir: &Path, params: &ClusterParams) -> Result<VerifyReport> {
    let manifest = CohortManifest::load(&dir.join(MANIFEST_FILE))?;
    let cohort = load_cohort(&manifest)?;
    let extraction = extract_cohort(&cohort.logs, params)?;
    let truth = read_features(&dir.join(TRUTH_FEATURES_FILE))?;
    let rows = extraction.rows();
    Ok(VerifyReport {
        algorithm: params.algorithm().to_string(),
        rows_compared: rows.len(),
        rejected_rows: cohort.rejected.len(),
        discrepancies: diff_features(&rows, &truth),
    })
}

pub fn write_discrepancies(path: &Path, report: &VerifyReport) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["algorithm", "subject", "day", "feature", "expected", "found"])
        .map_err(|e| Error::csv(path, e))?;
    let show = |x: Option<f64>| x.map_or("missing".to_string(), |v| v.to_string());
    for d in &report.discrepancies {
        w.write_record([
            report.algorithm.clone(),
            d.subject.clone(),
            d.day.to_string(),
            d.feature.clone(),
            show(d.expected),
            show(d.found),
        ])
        .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            n_subjects: 10,
            n_weeks: 2,
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn rejects_small_cohorts() {
        assert!(generate(&SynthConfig { n_subjects: 9, ..small() }).is_err());
        assert!(generate(&SynthConfig { noise: -1.0, ..small() }).is_err());
    }

    #[test]
    fn deterministic() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.logs, b.logs);
        assert_eq!(a.phq, b.phq);
    }

    #[test]
    fn places_are_far_apart_and_transit_is_far_from_places() {
        let s = plan_subject(0, &small());
        for (i, a) in s.places.iter().enumerate() {
            for b in &s.places[i + 1..] {
                assert!(gc_distance(*a, *b) >= 2_000.0);
            }
        }
        for day in &s.days[1..] {
            for f in &day.gps {
                match f.spot {
                    Spot::Transit => {
                        assert!(f.speed > 1.4 || f.speed < 0.0);
                        assert!(s.places.iter().all(|p| gc_distance(*p, (f.lat, f.lon)) >= 999.0));
                    }
                    Spot::Place(p) => {
                        assert!(f.speed <= 1.4);
                        assert!(gc_distance(s.places[p], (f.lat, f.lon)) < 6.7);
                    }
                }
            }
        }
    }

    #[test]
    fn sleep_window_has_no_app_events() {
        let s = plan_subject(1, &small());
        for (d, plan) in s.days.iter().enumerate().skip(1) {
            let lo = day_start(d as u32);
            assert!(plan.apps.iter().all(|(t, _)| !(2 * HOUR..5 * HOUR).contains(&(t - lo))));
            assert!(plan.apps.iter().all(|(t, _)| (lo..lo + DAY).contains(t)));
        }
    }

    #[test]
    fn percentile_of_integers() {
        let mut v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert!((linear_percentile(&mut v, 0.8) - 80.2).abs() < 1e-12);
    }
}
