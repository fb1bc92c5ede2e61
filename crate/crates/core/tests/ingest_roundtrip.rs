//! Writing a log in the ingestion schemas and loading it back is lossless.

use moodsense::ingest::{load_cohort, write_log, CohortManifest};
use moodsense::types::{
    AppEvent, CallDirection, CallEvent, GpsFix, LockEvent, PhqObservation, SensorLog, SubjectId, Timestamp,
    UsageSession, MS_PER_DAY,
};
use proptest::prelude::*;

const START: i64 = 1_704_067_200_000;

fn ts(ms: i64, off: i32) -> Timestamp {
    Timestamp::new(START + ms, off).unwrap()
}

prop_compose! {
    fn call()(ms in 0..20 * MS_PER_DAY, off in -720i32..=840, dir in 0usize..3, dur in 0u32..3600, who in "[a-z0-9]{1,12}") -> CallEvent {
        let dir = [CallDirection::Incoming, CallDirection::Outgoing, CallDirection::Missed][dir];
        let dur = if dir == CallDirection::Missed { 0.0 } else { dur as f64 };
        CallEvent::new(ts(ms, off), dir, dur, who).unwrap()
    }
}

prop_compose! {
    fn span()(ms in 0..20 * MS_PER_DAY, len in 0i64..4 * 3_600_000, off in -720i32..=840) -> (Timestamp, Timestamp) {
        (ts(ms, off), ts(ms + len, off))
    }
}

prop_compose! {
    fn gps()(ms in 0..20 * MS_PER_DAY, off in -720i32..=840, lat in -89.9f64..89.9, lon in -179.9f64..179.9,
             acc in 0.0f64..500.0, speed in -1.0f64..40.0) -> GpsFix {
        GpsFix::new(ts(ms, off), lat, lon, acc, speed).unwrap()
    }
}

prop_compose! {
    fn log()(calls in prop::collection::vec(call(), 0..15),
             usage in prop::collection::vec(span(), 0..15),
             locks in prop::collection::vec(span(), 0..15),
             apps in prop::collection::vec((0..20 * MS_PER_DAY, -720i32..=840, "[a-z.]{1,20}"), 0..15),
             gps in prop::collection::vec(gps(), 0..30),
             phq in prop::collection::btree_map(1u32..60, 0u8..=27, 0..6)) -> (SensorLog, Vec<PhqObservation>) {
        let id = SubjectId::new("p01").unwrap();
        let mut log = SensorLog::empty(id.clone(), Timestamp::new(START, 60).unwrap());
        log.calls = calls;
        log.usage = usage.into_iter().map(|(a, b)| UsageSession::new(a, b).unwrap()).collect();
        log.locks = locks.into_iter().map(|(a, b)| LockEvent::new(a, b).unwrap()).collect();
        log.apps = apps.into_iter().map(|(ms, off, app)| AppEvent::new(ts(ms, off), app).unwrap()).collect();
        log.gps = gps;
        let phq = phq.into_iter().map(|(d, s)| PhqObservation::new(id.clone(), d, s).unwrap()).collect();
        (log, phq)
    }
}

/// The loader's canonical order.
fn canonical(mut log: SensorLog) -> SensorLog {
    log.calls.sort_by(|a, b| {
        a.t().cmp(&b.t())
            .then(a.direction().as_str().cmp(b.direction().as_str()))
            .then(a.duration_s().total_cmp(&b.duration_s()))
            .then(a.contact().cmp(b.contact()))
    });
    use moodsense::types::TimeSpan;
    log.usage.sort_by_key(|s| (s.start(), s.end()));
    log.locks.sort_by_key(|s| (s.start(), s.end()));
    log.apps.sort_by(|a, b| a.t().cmp(&b.t()).then_with(|| a.app().cmp(b.app())));
    log.gps.sort_by(|a, b| {
        a.t().cmp(&b.t())
            .then(a.lat().total_cmp(&b.lat()))
            .then(a.lon().total_cmp(&b.lon()))
            .then(a.accuracy().total_cmp(&b.accuracy()))
            .then(a.speed().total_cmp(&b.speed()))
    });
    log
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn write_then_load_is_identity((log, phq) in log()) {
        let dir = tempfile::tempdir().unwrap();
        let entry = write_log(&dir.path().join("p01"), &log, &phq).unwrap();
        let manifest = CohortManifest::new(vec![entry]).unwrap();
        let path = dir.path().join("manifest.csv");
        manifest.write(&path).unwrap();
        let back = load_cohort(&CohortManifest::load(&path).unwrap()).unwrap();
        prop_assert!(back.rejected.is_empty(), "{:?}", back.rejected);
        prop_assert_eq!(&back.logs[0], &canonical(log));
        prop_assert_eq!(back.phq, phq);
    }
}
