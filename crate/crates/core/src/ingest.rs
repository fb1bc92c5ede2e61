//! Raw log ingestion.
//!
//! One file per stream per subject, CSV with a fixed header (or JSON Lines
//! with the same field names when the file ends in `.jsonl`). Rows that fail
//! validation are quarantined in a [`Rejection`] list with the reason; only a
//! missing file or a wrong header aborts the load.

use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::geo::{haversine, GeoPoint};
use crate::types::{
    local_day_index, AppEvent, CallDirection, CallEvent, GpsFix, LockEvent, PhqObservation,
    SensorLog, SubjectId, TimeSpan, Timestamp, UsageSession,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamKind {
    Calls,
    Usage,
    Apps,
    Locks,
    Gps,
    Phq,
}

impl StreamKind {
    pub const ALL: [StreamKind; 6] = [
        StreamKind::Calls,
        StreamKind::Usage,
        StreamKind::Apps,
        StreamKind::Locks,
        StreamKind::Gps,
        StreamKind::Phq,
    ];

    pub fn header(self) -> &'static [&'static str] {
        match self {
            StreamKind::Calls => &["t_ms", "offset_min", "direction", "duration_s", "contact_hash"],
            StreamKind::Usage => &["start_ms", "end_ms", "offset_min"],
            StreamKind::Apps => &["t_ms", "offset_min", "app_hash"],
            StreamKind::Locks => &["start_ms", "end_ms", "offset_min"],
            StreamKind::Gps => &["t_ms", "offset_min", "lat", "lon", "accuracy_m", "speed_mps"],
            StreamKind::Phq => &["subject", "day_index", "score"],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            StreamKind::Calls => "calls",
            StreamKind::Usage => "usage",
            StreamKind::Apps => "apps",
            StreamKind::Locks => "locks",
            StreamKind::Gps => "gps",
            StreamKind::Phq => "phq",
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.csv", self.name())
    }
}

/// A quarantined input row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection {
    pub path: PathBuf,
    /// 1-based line number, header included.
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Events {
    Calls(Vec<CallEvent>),
    Usage(Vec<UsageSession>),
    Apps(Vec<AppEvent>),
    Locks(Vec<LockEvent>),
    Gps(Vec<GpsFix>),
    Phq(Vec<PhqObservation>),
}

impl Events {
    pub fn len(&self) -> usize {
        match self {
            Events::Calls(v) => v.len(),
            Events::Usage(v) => v.len(),
            Events::Apps(v) => v.len(),
            Events::Locks(v) => v.len(),
            Events::Gps(v) => v.len(),
            Events::Phq(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Parsed events of one file plus its quarantined rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<T> {
    pub events: Vec<T>,
    pub rejected: Vec<Rejection>,
}

type Row = Vec<String>;

fn is_jsonl(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "jsonl")
}

/// Reads the raw rows of a stream file, checking the header.
fn read_rows(path: &Path, kind: StreamKind) -> Result<Vec<(u64, std::result::Result<Row, String>)>> {
    if is_jsonl(path) {
        return read_jsonl_rows(path, kind);
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let header = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
    let expected = kind.header();
    if header.len() != expected.len() || header.iter().zip(expected).any(|(a, b)| a != *b) {
        return Err(Error::HeaderMismatch {
            path: path.to_path_buf(),
            expected: expected.join(","),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }
    let mut rows = Vec::new();
    for record in rdr.records() {
        match record {
            Ok(rec) => {
                let line = rec.position().map_or(0, |p| p.line());
                if rec.len() != expected.len() {
                    rows.push((
                        line,
                        Err(format!("expected {} fields, found {}", expected.len(), rec.len())),
                    ));
                } else {
                    rows.push((line, Ok(rec.iter().map(str::to_owned).collect())));
                }
            }
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                rows.push((line, Err(e.to_string())));
            }
        }
    }
    Ok(rows)
}

fn read_jsonl_rows(
    path: &Path,
    kind: StreamKind,
) -> Result<Vec<(u64, std::result::Result<Row, String>)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = i as u64 + 1;
        if line.trim().is_empty() {
            continue;
        }
        let row = serde_json::from_str::<Value>(&line)
            .map_err(|e| e.to_string())
            .and_then(|v| {
                let obj = v.as_object().ok_or("row is not a JSON object")?;
                kind.header()
                    .iter()
                    .map(|field| match obj.get(*field) {
                        None | Some(Value::Null) => Ok(String::new()),
                        Some(Value::String(s)) => Ok(s.clone()),
                        Some(Value::Number(n)) => Ok(n.to_string()),
                        Some(other) => Err(format!("field `{field}` has unsupported value {other}")),
                    })
                    .collect::<std::result::Result<Row, String>>()
            });
        rows.push((lineno, row));
    }
    Ok(rows)
}

fn field<T: std::str::FromStr>(row: &Row, idx: usize, name: &str) -> std::result::Result<T, String> {
    row[idx]
        .parse::<T>()
        .map_err(|_| format!("cannot parse {name} `{}`", row[idx]))
}

fn timestamp(row: &Row, ms_idx: usize, off_idx: usize) -> std::result::Result<Timestamp, String> {
    let ms: i64 = field(row, ms_idx, "timestamp")?;
    let off: i32 = field(row, off_idx, "offset_min")?;
    Timestamp::new(ms, off).map_err(|e| e.to_string())
}

fn collect<T>(
    path: &Path,
    kind: StreamKind,
    parse: impl Fn(&Row) -> std::result::Result<T, String>,
) -> Result<Parsed<T>> {
    let mut events = Vec::new();
    let mut rejected = Vec::new();
    for (line, row) in read_rows(path, kind)? {
        match row.and_then(|r| parse(&r)) {
            Ok(ev) => events.push(ev),
            Err(reason) => rejected.push(Rejection {
                path: path.to_path_buf(),
                line,
                reason,
            }),
        }
    }
    Ok(Parsed { events, rejected })
}

pub fn parse_calls(path: &Path) -> Result<Parsed<CallEvent>> {
    let mut parsed = collect(path, StreamKind::Calls, |r| {
        let t = timestamp(r, 0, 1)?;
        let dir = CallDirection::parse(&r[2]).ok_or_else(|| format!("unknown direction `{}`", r[2]))?;
        let dur: f64 = field(r, 3, "duration_s")?;
        CallEvent::new(t, dir, dur, r[4].clone()).map_err(|e| e.to_string())
    })?;
    parsed.events.sort_by(|a, b| {
        a.t()
            .cmp(&b.t())
            .then(a.direction().as_str().cmp(b.direction().as_str()))
            .then(a.duration_s().total_cmp(&b.duration_s()))
            .then(a.contact().cmp(b.contact()))
    });
    Ok(parsed)
}

fn span_row(r: &Row) -> std::result::Result<(Timestamp, Timestamp), String> {
    let off: i32 = field(r, 2, "offset_min")?;
    let start: i64 = field(r, 0, "start_ms")?;
    let end: i64 = field(r, 1, "end_ms")?;
    let start = Timestamp::new(start, off).map_err(|e| e.to_string())?;
    let end = Timestamp::new(end, off).map_err(|e| e.to_string())?;
    Ok((start, end))
}

pub fn parse_usage(path: &Path) -> Result<Parsed<UsageSession>> {
    let mut parsed = collect(path, StreamKind::Usage, |r| {
        let (s, e) = span_row(r)?;
        UsageSession::new(s, e).map_err(|e| e.to_string())
    })?;
    parsed.events.sort_by_key(|s| (s.start(), s.end()));
    Ok(parsed)
}

pub fn parse_locks(path: &Path) -> Result<Parsed<LockEvent>> {
    let mut parsed = collect(path, StreamKind::Locks, |r| {
        let (s, e) = span_row(r)?;
        LockEvent::new(s, e).map_err(|e| e.to_string())
    })?;
    parsed.events.sort_by_key(|s| (s.start(), s.end()));
    Ok(parsed)
}

pub fn parse_apps(path: &Path) -> Result<Parsed<AppEvent>> {
    let mut parsed = collect(path, StreamKind::Apps, |r| {
        let t = timestamp(r, 0, 1)?;
        AppEvent::new(t, r[2].clone()).map_err(|e| e.to_string())
    })?;
    parsed
        .events
        .sort_by(|a, b| a.t().cmp(&b.t()).then_with(|| a.app().cmp(b.app())));
    Ok(parsed)
}

/// GPS fixes; an empty `speed_mps` field is filled from displacement over
/// time between neighbouring fixes once the stream is sorted.
pub fn parse_gps(path: &Path) -> Result<Parsed<GpsFix>> {
    let mut parsed = collect(path, StreamKind::Gps, |r| {
        let t = timestamp(r, 0, 1)?;
        let lat: f64 = field(r, 2, "lat")?;
        let lon: f64 = field(r, 3, "lon")?;
        let acc: f64 = field(r, 4, "accuracy_m")?;
        let speed = if r[5].is_empty() {
            None
        } else {
            Some(field::<f64>(r, 5, "speed_mps")?)
        };
        let fix = GpsFix::new(t, lat, lon, acc, speed.unwrap_or(0.0)).map_err(|e| e.to_string())?;
        Ok((fix, speed.is_none()))
    })?;
    parsed.events.sort_by(|(a, _), (b, _)| {
        a.t()
            .cmp(&b.t())
            .then(a.lat().total_cmp(&b.lat()))
            .then(a.lon().total_cmp(&b.lon()))
            .then(a.accuracy().total_cmp(&b.accuracy()))
            .then(a.speed().total_cmp(&b.speed()))
    });
    let fixes: Vec<GpsFix> = parsed.events.iter().map(|(f, _)| *f).collect();
    let events = parsed
        .events
        .iter()
        .enumerate()
        .map(|(i, (fix, missing))| {
            if *missing {
                fix.with_speed(derived_speed(&fixes, i))
            } else {
                *fix
            }
        })
        .collect();
    Ok(Parsed {
        events,
        rejected: parsed.rejected,
    })
}

fn derived_speed(fixes: &[GpsFix], i: usize) -> f64 {
    let (a, b) = if i > 0 {
        (&fixes[i - 1], &fixes[i])
    } else if fixes.len() > 1 {
        (&fixes[0], &fixes[1])
    } else {
        return 0.0;
    };
    let dt = (b.t().ms() - a.t().ms()) as f64 / 1000.0;
    if dt <= 0.0 {
        return 0.0;
    }
    haversine(GeoPoint::of(a), GeoPoint::of(b)) / dt
}

pub fn parse_phq(path: &Path) -> Result<Parsed<PhqObservation>> {
    let mut parsed = collect(path, StreamKind::Phq, |r| {
        let subject = SubjectId::new(r[0].clone()).map_err(|e| e.to_string())?;
        let day: u32 = field(r, 1, "day_index")?;
        let score: u8 = field(r, 2, "score")?;
        PhqObservation::new(subject, day, score).map_err(|e| e.to_string())
    })?;
    // at most one observation per subject-day: keep the first row in file order
    let mut seen = HashSet::new();
    let mut kept = Vec::with_capacity(parsed.events.len());
    for obs in parsed.events.drain(..) {
        if seen.insert((obs.subject().clone(), obs.day_index())) {
            kept.push(obs);
        } else {
            parsed.rejected.push(Rejection {
                path: path.to_path_buf(),
                line: 0,
                reason: format!(
                    "duplicate observation for {} on day {}",
                    obs.subject(),
                    obs.day_index()
                ),
            });
        }
    }
    kept.sort_by(|a, b| {
        a.subject()
            .cmp(b.subject())
            .then(a.day_index().cmp(&b.day_index()))
    });
    parsed.events = kept;
    Ok(parsed)
}

/// Dispatches on `kind`; events come back time-sorted.
pub fn parse_stream(path: &Path, kind: StreamKind) -> Result<(Events, Vec<Rejection>)> {
    Ok(match kind {
        StreamKind::Calls => {
            let p = parse_calls(path)?;
            (Events::Calls(p.events), p.rejected)
        }
        StreamKind::Usage => {
            let p = parse_usage(path)?;
            (Events::Usage(p.events), p.rejected)
        }
        StreamKind::Apps => {
            let p = parse_apps(path)?;
            (Events::Apps(p.events), p.rejected)
        }
        StreamKind::Locks => {
            let p = parse_locks(path)?;
            (Events::Locks(p.events), p.rejected)
        }
        StreamKind::Gps => {
            let p = parse_gps(path)?;
            (Events::Gps(p.events), p.rejected)
        }
        StreamKind::Phq => {
            let p = parse_phq(path)?;
            (Events::Phq(p.events), p.rejected)
        }
    })
}

// ---------------------------------------------------------------------------
// Manifest

pub const MANIFEST_HEADER: [&str; 9] = [
    "subject",
    "study_start_ms",
    "offset_min",
    "calls",
    "usage",
    "apps",
    "locks",
    "gps",
    "phq",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub subject: SubjectId,
    pub study_start: Timestamp,
    /// Stream paths in [`StreamKind::ALL`] order.
    pub paths: [PathBuf; 6],
}

impl ManifestEntry {
    pub fn path(&self, kind: StreamKind) -> &Path {
        let idx = StreamKind::ALL.iter().position(|k| *k == kind).unwrap();
        &self.paths[idx]
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CohortManifest {
    pub subjects: Vec<ManifestEntry>,
}

impl CohortManifest {
    pub fn new(subjects: Vec<ManifestEntry>) -> Result<Self> {
        let m = CohortManifest { subjects };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for e in &self.subjects {
            if !ids.insert(&e.subject) {
                return Err(Error::DuplicateSubject(e.subject.to_string()));
            }
        }
        for (i, kind) in StreamKind::ALL.iter().enumerate() {
            let mut paths = HashSet::new();
            for e in &self.subjects {
                if !paths.insert(&e.paths[i]) {
                    return Err(Error::Invalid(format!(
                        "{} path {} listed more than once",
                        kind.name(),
                        e.paths[i].display()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Reads a manifest CSV; relative stream paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let base = path.parent().unwrap_or(Path::new("."));
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(file);
        let header = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
        if header.iter().ne(MANIFEST_HEADER.iter().copied()) {
            return Err(Error::HeaderMismatch {
                path: path.to_path_buf(),
                expected: MANIFEST_HEADER.join(","),
                found: header.iter().collect::<Vec<_>>().join(","),
            });
        }
        let mut subjects = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::csv(path, e))?;
            let bad = |what: &str| Error::Invalid(format!("{}: bad {what} in manifest", path.display()));
            let subject = SubjectId::new(&rec[0])?;
            let ms: i64 = rec[1].parse().map_err(|_| bad("study_start_ms"))?;
            let off: i32 = rec[2].parse().map_err(|_| bad("offset_min"))?;
            let study_start = Timestamp::new(ms, off)?;
            let p = |i: usize| {
                let p = Path::new(&rec[i]);
                if p.is_absolute() {
                    p.to_path_buf()
                } else {
                    base.join(p)
                }
            };
            subjects.push(ManifestEntry {
                subject,
                study_start,
                paths: [p(3), p(4), p(5), p(6), p(7), p(8)],
            });
        }
        CohortManifest::new(subjects)
    }

    /// Writes the manifest with paths relative to `path`'s directory when possible.
    pub fn write(&self, path: &Path) -> Result<()> {
        let base = path.parent().unwrap_or(Path::new("."));
        let mut w = csv_writer(path)?;
        w.write_record(MANIFEST_HEADER).map_err(|e| Error::csv(path, e))?;
        for e in &self.subjects {
            let mut rec = vec![
                e.subject.to_string(),
                e.study_start.ms().to_string(),
                e.study_start.offset_min().to_string(),
            ];
            for p in &e.paths {
                let rel = p.strip_prefix(base).unwrap_or(p);
                rec.push(rel.to_string_lossy().into_owned());
            }
            w.write_record(&rec).map_err(|e| Error::csv(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

// ---------------------------------------------------------------------------
// Cohort loading

#[derive(Debug, Clone, PartialEq)]
pub struct StreamSummary {
    pub kind: StreamKind,
    pub events: usize,
    pub days: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectSummary {
    pub subject: SubjectId,
    pub streams: Vec<StreamSummary>,
    /// Some stream has no data on any day.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub logs: Vec<SensorLog>,
    pub phq: Vec<PhqObservation>,
    pub summaries: Vec<SubjectSummary>,
    pub rejected: Vec<Rejection>,
}

fn covered_days(start: Timestamp, times: impl Iterator<Item = Timestamp>) -> usize {
    times
        .filter_map(|t| local_day_index(t, start).ok())
        .collect::<BTreeSet<_>>()
        .len()
}

fn load_subject(entry: &ManifestEntry) -> Result<(SensorLog, Vec<PhqObservation>, SubjectSummary, Vec<Rejection>)> {
    let calls = parse_calls(entry.path(StreamKind::Calls))?;
    let usage = parse_usage(entry.path(StreamKind::Usage))?;
    let apps = parse_apps(entry.path(StreamKind::Apps))?;
    let locks = parse_locks(entry.path(StreamKind::Locks))?;
    let gps = parse_gps(entry.path(StreamKind::Gps))?;
    let phq_path = entry.path(StreamKind::Phq);
    let phq = parse_phq(phq_path)?;

    let mut rejected = Vec::new();
    rejected.extend(calls.rejected);
    rejected.extend(usage.rejected);
    rejected.extend(apps.rejected);
    rejected.extend(locks.rejected);
    rejected.extend(gps.rejected);
    rejected.extend(phq.rejected);

    let mut phq_kept = Vec::new();
    for obs in phq.events {
        if *obs.subject() == entry.subject {
            phq_kept.push(obs);
        } else {
            rejected.push(Rejection {
                path: phq_path.to_path_buf(),
                line: 0,
                reason: format!("subject mismatch: `{}` in file of `{}`", obs.subject(), entry.subject),
            });
        }
    }

    let log = SensorLog {
        subject: entry.subject.clone(),
        study_start: entry.study_start,
        calls: calls.events,
        usage: usage.events,
        apps: apps.events,
        locks: locks.events,
        gps: gps.events,
    };
    let start = log.study_start;
    let streams = vec![
        StreamSummary {
            kind: StreamKind::Calls,
            events: log.calls.len(),
            days: covered_days(start, log.calls.iter().map(|c| c.t())),
        },
        StreamSummary {
            kind: StreamKind::Usage,
            events: log.usage.len(),
            days: covered_days(start, log.usage.iter().map(|s| s.start())),
        },
        StreamSummary {
            kind: StreamKind::Apps,
            events: log.apps.len(),
            days: covered_days(start, log.apps.iter().map(|a| a.t())),
        },
        StreamSummary {
            kind: StreamKind::Locks,
            events: log.locks.len(),
            days: covered_days(start, log.locks.iter().map(|s| s.start())),
        },
        StreamSummary {
            kind: StreamKind::Gps,
            events: log.gps.len(),
            days: covered_days(start, log.gps.iter().map(|g| g.t())),
        },
        StreamSummary {
            kind: StreamKind::Phq,
            events: phq_kept.len(),
            days: phq_kept.len(),
        },
    ];
    let flagged = streams.iter().any(|s| s.days == 0);
    let summary = SubjectSummary {
        subject: entry.subject.clone(),
        streams,
        flagged,
    };
    Ok((log, phq_kept, summary, rejected))
}

/// Loads every subject of the manifest; subjects are processed in parallel
/// and returned in manifest order.
pub fn load_cohort(manifest: &CohortManifest) -> Result<Cohort> {
    manifest.validate()?;
    let loaded = manifest
        .subjects
        .par_iter()
        .map(load_subject)
        .collect::<Result<Vec<_>>>()?;
    let mut cohort = Cohort {
        logs: Vec::with_capacity(loaded.len()),
        phq: Vec::new(),
        summaries: Vec::with_capacity(loaded.len()),
        rejected: Vec::new(),
    };
    for (log, phq, summary, rejected) in loaded {
        if summary.flagged {
            log::warn!("subject {} has a stream with no data", summary.subject);
        }
        cohort.logs.push(log);
        cohort.phq.extend(phq);
        cohort.summaries.push(summary);
        cohort.rejected.extend(rejected);
    }
    Ok(cohort)
}

// ---------------------------------------------------------------------------
// Emitters

pub(crate) fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new().from_writer(BufWriter::new(file)))
}

fn write_csv<I, R>(path: &Path, kind: StreamKind, rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv_writer(path)?;
    w.write_record(kind.header()).map_err(|e| Error::csv(path, e))?;
    for row in rows {
        w.write_record(row).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_calls(path: &Path, calls: &[CallEvent]) -> Result<()> {
    write_csv(
        path,
        StreamKind::Calls,
        calls.iter().map(|c| {
            [
                c.t().ms().to_string(),
                c.t().offset_min().to_string(),
                c.direction().as_str().to_owned(),
                c.duration_s().to_string(),
                c.contact().to_owned(),
            ]
        }),
    )
}

fn span_fields(s: &impl TimeSpan) -> [String; 3] {
    [
        s.start().ms().to_string(),
        s.end().ms().to_string(),
        s.start().offset_min().to_string(),
    ]
}

pub fn write_usage(path: &Path, usage: &[UsageSession]) -> Result<()> {
    write_csv(path, StreamKind::Usage, usage.iter().map(span_fields))
}

pub fn write_locks(path: &Path, locks: &[LockEvent]) -> Result<()> {
    write_csv(path, StreamKind::Locks, locks.iter().map(span_fields))
}

pub fn write_apps(path: &Path, apps: &[AppEvent]) -> Result<()> {
    write_csv(
        path,
        StreamKind::Apps,
        apps.iter().map(|a| {
            [
                a.t().ms().to_string(),
                a.t().offset_min().to_string(),
                a.app().to_owned(),
            ]
        }),
    )
}

pub fn write_gps(path: &Path, gps: &[GpsFix]) -> Result<()> {
    write_csv(
        path,
        StreamKind::Gps,
        gps.iter().map(|g| {
            [
                g.t().ms().to_string(),
                g.t().offset_min().to_string(),
                g.lat().to_string(),
                g.lon().to_string(),
                g.accuracy().to_string(),
                g.speed().to_string(),
            ]
        }),
    )
}

pub fn write_phq(path: &Path, phq: &[PhqObservation]) -> Result<()> {
    write_csv(
        path,
        StreamKind::Phq,
        phq.iter().map(|o| {
            [
                o.subject().to_string(),
                o.day_index().to_string(),
                o.score().to_string(),
            ]
        }),
    )
}

/// Writes the five passive streams of `log` into `dir` under their default
/// file names and returns a manifest entry pointing at them (and at `phq`).
pub fn write_log(dir: &Path, log: &SensorLog, phq: &[PhqObservation]) -> Result<ManifestEntry> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let p = |k: StreamKind| dir.join(k.file_name());
    write_calls(&p(StreamKind::Calls), &log.calls)?;
    write_usage(&p(StreamKind::Usage), &log.usage)?;
    write_apps(&p(StreamKind::Apps), &log.apps)?;
    write_locks(&p(StreamKind::Locks), &log.locks)?;
    write_gps(&p(StreamKind::Gps), &log.gps)?;
    write_phq(&p(StreamKind::Phq), phq)?;
    Ok(ManifestEntry {
        subject: log.subject.clone(),
        study_start: log.study_start,
        paths: StreamKind::ALL.map(p),
    })
}

/// Writes the rejection report as CSV `path,line,reason`.
pub fn write_rejections(path: &Path, rejected: &[Rejection]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["path", "line", "reason"])
        .map_err(|e| Error::csv(path, e))?;
    for r in rejected {
        w.write_record([
            r.path.to_string_lossy().as_ref(),
            &r.line.to_string(),
            &r.reason,
        ])
        .map_err(|e| Error::csv(path, e))?;
    }
    let mut inner = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    inner.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn empty_file_with_header_parses_to_nothing() {
        let dir = tempfile::tempdir().unwrap();
        for kind in StreamKind::ALL {
            let p = write(dir.path(), &kind.file_name(), &format!("{}\n", kind.header().join(",")));
            let (events, rejected) = parse_stream(&p, kind).unwrap();
            assert!(events.is_empty());
            assert!(rejected.is_empty());
        }
    }

    #[test]
    fn out_of_range_latitude_is_quarantined() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "gps.csv",
            "t_ms,offset_min,lat,lon,accuracy_m,speed_mps\n1000,0,91.0,10.0,5,0.2\n",
        );
        let parsed = parse_gps(&p).unwrap();
        assert!(parsed.events.is_empty());
        assert_eq!(parsed.rejected.len(), 1);
        assert!(parsed.rejected[0].reason.contains("lat out of range"));
        assert_eq!(parsed.rejected[0].line, 2);
    }

    #[test]
    fn calls_are_sorted_by_time() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "calls.csv",
            "t_ms,offset_min,direction,duration_s,contact_hash\n\
             3000,60,incoming,10,a\n\
             1000,60,outgoing,20,b\n\
             2000,60,missed,0,c\n",
        );
        let parsed = parse_calls(&p).unwrap();
        assert!(parsed.rejected.is_empty());
        let times: Vec<i64> = parsed.events.iter().map(|c| c.t().ms()).collect();
        assert_eq!(times, vec![1000, 2000, 3000]);
    }

    #[test]
    fn missing_file_and_bad_header_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            parse_apps(&dir.path().join("nope.csv")),
            Err(Error::Io { .. })
        ));
        let p = write(dir.path(), "apps.csv", "t,offset_min,app_hash\n");
        assert!(matches!(parse_apps(&p), Err(Error::HeaderMismatch { .. })));
    }

    #[test]
    fn malformed_rows_carry_reasons() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "calls.csv",
            "t_ms,offset_min,direction,duration_s,contact_hash\n\
             1000,0,sideways,10,a\n\
             1000,0,missed,12,a\n\
             abc,0,incoming,10,a\n\
             1000,0,incoming\n\
             1000,900,incoming,1,a\n\
             1000,0,incoming,10,a\n",
        );
        let parsed = parse_calls(&p).unwrap();
        assert_eq!(parsed.events.len(), 1);
        let reasons: Vec<&str> = parsed.rejected.iter().map(|r| r.reason.as_str()).collect();
        assert_eq!(reasons.len(), 5);
        assert!(reasons[0].contains("unknown direction"));
        assert!(reasons[1].contains("missed call"));
        assert!(reasons[2].contains("cannot parse"));
        assert!(reasons[3].contains("expected 5 fields"));
        assert!(reasons[4].contains("offset"));
    }

    #[test]
    fn missing_speed_is_derived_from_displacement() {
        let dir = tempfile::tempdir().unwrap();
        // 0.001 deg of latitude is ~111.19 m; 100 s apart
        let p = write(
            dir.path(),
            "gps.csv",
            "t_ms,offset_min,lat,lon,accuracy_m,speed_mps\n\
             0,0,0.0,0.0,5,\n\
             100000,0,0.001,0.0,5,\n\
             200000,0,0.001,0.0,5,-1\n",
        );
        let parsed = parse_gps(&p).unwrap();
        let s: Vec<f64> = parsed.events.iter().map(|g| g.speed()).collect();
        assert!((s[0] - 1.111949).abs() < 1e-5, "{s:?}");
        assert!((s[1] - 1.111949).abs() < 1e-5);
        assert_eq!(s[2], -1.0);
    }

    #[test]
    fn jsonl_uses_the_same_field_names() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "apps.jsonl",
            "{\"t_ms\": 2000, \"offset_min\": 0, \"app_hash\": \"x\"}\n\
             {\"t_ms\": 1000, \"offset_min\": 0, \"app_hash\": \"y\"}\n\
             {\"t_ms\": 1000, \"offset_min\": 0}\n",
        );
        let parsed = parse_apps(&p).unwrap();
        assert_eq!(parsed.events.len(), 2);
        assert_eq!(parsed.events[0].app(), "y");
        assert_eq!(parsed.rejected.len(), 1);
    }

    #[test]
    fn duplicate_phq_day_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "phq.csv", "subject,day_index,score\ns1,7,4\ns1,7,9\ns1,14,30\n");
        let parsed = parse_phq(&p).unwrap();
        assert_eq!(parsed.events.len(), 1);
        assert_eq!(parsed.events[0].score(), 4);
        assert_eq!(parsed.rejected.len(), 2);
    }

    fn empty_entry(dir: &Path, id: &str) -> ManifestEntry {
        let log = SensorLog::empty(SubjectId::new(id).unwrap(), Timestamp::new(0, 0).unwrap());
        write_log(&dir.join(id), &log, &[]).unwrap()
    }

    #[test]
    fn empty_subject_is_loaded_and_flagged() {
        let dir = tempfile::tempdir().unwrap();
        let m = CohortManifest::new(vec![empty_entry(dir.path(), "s1")]).unwrap();
        let cohort = load_cohort(&m).unwrap();
        assert_eq!(cohort.logs.len(), 1);
        assert!(cohort.summaries[0].flagged);
        assert!(cohort.summaries[0].streams.iter().all(|s| s.events == 0));
    }

    #[test]
    fn duplicate_subject_in_manifest_is_error() {
        let dir = tempfile::tempdir().unwrap();
        let a = empty_entry(dir.path(), "s1");
        let mut b = empty_entry(dir.path(), "s2");
        b.subject = SubjectId::new("s1").unwrap();
        assert!(matches!(
            CohortManifest::new(vec![a, b]),
            Err(Error::DuplicateSubject(_))
        ));
    }

    #[test]
    fn manifest_round_trips_with_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let m = CohortManifest::new(vec![empty_entry(dir.path(), "s1"), empty_entry(dir.path(), "s2")])
            .unwrap();
        let path = dir.path().join("manifest.csv");
        m.write(&path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.contains("s1/calls.csv"));
        assert_eq!(CohortManifest::load(&path).unwrap(), m);
    }

    #[test]
    fn phq_rows_for_other_subjects_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let e = empty_entry(dir.path(), "s1");
        fs::write(e.path(StreamKind::Phq), "subject,day_index,score\ns1,7,3\ns9,7,3\n").unwrap();
        let cohort = load_cohort(&CohortManifest::new(vec![e]).unwrap()).unwrap();
        assert_eq!(cohort.phq.len(), 1);
        assert_eq!(cohort.rejected.len(), 1);
        assert!(cohort.rejected[0].reason.contains("subject mismatch"));
    }
}
