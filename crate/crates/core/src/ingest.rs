//! GPS parsing, cleaning and OD trip extraction.
//!
//! A trip is one maximal run of occupied records of a taxi: the pick-up is
//! the first occupied record of the run, the drop-off the last one. Runs that
//! are too short, too long, or cover too little distance are rejected, as are
//! runs that are cut off by the start or end of the taxi's stream.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::StudyClock;
use crate::geo::{BBox, GeoError, GridConfig, HexIndex, LonLat};
use crate::poi::{PoiCategory, PoiError, PoiIndex};
use crate::store::{Store, StoreError};

pub const GPS_HEADER: [&str; 7] = [
    "ts", "taxi_id", "lon", "lat", "speed", "heading", "occupied",
];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: unexpected header {found:?}, expected {expected}")]
    Header {
        path: String,
        found: String,
        expected: String,
    },
    #[error("no GPS CSV files in {0}")]
    NoGpsFiles(String),
    #[error("taxi {taxi_id}: {detail}")]
    Ordering { taxi_id: u32, detail: String },
    #[error(transparent)]
    Poi(#[from] PoiError),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// One raw telemetry sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpsRecord {
    pub ts: i64,
    pub taxi_id: u32,
    pub location: LonLat,
    /// km/h
    pub speed: f32,
    /// Degrees clockwise from north, `[0, 360)`.
    pub heading: f32,
    pub occupied: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trip {
    pub taxi_id: u32,
    pub stime: i64,
    pub slocation: LonLat,
    pub etime: i64,
    pub elocation: LonLat,
    #[serde(rename = "cO")]
    pub c_o: PoiCategory,
    #[serde(rename = "cD")]
    pub c_d: PoiCategory,
    pub duration_s: i64,
    pub o_hex: HexIndex,
    pub d_hex: HexIndex,
}

/// Downsampled observation of a vacant taxi.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VacantSample {
    pub ts: i64,
    pub taxi_id: u32,
    pub location: LonLat,
    pub speed: f32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CleaningRules {
    pub bbox: BBox,
    pub min_trip_s: i64,
    pub max_trip_s: i64,
    pub min_trip_m: f64,
    pub max_speed_kmh: f64,
    /// Minimum spacing of retained vacant samples per taxi.
    pub vacant_interval_s: i64,
}

impl CleaningRules {
    pub fn new(bbox: BBox) -> Self {
        Self {
            bbox,
            min_trip_s: 60,
            max_trip_s: 10_800,
            min_trip_m: 200.0,
            max_speed_kmh: 200.0,
            vacant_interval_s: 60,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0 <= self.min_trip_s && self.min_trip_s < self.max_trip_s) {
            return Err(format!(
                "min_trip_s {} must be below max_trip_s {}",
                self.min_trip_s, self.max_trip_s
            ));
        }
        if !(self.min_trip_m >= 0.0 && self.min_trip_m.is_finite()) {
            return Err(format!("min_trip_m {} must be >= 0", self.min_trip_m));
        }
        if self.max_speed_kmh.is_nan() || self.max_speed_kmh <= 0.0 {
            return Err(format!("max_speed_kmh {} must be > 0", self.max_speed_kmh));
        }
        if self.vacant_interval_s <= 0 {
            return Err("vacant_interval_s must be > 0".into());
        }
        Ok(())
    }

    /// Why a closed occupied run is not a valid trip, if it is not.
    pub fn classify(&self, duration_s: i64, distance_m: f64) -> Option<RejectReason> {
        if duration_s < self.min_trip_s {
            Some(RejectReason::ShortTrip)
        } else if duration_s > self.max_trip_s {
            Some(RejectReason::LongTrip)
        } else if distance_m < self.min_trip_m {
            Some(RejectReason::ShortDistance)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    ShortTrip,
    LongTrip,
    ShortDistance,
    /// Still occupied when the taxi's stream ends.
    OpenRun,
    /// Already occupied at the first record of the taxi's stream.
    LeadingRun,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::ShortTrip => "short_trip",
            RejectReason::LongTrip => "long_trip",
            RejectReason::ShortDistance => "short_distance",
            RejectReason::OpenRun => "open_run",
            RejectReason::LeadingRun => "leading_run",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            RejectReason::ShortTrip,
            RejectReason::LongTrip,
            RejectReason::ShortDistance,
            RejectReason::OpenRun,
            RejectReason::LeadingRun,
        ]
        .into_iter()
        .find(|r| r.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanCounters {
    pub malformed: u64,
    pub out_of_bbox: u64,
    pub over_speed: u64,
    pub duplicate: u64,
}

impl CleanCounters {
    pub fn merge(&mut self, o: &CleanCounters) {
        self.malformed += o.malformed;
        self.out_of_bbox += o.out_of_bbox;
        self.over_speed += o.over_speed;
        self.duplicate += o.duplicate;
    }

    pub fn dropped(&self) -> u64 {
        self.malformed + self.out_of_bbox + self.over_speed + self.duplicate
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripCounters {
    pub extracted: u64,
    pub short_trip: u64,
    pub long_trip: u64,
    pub short_distance: u64,
    pub open_run: u64,
    pub leading_run: u64,
}

impl TripCounters {
    pub fn merge(&mut self, o: &TripCounters) {
        self.extracted += o.extracted;
        self.short_trip += o.short_trip;
        self.long_trip += o.long_trip;
        self.short_distance += o.short_distance;
        self.open_run += o.open_run;
        self.leading_run += o.leading_run;
    }

    fn count(&mut self, reason: RejectReason) {
        match reason {
            RejectReason::ShortTrip => self.short_trip += 1,
            RejectReason::LongTrip => self.long_trip += 1,
            RejectReason::ShortDistance => self.short_distance += 1,
            RejectReason::OpenRun => self.open_run += 1,
            RejectReason::LeadingRun => self.leading_run += 1,
        }
    }

    pub fn rejected(&self) -> u64 {
        self.short_trip + self.long_trip + self.short_distance + self.open_run + self.leading_run
    }
}

/// An occupied run that did not become a trip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedRun {
    pub taxi_id: u32,
    pub stime: i64,
    pub etime: i64,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Extraction {
    pub trips: Vec<Trip>,
    pub vacant: Vec<VacantSample>,
    pub rejected: Vec<RejectedRun>,
    pub counters: TripCounters,
}

/// Drops out-of-bbox, over-speed and duplicate `(taxi_id, ts)` records.
///
/// Input must already be grouped by taxi and time-sorted within each taxi;
/// only adjacent duplicates are detected.
pub fn clean(
    records: impl IntoIterator<Item = GpsRecord>,
    rules: &CleaningRules,
) -> (Vec<GpsRecord>, CleanCounters) {
    let mut counters = CleanCounters::default();
    let mut out = Vec::new();
    let mut last_key: Option<(u32, i64)> = None;
    for r in records {
        let key = (r.taxi_id, r.ts);
        if last_key == Some(key) {
            counters.duplicate += 1;
            continue;
        }
        last_key = Some(key);
        if !rules.bbox.contains(&r.location) {
            counters.out_of_bbox += 1;
        } else if r.speed.is_nan() || r.speed as f64 > rules.max_speed_kmh {
            counters.over_speed += 1;
        } else {
            out.push(r);
        }
    }
    (out, counters)
}

/// Extracts trips and vacant samples from cleaned records grouped by taxi
/// and sorted by time within each taxi.
pub fn extract_trips(
    records: &[GpsRecord],
    idx: &PoiIndex,
    rules: &CleaningRules,
    cfg: &GridConfig,
) -> Result<Extraction, IngestError> {
    let mut out = Extraction::default();
    let mut seen = HashSet::new();
    let mut start = 0;
    while start < records.len() {
        let taxi = records[start].taxi_id;
        if !seen.insert(taxi) {
            return Err(IngestError::Ordering {
                taxi_id: taxi,
                detail: "records are not grouped by taxi".into(),
            });
        }
        let end = start
            + records[start..]
                .iter()
                .take_while(|r| r.taxi_id == taxi)
                .count();
        extract_taxi(&records[start..end], idx, rules, cfg, &mut out)?;
        start = end;
    }
    Ok(out)
}

fn extract_taxi(
    recs: &[GpsRecord],
    idx: &PoiIndex,
    rules: &CleaningRules,
    cfg: &GridConfig,
    out: &mut Extraction,
) -> Result<(), IngestError> {
    let mut run_start: Option<usize> = None;
    let mut last_vacant: Option<i64> = None;
    for (i, r) in recs.iter().enumerate() {
        if i > 0 && r.ts < recs[i - 1].ts {
            return Err(IngestError::Ordering {
                taxi_id: r.taxi_id,
                detail: format!("record at ts {} follows ts {}", r.ts, recs[i - 1].ts),
            });
        }
        if r.occupied {
            run_start.get_or_insert(i);
            continue;
        }
        if let Some(s) = run_start.take() {
            close_run(&recs[s], &recs[i - 1], s == 0, idx, rules, cfg, out)?;
        }
        if last_vacant.is_none_or(|t| r.ts - t >= rules.vacant_interval_s) {
            out.vacant.push(VacantSample {
                ts: r.ts,
                taxi_id: r.taxi_id,
                location: r.location,
                speed: r.speed,
            });
            last_vacant = Some(r.ts);
        }
    }
    if let Some(s) = run_start {
        let reason = if s == 0 {
            RejectReason::LeadingRun
        } else {
            RejectReason::OpenRun
        };
        reject(out, &recs[s], &recs[recs.len() - 1], reason);
    }
    Ok(())
}

fn reject(out: &mut Extraction, first: &GpsRecord, last: &GpsRecord, reason: RejectReason) {
    out.counters.count(reason);
    out.rejected.push(RejectedRun {
        taxi_id: first.taxi_id,
        stime: first.ts,
        etime: last.ts,
        reason,
    });
}

fn close_run(
    first: &GpsRecord,
    last: &GpsRecord,
    leading: bool,
    idx: &PoiIndex,
    rules: &CleaningRules,
    cfg: &GridConfig,
    out: &mut Extraction,
) -> Result<(), IngestError> {
    if leading {
        reject(out, first, last, RejectReason::LeadingRun);
        return Ok(());
    }
    let o = cfg.project(first.location)?;
    let d = cfg.project(last.location)?;
    let duration_s = last.ts - first.ts;
    if let Some(reason) = rules.classify(duration_s, o.distance(&d)) {
        reject(out, first, last, reason);
        return Ok(());
    }
    let (oi, _) = idx.nearest_xy(o)?;
    let (di, _) = idx.nearest_xy(d)?;
    out.trips.push(Trip {
        taxi_id: first.taxi_id,
        stime: first.ts,
        slocation: first.location,
        etime: last.ts,
        elocation: last.location,
        c_o: idx.pois()[oi].category,
        c_d: idx.pois()[di].category,
        duration_s,
        o_hex: cfg.hex_of_xy(o),
        d_hex: cfg.hex_of_xy(d),
    });
    out.counters.extracted += 1;
    Ok(())
}

/// Streams the records of one GPS CSV file into `sink`; returns the number
/// of malformed rows skipped.
pub fn read_gps_csv(
    reader: impl Read,
    path: &str,
    mut sink: impl FnMut(GpsRecord),
) -> Result<u64, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .buffer_capacity(1 << 20)
        .from_reader(reader);
    let header = rdr
        .byte_headers()
        .map_err(|e| IngestError::Io {
            path: path.into(),
            source: e.into(),
        })?
        .clone();
    let found: Vec<&[u8]> = header.iter().collect();
    let expected: Vec<&[u8]> = GPS_HEADER.iter().map(|s| s.as_bytes()).collect();
    if found != expected {
        return Err(IngestError::Header {
            path: path.into(),
            found: String::from_utf8_lossy(header.as_slice()).into_owned(),
            expected: GPS_HEADER.join(","),
        });
    }
    let mut malformed = 0;
    let mut rec = csv::ByteRecord::new();
    loop {
        match rdr.read_byte_record(&mut rec) {
            Ok(false) => break,
            Ok(true) => match parse_row(&rec) {
                Some(r) => sink(r),
                None => malformed += 1,
            },
            Err(e) if e.is_io_error() => {
                return Err(IngestError::Io {
                    path: path.into(),
                    source: e.into(),
                })
            }
            Err(_) => malformed += 1,
        }
    }
    Ok(malformed)
}

fn field<T: std::str::FromStr>(rec: &csv::ByteRecord, i: usize) -> Option<T> {
    std::str::from_utf8(rec.get(i)?).ok()?.trim().parse().ok()
}

fn parse_row(rec: &csv::ByteRecord) -> Option<GpsRecord> {
    if rec.len() != GPS_HEADER.len() {
        return None;
    }
    let occupied = match rec.get(6)? {
        b"0" => false,
        b"1" => true,
        _ => return None,
    };
    let r = GpsRecord {
        ts: field(rec, 0)?,
        taxi_id: field(rec, 1)?,
        location: LonLat::new(field(rec, 2)?, field(rec, 3)?),
        speed: field(rec, 4)?,
        heading: field(rec, 5)?,
        occupied,
    };
    let valid = r.location.is_finite()
        && r.speed.is_finite()
        && r.speed >= 0.0
        && (0.0..360.0).contains(&r.heading);
    valid.then_some(r)
}

/// Counters for one `ingest_dir` run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub files: u64,
    pub taxis: u64,
    pub records_read: u64,
    pub records_kept: u64,
    pub dropped: CleanCounters,
    pub runs: TripCounters,
    pub trips_extracted: u64,
    pub vacant_samples: u64,
}

pub struct IngestOutcome {
    pub store: Store,
    pub report: IngestReport,
    pub rejected: Vec<RejectedRun>,
}

/// Per-taxi record as held between partitioning and extraction.
#[derive(Clone, Copy)]
struct Sample {
    ts: i64,
    lon: f64,
    lat: f64,
    speed: f32,
    heading: f32,
    occupied: bool,
}

pub fn gps_files(dir: &Path) -> Result<Vec<PathBuf>, IngestError> {
    let io_err = |source| IngestError::Io {
        path: dir.display().to_string(),
        source,
    };
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io_err)? {
        let path = entry.map_err(io_err)?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "csv") {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(IngestError::NoGpsFiles(dir.display().to_string()));
    }
    Ok(files)
}

/// Full pipeline: partition by taxi, sort, clean, extract, build the store.
pub fn ingest_dir(
    gps_dir: &Path,
    pois: PoiIndex,
    rules: &CleaningRules,
    cfg: &GridConfig,
    clock: StudyClock,
) -> Result<IngestOutcome, IngestError> {
    let files = gps_files(gps_dir)?;
    let mut report = IngestReport {
        files: files.len() as u64,
        ..Default::default()
    };
    let mut by_taxi: BTreeMap<u32, Vec<Sample>> = BTreeMap::new();
    for path in &files {
        let name = path.display().to_string();
        let file = File::open(path).map_err(|source| IngestError::Io {
            path: name.clone(),
            source,
        })?;
        let mut touched = HashSet::new();
        let mut read = 0u64;
        let malformed = read_gps_csv(BufReader::with_capacity(1 << 20, file), &name, |r| {
            read += 1;
            touched.insert(r.taxi_id);
            by_taxi.entry(r.taxi_id).or_default().push(Sample {
                ts: r.ts,
                lon: r.location.lon,
                lat: r.location.lat,
                speed: r.speed,
                heading: r.heading,
                occupied: r.occupied,
            });
        })?;
        // Growth slack would otherwise accumulate across every taxi.
        for t in touched {
            by_taxi.get_mut(&t).unwrap().shrink_to_fit();
        }
        report.records_read += read + malformed;
        report.dropped.malformed += malformed;
    }
    report.taxis = by_taxi.len() as u64;

    let partitions: Vec<(u32, Vec<Sample>)> = by_taxi.into_iter().collect();
    let results = partitions
        .into_par_iter()
        .map(|(taxi_id, mut samples)| {
            samples.sort_by_key(|s| s.ts);
            let records = samples.into_iter().map(|s| GpsRecord {
                ts: s.ts,
                taxi_id,
                location: LonLat::new(s.lon, s.lat),
                speed: s.speed,
                heading: s.heading,
                occupied: s.occupied,
            });
            let (kept, counters) = clean(records, rules);
            let kept_n = kept.len() as u64;
            extract_trips(&kept, &pois, rules, cfg).map(|ex| (ex, counters, kept_n))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut trips = Vec::new();
    let mut vacant = Vec::new();
    let mut rejected = Vec::new();
    for (ex, counters, kept) in results {
        report.dropped.merge(&counters);
        report.runs.merge(&ex.counters);
        report.records_kept += kept;
        trips.extend(ex.trips);
        vacant.extend(ex.vacant);
        rejected.extend(ex.rejected);
    }
    report.trips_extracted = trips.len() as u64;
    report.vacant_samples = vacant.len() as u64;
    if trips.is_empty() {
        log::warn!("no trips extracted from {}", gps_dir.display());
    }
    let store = Store::build(*cfg, clock, pois, trips, vacant)?;
    Ok(IngestOutcome {
        store,
        report,
        rejected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::XY;
    use crate::poi::Poi;

    fn cfg() -> GridConfig {
        let bbox = BBox::new(LonLat::new(113.9, 22.4), LonLat::new(114.3, 22.7)).unwrap();
        GridConfig::centered(bbox, 400.0).unwrap()
    }

    fn rules() -> CleaningRules {
        CleaningRules::new(cfg().bbox)
    }

    fn index() -> PoiIndex {
        let cfg = cfg();
        let pois = [
            (0.0, 0.0, PoiCategory::Traffic),
            (3000.0, 0.0, PoiCategory::Company),
        ]
        .iter()
        .enumerate()
        .map(|(i, &(x, y, c))| Poi {
            id: i as u32,
            location: cfg.unproject(XY::new(x, y)),
            name: String::new(),
            address: String::new(),
            category: c,
            raw_category: c.as_str().into(),
        })
        .collect();
        PoiIndex::new(pois, cfg).unwrap()
    }

    fn rec(taxi: u32, ts: i64, x: f64, occupied: bool) -> GpsRecord {
        GpsRecord {
            ts,
            taxi_id: taxi,
            location: cfg().unproject(XY::new(x, 0.0)),
            speed: 30.0,
            heading: 90.0,
            occupied,
        }
    }

    fn seq(taxi: u32, occ: &[u8], step_s: i64, step_m: f64) -> Vec<GpsRecord> {
        occ.iter()
            .enumerate()
            .map(|(i, &o)| rec(taxi, 1000 + i as i64 * step_s, i as f64 * step_m, o == 1))
            .collect()
    }

    #[test]
    fn clean_edge_cases() {
        let (out, c) = clean(Vec::new(), &rules());
        assert!(out.is_empty());
        assert_eq!(c, CleanCounters::default());

        let mut far = rec(1, 0, 0.0, false);
        far.location.lon += 1.0;
        let (out, c) = clean(vec![far], &rules());
        assert!(out.is_empty());
        assert_eq!(c.out_of_bbox, 1);

        let a = rec(1, 10, 0.0, false);
        let mut b = rec(1, 10, 50.0, true);
        b.speed = 10.0;
        let (out, c) = clean(vec![a, b], &rules());
        assert_eq!(out, vec![a]);
        assert_eq!(c.duplicate, 1);

        let mut fast = rec(2, 0, 0.0, false);
        fast.speed = 201.0;
        let (out, c) = clean(vec![fast, rec(2, 30, 0.0, false)], &rules());
        assert_eq!(out.len(), 1);
        assert_eq!(c.over_speed, 1);
    }

    #[test]
    fn one_run_yields_one_trip() {
        let recs = seq(7, &[0, 0, 1, 1, 1, 0], 60, 1000.0);
        let ex = extract_trips(&recs, &index(), &rules(), &cfg()).unwrap();
        assert_eq!(ex.trips.len(), 1);
        let t = ex.trips[0];
        assert_eq!(t.stime, recs[2].ts);
        assert_eq!(t.etime, recs[4].ts);
        assert_eq!(t.slocation, recs[2].location);
        assert_eq!(t.elocation, recs[4].location);
        assert_eq!(t.duration_s, 120);
        // 2000 m east is closer to the company POI at 3000 m than the origin.
        assert_eq!(t.c_o, PoiCategory::Company);
        assert_eq!(t.c_d, PoiCategory::Company);
        assert_eq!(t.o_hex, cfg().to_hex(t.slocation).unwrap());
        assert_eq!(ex.counters.extracted, 1);
        assert_eq!(ex.vacant.len(), 3);
    }

    #[test]
    fn all_vacant_yields_samples_only() {
        let recs = seq(1, &[0; 6], 60, 10.0);
        let ex = extract_trips(&recs, &index(), &rules(), &cfg()).unwrap();
        assert!(ex.trips.is_empty());
        assert_eq!(ex.vacant.len(), 6);
    }

    #[test]
    fn short_runs_are_rejected() {
        let recs = seq(1, &[0, 1, 1, 0], 15, 1000.0);
        let ex = extract_trips(&recs, &index(), &rules(), &cfg()).unwrap();
        assert!(ex.trips.is_empty());
        assert_eq!(ex.counters.short_trip, 1);
        assert_eq!(ex.rejected[0].reason, RejectReason::ShortTrip);

        let recs = seq(1, &[0, 1, 1, 1, 0], 60, 20.0);
        let ex = extract_trips(&recs, &index(), &rules(), &cfg()).unwrap();
        assert_eq!(ex.counters.short_distance, 1);

        let mut long = seq(1, &[0, 1, 1, 0], 60, 1000.0);
        long[2].ts = long[1].ts + 10_801;
        long[3].ts = long[2].ts + 60;
        let ex = extract_trips(&long, &index(), &rules(), &cfg()).unwrap();
        assert_eq!(ex.counters.long_trip, 1);
    }

    #[test]
    fn truncated_runs_are_rejected() {
        let recs = seq(1, &[1, 1, 1, 0, 0, 1, 1], 60, 1000.0);
        let ex = extract_trips(&recs, &index(), &rules(), &cfg()).unwrap();
        assert!(ex.trips.is_empty());
        assert_eq!(ex.counters.leading_run, 1);
        assert_eq!(ex.counters.open_run, 1);
        assert_eq!(ex.rejected[1].stime, recs[5].ts);
    }

    #[test]
    fn vacant_samples_are_spaced() {
        let recs = seq(1, &[0; 10], 30, 10.0);
        let ex = extract_trips(&recs, &index(), &rules(), &cfg()).unwrap();
        assert_eq!(ex.vacant.len(), 5);
        for w in ex.vacant.windows(2) {
            assert!(w[1].ts - w[0].ts >= 60);
        }
    }

    #[test]
    fn ordering_errors_name_the_taxi() {
        let mut recs = seq(42, &[0, 0, 0], 60, 10.0);
        recs.swap(0, 2);
        match extract_trips(&recs, &index(), &rules(), &cfg()).unwrap_err() {
            IngestError::Ordering { taxi_id, .. } => assert_eq!(taxi_id, 42),
            e => panic!("{e}"),
        }
        let mut recs = seq(1, &[0, 0], 60, 10.0);
        recs.extend(seq(2, &[0], 60, 10.0));
        recs.extend(seq(1, &[0], 60, 10.0));
        assert!(matches!(
            extract_trips(&recs, &index(), &rules(), &cfg()),
            Err(IngestError::Ordering { taxi_id: 1, .. })
        ));
    }

    #[test]
    fn run_conservation_holds() {
        let occ = [0, 1, 1, 1, 0, 1, 0, 0, 1, 1, 1, 1, 0, 1, 1];
        let recs = seq(3, &occ, 60, 400.0);
        let ex = extract_trips(&recs, &index(), &rules(), &cfg()).unwrap();
        let rises = occ.windows(2).filter(|w| w == &[0, 1]).count() as u64;
        let c = ex.counters;
        assert_eq!(
            c.extracted,
            rises - c.short_trip - c.long_trip - c.short_distance - c.open_run
        );
        assert_eq!(c.extracted, 2);
        assert_eq!(c.short_trip, 1);
        assert_eq!(c.open_run, 1);
    }

    #[test]
    fn csv_rows_parse_and_malformed_rows_are_skipped() {
        let text = "ts,taxi_id,lon,lat,speed,heading,occupied\n\
                    100,1,114.1,22.5,30.5,90.0,1\n\
                    101,1,114.1,22.5,30.5,90.0,2\n\
                    102,1,abc,22.5,30.5,90.0,0\n\
                    103,1,114.1,22.5\n\
                    104,1,114.1,22.5,-1,90.0,0\n\
                    105,2,114.1,22.5,0,359.9,0\n";
        let mut got = Vec::new();
        let bad = read_gps_csv(text.as_bytes(), "mem", |r| got.push(r)).unwrap();
        assert_eq!(bad, 4);
        assert_eq!(got.len(), 2);
        assert!(got[0].occupied);
        assert_eq!(got[1].taxi_id, 2);

        let err = read_gps_csv("a,b\n1,2\n".as_bytes(), "mem", |_| {}).unwrap_err();
        assert!(matches!(err, IngestError::Header { .. }));
    }
}
