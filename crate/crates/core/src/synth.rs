//! Seeded synthetic fleet generator with a planted-truth trip list.
//!
//! Output layout:
//!
//! ```text
//! gps/gps_<date>_<shard>.csv   GPS records, one file per day and taxi shard
//! truth.csv                    every planted occupied run and its expected fate
//! pois.csv                     POI catalog (lon,lat,name,address,raw_category)
//! category_map.csv             raw -> canonical category table
//! config.toml                  grid and cleaning configuration
//! ```
//!
//! Every taxi reports every 30 s. Occupied runs are separated by at least two
//! vacant records, so each planted run is one extracted run. Planted
//! exclusions keep a wide margin from the cleaning thresholds so their fate
//! does not depend on positional noise.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::DateKey;
use crate::config::{Config, ConfigError};
use crate::geo::{GeoError, GridConfig, LonLat, XY};
use crate::ingest::{RejectReason, GPS_HEADER};
use crate::poi::{CategoryMap, Poi, PoiIndex, DEFAULT_CATEGORY_MAP};

pub const SAMPLE_S: i64 = 30;
const SLOTS_PER_DAY: usize = (86_400 / SAMPLE_S) as usize;
/// Vacant slots between runs are at least `GAP_SLOTS - 1`.
const GAP_SLOTS: usize = 3;
const NOISE_SIGMA_M: f64 = 10.0;
const NOISE_CLAMP_M: f64 = 30.0;
/// Distance kept between generated positions and the bbox edge.
const EDGE_MARGIN_M: f64 = 500.0;
const MIN_TRIP_DIST_M: f64 = 900.0;
const SHORT_DIST_M: f64 = 50.0;
const LONG_SLOTS: usize = 480;
const MAX_TRIP_SLOTS: usize = 360;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid synth spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Geo(#[from] GeoError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SynthError + '_ {
    move |source| SynthError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub start: DateKey,
    pub days: u32,
    pub taxis: u32,
    /// Planted occupied runs per weekday, exclusions included.
    pub trips_per_day: u64,
    pub weekend_uplift: f64,
    /// Relative pick-up demand by local hour.
    pub hour_weights: [f64; 24],
    /// Relative demand by category, indexed like [`PoiCategory::ALL`].
    pub demand_weights: [f64; 6],
    pub poi_count: u32,
    pub districts: u32,
    /// Taxis are spread over this many files per day.
    pub shards: u32,
    pub short_trip_rate: f64,
    pub short_distance_rate: f64,
    pub long_trip_rate: f64,
    /// Share of taxis whose stream ends inside an occupied run.
    pub open_run_rate: f64,
    pub config: Config,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 42,
            start: DateKey::from_ymd(2019, 9, 1).unwrap(),
            days: 7,
            taxis: 500,
            trips_per_day: 10_000,
            weekend_uplift: 1.3,
            hour_weights: [
                0.4, 0.25, 0.15, 0.1, 0.1, 0.2, 0.5, 1.3, 1.7, 1.3, 1.0, 1.0, 1.1, 1.0, 1.0, 1.1,
                1.2, 1.5, 1.7, 1.4, 1.2, 1.1, 0.9, 0.6,
            ],
            // company, education, entertainment, living, public_service, traffic
            demand_weights: [1.2, 0.5, 1.0, 1.5, 0.4, 1.4],
            poi_count: 190_362,
            districts: 12,
            shards: 4,
            short_trip_rate: 0.01,
            short_distance_rate: 0.01,
            long_trip_rate: 0.005,
            open_run_rate: 0.05,
            config: Config::default(),
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Spec(m.to_string()));
        if self.days == 0 || self.taxis == 0 || self.trips_per_day == 0 || self.shards == 0 {
            return bad("days, taxis, trips_per_day and shards must be > 0");
        }
        if self.poi_count == 0 || self.districts == 0 {
            return bad("poi_count and districts must be > 0");
        }
        if !(self.weekend_uplift > 0.0 && self.weekend_uplift.is_finite()) {
            return bad("weekend_uplift must be > 0");
        }
        let weights_ok =
            |w: &[f64]| w.iter().all(|x| x.is_finite() && *x >= 0.0) && w.iter().sum::<f64>() > 0.0;
        if !weights_ok(&self.hour_weights) || !weights_ok(&self.demand_weights) {
            return bad("weights must be finite, non-negative and not all zero");
        }
        let rates = [
            self.short_trip_rate,
            self.short_distance_rate,
            self.long_trip_rate,
            self.open_run_rate,
        ];
        if rates.iter().any(|r| !(0.0..1.0).contains(r)) || rates[..3].iter().sum::<f64>() >= 1.0 {
            return bad("exclusion rates must lie in [0, 1) and sum below 1");
        }
        self.config.validate()?;
        let rules = self.config.rules()?;
        // Planted outcomes assume the default thresholds bracket these margins.
        if rules.min_trip_s > 2 * SAMPLE_S
            || rules.min_trip_s <= SAMPLE_S
            || rules.max_trip_s < MAX_TRIP_SLOTS as i64 * SAMPLE_S
            || rules.max_trip_s >= LONG_SLOTS as i64 * SAMPLE_S
            || rules.min_trip_m <= SHORT_DIST_M + 4.0 * NOISE_CLAMP_M
            || rules.min_trip_m >= MIN_TRIP_DIST_M - 4.0 * NOISE_CLAMP_M
        {
            return bad("cleaning thresholds are incompatible with the planted trip margins");
        }
        let max_k = (0..self.days)
            .map(|d| self.day_target(d).div_ceil(self.taxis as u64))
            .max()
            .unwrap_or(0);
        if max_k as usize * (2 + GAP_SLOTS) + GAP_SLOTS > SLOTS_PER_DAY {
            return bad("too many trips per taxi per day for 30 s sampling");
        }
        Ok(())
    }

    pub fn date(&self, day: u32) -> DateKey {
        self.start.add_days(day as u64)
    }

    /// Planted runs on day `day`.
    pub fn day_target(&self, day: u32) -> u64 {
        let uplift = if self.date(day).is_weekend() {
            self.weekend_uplift
        } else {
            1.0
        };
        (self.trips_per_day as f64 * uplift).round() as u64
    }

    /// Runs assigned to `taxi` on `day`: an even split with the remainder
    /// rotated across taxis from day to day.
    pub fn taxi_trips(&self, day: u32, taxi: u32) -> usize {
        let total = self.day_target(day);
        let n = self.taxis as u64;
        let rem = total % n;
        let extra = ((taxi as u64 + day as u64) % n) < rem;
        (total / n + extra as u64) as usize
    }
}

/// Expected fate of a planted occupied run. `None` means it must be extracted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthRow {
    pub taxi_id: u32,
    pub stime: i64,
    pub etime: i64,
    pub slocation: LonLat,
    pub elocation: LonLat,
    pub status: Option<RejectReason>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SynthReport {
    pub gps_files: u64,
    pub records: u64,
    pub pois: u64,
    pub planted: u64,
    pub kept: u64,
    pub excluded: BTreeMap<String, u64>,
    pub planted_by_date: BTreeMap<DateKey, u64>,
}

/// Paths of the files a synth run produces.
#[derive(Debug, Clone)]
pub struct SynthPaths {
    pub gps_dir: PathBuf,
    pub truth: PathBuf,
    pub pois: PathBuf,
    pub category_map: PathBuf,
    pub config: PathBuf,
}

impl SynthPaths {
    pub fn new(out: &Path) -> Self {
        Self {
            gps_dir: out.join("gps"),
            truth: out.join("truth.csv"),
            pois: out.join("pois.csv"),
            category_map: out.join("category_map.csv"),
            config: out.join("config.toml"),
        }
    }
}

/// Writes coordinates as whole micro-degrees so that parsing the text and
/// dividing the integer by 1e6 give the same `f64`.
fn micro(v: f64) -> i64 {
    (v * 1e6).round() as i64
}

struct Micro(i64);

impl std::fmt::Display for Micro {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let a = self.0.unsigned_abs();
        write!(f, "{sign}{}.{:06}", a / 1_000_000, a % 1_000_000)
    }
}

fn from_micro(lon: i64, lat: i64) -> LonLat {
    LonLat::new(lon as f64 / 1e6, lat as f64 / 1e6)
}

struct World {
    grid: GridConfig,
    lo: XY,
    hi: XY,
    by_category: Vec<Option<PoiIndex>>,
    hour: WeightedIndex<f64>,
    demand: WeightedIndex<f64>,
}

impl World {
    fn clamp(&self, p: XY) -> XY {
        XY::new(
            p.x.clamp(self.lo.x, self.hi.x),
            p.y.clamp(self.lo.y, self.hi.y),
        )
    }

    fn inside(&self, p: XY) -> bool {
        p.x >= self.lo.x && p.x <= self.hi.x && p.y >= self.lo.y && p.y <= self.hi.y
    }

    fn snap(&self, category: usize, target: XY) -> XY {
        match &self.by_category[category] {
            Some(idx) => {
                let (i, _) = idx.nearest_xy(target).expect("non-empty index");
                self.grid
                    .project(idx.pois()[i].location)
                    .expect("finite POI")
            }
            None => target,
        }
    }

    fn pickup_near(&self, rng: &mut ChaCha8Rng, at: XY) -> XY {
        let r = 1500.0 * rng.random::<f64>().sqrt();
        let a = rng.random_range(0.0..std::f64::consts::TAU);
        let target = self.clamp(XY::new(at.x + r * a.cos(), at.y + r * a.sin()));
        self.snap(self.demand.sample(rng), target)
    }

    fn dropoff_from(&self, rng: &mut ChaCha8Rng, p: XY) -> XY {
        for _ in 0..8 {
            let r = rng.random_range(1000.0..7000.0);
            let a = rng.random_range(0.0..std::f64::consts::TAU);
            let target = self.clamp(XY::new(p.x + r * a.cos(), p.y + r * a.sin()));
            let q = self.snap(self.demand.sample(rng), target);
            if q.distance(&p) >= MIN_TRIP_DIST_M {
                return q;
            }
        }
        let east = XY::new(p.x + 1000.0, p.y);
        if self.inside(east) {
            east
        } else {
            XY::new(p.x - 1000.0, p.y)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Normal,
    Short,
    ShortDistance,
    Long,
}

#[derive(Debug, Clone, Copy)]
struct Run {
    a: usize,
    b: usize,
    p: XY,
    q: XY,
    status: Option<RejectReason>,
}

/// Places runs with lengths `len` near preferred starts inside `[lo, hi]`,
/// keeping `GAP_SLOTS` between consecutive runs.
fn pack(
    pref: &[usize],
    len: &mut [usize],
    min_len: &[usize],
    lo: usize,
    hi: usize,
) -> Option<Vec<(usize, usize)>> {
    let k = len.len();
    if k == 0 {
        return Some(Vec::new());
    }
    let avail = hi - lo;
    let need = |len: &[usize]| len.iter().sum::<usize>() + GAP_SLOTS * (k - 1);
    let mut excess = need(len).saturating_sub(avail);
    if excess > 0 {
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by_key(|&i| (std::cmp::Reverse(len[i]), i));
        // Shrink the longest runs first, one slot at a time across the board.
        while excess > 0 {
            let mut progressed = false;
            for &i in &order {
                if excess == 0 {
                    break;
                }
                if len[i] > min_len[i] {
                    len[i] -= 1;
                    excess -= 1;
                    progressed = true;
                }
            }
            if !progressed {
                return None;
            }
        }
    }
    let mut out = Vec::with_capacity(k);
    let mut next = lo;
    for i in 0..k {
        let a = pref[i].max(next);
        out.push((a, a + len[i]));
        next = a + len[i] + GAP_SLOTS;
    }
    let mut limit = hi;
    for i in (0..k).rev() {
        if out[i].1 > limit {
            out[i] = (limit - len[i], limit);
        }
        limit = out[i].0.saturating_sub(GAP_SLOTS);
    }
    debug_assert!(out[0].0 >= lo);
    Some(out)
}

struct TaxiOutput {
    truth: Vec<TruthRow>,
    records: u64,
}

/// Simulates one taxi over all days and appends its records to the per-day writers.
fn simulate_taxi(
    spec: &SynthSpec,
    world: &World,
    taxi: u32,
    t0: i64,
    writers: &mut [BufWriter<File>],
    paths: &[PathBuf],
) -> Result<TaxiOutput, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(taxi as u64 + 1);
    let noise = Normal::new(0.0, NOISE_SIGMA_M).unwrap();
    let phase = rng.random_range(0..SAMPLE_S);
    let last_slot = spec.days as usize * SLOTS_PER_DAY - 1;
    let k_small = |k: usize| k <= 20;

    let mut pos = {
        let x = rng.random_range(world.lo.x..world.hi.x);
        let y = rng.random_range(world.lo.y..world.hi.y);
        XY::new(x, y)
    };
    let mut runs: Vec<Run> = Vec::new();
    for day in 0..spec.days {
        let k = spec.taxi_trips(day, taxi);
        let lo = day as usize * SLOTS_PER_DAY + 1;
        let hi = (day as usize + 1) * SLOTS_PER_DAY - 2;
        let mut pref: Vec<usize> = (0..k)
            .map(|_| {
                let h = world.hour.sample(&mut rng);
                day as usize * SLOTS_PER_DAY + h * 120 + rng.random_range(0..120)
            })
            .collect();
        pref.sort_unstable();
        let mut plans = Vec::with_capacity(k);
        let mut len = Vec::with_capacity(k);
        let mut min_len = Vec::with_capacity(k);
        for _ in 0..k {
            let u: f64 = rng.random();
            let kind = if u < spec.short_trip_rate {
                Kind::Short
            } else if u < spec.short_trip_rate + spec.short_distance_rate {
                Kind::ShortDistance
            } else if u < spec.short_trip_rate + spec.short_distance_rate + spec.long_trip_rate
                && k_small(k)
            {
                Kind::Long
            } else {
                Kind::Normal
            };
            let p = world.pickup_near(&mut rng, pos);
            let (q, l, m) = match kind {
                Kind::ShortDistance => {
                    let a = rng.random_range(0.0..std::f64::consts::TAU);
                    let q = XY::new(p.x + SHORT_DIST_M * a.cos(), p.y + SHORT_DIST_M * a.sin());
                    (q, rng.random_range(4..=10), 2)
                }
                Kind::Short => (world.dropoff_from(&mut rng, p), 1, 1),
                Kind::Long => (world.dropoff_from(&mut rng, p), LONG_SLOTS, LONG_SLOTS),
                Kind::Normal => {
                    let q = world.dropoff_from(&mut rng, p);
                    let v = rng.random_range(12.0..40.0) / 3.6;
                    let l = (q.distance(&p) / v / SAMPLE_S as f64).ceil() as usize;
                    (q, l.clamp(2, MAX_TRIP_SLOTS), 2)
                }
            };
            let status = match kind {
                Kind::Normal => None,
                Kind::Short => Some(RejectReason::ShortTrip),
                Kind::ShortDistance => Some(RejectReason::ShortDistance),
                Kind::Long => Some(RejectReason::LongTrip),
            };
            plans.push((p, q, status));
            len.push(l);
            min_len.push(m);
            pos = q;
        }
        let slots = pack(&pref, &mut len, &min_len, lo, hi).ok_or_else(|| {
            SynthError::Spec(format!("taxi {taxi} cannot fit {k} trips on day {day}"))
        })?;
        for ((a, b), (p, q, status)) in slots.into_iter().zip(plans) {
            runs.push(Run { a, b, p, q, status });
        }
    }
    if let Some(last) = runs.last_mut() {
        let on_last_day = last.a >= (spec.days as usize - 1) * SLOTS_PER_DAY;
        if on_last_day && rng.random::<f64>() < spec.open_run_rate {
            last.b = last_slot;
            last.status = Some(RejectReason::OpenRun);
        }
    }

    // Waypoints: start, then each run's endpoints, then a final wander target.
    let start = XY::new(
        rng.random_range(world.lo.x..world.hi.x),
        rng.random_range(world.lo.y..world.hi.y),
    );
    let tail_target = {
        let from = runs.last().map_or(start, |r| r.q);
        world.clamp(XY::new(
            from.x + rng.random_range(-2000.0..2000.0),
            from.y + rng.random_range(-2000.0..2000.0),
        ))
    };

    let ts_of = |j: usize| t0 + phase + j as i64 * SAMPLE_S;
    let mut truth = Vec::with_capacity(runs.len());
    let mut records = 0u64;
    let mut ri = 0usize;
    let mut prev_end = (0usize, start);
    let mut prev_clean = start;
    let mut line = String::with_capacity(64);
    for j in 0..=last_slot {
        while ri < runs.len() && runs[ri].b < j {
            prev_end = (runs[ri].b, runs[ri].q);
            ri += 1;
        }
        let (clean, occupied) = match runs.get(ri) {
            Some(r) if j >= r.a => {
                let t = if r.b == r.a {
                    0.0
                } else {
                    (j - r.a) as f64 / (r.b - r.a) as f64
                };
                (lerp(r.p, r.q, t), true)
            }
            Some(r) => {
                let t = (j - prev_end.0) as f64 / (r.a - prev_end.0) as f64;
                (lerp(prev_end.1, r.p, t), false)
            }
            None => {
                let t = (j - prev_end.0) as f64 / (last_slot + 1 - prev_end.0) as f64;
                (lerp(prev_end.1, tail_target, t), false)
            }
        };
        let dx = noise.sample(&mut rng).clamp(-NOISE_CLAMP_M, NOISE_CLAMP_M);
        let dy = noise.sample(&mut rng).clamp(-NOISE_CLAMP_M, NOISE_CLAMP_M);
        let ll = world.grid.unproject(XY::new(clean.x + dx, clean.y + dy));
        let (lon, lat) = (micro(ll.lon), micro(ll.lat));

        let step = clean.distance(&prev_clean);
        let speed = if j == 0 {
            0.0
        } else {
            (step / SAMPLE_S as f64 * 3.6).min(120.0)
        };
        let heading = if step > 0.0 {
            crate::geo::bearing_between(&prev_clean, &clean).map_or(0, |b| (b.round() as u32) % 360)
        } else {
            0
        };
        prev_clean = clean;

        if let Some(r) = runs.get(ri) {
            if j == r.a {
                truth.push(TruthRow {
                    taxi_id: taxi,
                    stime: ts_of(r.a),
                    etime: ts_of(r.b),
                    slocation: from_micro(lon, lat),
                    elocation: LonLat::new(0.0, 0.0),
                    status: r.status,
                });
            }
            if j == r.b {
                truth.last_mut().expect("run opened").elocation = from_micro(lon, lat);
            }
        }

        let day = j / SLOTS_PER_DAY;
        line.clear();
        use std::fmt::Write as _;
        let _ = writeln!(
            line,
            "{},{},{},{},{:.1},{},{}",
            ts_of(j),
            taxi,
            Micro(lon),
            Micro(lat),
            speed,
            heading,
            occupied as u8
        );
        writers[day]
            .write_all(line.as_bytes())
            .map_err(io_err(&paths[day]))?;
        records += 1;
    }
    Ok(TaxiOutput { truth, records })
}

fn lerp(a: XY, b: XY, t: f64) -> XY {
    XY::new(a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t)
}

fn generate_pois(
    spec: &SynthSpec,
    grid: &GridConfig,
    lo: XY,
    hi: XY,
) -> Vec<(LonLat, String, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(0);
    let inner = 2000.0;
    let centers: Vec<XY> = (0..spec.districts)
        .map(|_| {
            let x = rng.random_range((lo.x + inner).min(hi.x)..=(hi.x - inner).max(lo.x));
            let y = rng.random_range((lo.y + inner).min(hi.y)..=(hi.y - inner).max(lo.y));
            XY::new(x, y)
        })
        .collect();
    let raws: Vec<String> = CategoryMap::default_map()
        .entries()
        .into_iter()
        .map(|(r, _)| r.to_string())
        .collect();
    let spread = Normal::new(0.0, 1500.0).unwrap();
    (0..spec.poi_count)
        .map(|_| {
            let d = rng.random_range(0..centers.len());
            let c = centers[d];
            let p = XY::new(
                (c.x + spread.sample(&mut rng)).clamp(lo.x, hi.x),
                (c.y + spread.sample(&mut rng)).clamp(lo.y, hi.y),
            );
            let raw = raws[rng.random_range(0..raws.len())].clone();
            let ll = grid.unproject(p);
            (
                from_micro(micro(ll.lon), micro(ll.lat)),
                format!("District {}", d + 1),
                raw,
            )
        })
        .collect()
}

/// Generates GPS files, the POI catalog, the truth list and the config under `out`.
pub fn synth(spec: &SynthSpec, out: &Path) -> Result<SynthReport, SynthError> {
    spec.validate()?;
    let paths = SynthPaths::new(out);
    fs::create_dir_all(&paths.gps_dir).map_err(io_err(&paths.gps_dir))?;
    let grid = spec.config.grid()?;
    let clock = spec.config.clock();
    let bbox_lo = grid.project(grid.bbox.min)?;
    let bbox_hi = grid.project(grid.bbox.max)?;
    let lo = XY::new(bbox_lo.x + EDGE_MARGIN_M, bbox_lo.y + EDGE_MARGIN_M);
    let hi = XY::new(bbox_hi.x - EDGE_MARGIN_M, bbox_hi.y - EDGE_MARGIN_M);
    if lo.x >= hi.x - 2500.0 || lo.y >= hi.y - 2500.0 {
        return Err(SynthError::Spec(
            "bbox is too small for synthetic trips".into(),
        ));
    }

    let raw_pois = generate_pois(spec, &grid, lo, hi);
    let map = CategoryMap::default_map();
    {
        let mut w = csv::Writer::from_path(&paths.pois).map_err(|e| SynthError::Io {
            path: paths.pois.display().to_string(),
            source: e.into(),
        })?;
        let csv_err = |e: csv::Error| SynthError::Io {
            path: paths.pois.display().to_string(),
            source: e.into(),
        };
        w.write_record(["lon", "lat", "name", "address", "raw_category"])
            .map_err(csv_err)?;
        for (i, (ll, address, raw)) in raw_pois.iter().enumerate() {
            let lon = Micro(micro(ll.lon)).to_string();
            let lat = Micro(micro(ll.lat)).to_string();
            w.write_record([
                lon.as_str(),
                lat.as_str(),
                &format!("POI {i}"),
                address,
                raw,
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(io_err(&paths.pois))?;
    }
    fs::write(&paths.category_map, DEFAULT_CATEGORY_MAP).map_err(io_err(&paths.category_map))?;
    fs::write(&paths.config, spec.config.to_toml()).map_err(io_err(&paths.config))?;

    let mut by_category: Vec<Vec<Poi>> = vec![Vec::new(); 6];
    for (i, (ll, _, raw)) in raw_pois.iter().enumerate() {
        let c = map.get(raw).expect("generator uses mapped categories");
        by_category[c.index()].push(Poi {
            id: i as u32,
            location: *ll,
            name: String::new(),
            address: String::new(),
            category: c,
            raw_category: String::new(),
        });
    }
    let world = World {
        grid,
        lo,
        hi,
        by_category: by_category
            .into_iter()
            .map(|v| {
                if v.is_empty() {
                    Ok(None)
                } else {
                    PoiIndex::new(v, grid).map(Some)
                }
            })
            .collect::<Result<_, _>>()?,
        hour: WeightedIndex::new(spec.hour_weights).map_err(|e| SynthError::Spec(e.to_string()))?,
        demand: WeightedIndex::new(spec.demand_weights)
            .map_err(|e| SynthError::Spec(e.to_string()))?,
    };

    let t0 = clock.day_start(spec.start);
    let shard_results = (0..spec.shards)
        .into_par_iter()
        .map(|shard| -> Result<(Vec<TruthRow>, u64), SynthError> {
            let files: Vec<PathBuf> = (0..spec.days)
                .map(|d| {
                    paths
                        .gps_dir
                        .join(format!("gps_{}_{shard:04}.csv", spec.date(d)))
                })
                .collect();
            let mut writers = files
                .iter()
                .map(|p| {
                    let mut w =
                        BufWriter::with_capacity(1 << 20, File::create(p).map_err(io_err(p))?);
                    writeln!(w, "{}", GPS_HEADER.join(",")).map_err(io_err(p))?;
                    Ok(w)
                })
                .collect::<Result<Vec<_>, SynthError>>()?;
            let mut truth = Vec::new();
            let mut records = 0;
            for taxi in (shard..spec.taxis).step_by(spec.shards as usize) {
                let out = simulate_taxi(spec, &world, taxi, t0, &mut writers, &files)?;
                truth.extend(out.truth);
                records += out.records;
            }
            for (w, p) in writers.iter_mut().zip(&files) {
                w.flush().map_err(io_err(p))?;
            }
            Ok((truth, records))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut report = SynthReport {
        gps_files: spec.days as u64 * spec.shards as u64,
        pois: raw_pois.len() as u64,
        ..Default::default()
    };
    let mut truth = Vec::new();
    for (t, r) in shard_results {
        truth.extend(t);
        report.records += r;
    }
    truth.sort_by_key(|t| (t.taxi_id, t.stime));
    for t in &truth {
        report.planted += 1;
        *report
            .planted_by_date
            .entry(clock.date_of(t.stime))
            .or_default() += 1;
        match t.status {
            None => report.kept += 1,
            Some(r) => *report.excluded.entry(r.as_str().to_string()).or_default() += 1,
        }
    }
    write_truth(&paths.truth, &truth)?;
    Ok(report)
}

fn write_truth(path: &Path, rows: &[TruthRow]) -> Result<(), SynthError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    let mut body = String::from("taxi_id,stime,etime,slon,slat,elon,elat,status\n");
    for t in rows {
        use std::fmt::Write as _;
        let _ = writeln!(
            body,
            "{},{},{},{},{},{},{},{}",
            t.taxi_id,
            t.stime,
            t.etime,
            Micro(micro(t.slocation.lon)),
            Micro(micro(t.slocation.lat)),
            Micro(micro(t.elocation.lon)),
            Micro(micro(t.elocation.lat)),
            t.status.map_or("kept", |r| r.as_str())
        );
        if body.len() > 1 << 20 {
            w.write_all(body.as_bytes()).map_err(io_err(path))?;
            body.clear();
        }
    }
    w.write_all(body.as_bytes()).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

/// Reads a truth file written by [`synth`].
pub fn read_truth(path: &Path) -> Result<Vec<TruthRow>, SynthError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let bad =
        |line: usize| SynthError::Spec(format!("{}: malformed truth row {line}", path.display()));
    text.lines()
        .enumerate()
        .skip(1)
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(bad(i + 1));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(i + 1));
            Ok(TruthRow {
                taxi_id: f[0].parse().map_err(|_| bad(i + 1))?,
                stime: f[1].parse().map_err(|_| bad(i + 1))?,
                etime: f[2].parse().map_err(|_| bad(i + 1))?,
                slocation: LonLat::new(num(f[3])?, num(f[4])?),
                elocation: LonLat::new(num(f[5])?, num(f[6])?),
                status: match f[7] {
                    "kept" => None,
                    s => Some(RejectReason::parse(s).ok_or_else(|| bad(i + 1))?),
                },
            })
        })
        .collect()
}
