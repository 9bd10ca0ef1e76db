//! Immutable on-disk dataset of trips, vacant samples and POIs.
//!
//! Layout of a store directory:
//!
//! ```text
//! manifest.json                  format version, grid, clock, counts, checksums
//! pois.csv                       POI catalog as loaded (ids preserved)
//! days/<date>.pickups.bin        trips whose pick-up falls on <date>, by o_hex
//! days/<date>.dropoffs.bin       trips whose drop-off falls on <date>, by d_hex
//! days/<date>.vacant.bin         vacant samples observed on <date>, by hex
//! ```
//!
//! Every trip is stored twice, once under each endpoint cell. Shards are
//! little-endian fixed-width records behind an 8-byte magic and a count.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::clock::{DateKey, StudyClock, TimeWindow};
use crate::geo::{GeoError, GridConfig, HexIndex, LonLat};
use crate::ingest::{Trip, VacantSample};
use crate::poi::{Poi, PoiCategory, PoiIndex};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"HEXPICK1";
const TRIP_BYTES: usize = 70;
const VACANT_BYTES: usize = 32;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("corrupt store: {0}")]
    Corrupt(String),
    #[error("radius must be > 0, got {0}")]
    InvalidRadius(f64),
    #[error("invalid region: {0}")]
    InvalidRegion(String),
    #[error(transparent)]
    Geo(#[from] GeoError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// A non-empty set of hex cells.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BTreeSet<HexIndex>", into = "BTreeSet<HexIndex>")]
pub struct Region(BTreeSet<HexIndex>);

impl Region {
    pub fn new(cells: impl IntoIterator<Item = HexIndex>) -> Result<Self, StoreError> {
        let cells: BTreeSet<_> = cells.into_iter().collect();
        if cells.is_empty() {
            return Err(StoreError::InvalidRegion("region has no cells".into()));
        }
        Ok(Self(cells))
    }

    /// Every cell the study area can map to.
    pub fn covering(grid: &GridConfig) -> Self {
        Self(grid.covering_cells())
    }

    pub fn cells(&self) -> &BTreeSet<HexIndex> {
        &self.0
    }

    pub fn contains(&self, h: &HexIndex) -> bool {
        self.0.contains(h)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<BTreeSet<HexIndex>> for Region {
    type Error = StoreError;

    fn try_from(cells: BTreeSet<HexIndex>) -> Result<Self, Self::Error> {
        Region::new(cells)
    }
}

impl From<Region> for BTreeSet<HexIndex> {
    fn from(r: Region) -> Self {
        r.0
    }
}

/// Parses comma-separated `q:r` cell ids.
impl FromStr for Region {
    type Err = StoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let cells = s
            .split(',')
            .filter(|c| !c.trim().is_empty())
            .map(|c| c.parse::<HexIndex>().map_err(StoreError::InvalidRegion))
            .collect::<Result<Vec<_>, _>>()?;
        Region::new(cells)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TripRole {
    Pickup,
    Dropoff,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Pickup,
    Dropoff,
    Vacant,
}

/// One pick-up, drop-off or vacant observation. Trip endpoints carry no speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventPoint {
    pub ts: i64,
    pub taxi_id: u32,
    pub location: LonLat,
    pub speed: Option<f32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardInfo {
    pub file: String,
    pub records: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DayManifest {
    pub date: DateKey,
    pub pickups: ShardInfo,
    pub dropoffs: ShardInfo,
    pub vacant: ShardInfo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub grid: GridConfig,
    pub clock: StudyClock,
    pub config_hash: String,
    pub first_date: Option<DateKey>,
    pub last_date: Option<DateKey>,
    pub trip_count: u64,
    pub vacant_count: u64,
    pub poi_count: u64,
    pub pois: ShardInfo,
    pub days: Vec<DayManifest>,
}

pub fn config_hash(grid: &GridConfig, clock: &StudyClock) -> String {
    let canonical =
        serde_json::to_string(&(FORMAT_VERSION, grid, clock)).expect("config serializes");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

/// Items sorted by cell, with the slice range of every cell.
#[derive(Debug, Clone)]
struct Bucketed<T> {
    items: Vec<T>,
    ranges: BTreeMap<HexIndex, (usize, usize)>,
}

impl<T> Bucketed<T> {
    fn build(mut keyed: Vec<(HexIndex, i64, u32, T)>) -> Self {
        keyed.sort_by_key(|(h, ts, taxi, _)| (*h, *ts, *taxi));
        let mut ranges = BTreeMap::new();
        let mut items = Vec::with_capacity(keyed.len());
        for (i, (h, _, _, item)) in keyed.into_iter().enumerate() {
            ranges
                .entry(h)
                .and_modify(|r: &mut (usize, usize)| r.1 = i + 1)
                .or_insert((i, i + 1));
            items.push(item);
        }
        Self { items, ranges }
    }

    fn cell(&self, h: &HexIndex) -> &[T] {
        self.ranges.get(h).map_or(&[], |&(a, b)| &self.items[a..b])
    }
}

#[derive(Debug, Clone)]
struct Day {
    pickups: Bucketed<Trip>,
    dropoffs: Bucketed<Trip>,
    vacant: Bucketed<VacantSample>,
}

/// Read-only dataset handle.
#[derive(Debug, Clone)]
pub struct Store {
    grid: GridConfig,
    clock: StudyClock,
    pois: PoiIndex,
    poi_hex: Vec<HexIndex>,
    days: BTreeMap<DateKey, Day>,
    manifest: Manifest,
}

impl Store {
    /// Groups trips and vacant samples by date and cell.
    pub fn build(
        grid: GridConfig,
        clock: StudyClock,
        pois: PoiIndex,
        trips: Vec<Trip>,
        vacant: Vec<VacantSample>,
    ) -> Result<Self, StoreError> {
        type Keyed<T> = BTreeMap<DateKey, Vec<(HexIndex, i64, u32, T)>>;
        let mut pickups: Keyed<Trip> = BTreeMap::new();
        let mut dropoffs: Keyed<Trip> = BTreeMap::new();
        let mut vac: Keyed<VacantSample> = BTreeMap::new();
        for t in trips {
            if t.etime < t.stime || t.duration_s != t.etime - t.stime {
                return Err(StoreError::Corrupt(format!(
                    "trip of taxi {} has inconsistent times {}..{}",
                    t.taxi_id, t.stime, t.etime
                )));
            }
            dropoffs
                .entry(clock.date_of(t.etime))
                .or_default()
                .push((t.d_hex, t.etime, t.taxi_id, t));
            pickups
                .entry(clock.date_of(t.stime))
                .or_default()
                .push((t.o_hex, t.stime, t.taxi_id, t));
        }
        for v in vacant {
            let h = grid.to_hex(v.location)?;
            vac.entry(clock.date_of(v.ts))
                .or_default()
                .push((h, v.ts, v.taxi_id, v));
        }
        let dates: BTreeSet<DateKey> = pickups
            .keys()
            .chain(dropoffs.keys())
            .chain(vac.keys())
            .copied()
            .collect();
        let mut days = BTreeMap::new();
        for d in dates {
            days.insert(
                d,
                Day {
                    pickups: Bucketed::build(pickups.remove(&d).unwrap_or_default()),
                    dropoffs: Bucketed::build(dropoffs.remove(&d).unwrap_or_default()),
                    vacant: Bucketed::build(vac.remove(&d).unwrap_or_default()),
                },
            );
        }
        let poi_hex = pois
            .pois()
            .iter()
            .map(|p| grid.to_hex(p.location))
            .collect::<Result<Vec<_>, _>>()?;
        let mut store = Store {
            grid,
            clock,
            pois,
            poi_hex,
            days,
            manifest: Manifest {
                format_version: FORMAT_VERSION,
                grid,
                clock,
                config_hash: config_hash(&grid, &clock),
                first_date: None,
                last_date: None,
                trip_count: 0,
                vacant_count: 0,
                poi_count: 0,
                pois: ShardInfo {
                    file: String::new(),
                    records: 0,
                    sha256: String::new(),
                },
                days: Vec::new(),
            },
        };
        store.manifest = store.compute_manifest();
        Ok(store)
    }

    fn compute_manifest(&self) -> Manifest {
        let days: Vec<DayManifest> = self
            .days
            .iter()
            .map(|(d, day)| DayManifest {
                date: *d,
                pickups: shard_info(
                    &format!("days/{d}.pickups.bin"),
                    &encode_trips(&day.pickups.items),
                ),
                dropoffs: shard_info(
                    &format!("days/{d}.dropoffs.bin"),
                    &encode_trips(&day.dropoffs.items),
                ),
                vacant: shard_info(
                    &format!("days/{d}.vacant.bin"),
                    &encode_vacant(&day.vacant.items),
                ),
            })
            .collect();
        Manifest {
            format_version: FORMAT_VERSION,
            grid: self.grid,
            clock: self.clock,
            config_hash: config_hash(&self.grid, &self.clock),
            first_date: self.days.keys().next().copied(),
            last_date: self.days.keys().next_back().copied(),
            trip_count: days.iter().map(|d| d.pickups.records).sum(),
            vacant_count: days.iter().map(|d| d.vacant.records).sum(),
            poi_count: self.pois.len() as u64,
            pois: shard_info("pois.csv", &encode_pois(self.pois.pois())),
            days,
        }
    }

    /// Writes the store; existing shards in `dir` are replaced.
    pub fn write(&self, dir: &Path) -> Result<(), StoreError> {
        let days_dir = dir.join("days");
        fs::create_dir_all(&days_dir).map_err(io_err(&days_dir))?;
        for entry in fs::read_dir(&days_dir).map_err(io_err(&days_dir))? {
            let path = entry.map_err(io_err(&days_dir))?.path();
            if path.extension().is_some_and(|e| e == "bin") {
                fs::remove_file(&path).map_err(io_err(&path))?;
            }
        }
        let put = |name: &str, bytes: &[u8]| -> Result<(), StoreError> {
            let path = dir.join(name);
            let mut f = fs::File::create(&path).map_err(io_err(&path))?;
            f.write_all(bytes).map_err(io_err(&path))
        };
        put("pois.csv", &encode_pois(self.pois.pois()))?;
        for (d, day) in &self.days {
            put(
                &format!("days/{d}.pickups.bin"),
                &encode_trips(&day.pickups.items),
            )?;
            put(
                &format!("days/{d}.dropoffs.bin"),
                &encode_trips(&day.dropoffs.items),
            )?;
            put(
                &format!("days/{d}.vacant.bin"),
                &encode_vacant(&day.vacant.items),
            )?;
        }
        let manifest = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        put("manifest.json", manifest.as_bytes())
    }

    /// Opens a store written by [`Store::write`], verifying the manifest,
    /// checksums and record counts.
    pub fn open(dir: &Path) -> Result<Self, StoreError> {
        let mpath = dir.join("manifest.json");
        let text = fs::read_to_string(&mpath).map_err(io_err(&mpath))?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| StoreError::Corrupt(format!("manifest.json: {e}")))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(StoreError::Corrupt(format!(
                "format version {} is not supported (expected {FORMAT_VERSION})",
                manifest.format_version
            )));
        }
        if manifest.config_hash != config_hash(&manifest.grid, &manifest.clock) {
            return Err(StoreError::Corrupt(
                "config hash does not match grid configuration".into(),
            ));
        }
        let grid = GridConfig::new(
            manifest.grid.origin,
            manifest.grid.width_m,
            manifest.grid.bbox,
        )?;

        let poi_bytes = read_shard(dir, &manifest.pois)?;
        let pois = decode_pois(&poi_bytes)?;
        let pois = PoiIndex::new(pois, grid)?;

        let mut trips = Vec::new();
        let mut vacant = Vec::new();
        for day in &manifest.days {
            let picks = decode_trips(&read_shard(dir, &day.pickups)?, &day.pickups)?;
            for t in &picks {
                if manifest.clock.date_of(t.stime) != day.date {
                    return Err(StoreError::Corrupt(format!(
                        "{} holds a trip from another date",
                        day.pickups.file
                    )));
                }
            }
            let drops = decode_trips(&read_shard(dir, &day.dropoffs)?, &day.dropoffs)?;
            if drops
                .iter()
                .any(|t| manifest.clock.date_of(t.etime) != day.date)
            {
                return Err(StoreError::Corrupt(format!(
                    "{} holds a trip from another date",
                    day.dropoffs.file
                )));
            }
            vacant.extend(decode_vacant(&read_shard(dir, &day.vacant)?, &day.vacant)?);
            trips.extend(picks);
        }
        let store = Store::build(grid, manifest.clock, pois, trips, vacant)?;
        if store.manifest != manifest {
            return Err(StoreError::Corrupt(
                "manifest counts or dates do not match the stored data".into(),
            ));
        }
        Ok(store)
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn grid(&self) -> &GridConfig {
        &self.grid
    }

    pub fn clock(&self) -> StudyClock {
        self.clock
    }

    pub fn pois(&self) -> &PoiIndex {
        &self.pois
    }

    /// Cell of each POI, parallel to `pois().pois()`.
    pub fn poi_hexes(&self) -> &[HexIndex] {
        &self.poi_hex
    }

    pub fn dates(&self) -> impl Iterator<Item = DateKey> + '_ {
        self.days.keys().copied()
    }

    pub fn date_range(&self) -> Option<(DateKey, DateKey)> {
        Some((self.manifest.first_date?, self.manifest.last_date?))
    }

    /// All trips picked up (or dropped off) on `date`, ordered by cell.
    pub fn trips_on(&self, date: DateKey, role: TripRole) -> &[Trip] {
        match (self.days.get(&date), role) {
            (Some(d), TripRole::Pickup) => &d.pickups.items,
            (Some(d), TripRole::Dropoff) => &d.dropoffs.items,
            (None, _) => &[],
        }
    }

    pub fn trips_in_cell(&self, date: DateKey, role: TripRole, h: &HexIndex) -> &[Trip] {
        match (self.days.get(&date), role) {
            (Some(d), TripRole::Pickup) => d.pickups.cell(h),
            (Some(d), TripRole::Dropoff) => d.dropoffs.cell(h),
            (None, _) => &[],
        }
    }

    pub fn pickup_count(&self, date: DateKey) -> u64 {
        self.days
            .get(&date)
            .map_or(0, |d| d.pickups.items.len() as u64)
    }

    /// Trips whose role-endpoint cell is in `region` and whose role-time falls
    /// on `date`, sorted by that time then taxi id.
    pub fn trips_by(&self, region: &Region, date: DateKey, role: TripRole) -> Vec<&Trip> {
        let Some(day) = self.days.get(&date) else {
            return Vec::new();
        };
        let bucket = match role {
            TripRole::Pickup => &day.pickups,
            TripRole::Dropoff => &day.dropoffs,
        };
        let mut out: Vec<&Trip> = if region.len() < bucket.ranges.len() {
            region.cells().iter().flat_map(|h| bucket.cell(h)).collect()
        } else {
            bucket
                .ranges
                .iter()
                .filter(|(h, _)| region.contains(h))
                .flat_map(|(_, &(a, b))| &bucket.items[a..b])
                .collect()
        };
        let time = |t: &Trip| match role {
            TripRole::Pickup => t.stime,
            TripRole::Dropoff => t.etime,
        };
        out.sort_by_key(|t| (time(t), t.taxi_id));
        out
    }

    /// Events of `kind` within the closed ball of `radius_m` around `p` and
    /// inside the half-open `window`.
    pub fn points_near(
        &self,
        p: LonLat,
        radius_m: f64,
        window: TimeWindow,
        kind: EventKind,
    ) -> Result<Vec<EventPoint>, StoreError> {
        if !(radius_m > 0.0 && radius_m.is_finite()) {
            return Err(StoreError::InvalidRadius(radius_m));
        }
        let mut out = Vec::new();
        if window.is_empty() {
            return Ok(out);
        }
        let q = self.grid.project(p)?;
        let cells = self.grid.cells_near(q, radius_m);
        let overlapping = self.days.iter().filter(|(d, _)| {
            let dw = self.clock.day_window(**d);
            dw.start < window.end && window.start < dw.end
        });
        for (_, day) in overlapping {
            for h in &cells {
                match kind {
                    EventKind::Pickup | EventKind::Dropoff => {
                        let (items, pick) = if kind == EventKind::Pickup {
                            (day.pickups.cell(h), true)
                        } else {
                            (day.dropoffs.cell(h), false)
                        };
                        for t in items {
                            let (ts, loc) = if pick {
                                (t.stime, t.slocation)
                            } else {
                                (t.etime, t.elocation)
                            };
                            if window.contains(ts)
                                && self.grid.project(loc)?.distance(&q) <= radius_m
                            {
                                out.push(EventPoint {
                                    ts,
                                    taxi_id: t.taxi_id,
                                    location: loc,
                                    speed: None,
                                });
                            }
                        }
                    }
                    EventKind::Vacant => {
                        for v in day.vacant.cell(h) {
                            if window.contains(v.ts)
                                && self.grid.project(v.location)?.distance(&q) <= radius_m
                            {
                                out.push(EventPoint {
                                    ts: v.ts,
                                    taxi_id: v.taxi_id,
                                    location: v.location,
                                    speed: Some(v.speed),
                                });
                            }
                        }
                    }
                }
            }
        }
        out.sort_by(|a, b| {
            (a.ts, a.taxi_id)
                .cmp(&(b.ts, b.taxi_id))
                .then(a.location.lon.total_cmp(&b.location.lon))
                .then(a.location.lat.total_cmp(&b.location.lat))
        });
        Ok(out)
    }
}

fn shard_info(file: &str, bytes: &[u8]) -> ShardInfo {
    let records = if file.ends_with(".csv") {
        bytes
            .iter()
            .filter(|&&b| b == b'\n')
            .count()
            .saturating_sub(1) as u64
    } else {
        u64::from_le_bytes(bytes[8..16].try_into().unwrap())
    };
    ShardInfo {
        file: file.to_string(),
        records,
        sha256: hex::encode(Sha256::digest(bytes)),
    }
}

fn read_shard(dir: &Path, info: &ShardInfo) -> Result<Vec<u8>, StoreError> {
    if info.file.contains("..") || Path::new(&info.file).is_absolute() {
        return Err(StoreError::Corrupt(format!(
            "shard path {:?} escapes the store",
            info.file
        )));
    }
    let path = dir.join(&info.file);
    let bytes = fs::read(&path).map_err(io_err(&path))?;
    if hex::encode(Sha256::digest(&bytes)) != info.sha256 {
        return Err(StoreError::Corrupt(format!(
            "{} checksum mismatch",
            info.file
        )));
    }
    Ok(bytes)
}

fn header(count: usize, record_bytes: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + count * record_bytes);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(count as u64).to_le_bytes());
    out
}

fn encode_trips(trips: &[Trip]) -> Vec<u8> {
    let mut out = header(trips.len(), TRIP_BYTES);
    for t in trips {
        out.extend_from_slice(&t.taxi_id.to_le_bytes());
        out.extend_from_slice(&t.stime.to_le_bytes());
        out.extend_from_slice(&t.slocation.lon.to_le_bytes());
        out.extend_from_slice(&t.slocation.lat.to_le_bytes());
        out.extend_from_slice(&t.etime.to_le_bytes());
        out.extend_from_slice(&t.elocation.lon.to_le_bytes());
        out.extend_from_slice(&t.elocation.lat.to_le_bytes());
        out.push(t.c_o.index() as u8);
        out.push(t.c_d.index() as u8);
        for v in [t.o_hex.q, t.o_hex.r, t.d_hex.q, t.d_hex.r] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn encode_vacant(samples: &[VacantSample]) -> Vec<u8> {
    let mut out = header(samples.len(), VACANT_BYTES);
    for v in samples {
        out.extend_from_slice(&v.ts.to_le_bytes());
        out.extend_from_slice(&v.taxi_id.to_le_bytes());
        out.extend_from_slice(&v.location.lon.to_le_bytes());
        out.extend_from_slice(&v.location.lat.to_le_bytes());
        out.extend_from_slice(&v.speed.to_le_bytes());
    }
    out
}

fn records<'a>(
    bytes: &'a [u8],
    info: &ShardInfo,
    width: usize,
) -> Result<std::slice::ChunksExact<'a, u8>, StoreError> {
    let corrupt = |m: &str| StoreError::Corrupt(format!("{}: {m}", info.file));
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(corrupt("bad shard header"));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    if n != info.records || (bytes.len() - 16) as u64 != n * width as u64 {
        return Err(corrupt("record count mismatch"));
    }
    Ok(bytes[16..].chunks_exact(width))
}

struct Cursor<'a>(&'a [u8]);

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let (head, rest) = self.0.split_at(N);
        self.0 = rest;
        head.try_into().unwrap()
    }
    fn i64(&mut self) -> i64 {
        i64::from_le_bytes(self.take())
    }
    fn i32(&mut self) -> i32 {
        i32::from_le_bytes(self.take())
    }
    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take())
    }
    fn f64(&mut self) -> f64 {
        f64::from_le_bytes(self.take())
    }
    fn f32(&mut self) -> f32 {
        f32::from_le_bytes(self.take())
    }
    fn u8(&mut self) -> u8 {
        self.take::<1>()[0]
    }
}

fn decode_trips(bytes: &[u8], info: &ShardInfo) -> Result<Vec<Trip>, StoreError> {
    let category = |b: u8| {
        PoiCategory::from_index(b as usize)
            .ok_or_else(|| StoreError::Corrupt(format!("{}: bad category byte {b}", info.file)))
    };
    records(bytes, info, TRIP_BYTES)?
        .map(|rec| {
            let mut c = Cursor(rec);
            let taxi_id = c.u32();
            let stime = c.i64();
            let slocation = LonLat::new(c.f64(), c.f64());
            let etime = c.i64();
            let elocation = LonLat::new(c.f64(), c.f64());
            let c_o = category(c.u8())?;
            let c_d = category(c.u8())?;
            let o_hex = HexIndex::new(c.i32(), c.i32());
            let d_hex = HexIndex::new(c.i32(), c.i32());
            Ok(Trip {
                taxi_id,
                stime,
                slocation,
                etime,
                elocation,
                c_o,
                c_d,
                duration_s: etime - stime,
                o_hex,
                d_hex,
            })
        })
        .collect()
}

fn decode_vacant(bytes: &[u8], info: &ShardInfo) -> Result<Vec<VacantSample>, StoreError> {
    Ok(records(bytes, info, VACANT_BYTES)?
        .map(|rec| {
            let mut c = Cursor(rec);
            VacantSample {
                ts: c.i64(),
                taxi_id: c.u32(),
                location: LonLat::new(c.f64(), c.f64()),
                speed: c.f32(),
            }
        })
        .collect())
}

#[derive(Serialize, Deserialize)]
struct PoiRow {
    id: u32,
    lon: f64,
    lat: f64,
    name: String,
    address: String,
    raw_category: String,
    category: PoiCategory,
}

fn encode_pois(pois: &[Poi]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in pois {
        w.serialize(PoiRow {
            id: p.id,
            lon: p.location.lon,
            lat: p.location.lat,
            name: p.name.clone(),
            address: p.address.clone(),
            raw_category: p.raw_category.clone(),
            category: p.category,
        })
        .expect("in-memory csv write");
    }
    if pois.is_empty() {
        w.write_record([
            "id",
            "lon",
            "lat",
            "name",
            "address",
            "raw_category",
            "category",
        ])
        .expect("in-memory csv write");
    }
    w.into_inner().expect("in-memory csv flush")
}

fn decode_pois(bytes: &[u8]) -> Result<Vec<Poi>, StoreError> {
    csv::Reader::from_reader(bytes)
        .deserialize::<PoiRow>()
        .map(|row| {
            let r = row.map_err(|e| StoreError::Corrupt(format!("pois.csv: {e}")))?;
            Ok(Poi {
                id: r.id,
                location: LonLat::new(r.lon, r.lat),
                name: r.name,
                address: r.address,
                category: r.category,
                raw_category: r.raw_category,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{BBox, XY};
    use rand::{Rng, SeedableRng};

    fn grid() -> GridConfig {
        let bbox = BBox::new(LonLat::new(113.9, 22.4), LonLat::new(114.3, 22.7)).unwrap();
        GridConfig::centered(bbox, 400.0).unwrap()
    }

    fn clock() -> StudyClock {
        StudyClock::from_hours(8)
    }

    fn day0() -> DateKey {
        DateKey::from_ymd(2019, 9, 2).unwrap()
    }

    fn trip(g: &GridConfig, taxi: u32, stime: i64, etime: i64, o: XY, d: XY) -> Trip {
        let s = g.unproject(o);
        let e = g.unproject(d);
        Trip {
            taxi_id: taxi,
            stime,
            slocation: s,
            etime,
            elocation: e,
            c_o: PoiCategory::Living,
            c_d: PoiCategory::Traffic,
            duration_s: etime - stime,
            o_hex: g.to_hex(s).unwrap(),
            d_hex: g.to_hex(e).unwrap(),
        }
    }

    fn pois(g: &GridConfig) -> PoiIndex {
        let p = Poi {
            id: 0,
            location: g.origin,
            name: "Origin, \"quoted\"".into(),
            address: "1 Main St".into(),
            category: PoiCategory::Traffic,
            raw_category: "subway_station".into(),
        };
        PoiIndex::new(vec![p], *g).unwrap()
    }

    fn random_store(seed: u64) -> Store {
        let g = grid();
        let c = clock();
        let start = c.day_start(day0());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut trips = Vec::new();
        let mut vacant = Vec::new();
        for i in 0..600u32 {
            let st = start + rng.random_range(0..3 * 86_400);
            let o = XY::new(
                rng.random_range(-3000.0..3000.0),
                rng.random_range(-3000.0..3000.0),
            );
            let d = XY::new(
                rng.random_range(-3000.0..3000.0),
                rng.random_range(-3000.0..3000.0),
            );
            trips.push(trip(&g, i % 37, st, st + rng.random_range(60..5000), o, d));
            let v = XY::new(
                rng.random_range(-3000.0..3000.0),
                rng.random_range(-3000.0..3000.0),
            );
            vacant.push(VacantSample {
                ts: start + rng.random_range(0..3 * 86_400),
                taxi_id: i,
                location: g.unproject(v),
                speed: rng.random_range(0.0..80.0),
            });
        }
        Store::build(g, c, pois(&g), trips, vacant).unwrap()
    }

    fn brute_points(
        s: &Store,
        p: LonLat,
        r: f64,
        w: TimeWindow,
        kind: EventKind,
    ) -> Vec<(i64, u32)> {
        let g = s.grid();
        let mut out = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for d in s.dates() {
            match kind {
                EventKind::Vacant => {
                    for v in &s.days[&d].vacant.items {
                        if w.contains(v.ts) && g.distance_m(p, v.location).unwrap() <= r {
                            out.push((v.ts, v.taxi_id));
                        }
                    }
                }
                _ => {
                    for t in s.trips_on(d, TripRole::Pickup) {
                        if !seen.insert((t.taxi_id, t.stime)) {
                            continue;
                        }
                        let (ts, loc) = if kind == EventKind::Pickup {
                            (t.stime, t.slocation)
                        } else {
                            (t.etime, t.elocation)
                        };
                        if w.contains(ts) && g.distance_m(p, loc).unwrap() <= r {
                            out.push((ts, t.taxi_id));
                        }
                    }
                }
            }
        }
        out.sort();
        out
    }

    #[test]
    fn round_trip_preserves_queries() {
        let s = random_store(1);
        let dir = tempfile::tempdir().unwrap();
        s.write(dir.path()).unwrap();
        let o = Store::open(dir.path()).unwrap();
        assert_eq!(o.manifest(), s.manifest());
        let region = Region::covering(s.grid());
        for d in s.dates() {
            for role in [TripRole::Pickup, TripRole::Dropoff] {
                assert_eq!(s.trips_by(&region, d, role), o.trips_by(&region, d, role));
            }
        }
        assert_eq!(o.pois().pois(), s.pois().pois());
        let w = TimeWindow::new(i64::MIN / 2, i64::MAX / 2).unwrap();
        let a = s
            .points_near(s.grid().origin, 2000.0, w, EventKind::Vacant)
            .unwrap();
        assert_eq!(
            a,
            o.points_near(o.grid().origin, 2000.0, w, EventKind::Vacant)
                .unwrap()
        );

        // Concurrent handles serve identical results.
        let o2 = Store::open(dir.path()).unwrap();
        assert_eq!(
            o.trips_on(day0(), TripRole::Pickup),
            o2.trips_on(day0(), TripRole::Pickup)
        );

        // Writing again is byte-identical.
        let dir2 = tempfile::tempdir().unwrap();
        o.write(dir2.path()).unwrap();
        for f in ["manifest.json", "pois.csv"] {
            assert_eq!(
                fs::read(dir.path().join(f)).unwrap(),
                fs::read(dir2.path().join(f)).unwrap()
            );
        }
    }

    #[test]
    fn tampering_is_detected() {
        let s = random_store(2);
        let dir = tempfile::tempdir().unwrap();
        s.write(dir.path()).unwrap();
        let mpath = dir.path().join("manifest.json");
        let text = fs::read_to_string(&mpath).unwrap();

        let count = format!("\"trip_count\": {}", s.manifest().trip_count);
        fs::write(&mpath, text.replace(&count, "\"trip_count\": 1")).unwrap();
        assert!(matches!(
            Store::open(dir.path()),
            Err(StoreError::Corrupt(_))
        ));

        fs::write(
            &mpath,
            text.replace("\"width_m\": 400.0", "\"width_m\": 500.0"),
        )
        .unwrap();
        assert!(matches!(
            Store::open(dir.path()),
            Err(StoreError::Corrupt(_))
        ));

        fs::write(&mpath, "{").unwrap();
        assert!(matches!(
            Store::open(dir.path()),
            Err(StoreError::Corrupt(_))
        ));

        fs::write(&mpath, &text).unwrap();
        let shard = dir.path().join(&s.manifest().days[0].vacant.file);
        let mut bytes = fs::read(&shard).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        fs::write(&shard, bytes).unwrap();
        assert!(matches!(
            Store::open(dir.path()),
            Err(StoreError::Corrupt(_))
        ));

        fs::remove_file(&mpath).unwrap();
        assert!(matches!(
            Store::open(dir.path()),
            Err(StoreError::Io { .. })
        ));
    }

    #[test]
    fn trips_by_role_and_date() {
        let g = grid();
        let c = clock();
        let midnight = c.day_start(day0().succ());
        let t = trip(
            &g,
            5,
            midnight - 600,
            midnight + 600,
            XY::new(0.0, 0.0),
            XY::new(2000.0, 0.0),
        );
        let s = Store::build(g, c, pois(&g), vec![t], vec![]).unwrap();
        let all = Region::covering(&g);
        assert_eq!(s.trips_by(&all, day0(), TripRole::Pickup), vec![&t]);
        assert!(s.trips_by(&all, day0(), TripRole::Dropoff).is_empty());
        assert_eq!(s.trips_by(&all, day0().succ(), TripRole::Dropoff), vec![&t]);
        assert!(s.trips_by(&all, day0().succ(), TripRole::Pickup).is_empty());

        let origin_cell = Region::new([t.o_hex]).unwrap();
        assert_eq!(s.trips_by(&origin_cell, day0(), TripRole::Pickup), vec![&t]);
        assert!(s
            .trips_by(&origin_cell, day0().succ(), TripRole::Dropoff)
            .is_empty());
        assert!(s
            .trips_by(&all, day0().add_days(30), TripRole::Pickup)
            .is_empty());
    }

    #[test]
    fn cell_totals_conserve_daily_counts() {
        let s = random_store(3);
        for d in s.dates() {
            let total: usize = Region::covering(s.grid())
                .cells()
                .iter()
                .map(|h| {
                    s.trips_by(&Region::new([*h]).unwrap(), d, TripRole::Pickup)
                        .len()
                })
                .sum();
            assert_eq!(total as u64, s.pickup_count(d));
        }
    }

    #[test]
    fn points_near_rules() {
        let g = grid();
        let c = clock();
        let st = c.day_start(day0()) + 3600;
        let t = trip(
            &g,
            1,
            st,
            st + 900,
            XY::new(0.0, 300.0),
            XY::new(0.0, 3000.0),
        );
        let s = Store::build(g, c, pois(&g), vec![t], vec![]).unwrap();
        let r = g.distance_m(g.origin, t.slocation).unwrap();
        let w = c.day_window(day0());
        let hits = s.points_near(g.origin, r, w, EventKind::Pickup).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].speed, None);
        assert!(s
            .points_near(g.origin, r * 0.999, w, EventKind::Pickup)
            .unwrap()
            .is_empty());
        assert!(s
            .points_near(
                g.origin,
                r,
                TimeWindow::new(st, st).unwrap(),
                EventKind::Pickup
            )
            .unwrap()
            .is_empty());
        assert!(s
            .points_near(
                g.origin,
                r,
                TimeWindow::new(st + 1, st + 10).unwrap(),
                EventKind::Pickup
            )
            .unwrap()
            .is_empty());
        assert!(matches!(
            s.points_near(g.origin, 0.0, w, EventKind::Pickup),
            Err(StoreError::InvalidRadius(_))
        ));
    }

    #[test]
    fn points_near_matches_brute_force() {
        let s = random_store(4);
        let c = clock();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let base = c.day_start(day0());
        for i in 0..500 {
            let p = s.grid().unproject(XY::new(
                rng.random_range(-3500.0..3500.0),
                rng.random_range(-3500.0..3500.0),
            ));
            let r = rng.random_range(10.0..2500.0);
            let a = base + rng.random_range(-3600..3 * 86_400);
            let w = TimeWindow::new(a, a + rng.random_range(0..2 * 86_400)).unwrap();
            let kind = [EventKind::Pickup, EventKind::Dropoff, EventKind::Vacant][i % 3];
            let got: Vec<_> = s
                .points_near(p, r, w, kind)
                .unwrap()
                .iter()
                .map(|e| (e.ts, e.taxi_id))
                .collect();
            assert_eq!(got, brute_points(&s, p, r, w, kind), "query {i}");
        }
    }

    #[test]
    fn region_parsing() {
        let r: Region = "1:2, -3:4".parse().unwrap();
        assert_eq!(r.len(), 2);
        assert!(r.contains(&HexIndex::new(-3, 4)));
        assert!(matches!(
            "".parse::<Region>(),
            Err(StoreError::InvalidRegion(_))
        ));
        assert!(matches!(
            "1:x".parse::<Region>(),
            Err(StoreError::InvalidRegion(_))
        ));
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<Region>(&json).unwrap(), r);
        assert!(serde_json::from_str::<Region>("[]").is_err());
    }
}
