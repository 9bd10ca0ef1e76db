//! View-facing aggregates over a [`Store`].

use std::collections::BTreeMap;

use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::clock::DateKey;
use crate::geo::{BBox, GeoError, HexIndex};
use crate::ingest::Trip;
use crate::poi::{Poi, PoiCategory};
use crate::store::{EventKind, Region, Store, StoreError, TripRole};

pub const GLYPH_SECTORS: usize = 8;
pub const DEFAULT_DONUT_RADIUS_M: f64 = 200.0;

#[derive(Debug, Error)]
pub enum AggregateError {
    #[error("invalid date range: {from} is after {to}")]
    InvalidRange { from: DateKey, to: DateKey },
    #[error("category filter is empty")]
    EmptyFilter,
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Geo(#[from] GeoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalendarCell {
    pub date: DateKey,
    pub total_trips: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DaySummary {
    pub date: DateKey,
    pub total: u64,
    pub hourly: [u64; 24],
    pub peak_hours: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeatCell {
    pub hex: HexIndex,
    pub pickups: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellGlyph {
    pub hex: HexIndex,
    pub pickups: u64,
    pub dropoffs: u64,
    pub pickup_sectors: [u64; GLYPH_SECTORS],
    pub dropoff_sectors: [u64; GLYPH_SECTORS],
    /// Zero-distance trips: counted above but in no sector.
    pub undirected_pickups: u64,
    pub undirected_dropoffs: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoiDonut {
    pub poi: Poi,
    pub pickups: u64,
    pub dropoffs: u64,
}

/// Counts indexed by [`PoiCategory::index`]; serialized as a map keyed by
/// category name.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CategoryCounts(pub [u64; 6]);

impl CategoryCounts {
    pub fn get(&self, c: PoiCategory) -> u64 {
        self.0[c.index()]
    }

    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }
}

impl Serialize for CategoryCounts {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(6))?;
        for c in PoiCategory::ALL {
            m.serialize_entry(c.as_str(), &self.get(c))?;
        }
        m.end()
    }
}

impl<'de> Deserialize<'de> for CategoryCounts {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let m = BTreeMap::<PoiCategory, u64>::deserialize(d)?;
        let mut out = CategoryCounts::default();
        for (c, n) in m {
            out.0[c.index()] = n;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionGlyph {
    pub pickups: u64,
    pub dropoffs: u64,
    pub poi_counts: CategoryCounts,
}

/// Trip durations in half-open buckets `[0,10) [10,20) [20,30) [30,inf)` minutes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DurationBuckets {
    pub b0: u64,
    pub b1: u64,
    pub b2: u64,
    pub b3: u64,
}

impl DurationBuckets {
    pub fn bucket_of(duration_s: i64) -> usize {
        match duration_s {
            d if d < 600 => 0,
            d if d < 1200 => 1,
            d if d < 1800 => 2,
            _ => 3,
        }
    }

    pub fn add(&mut self, duration_s: i64) {
        match Self::bucket_of(duration_s) {
            0 => self.b0 += 1,
            1 => self.b1 += 1,
            2 => self.b2 += 1,
            _ => self.b3 += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.b0 + self.b1 + self.b2 + self.b3
    }
}

/// Hourly totals per side, before any category filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Background {
    pub pickups: [u64; 24],
    pub dropoffs: [u64; 24],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeeswarmCircle {
    pub hour: usize,
    pub category: PoiCategory,
    pub side: TripRole,
    pub count: u64,
    pub durations: DurationBuckets,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeeswarmMatrix {
    pub date: DateKey,
    pub filter: Vec<PoiCategory>,
    /// Non-empty circles ordered by (side, hour, category).
    pub circles: Vec<BeeswarmCircle>,
    pub background: Background,
}

/// Dense hour x category counts per side.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackedBars {
    pub date: DateKey,
    pub pickups: [[u64; 6]; 24],
    pub dropoffs: [[u64; 6]; 24],
    pub background: Background,
}

pub fn calendar(
    store: &Store,
    from: DateKey,
    to: DateKey,
) -> Result<Vec<CalendarCell>, AggregateError> {
    if from > to {
        return Err(AggregateError::InvalidRange { from, to });
    }
    Ok(DateKey::range_inclusive(from, to)
        .map(|date| CalendarCell {
            date,
            total_trips: store.pickup_count(date),
        })
        .collect())
}

/// Hours strictly above the daily mean.
pub fn peak_hours(hourly: &[u64; 24]) -> Vec<usize> {
    let total: u64 = hourly.iter().sum();
    // hourly[h] > total / 24  <=>  24 * hourly[h] > total, without rounding
    (0..24).filter(|&h| 24 * hourly[h] > total).collect()
}

fn pickups<'a>(store: &'a Store, region: Option<&Region>, date: DateKey) -> Vec<&'a Trip> {
    match region {
        Some(r) => store.trips_by(r, date, TripRole::Pickup),
        None => store.trips_on(date, TripRole::Pickup).iter().collect(),
    }
}

/// Hourly pick-up counts for a region, or the whole city when `region` is `None`.
pub fn day_summary(store: &Store, region: Option<&Region>, date: DateKey) -> DaySummary {
    let clock = store.clock();
    let mut hourly = [0u64; 24];
    for t in pickups(store, region, date) {
        hourly[clock.hour_of(t.stime)] += 1;
    }
    DaySummary {
        date,
        total: hourly.iter().sum(),
        hourly,
        peak_hours: peak_hours(&hourly),
    }
}

pub fn heatmap(store: &Store, date: DateKey) -> Vec<HeatCell> {
    let mut counts: BTreeMap<HexIndex, u64> = BTreeMap::new();
    for t in store.trips_on(date, TripRole::Pickup) {
        *counts.entry(t.o_hex).or_default() += 1;
    }
    counts
        .into_iter()
        .map(|(hex, pickups)| HeatCell { hex, pickups })
        .collect()
}

/// Sector of the flow seen from `cell`: towards `other` for the bearing from the
/// cell center, or from `own` when `other` sits exactly on the center.
fn flow_sector(
    store: &Store,
    cell: HexIndex,
    own: crate::geo::LonLat,
    other: crate::geo::LonLat,
) -> Result<usize, GeoError> {
    let g = store.grid();
    let center = g.hex_center_xy(cell);
    let to = g.project(other)?;
    let from = if center == to {
        g.project(own)?
    } else {
        center
    };
    crate::geo::sector_of_bearing(crate::geo::bearing_between(&from, &to)?, GLYPH_SECTORS)
}

/// Direction rings per cell. Pick-ups point at the destination, drop-offs at
/// the origin.
pub fn cell_glyphs(
    store: &Store,
    date: DateKey,
    cells: &Region,
) -> Result<Vec<CellGlyph>, AggregateError> {
    let mut out = Vec::with_capacity(cells.len());
    for &hex in cells.cells() {
        let mut g = CellGlyph {
            hex,
            pickups: 0,
            dropoffs: 0,
            pickup_sectors: [0; GLYPH_SECTORS],
            dropoff_sectors: [0; GLYPH_SECTORS],
            undirected_pickups: 0,
            undirected_dropoffs: 0,
        };
        for t in store.trips_in_cell(date, TripRole::Pickup, &hex) {
            g.pickups += 1;
            if t.slocation == t.elocation {
                g.undirected_pickups += 1;
            } else {
                g.pickup_sectors[flow_sector(store, hex, t.slocation, t.elocation)?] += 1;
            }
        }
        for t in store.trips_in_cell(date, TripRole::Dropoff, &hex) {
            g.dropoffs += 1;
            if t.slocation == t.elocation {
                g.undirected_dropoffs += 1;
            } else {
                g.dropoff_sectors[flow_sector(store, hex, t.elocation, t.slocation)?] += 1;
            }
        }
        out.push(g);
    }
    Ok(out)
}

/// Trip endpoints on `date` within `radius_m` of every POI inside `bbox`.
pub fn poi_donuts(
    store: &Store,
    bbox: &BBox,
    date: DateKey,
    radius_m: f64,
) -> Result<Vec<PoiDonut>, AggregateError> {
    if !(radius_m > 0.0 && radius_m.is_finite()) {
        return Err(StoreError::InvalidRadius(radius_m).into());
    }
    let window = store.clock().day_window(date);
    store
        .pois()
        .pois()
        .iter()
        .filter(|p| bbox.contains(&p.location))
        .map(|p| {
            let n = |kind| {
                store
                    .points_near(p.location, radius_m, window, kind)
                    .map(|v| v.len() as u64)
            };
            Ok(PoiDonut {
                poi: p.clone(),
                pickups: n(EventKind::Pickup)?,
                dropoffs: n(EventKind::Dropoff)?,
            })
        })
        .collect()
}

pub fn region_poi_counts(store: &Store, region: &Region) -> CategoryCounts {
    let mut counts = CategoryCounts::default();
    for (p, h) in store.pois().pois().iter().zip(store.poi_hexes()) {
        if region.contains(h) {
            counts.0[p.category.index()] += 1;
        }
    }
    counts
}

pub fn region_glyph(store: &Store, region: &Region, date: DateKey) -> RegionGlyph {
    RegionGlyph {
        pickups: store.trips_by(region, date, TripRole::Pickup).len() as u64,
        dropoffs: store.trips_by(region, date, TripRole::Dropoff).len() as u64,
        poi_counts: region_poi_counts(store, region),
    }
}

type Cells = [[(u64, DurationBuckets); 6]; 24];

fn hour_category_cells(store: &Store, region: &Region, date: DateKey) -> (Cells, Cells) {
    let clock = store.clock();
    let mut pick: Cells = [[(0, DurationBuckets::default()); 6]; 24];
    let mut drop = pick;
    for t in store.trips_by(region, date, TripRole::Pickup) {
        let c = &mut pick[clock.hour_of(t.stime)][t.c_o.index()];
        c.0 += 1;
        c.1.add(t.duration_s);
    }
    for t in store.trips_by(region, date, TripRole::Dropoff) {
        let c = &mut drop[clock.hour_of(t.etime)][t.c_d.index()];
        c.0 += 1;
        c.1.add(t.duration_s);
    }
    (pick, drop)
}

fn background(pick: &Cells, drop: &Cells) -> Background {
    let sum = |m: &Cells| std::array::from_fn(|h| m[h].iter().map(|c| c.0).sum());
    Background {
        pickups: sum(pick),
        dropoffs: sum(drop),
    }
}

/// Hour x category circles for the region. The filter hides circles but the
/// background totals always cover every category.
pub fn beeswarm(
    store: &Store,
    region: &Region,
    date: DateKey,
    filter: &[PoiCategory],
) -> Result<BeeswarmMatrix, AggregateError> {
    if filter.is_empty() {
        return Err(AggregateError::EmptyFilter);
    }
    let mut filter = filter.to_vec();
    filter.sort();
    filter.dedup();
    let (pick, drop) = hour_category_cells(store, region, date);
    let mut circles = Vec::new();
    for (side, m) in [(TripRole::Pickup, &pick), (TripRole::Dropoff, &drop)] {
        for (hour, row) in m.iter().enumerate() {
            for &category in &filter {
                let (count, durations) = row[category.index()];
                if count > 0 {
                    circles.push(BeeswarmCircle {
                        hour,
                        category,
                        side,
                        count,
                        durations,
                    });
                }
            }
        }
    }
    Ok(BeeswarmMatrix {
        date,
        filter,
        circles,
        background: background(&pick, &drop),
    })
}

pub fn stacked_bars(store: &Store, region: &Region, date: DateKey) -> StackedBars {
    let (pick, drop) = hour_category_cells(store, region, date);
    let counts = |m: &Cells| std::array::from_fn(|h| std::array::from_fn(|c| m[h][c].0));
    StackedBars {
        date,
        pickups: counts(&pick),
        dropoffs: counts(&drop),
        background: background(&pick, &drop),
    }
}
