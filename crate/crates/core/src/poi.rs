//! POI catalog loading, category reclassification and spatial queries.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{GeoError, GridConfig, LonLat, XY};

#[derive(Debug, Error)]
pub enum PoiError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("raw category {0:?} has no entry in the category map")]
    Unmapped(String),
    #[error("POI index is empty")]
    NoPoi,
    #[error("radius must be > 0, got {0}")]
    InvalidRadius(f64),
    #[error(transparent)]
    Geo(#[from] GeoError),
}

/// The six canonical POI categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoiCategory {
    Company,
    Education,
    Entertainment,
    Living,
    PublicService,
    Traffic,
}

impl PoiCategory {
    pub const ALL: [PoiCategory; 6] = [
        PoiCategory::Company,
        PoiCategory::Education,
        PoiCategory::Entertainment,
        PoiCategory::Living,
        PoiCategory::PublicService,
        PoiCategory::Traffic,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PoiCategory::Company => "company",
            PoiCategory::Education => "education",
            PoiCategory::Entertainment => "entertainment",
            PoiCategory::Living => "living",
            PoiCategory::PublicService => "public_service",
            PoiCategory::Traffic => "traffic",
        }
    }
}

impl fmt::Display for PoiCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PoiCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        Self::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown POI category {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Poi {
    pub id: u32,
    pub location: LonLat,
    pub name: String,
    pub address: String,
    pub category: PoiCategory,
    pub raw_category: String,
}

/// Raw category to canonical category lookup.
#[derive(Debug, Clone, Default)]
pub struct CategoryMap {
    entries: HashMap<String, PoiCategory>,
}

/// Default mapping for the raw categories the synthetic generator emits.
pub const DEFAULT_CATEGORY_MAP: &str = include_str!("../data/category_map.csv");

impl CategoryMap {
    pub fn load(path: &Path) -> Result<Self, PoiError> {
        let file = File::open(path).map_err(|source| PoiError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_reader(file)
    }

    /// Parses `raw_category,canonical_category` lines. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn from_reader(reader: impl Read) -> Result<Self, PoiError> {
        let mut entries = HashMap::new();
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let line_no = i as u64 + 1;
            let line = line.map_err(|e| PoiError::Malformed {
                line: line_no,
                message: e.to_string(),
            })?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (raw, canon) = line.split_once(',').ok_or_else(|| PoiError::Malformed {
                line: line_no,
                message: "expected raw_category,canonical_category".into(),
            })?;
            let canon = canon.parse().map_err(|message| PoiError::Malformed {
                line: line_no,
                message,
            })?;
            entries.insert(raw.trim().to_string(), canon);
        }
        Ok(Self { entries })
    }

    pub fn default_map() -> Self {
        Self::from_reader(DEFAULT_CATEGORY_MAP.as_bytes()).expect("bundled category map parses")
    }

    pub fn get(&self, raw: &str) -> Option<PoiCategory> {
        self.entries.get(raw).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries sorted by raw category.
    pub fn entries(&self) -> Vec<(&str, PoiCategory)> {
        let mut v: Vec<_> = self.entries.iter().map(|(k, v)| (k.as_str(), *v)).collect();
        v.sort();
        v
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct PoiLoadReport {
    pub rows: u64,
    pub loaded: u64,
    pub out_of_bbox: u64,
}

#[derive(Debug, Deserialize)]
struct CatalogRow {
    lon: f64,
    lat: f64,
    name: String,
    address: String,
    raw_category: String,
}

/// Loads a `lon,lat,name,address,raw_category` catalog. POI ids are the
/// 0-based data row numbers of the catalog.
pub fn load_pois(
    catalog: &Path,
    mapping: &Path,
    cfg: &GridConfig,
) -> Result<(PoiIndex, PoiLoadReport), PoiError> {
    let map = CategoryMap::load(mapping)?;
    let file = File::open(catalog).map_err(|source| PoiError::Io {
        path: catalog.display().to_string(),
        source,
    })?;
    read_catalog(file, &map, cfg)
}

pub fn read_catalog(
    reader: impl Read,
    map: &CategoryMap,
    cfg: &GridConfig,
) -> Result<(PoiIndex, PoiLoadReport), PoiError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut report = PoiLoadReport::default();
    let mut pois = Vec::new();
    for (row_no, row) in rdr.deserialize::<CatalogRow>().enumerate() {
        let row = row.map_err(|e| PoiError::Malformed {
            line: e.position().map(|p| p.line()).unwrap_or(row_no as u64 + 2),
            message: e.to_string(),
        })?;
        report.rows += 1;
        let category = map
            .get(&row.raw_category)
            .ok_or_else(|| PoiError::Unmapped(row.raw_category.clone()))?;
        let location = LonLat::new(row.lon, row.lat);
        if !location.is_finite() {
            return Err(PoiError::Malformed {
                line: row_no as u64 + 2,
                message: "non-finite coordinate".into(),
            });
        }
        if !cfg.bbox.contains(&location) {
            report.out_of_bbox += 1;
            continue;
        }
        pois.push(Poi {
            id: row_no as u32,
            location,
            name: row.name,
            address: row.address,
            category,
            raw_category: row.raw_category,
        });
    }
    if report.out_of_bbox > 0 {
        log::warn!("dropped {} POIs outside the study area", report.out_of_bbox);
    }
    report.loaded = pois.len() as u64;
    Ok((PoiIndex::new(pois, *cfg)?, report))
}

const BUCKET_M: f64 = 250.0;

/// Immutable uniform-grid index over projected POI positions.
#[derive(Debug, Clone)]
pub struct PoiIndex {
    cfg: GridConfig,
    pois: Vec<Poi>,
    xy: Vec<XY>,
    origin: XY,
    nx: i64,
    ny: i64,
    /// CSR layout: bucket `b` holds `slots[starts[b]..starts[b + 1]]`.
    starts: Vec<u32>,
    slots: Vec<u32>,
}

impl PoiIndex {
    /// Builds the index; POIs are kept sorted by id.
    pub fn new(mut pois: Vec<Poi>, cfg: GridConfig) -> Result<Self, GeoError> {
        pois.sort_by_key(|p| p.id);
        let xy = pois
            .iter()
            .map(|p| cfg.project(p.location))
            .collect::<Result<Vec<_>, _>>()?;
        let (mut x0, mut y0, mut x1, mut y1) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        if let Some(first) = xy.first() {
            (x0, y0, x1, y1) = (first.x, first.y, first.x, first.y);
        }
        for p in &xy {
            x0 = x0.min(p.x);
            y0 = y0.min(p.y);
            x1 = x1.max(p.x);
            y1 = y1.max(p.y);
        }
        let nx = ((x1 - x0) / BUCKET_M).floor() as i64 + 1;
        let ny = ((y1 - y0) / BUCKET_M).floor() as i64 + 1;
        let origin = XY::new(x0, y0);
        let n_buckets = (nx * ny) as usize;
        let bucket_of = |p: &XY| -> usize {
            let bx = ((p.x - x0) / BUCKET_M).floor() as i64;
            let by = ((p.y - y0) / BUCKET_M).floor() as i64;
            (by.clamp(0, ny - 1) * nx + bx.clamp(0, nx - 1)) as usize
        };
        let mut counts = vec![0u32; n_buckets + 1];
        for p in &xy {
            counts[bucket_of(p) + 1] += 1;
        }
        for i in 1..counts.len() {
            counts[i] += counts[i - 1];
        }
        let starts = counts.clone();
        let mut fill = counts;
        let mut slots = vec![0u32; xy.len()];
        for (i, p) in xy.iter().enumerate() {
            let b = bucket_of(p);
            slots[fill[b] as usize] = i as u32;
            fill[b] += 1;
        }
        Ok(Self {
            cfg,
            pois,
            xy,
            origin,
            nx,
            ny,
            starts,
            slots,
        })
    }

    pub fn len(&self) -> usize {
        self.pois.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pois.is_empty()
    }

    pub fn grid(&self) -> &GridConfig {
        &self.cfg
    }

    /// All POIs in id order.
    pub fn pois(&self) -> &[Poi] {
        &self.pois
    }

    pub fn get(&self, id: u32) -> Option<&Poi> {
        self.pois
            .binary_search_by_key(&id, |p| p.id)
            .ok()
            .map(|i| &self.pois[i])
    }

    pub fn max_id(&self) -> Option<u32> {
        self.pois.last().map(|p| p.id)
    }

    fn bucket(&self, bx: i64, by: i64) -> &[u32] {
        let b = (by * self.nx + bx) as usize;
        &self.slots[self.starts[b] as usize..self.starts[b + 1] as usize]
    }

    /// The POI minimizing projected distance to `p`; ties go to the smallest id.
    pub fn nearest(&self, p: LonLat) -> Result<&Poi, PoiError> {
        let q = self.cfg.project(p)?;
        self.nearest_xy(q).map(|(i, _)| &self.pois[i])
    }

    /// Index into [`Self::pois`] and distance of the nearest POI.
    pub fn nearest_xy(&self, q: XY) -> Result<(usize, f64), PoiError> {
        if self.pois.is_empty() {
            return Err(PoiError::NoPoi);
        }
        let fx = (q.x - self.origin.x) / BUCKET_M;
        let fy = (q.y - self.origin.y) / BUCKET_M;
        let cx = fx.floor() as i64;
        let cy = fy.floor() as i64;
        // Rings past this one lie entirely outside the grid.
        let max_ring = [cx, self.nx - 1 - cx, cy, self.ny - 1 - cy]
            .iter()
            .map(|d| d.unsigned_abs() as i64)
            .max()
            .unwrap()
            + 1;
        let mut best: Option<(f64, usize)> = None;
        for k in 0..=max_ring {
            if let Some((best_d, _)) = best {
                // Any bucket on ring k is outside the (2k-1)^2 block around the
                // query's bucket.
                let inner = k - 1;
                let lb = [
                    q.x - (self.origin.x + (cx - inner) as f64 * BUCKET_M),
                    (self.origin.x + (cx + inner + 1) as f64 * BUCKET_M) - q.x,
                    q.y - (self.origin.y + (cy - inner) as f64 * BUCKET_M),
                    (self.origin.y + (cy + inner + 1) as f64 * BUCKET_M) - q.y,
                ]
                .into_iter()
                .fold(f64::MAX, f64::min)
                .max(0.0);
                if lb > best_d {
                    break;
                }
            }
            self.for_ring(cx, cy, k, |i| {
                let d = self.xy[i].distance(&q);
                let better = match best {
                    None => true,
                    Some((bd, bi)) => d < bd || (d == bd && self.pois[i].id < self.pois[bi].id),
                };
                if better {
                    best = Some((d, i));
                }
            });
        }
        let (d, i) = best.expect("non-empty index yields a nearest POI");
        Ok((i, d))
    }

    fn for_ring(&self, cx: i64, cy: i64, k: i64, mut f: impl FnMut(usize)) {
        let mut visit = |bx: i64, by: i64| {
            if bx >= 0 && by >= 0 && bx < self.nx && by < self.ny {
                for &i in self.bucket(bx, by) {
                    f(i as usize);
                }
            }
        };
        if k == 0 {
            visit(cx, cy);
            return;
        }
        for bx in cx - k..=cx + k {
            visit(bx, cy - k);
            visit(bx, cy + k);
        }
        for by in cy - k + 1..=cy + k - 1 {
            visit(cx - k, by);
            visit(cx + k, by);
        }
    }

    /// POIs within the closed ball of `radius_m`, sorted by (distance, id).
    pub fn within(&self, p: LonLat, radius_m: f64) -> Result<Vec<&Poi>, PoiError> {
        let q = self.cfg.project(p)?;
        Ok(self
            .within_xy(q, radius_m)?
            .into_iter()
            .map(|(i, _)| &self.pois[i])
            .collect())
    }

    /// Indexes and distances of POIs within `radius_m` of `q`.
    pub fn within_xy(&self, q: XY, radius_m: f64) -> Result<Vec<(usize, f64)>, PoiError> {
        if !(radius_m > 0.0 && radius_m.is_finite()) {
            return Err(PoiError::InvalidRadius(radius_m));
        }
        let mut out = Vec::new();
        if self.pois.is_empty() {
            return Ok(out);
        }
        let bx0 = (((q.x - radius_m - self.origin.x) / BUCKET_M).floor() as i64).max(0);
        let bx1 = (((q.x + radius_m - self.origin.x) / BUCKET_M).floor() as i64).min(self.nx - 1);
        let by0 = (((q.y - radius_m - self.origin.y) / BUCKET_M).floor() as i64).max(0);
        let by1 = (((q.y + radius_m - self.origin.y) / BUCKET_M).floor() as i64).min(self.ny - 1);
        for by in by0..=by1 {
            for bx in bx0..=bx1 {
                for &i in self.bucket(bx, by) {
                    let d = self.xy[i as usize].distance(&q);
                    if d <= radius_m {
                        out.push((i as usize, d));
                    }
                }
            }
        }
        out.sort_by(|a, b| {
            a.1.total_cmp(&b.1)
                .then(self.pois[a.0].id.cmp(&self.pois[b.0].id))
        });
        Ok(out)
    }
}
