//! Planar projection, distances, bearings and the hexagonal tessellation of
//! the study area.
//!
//! Coordinates are projected with a local equirectangular projection about
//! the study-area origin. Hex cells are pointy-top and addressed with axial
//! `(q, r)` coordinates; the configured width is the distance across flats,
//! which is also the distance between the centers of adjacent cells.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

const SQRT_3: f64 = 1.732_050_807_568_877_2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("invalid coordinate ({lon}, {lat})")]
    InvalidCoordinate { lon: f64, lat: f64 },
    #[error("invalid polygon: {0} vertices, at least 3 required")]
    InvalidPolygon(usize),
    #[error("bearing is undefined between coincident points")]
    UndefinedBearing,
    #[error("invalid sector count {0}")]
    InvalidSectors(usize),
    #[error("invalid grid configuration: {0}")]
    InvalidConfig(String),
}

/// A WGS84 position in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LonLat {
    pub lon: f64,
    pub lat: f64,
}

impl LonLat {
    pub const fn new(lon: f64, lat: f64) -> Self {
        Self { lon, lat }
    }

    pub fn is_finite(&self) -> bool {
        self.lon.is_finite() && self.lat.is_finite()
    }

    /// Finite and within [-180, 180] x [-90, 90].
    pub fn is_valid(&self) -> bool {
        (-180.0..=180.0).contains(&self.lon) && (-90.0..=90.0).contains(&self.lat)
    }
}

/// Meters east/north of the projection origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XY {
    pub x: f64,
    pub y: f64,
}

impl XY {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &XY) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        (dx * dx + dy * dy).sqrt()
    }
}

/// Axial coordinates of a pointy-top hex cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct HexIndex {
    pub q: i32,
    pub r: i32,
}

impl HexIndex {
    pub const fn new(q: i32, r: i32) -> Self {
        Self { q, r }
    }

    /// The six adjacent cells, counter-clockwise starting east.
    pub fn neighbors(&self) -> [HexIndex; 6] {
        const DIRS: [(i32, i32); 6] = [(1, 0), (1, -1), (0, -1), (-1, 0), (-1, 1), (0, 1)];
        DIRS.map(|(dq, dr)| HexIndex::new(self.q + dq, self.r + dr))
    }

    /// Number of steps between two cells.
    pub fn grid_distance(&self, other: &HexIndex) -> u32 {
        let dq = (self.q - other.q) as i64;
        let dr = (self.r - other.r) as i64;
        let ds = -dq - dr;
        dq.abs().max(dr.abs()).max(ds.abs()) as u32
    }
}

impl fmt::Display for HexIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.q, self.r)
    }
}

impl FromStr for HexIndex {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (q, r) = s
            .trim()
            .split_once(':')
            .ok_or_else(|| format!("cell id {s:?} is not of the form q:r"))?;
        let q = q.parse().map_err(|_| format!("bad q in cell id {s:?}"))?;
        let r = r.parse().map_err(|_| format!("bad r in cell id {s:?}"))?;
        Ok(HexIndex::new(q, r))
    }
}

/// Axis-aligned lon/lat box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub min: LonLat,
    pub max: LonLat,
}

impl BBox {
    pub fn new(min: LonLat, max: LonLat) -> Result<Self, GeoError> {
        if !(min.is_finite() && max.is_finite()) || min.lon >= max.lon || min.lat >= max.lat {
            return Err(GeoError::InvalidConfig(format!(
                "bbox min ({}, {}) must be below max ({}, {})",
                min.lon, min.lat, max.lon, max.lat
            )));
        }
        Ok(Self { min, max })
    }

    pub fn contains(&self, p: &LonLat) -> bool {
        p.lon >= self.min.lon
            && p.lon <= self.max.lon
            && p.lat >= self.min.lat
            && p.lat <= self.max.lat
    }

    pub fn center(&self) -> LonLat {
        LonLat::new(
            (self.min.lon + self.max.lon) / 2.0,
            (self.min.lat + self.max.lat) / 2.0,
        )
    }
}

/// Study-area grid: projection origin, hex width and bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub origin: LonLat,
    /// Distance across flats in meters.
    pub width_m: f64,
    pub bbox: BBox,
}

impl GridConfig {
    pub const DEFAULT_WIDTH_M: f64 = 400.0;

    pub fn new(origin: LonLat, width_m: f64, bbox: BBox) -> Result<Self, GeoError> {
        if !(width_m.is_finite() && width_m > 0.0) {
            return Err(GeoError::InvalidConfig(format!(
                "hex width {width_m} must be > 0"
            )));
        }
        if !origin.is_finite() || origin.lat.abs() >= 89.0 {
            return Err(GeoError::InvalidConfig(
                "origin must be a finite non-polar point".into(),
            ));
        }
        let bbox = BBox::new(bbox.min, bbox.max)?;
        Ok(Self {
            origin,
            width_m,
            bbox,
        })
    }

    /// Grid centered on the bbox centroid.
    pub fn centered(bbox: BBox, width_m: f64) -> Result<Self, GeoError> {
        Self::new(bbox.center(), width_m, bbox)
    }

    fn meters_per_degree() -> f64 {
        EARTH_RADIUS_M * std::f64::consts::PI / 180.0
    }

    fn cos_lat0(&self) -> f64 {
        self.origin.lat.to_radians().cos()
    }

    pub fn project(&self, p: LonLat) -> Result<XY, GeoError> {
        if !p.is_finite() {
            return Err(GeoError::InvalidCoordinate {
                lon: p.lon,
                lat: p.lat,
            });
        }
        let k = Self::meters_per_degree();
        Ok(XY {
            x: (p.lon - self.origin.lon) * self.cos_lat0() * k,
            y: (p.lat - self.origin.lat) * k,
        })
    }

    pub fn unproject(&self, xy: XY) -> LonLat {
        let k = Self::meters_per_degree();
        LonLat {
            lon: self.origin.lon + xy.x / (self.cos_lat0() * k),
            lat: self.origin.lat + xy.y / k,
        }
    }

    /// Projected Euclidean distance in meters.
    pub fn distance_m(&self, a: LonLat, b: LonLat) -> Result<f64, GeoError> {
        Ok(self.project(a)?.distance(&self.project(b)?))
    }

    fn size(&self) -> f64 {
        self.width_m / SQRT_3
    }

    /// Circumradius: the largest distance from a cell center to its boundary.
    pub fn circumradius_m(&self) -> f64 {
        self.size()
    }

    pub fn hex_center_xy(&self, h: HexIndex) -> XY {
        XY {
            x: self.width_m * (h.q as f64 + h.r as f64 / 2.0),
            y: self.width_m * SQRT_3 / 2.0 * h.r as f64,
        }
    }

    pub fn hex_center(&self, h: HexIndex) -> LonLat {
        self.unproject(self.hex_center_xy(h))
    }

    pub fn hex_of_xy(&self, xy: XY) -> HexIndex {
        let size = self.size();
        let qf = (SQRT_3 / 3.0 * xy.x - xy.y / 3.0) / size;
        let rf = (2.0 / 3.0 * xy.y) / size;
        cube_round(qf, rf)
    }

    pub fn to_hex(&self, p: LonLat) -> Result<HexIndex, GeoError> {
        Ok(self.hex_of_xy(self.project(p)?))
    }

    /// Cells whose center lies inside `poly` under the even-odd rule.
    pub fn hexes_in_polygon(&self, poly: &[LonLat]) -> Result<BTreeSet<HexIndex>, GeoError> {
        if poly.len() < 3 {
            return Err(GeoError::InvalidPolygon(poly.len()));
        }
        if let Some(p) = poly.iter().find(|p| !p.is_valid()) {
            return Err(GeoError::InvalidCoordinate {
                lon: p.lon,
                lat: p.lat,
            });
        }
        let pts = poly
            .iter()
            .map(|p| self.project(*p))
            .collect::<Result<Vec<_>, _>>()?;
        let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for p in &pts {
            xmin = xmin.min(p.x);
            xmax = xmax.max(p.x);
            ymin = ymin.min(p.y);
            ymax = ymax.max(p.y);
        }
        Ok(self
            .cells_with_center_in(xmin, xmax, ymin, ymax)
            .filter(|h| point_in_polygon(&self.hex_center_xy(*h), &pts))
            .collect())
    }

    /// Every cell an in-bbox point can map to: centers within the bbox grown
    /// by one circumradius.
    pub fn covering_cells(&self) -> BTreeSet<HexIndex> {
        let lo = self.project(self.bbox.min).expect("validated bbox");
        let hi = self.project(self.bbox.max).expect("validated bbox");
        let pad = self.circumradius_m();
        self.cells_with_center_in(lo.x - pad, hi.x + pad, lo.y - pad, hi.y + pad)
            .collect()
    }

    /// Cells whose centers fall within `radius_m` (plus one circumradius) of
    /// `center`: a superset of the cells any point of the disc maps to.
    pub fn cells_near(&self, center: XY, radius_m: f64) -> Vec<HexIndex> {
        let reach = radius_m + self.circumradius_m();
        self.cells_with_center_in(
            center.x - reach,
            center.x + reach,
            center.y - reach,
            center.y + reach,
        )
        .filter(|h| self.hex_center_xy(*h).distance(&center) <= reach)
        .collect()
    }

    fn cells_with_center_in(
        &self,
        xmin: f64,
        xmax: f64,
        ymin: f64,
        ymax: f64,
    ) -> impl Iterator<Item = HexIndex> + '_ {
        let row_h = self.width_m * SQRT_3 / 2.0;
        let r0 = (ymin / row_h).floor() as i32;
        let r1 = (ymax / row_h).ceil() as i32;
        (r0..=r1).flat_map(move |r| {
            let q0 = (xmin / self.width_m - r as f64 / 2.0).floor() as i32;
            let q1 = (xmax / self.width_m - r as f64 / 2.0).ceil() as i32;
            (q0..=q1)
                .map(move |q| HexIndex::new(q, r))
                .filter(move |h| {
                    let c = self.hex_center_xy(*h);
                    c.x >= xmin && c.x <= xmax && c.y >= ymin && c.y <= ymax
                })
        })
    }

    /// Compass bearing in degrees (0 = north, clockwise) in `[0, 360)`.
    pub fn bearing_deg(&self, from: LonLat, to: LonLat) -> Result<f64, GeoError> {
        let a = self.project(from)?;
        let b = self.project(to)?;
        bearing_between(&a, &b)
    }

    /// Bins the bearing `from -> to` into one of `sectors` arcs, sector 0
    /// centered on north.
    pub fn bearing_sector(
        &self,
        from: LonLat,
        to: LonLat,
        sectors: usize,
    ) -> Result<usize, GeoError> {
        sector_of_bearing(self.bearing_deg(from, to)?, sectors)
    }
}

pub fn bearing_between(a: &XY, b: &XY) -> Result<f64, GeoError> {
    let dx = b.x - a.x;
    let dy = b.y - a.y;
    if dx == 0.0 && dy == 0.0 {
        return Err(GeoError::UndefinedBearing);
    }
    let deg = dx.atan2(dy).to_degrees();
    Ok(if deg < 0.0 { deg + 360.0 } else { deg })
}

/// Half-open binning: sector `k` covers `[k*w - w/2, k*w + w/2)`, `w = 360/sectors`.
pub fn sector_of_bearing(bearing_deg: f64, sectors: usize) -> Result<usize, GeoError> {
    if sectors == 0 {
        return Err(GeoError::InvalidSectors(sectors));
    }
    let width = 360.0 / sectors as f64;
    let shifted = (bearing_deg + width / 2.0).rem_euclid(360.0);
    Ok(((shifted / width).floor() as usize) % sectors)
}

fn cube_round(qf: f64, rf: f64) -> HexIndex {
    let sf = -qf - rf;
    let mut q = qf.round();
    let mut r = rf.round();
    let s = sf.round();
    let dq = (q - qf).abs();
    let dr = (r - rf).abs();
    let ds = (s - sf).abs();
    if dq > dr && dq > ds {
        q = -r - s;
    } else if dr > ds {
        r = -q - s;
    }
    HexIndex::new(q as i32, r as i32)
}

/// Even-odd ray casting.
pub fn point_in_polygon(p: &XY, poly: &[XY]) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (a, b) = (&poly[i], &poly[j]);
        if (a.y > p.y) != (b.y > p.y) {
            let x_cross = (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x;
            if p.x < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}
