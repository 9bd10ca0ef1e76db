//! Global configuration file (TOML).

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::StudyClock;
use crate::geo::{BBox, GeoError, GridConfig, LonLat};
use crate::ingest::CleaningRules;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parsing {path}: {message}")]
    Parse { path: String, message: String },
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error("invalid cleaning rules: {0}")]
    Rules(String),
}

/// Flat key/value configuration shared by ingest, store and the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Projection origin; defaults to the bbox centroid.
    pub origin_lon: Option<f64>,
    pub origin_lat: Option<f64>,
    pub hex_width_m: f64,
    /// `[min_lon, min_lat, max_lon, max_lat]`
    pub bbox: [f64; 4],
    pub utc_offset_hours: i32,
    pub min_trip_s: i64,
    pub max_trip_s: i64,
    pub min_trip_m: f64,
    pub max_speed_kmh: f64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            origin_lon: None,
            origin_lat: None,
            hex_width_m: GridConfig::DEFAULT_WIDTH_M,
            bbox: [113.75, 22.45, 114.65, 22.85],
            utc_offset_hours: 8,
            min_trip_s: 60,
            max_trip_s: 10_800,
            min_trip_m: 200.0,
            max_speed_kmh: 200.0,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let cfg: Config = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.grid()?;
        self.rules()?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn bbox(&self) -> Result<BBox, GeoError> {
        let [a, b, c, d] = self.bbox;
        BBox::new(LonLat::new(a, b), LonLat::new(c, d))
    }

    pub fn grid(&self) -> Result<GridConfig, GeoError> {
        let bbox = self.bbox()?;
        let c = bbox.center();
        let origin = LonLat::new(
            self.origin_lon.unwrap_or(c.lon),
            self.origin_lat.unwrap_or(c.lat),
        );
        GridConfig::new(origin, self.hex_width_m, bbox)
    }

    pub fn rules(&self) -> Result<CleaningRules, ConfigError> {
        let rules = CleaningRules {
            bbox: self.bbox()?,
            min_trip_s: self.min_trip_s,
            max_trip_s: self.max_trip_s,
            min_trip_m: self.min_trip_m,
            max_speed_kmh: self.max_speed_kmh,
            ..CleaningRules::new(self.bbox()?)
        };
        rules.validate().map_err(ConfigError::Rules)?;
        Ok(rules)
    }

    pub fn clock(&self) -> StudyClock {
        StudyClock::from_hours(self.utc_offset_hours)
    }
}
