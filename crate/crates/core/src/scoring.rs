//! Candidate pick-up point scoring on six criteria.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{DateKey, StudyClock, TimeWindow};
use crate::geo::{GeoError, LonLat};
use crate::poi::{PoiCategory, PoiError, PoiIndex};
use crate::store::{EventKind, Region, Store, StoreError};

pub const DEFAULT_RADIUS_M: f64 = 500.0;
pub const VIOLIN_BINS: usize = 20;

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("radius must be > 0, got {0}")]
    InvalidRadius(f64),
    #[error("score window is empty")]
    EmptyWindow,
    #[error("no candidates to score")]
    EmptyInput,
    #[error("unknown criterion {0:?} (expected one of AD, AS, PL, TF, PR, DR)")]
    InvalidCriterion(String),
    #[error("candidate at ({lon}, {lat}) lies outside the study area")]
    OutsideArea { lon: f64, lat: f64 },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Poi(#[from] PoiError),
    #[error(transparent)]
    Geo(#[from] GeoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Criterion {
    AD,
    AS,
    PL,
    TF,
    PR,
    DR,
}

impl Criterion {
    pub const ALL: [Criterion; 6] = [Self::AD, Self::AS, Self::PL, Self::TF, Self::PR, Self::DR];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        ["AD", "AS", "PL", "TF", "PR", "DR"][self.index()]
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Criterion {
    type Err = ScoringError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Criterion::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| ScoringError::InvalidCriterion(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateSource {
    Poi,
    UserAdded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: u32,
    pub location: LonLat,
    pub source: CandidateSource,
    pub label: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreParams {
    /// Coverage radius D in meters.
    pub radius_m: f64,
    pub window: TimeWindow,
}

impl ScoreParams {
    pub fn new(radius_m: f64, window: TimeWindow) -> Result<Self, ScoringError> {
        if !(radius_m > 0.0 && radius_m.is_finite()) {
            return Err(ScoringError::InvalidRadius(radius_m));
        }
        if window.is_empty() {
            return Err(ScoringError::EmptyWindow);
        }
        Ok(Self { radius_m, window })
    }

    /// Window of whole hours `[from_hour, to_hour)` on `date`.
    pub fn for_date(
        clock: &StudyClock,
        date: DateKey,
        radius_m: f64,
        from_hour: u32,
        to_hour: u32,
    ) -> Result<Self, ScoringError> {
        let window = clock
            .hour_window(date, from_hour, to_hour)
            .ok_or(ScoringError::EmptyWindow)?;
        Self::new(radius_m, window)
    }

    pub fn l_km(&self) -> f64 {
        self.radius_m / 1000.0
    }

    pub fn t_h(&self) -> f64 {
        self.window.hours()
    }
}

/// One value per criterion; serialized keyed by criterion name.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    #[serde(rename = "AD")]
    pub ad: f64,
    #[serde(rename = "AS")]
    pub as_: f64,
    #[serde(rename = "PL")]
    pub pl: f64,
    #[serde(rename = "TF")]
    pub tf: f64,
    #[serde(rename = "PR")]
    pub pr: f64,
    #[serde(rename = "DR")]
    pub dr: f64,
}

impl Scores {
    pub fn get(&self, c: Criterion) -> f64 {
        self.to_array()[c.index()]
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.ad, self.as_, self.pl, self.tf, self.pr, self.dr]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self {
            ad: a[0],
            as_: a[1],
            pl: a[2],
            tf: a[3],
            pr: a[4],
            dr: a[5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub candidate: Candidate,
    pub raw: Scores,
    pub normalized: Scores,
    /// Historical pick-ups in coverage (n, also NP).
    pub n: u64,
    /// Distinct vacant taxis in coverage (ND).
    pub nd: u64,
    pub vacant_samples: u64,
    pub pois_in_range: u64,
}

/// Mean of `1 - d/D` over pick-ups in coverage; 0 for an empty coverage.
pub fn score_ad(c: &Candidate, store: &Store, p: &ScoreParams) -> Result<f64, ScoringError> {
    Ok(accessibility(c, store, p)?.0)
}

fn accessibility(
    c: &Candidate,
    store: &Store,
    p: &ScoreParams,
) -> Result<(f64, u64), ScoringError> {
    let pts = store.points_near(c.location, p.radius_m, p.window, EventKind::Pickup)?;
    if pts.is_empty() {
        return Ok((0.0, 0));
    }
    let g = store.grid();
    let mut sum = 0.0;
    for e in &pts {
        sum += 1.0 - g.distance_m(c.location, e.location)? / p.radius_m;
    }
    Ok((sum / pts.len() as f64, pts.len() as u64))
}

/// Mean vacant-sample speed in coverage; 0 when there are none.
pub fn score_as(c: &Candidate, store: &Store, p: &ScoreParams) -> Result<f64, ScoringError> {
    let pts = store.points_near(c.location, p.radius_m, p.window, EventKind::Vacant)?;
    if pts.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = pts.iter().map(|e| e.speed.unwrap_or(0.0) as f64).sum();
    Ok(sum / pts.len() as f64)
}

/// Distinct categories among POIs in coverage, over 6.
pub fn score_pl(c: &Candidate, pois: &PoiIndex, p: &ScoreParams) -> Result<f64, ScoringError> {
    let cats: BTreeSet<PoiCategory> = pois
        .within(c.location, p.radius_m)?
        .iter()
        .map(|x| x.category)
        .collect();
    Ok(cats.len() as f64 / PoiCategory::ALL.len() as f64)
}

/// Share of traffic POIs among POIs in coverage; 0 when there are none.
pub fn score_tf(c: &Candidate, pois: &PoiIndex, p: &ScoreParams) -> Result<f64, ScoringError> {
    let near = pois.within(c.location, p.radius_m)?;
    if near.is_empty() {
        return Ok(0.0);
    }
    let traffic = near
        .iter()
        .filter(|x| x.category == PoiCategory::Traffic)
        .count();
    Ok(traffic as f64 / near.len() as f64)
}

/// Pick-ups and distinct vacant taxis per kilometer of radius per hour.
pub fn score_pr_dr(
    c: &Candidate,
    store: &Store,
    p: &ScoreParams,
) -> Result<(f64, f64), ScoringError> {
    let np = store
        .points_near(c.location, p.radius_m, p.window, EventKind::Pickup)?
        .len();
    let nd = distinct_taxis(store, c, p)?.0;
    Ok((rate(np as u64, p), rate(nd, p)))
}

fn rate(n: u64, p: &ScoreParams) -> f64 {
    n as f64 / p.l_km() / p.t_h()
}

fn distinct_taxis(
    store: &Store,
    c: &Candidate,
    p: &ScoreParams,
) -> Result<(u64, Vec<f32>), ScoringError> {
    let pts = store.points_near(c.location, p.radius_m, p.window, EventKind::Vacant)?;
    let taxis: BTreeSet<u32> = pts.iter().map(|e| e.taxi_id).collect();
    Ok((
        taxis.len() as u64,
        pts.iter().map(|e| e.speed.unwrap_or(0.0)).collect(),
    ))
}

/// All six raw scores for one candidate; `normalized` is left at zero.
pub fn score_candidate(
    store: &Store,
    c: &Candidate,
    p: &ScoreParams,
) -> Result<CandidateScore, ScoringError> {
    let (ad, n) = accessibility(c, store, p)?;
    let (nd, speeds) = distinct_taxis(store, c, p)?;
    let avg_speed = if speeds.is_empty() {
        0.0
    } else {
        speeds.iter().map(|&s| s as f64).sum::<f64>() / speeds.len() as f64
    };
    let pois_in_range = store.pois().within(c.location, p.radius_m)?.len() as u64;
    let raw = Scores {
        ad,
        as_: avg_speed,
        pl: score_pl(c, store.pois(), p)?,
        tf: score_tf(c, store.pois(), p)?,
        pr: rate(n, p),
        dr: rate(nd, p),
    };
    Ok(CandidateScore {
        candidate: c.clone(),
        raw,
        normalized: Scores::default(),
        n,
        nd,
        vacant_samples: speeds.len() as u64,
        pois_in_range,
    })
}

/// Per-criterion min-max scaling; a criterion with equal raw values maps to 0.5.
pub fn normalize(mut scores: Vec<CandidateScore>) -> Result<Vec<CandidateScore>, ScoringError> {
    if scores.is_empty() {
        return Err(ScoringError::EmptyInput);
    }
    for c in Criterion::ALL {
        let (lo, hi) = scores
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
                let v = s.raw.get(c);
                (lo.min(v), hi.max(v))
            });
        for s in &mut scores {
            let mut a = s.normalized.to_array();
            a[c.index()] = if hi > lo {
                ((s.raw.get(c) - lo) / (hi - lo)).clamp(0.0, 1.0)
            } else {
                0.5
            };
            s.normalized = Scores::from_array(a);
        }
    }
    Ok(scores)
}

/// Stable ordering by normalized `by`; ties keep ascending candidate id.
pub fn rank(
    mut scores: Vec<CandidateScore>,
    by: Criterion,
    descending: bool,
) -> Vec<CandidateScore> {
    scores.sort_by(|a, b| {
        let (x, y) = (a.normalized.get(by), b.normalized.get(by));
        let ord = if descending {
            y.total_cmp(&x)
        } else {
            x.total_cmp(&y)
        };
        ord.then(a.candidate.id.cmp(&b.candidate.id))
    });
    scores
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    /// Counts of normalized scores in 20 equal bins over `[0, 1]`.
    pub histogram: Vec<u64>,
}

pub type ViolinStats = BTreeMap<Criterion, CriterionStats>;

/// Quantile by linear interpolation between closest ranks of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn violin(scores: &[CandidateScore]) -> Result<ViolinStats, ScoringError> {
    if scores.is_empty() {
        return Err(ScoringError::EmptyInput);
    }
    let mut out = BTreeMap::new();
    for c in Criterion::ALL {
        let mut v: Vec<f64> = scores.iter().map(|s| s.normalized.get(c)).collect();
        v.sort_by(f64::total_cmp);
        let mut histogram = vec![0u64; VIOLIN_BINS];
        for &x in &v {
            let bin = ((x * VIOLIN_BINS as f64).floor() as usize).min(VIOLIN_BINS - 1);
            histogram[bin] += 1;
        }
        out.insert(
            c,
            CriterionStats {
                min: v[0],
                q1: quantile(&v, 0.25),
                median: quantile(&v, 0.5),
                q3: quantile(&v, 0.75),
                max: v[v.len() - 1],
                histogram,
            },
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionEvaluation {
    pub candidates: Vec<CandidateScore>,
    /// `None` when the region yields no candidates.
    pub violin: Option<ViolinStats>,
}

/// Candidates for a region: its POIs, then user-added points with ids after
/// the largest POI id.
pub fn region_candidates(
    store: &Store,
    region: &Region,
    extra: &[(LonLat, String)],
) -> Result<Vec<Candidate>, ScoringError> {
    let mut out: Vec<Candidate> = store
        .pois()
        .pois()
        .iter()
        .zip(store.poi_hexes())
        .filter(|(_, h)| region.contains(h))
        .map(|(p, _)| Candidate {
            id: p.id,
            location: p.location,
            source: CandidateSource::Poi,
            label: p.name.clone(),
        })
        .collect();
    let first = store.pois().max_id().map_or(0, |m| m + 1);
    for (k, (loc, label)) in extra.iter().enumerate() {
        if !store.grid().bbox.contains(loc) {
            return Err(ScoringError::OutsideArea {
                lon: loc.lon,
                lat: loc.lat,
            });
        }
        out.push(Candidate {
            id: first + k as u32,
            location: *loc,
            source: CandidateSource::UserAdded,
            label: label.clone(),
        });
    }
    Ok(out)
}

pub fn score_all(
    store: &Store,
    candidates: &[Candidate],
    p: &ScoreParams,
) -> Result<Vec<CandidateScore>, ScoringError> {
    candidates
        .par_iter()
        .map(|c| score_candidate(store, c, p))
        .collect()
}

pub fn evaluate_region(
    store: &Store,
    region: &Region,
    p: &ScoreParams,
    extra: &[(LonLat, String)],
) -> Result<RegionEvaluation, ScoringError> {
    let candidates = region_candidates(store, region, extra)?;
    if candidates.is_empty() {
        return Ok(RegionEvaluation {
            candidates: Vec::new(),
            violin: None,
        });
    }
    let scores = normalize(score_all(store, &candidates, p)?)?;
    let violin = violin(&scores)?;
    Ok(RegionEvaluation {
        candidates: scores,
        violin: Some(violin),
    })
}

/// CSV rendering used by the CLI: one row per candidate in the given order.
pub fn write_scores_csv<W: std::io::Write>(scores: &[CandidateScore], w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec![
        "id".to_string(),
        "source".into(),
        "label".into(),
        "lon".into(),
        "lat".into(),
    ];
    for c in Criterion::ALL {
        header.push(format!("{c}_raw"));
    }
    for c in Criterion::ALL {
        header.push(format!("{c}_norm"));
    }
    header.extend(["n", "nd", "vacant_samples", "pois_in_range"].map(String::from));
    out.write_record(&header)?;
    for s in scores {
        let c = &s.candidate;
        let mut row = vec![
            c.id.to_string(),
            match c.source {
                CandidateSource::Poi => "poi".into(),
                CandidateSource::UserAdded => "user_added".into(),
            },
            c.label.clone(),
            c.location.lon.to_string(),
            c.location.lat.to_string(),
        ];
        row.extend(s.raw.to_array().iter().map(|v| v.to_string()));
        row.extend(s.normalized.to_array().iter().map(|v| v.to_string()));
        row.extend([s.n, s.nd, s.vacant_samples, s.pois_in_range].map(|v| v.to_string()));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{BBox, GridConfig, HexIndex, XY};
    use crate::ingest::{Trip, VacantSample};
    use crate::poi::Poi;
    use proptest::prelude::*;

    fn grid() -> GridConfig {
        let bbox = BBox::new(LonLat::new(113.9, 22.4), LonLat::new(114.3, 22.7)).unwrap();
        GridConfig::centered(bbox, 400.0).unwrap()
    }

    fn clock() -> StudyClock {
        StudyClock::default()
    }

    fn day() -> DateKey {
        DateKey::from_ymd(2019, 9, 4).unwrap()
    }

    fn pickup(g: &GridConfig, taxi: u32, ts: i64, loc: LonLat) -> Trip {
        let e = g.unproject(XY::new(-4000.0, -4000.0));
        Trip {
            taxi_id: taxi,
            stime: ts,
            slocation: loc,
            etime: ts + 600,
            elocation: e,
            c_o: PoiCategory::Living,
            c_d: PoiCategory::Living,
            duration_s: 600,
            o_hex: g.to_hex(loc).unwrap(),
            d_hex: g.to_hex(e).unwrap(),
        }
    }

    fn cand(id: u32, loc: LonLat) -> Candidate {
        Candidate {
            id,
            location: loc,
            source: CandidateSource::UserAdded,
            label: String::new(),
        }
    }

    fn store(trips: Vec<Trip>, vacant: Vec<VacantSample>, pois: Vec<Poi>) -> Store {
        let g = grid();
        Store::build(g, clock(), PoiIndex::new(pois, g).unwrap(), trips, vacant).unwrap()
    }

    fn params(hours: u32) -> ScoreParams {
        ScoreParams::for_date(&clock(), day(), 500.0, 8, 8 + hours).unwrap()
    }

    fn at_dist(g: &GridConfig, center: XY, d: f64) -> LonLat {
        g.unproject(XY::new(center.x + d, center.y))
    }

    #[test]
    fn ad_closed_forms() {
        let g = grid();
        let t0 = clock().day_start(day()) + 9 * 3600;
        let c = XY::new(0.0, 0.0);
        let mut trips = vec![
            pickup(&g, 1, t0, at_dist(&g, c, 0.0)),
            pickup(&g, 2, t0, at_dist(&g, c, 250.0)),
        ];
        let mut edge = at_dist(&g, c, 500.0);
        while g.distance_m(g.unproject(c), edge).unwrap() > 500.0 {
            edge.lon = edge.lon.next_down();
        }
        trips.push(pickup(&g, 3, t0, edge));
        let s = store(trips, vec![], vec![]);
        let p = params(2);
        let ad = score_ad(&cand(0, g.unproject(c)), &s, &p).unwrap();
        assert!((ad - 0.5).abs() < 1e-9, "{ad}");
        assert_eq!(
            score_ad(&cand(0, g.unproject(XY::new(3000.0, 3000.0))), &s, &p).unwrap(),
            0.0
        );

        let s = store(
            vec![
                pickup(&g, 1, t0, g.unproject(c)),
                pickup(&g, 2, t0, g.unproject(c)),
            ],
            vec![],
            vec![],
        );
        assert_eq!(score_ad(&cand(0, g.unproject(c)), &s, &p).unwrap(), 1.0);
    }

    #[test]
    fn as_and_dr_from_vacant_samples() {
        let g = grid();
        let t0 = clock().day_start(day()) + 9 * 3600;
        let here = g.origin;
        let v = |taxi, ts, speed| VacantSample {
            ts,
            taxi_id: taxi,
            location: here,
            speed,
        };
        let s = store(vec![], vec![v(1, t0, 20.0), v(2, t0 + 60, 60.0)], vec![]);
        let p = params(2);
        assert_eq!(score_as(&cand(0, here), &s, &p).unwrap(), 40.0);
        let s = store(
            vec![],
            (0..5).map(|i| v(9, t0 + 60 * i, 30.0)).collect(),
            vec![],
        );
        let sc = score_candidate(&s, &cand(0, here), &p).unwrap();
        assert_eq!(sc.nd, 1);
        assert_eq!(sc.raw.dr, 1.0 / 0.5 / 2.0);
        let empty = store(vec![], vec![], vec![]);
        assert_eq!(score_pr_dr(&cand(0, here), &empty, &p).unwrap(), (0.0, 0.0));
        assert_eq!(score_as(&cand(0, here), &empty, &p).unwrap(), 0.0);
    }

    #[test]
    fn pr_closed_form_and_scaling() {
        let g = grid();
        let t0 = clock().day_start(day()) + 8 * 3600;
        let trips: Vec<_> = (0..12)
            .map(|i| pickup(&g, i, t0 + 300 * i as i64, g.origin))
            .collect();
        let s = store(trips.clone(), vec![], vec![]);
        let c = cand(0, g.origin);
        let p = params(2);
        assert_eq!(score_pr_dr(&c, &s, &p).unwrap().0, 12.0);

        // Same events a day later inside a window twice as long.
        let mut doubled = trips.clone();
        doubled.extend(
            trips
                .iter()
                .map(|t| pickup(&g, t.taxi_id, t.stime + 86_400, t.slocation)),
        );
        let s2 = store(doubled, vec![], vec![]);
        let w48 = ScoreParams::new(500.0, TimeWindow::new(t0, t0 + 48 * 3600).unwrap()).unwrap();
        let w24 = ScoreParams::new(500.0, TimeWindow::new(t0, t0 + 24 * 3600).unwrap()).unwrap();
        assert_eq!(
            score_pr_dr(&c, &s, &w24).unwrap().0,
            score_pr_dr(&c, &s2, &w48).unwrap().0
        );

        let half = ScoreParams::new(250.0, p.window).unwrap();
        assert_eq!(score_pr_dr(&c, &s, &half).unwrap().0, 2.0 * 12.0);
    }

    #[test]
    fn pl_and_tf() {
        let g = grid();
        let mk = |id, cat, d: f64| Poi {
            id,
            location: g.unproject(XY::new(d, 0.0)),
            name: String::new(),
            address: String::new(),
            category: cat,
            raw_category: String::new(),
        };
        let pois = vec![
            mk(0, PoiCategory::Living, 0.0),
            mk(1, PoiCategory::Traffic, 100.0),
            mk(2, PoiCategory::Traffic, 200.0),
            mk(3, PoiCategory::Entertainment, 300.0),
            mk(4, PoiCategory::Company, 900.0),
        ];
        let idx = PoiIndex::new(pois, g).unwrap();
        let p = params(1);
        let c = cand(0, g.unproject(XY::new(0.0, 0.0)));
        assert_eq!(score_pl(&c, &idx, &p).unwrap(), 0.5);
        assert_eq!(score_tf(&c, &idx, &p).unwrap(), 0.5);
        let far = cand(1, g.unproject(XY::new(-5000.0, 0.0)));
        assert_eq!(score_pl(&far, &idx, &p).unwrap(), 0.0);
        assert_eq!(score_tf(&far, &idx, &p).unwrap(), 0.0);
    }

    fn with_raw(id: u32, raw: [f64; 6]) -> CandidateScore {
        CandidateScore {
            candidate: cand(id, LonLat::new(114.0, 22.5)),
            raw: Scores::from_array(raw),
            normalized: Scores::default(),
            n: 0,
            nd: 0,
            vacant_samples: 0,
            pois_in_range: 0,
        }
    }

    #[test]
    fn normalization_rules() {
        let s = normalize(vec![
            with_raw(0, [0.2; 6]),
            with_raw(1, [0.5; 6]),
            with_raw(2, [0.8; 6]),
        ])
        .unwrap();
        let ad: Vec<f64> = s.iter().map(|x| x.normalized.ad).collect();
        assert!(
            (ad[0] - 0.0).abs() < 1e-12
                && (ad[1] - 0.5).abs() < 1e-12
                && (ad[2] - 1.0).abs() < 1e-12
        );
        let one = normalize(vec![with_raw(0, [3.0; 6])]).unwrap();
        assert_eq!(one[0].normalized.to_array(), [0.5; 6]);
        assert!(matches!(normalize(vec![]), Err(ScoringError::EmptyInput)));
    }

    #[test]
    fn rank_ties_and_order() {
        let s = normalize(vec![
            with_raw(3, [1.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
            with_raw(1, [2.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
            with_raw(2, [1.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
        ])
        .unwrap();
        let ids = |v: Vec<CandidateScore>| v.iter().map(|x| x.candidate.id).collect::<Vec<_>>();
        assert_eq!(ids(rank(s.clone(), Criterion::AD, true)), vec![1, 2, 3]);
        assert_eq!(ids(rank(s.clone(), Criterion::AD, false)), vec![2, 3, 1]);
        assert_eq!(ids(rank(s, Criterion::AS, true)), vec![1, 2, 3]);
        assert!(matches!(
            "XX".parse::<Criterion>(),
            Err(ScoringError::InvalidCriterion(_))
        ));
        assert_eq!("pr".parse::<Criterion>().unwrap(), Criterion::PR);
    }

    #[test]
    fn violin_stats() {
        let s = normalize(vec![
            with_raw(0, [0.0; 6]),
            with_raw(1, [0.5; 6]),
            with_raw(2, [1.0; 6]),
        ])
        .unwrap();
        let v = violin(&s).unwrap();
        let ad = &v[&Criterion::AD];
        assert_eq!((ad.min, ad.median, ad.max), (0.0, 0.5, 1.0));
        assert_eq!((ad.q1, ad.q3), (0.25, 0.75));
        assert_eq!(ad.histogram.iter().sum::<u64>(), 3);
        assert_eq!(ad.histogram[19], 1);
        assert_eq!(ad.histogram[10], 1);
        let same = violin(&normalize(vec![with_raw(0, [1.0; 6]), with_raw(1, [1.0; 6])]).unwrap())
            .unwrap();
        let x = &same[&Criterion::PR];
        assert!(x.min == x.q1 && x.q1 == x.median && x.median == x.q3 && x.q3 == x.max);
        assert!(violin(&[]).is_err());
    }

    #[test]
    fn region_evaluation() {
        let g = grid();
        let poi = Poi {
            id: 7,
            location: g.origin,
            name: "stop".into(),
            address: String::new(),
            category: PoiCategory::Traffic,
            raw_category: "bus_station".into(),
        };
        let s = store(vec![], vec![], vec![poi]);
        let cell = g.to_hex(g.origin).unwrap();
        let region = Region::new([cell]).unwrap();
        let p = params(2);
        let ev = evaluate_region(&s, &region, &p, &[]).unwrap();
        assert_eq!(ev.candidates.len(), 1);
        assert_eq!(ev.candidates[0].normalized.to_array(), [0.5; 6]);
        let extra = [(g.unproject(XY::new(100.0, 0.0)), "mine".to_string())];
        let ev2 = evaluate_region(&s, &region, &p, &extra).unwrap();
        assert_eq!(ev2.candidates.len(), 2);
        assert_eq!(ev2.candidates[1].candidate.id, 8);
        assert_eq!(
            ev2.candidates[1].candidate.source,
            CandidateSource::UserAdded
        );
        let empty =
            evaluate_region(&s, &Region::new([HexIndex::new(60, 60)]).unwrap(), &p, &[]).unwrap();
        assert!(empty.candidates.is_empty() && empty.violin.is_none());
        let outside = [(LonLat::new(10.0, 10.0), String::new())];
        assert!(matches!(
            evaluate_region(&s, &region, &p, &outside),
            Err(ScoringError::OutsideArea { .. })
        ));
    }

    #[test]
    fn params_validation() {
        assert!(matches!(
            ScoreParams::for_date(&clock(), day(), 0.0, 8, 10),
            Err(ScoringError::InvalidRadius(_))
        ));
        assert!(matches!(
            ScoreParams::for_date(&clock(), day(), 500.0, 10, 10),
            Err(ScoringError::EmptyWindow)
        ));
        let p = params(2);
        assert_eq!((p.l_km(), p.t_h()), (0.5, 2.0));
    }

    proptest! {
        #[test]
        fn normalized_in_unit_interval(raws in prop::collection::vec(prop::array::uniform6(-1e3f64..1e3), 1..30)) {
            let scores: Vec<_> = raws.iter().enumerate().map(|(i, r)| with_raw(i as u32, *r)).collect();
            let n = normalize(scores.clone()).unwrap();
            for c in Criterion::ALL {
                let vals: Vec<f64> = n.iter().map(|s| s.normalized.get(c)).collect();
                prop_assert!(vals.iter().all(|v| (0.0..=1.0).contains(v)));
                let distinct = raws.iter().any(|r| r[c.index()] != raws[0][c.index()]);
                if distinct {
                    prop_assert_eq!(vals.iter().cloned().fold(f64::INFINITY, f64::min), 0.0);
                    prop_assert_eq!(vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max), 1.0);
                    let arg = |f: &dyn Fn(&CandidateScore) -> f64| {
                        n.iter().max_by(|a, b| f(a).total_cmp(&f(b)).then(b.candidate.id.cmp(&a.candidate.id))).unwrap().candidate.id
                    };
                    prop_assert_eq!(arg(&|s| s.raw.get(c)), arg(&|s| s.normalized.get(c)));
                }
                let ranked = rank(n.clone(), c, true);
                let mut ids: Vec<u32> = ranked.iter().map(|s| s.candidate.id).collect();
                ids.sort();
                prop_assert_eq!(ids, (0..raws.len() as u32).collect::<Vec<_>>());
            }
        }

        #[test]
        fn ad_is_bounded_and_monotone(ds in prop::collection::vec(0.0f64..490.0, 1..12), k in 0usize..12, shrink in 0.0f64..1.0) {
            let g = grid();
            let t0 = clock().day_start(day()) + 9 * 3600;
            let mk = |ds: &[f64]| store(
                ds.iter().enumerate().map(|(i, d)| pickup(&g, i as u32, t0, g.unproject(XY::new(*d, 0.0)))).collect(),
                vec![], vec![]);
            let c = cand(0, g.origin);
            let p = params(2);
            let a = score_ad(&c, &mk(&ds), &p).unwrap();
            prop_assert!((0.0..=1.0).contains(&a));
            let mut closer = ds.clone();
            let k = k % ds.len();
            closer[k] *= shrink;
            let b = score_ad(&c, &mk(&closer), &p).unwrap();
            prop_assert!(b >= a - 1e-12);
        }
    }
}
