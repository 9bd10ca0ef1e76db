//! JSON-over-HTTP access to aggregates and scores of an opened store.
//!
//! Regions travel as comma-separated `q:r` cell ids; dates as `YYYY-MM-DD`;
//! score windows as whole local hours `H-H`.

mod error;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::{HeaderMap, Method, Uri};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::cors::{Any, CorsLayer};

use hexpick_core::aggregate::{
    self, BeeswarmMatrix, CalendarCell, CellGlyph, DaySummary, HeatCell, PoiDonut, RegionGlyph,
    StackedBars, DEFAULT_DONUT_RADIUS_M,
};
use hexpick_core::clock::DateKey;
use hexpick_core::geo::{BBox, GridConfig, HexIndex, LonLat};
use hexpick_core::poi::PoiCategory;
use hexpick_core::scoring::{
    self, CandidateScore, Criterion, ScoreParams, ViolinStats, DEFAULT_RADIUS_M,
};
use hexpick_core::store::{Region, Store};

pub use error::{ApiError, ErrorCode};

/// Header carrying the session token for user-added candidates.
pub const SESSION_HEADER: &str = "x-session-token";

type Extra = Vec<(LonLat, String)>;

#[derive(Clone)]
pub struct AppState {
    store: Arc<Store>,
    sessions: Arc<Mutex<HashMap<String, Extra>>>,
}

impl AppState {
    pub fn new(store: Store) -> Self {
        Self {
            store: Arc::new(store),
            sessions: Arc::default(),
        }
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    fn session_points(&self, token: Option<&str>) -> Extra {
        let Some(t) = token else { return Vec::new() };
        self.sessions
            .lock()
            .unwrap()
            .get(t)
            .cloned()
            .unwrap_or_default()
    }
}

pub fn router(state: AppState) -> Router {
    let cors = CorsLayer::new()
        .allow_origin(Any)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers(Any);
    Router::new()
        .route("/api/meta", get(meta))
        .route("/api/calendar", get(calendar))
        .route("/api/region/resolve", post(resolve))
        .route("/api/temporal", get(temporal))
        .route("/api/heatmap", get(heatmap))
        .route("/api/glyphs", get(glyphs))
        .route("/api/pois", get(pois))
        .route("/api/compare", get(compare))
        .route("/api/rank", get(rank))
        .route("/api/candidates", post(candidates))
        .fallback(not_found)
        .layer(cors)
        .with_state(state)
}

/// Serves until ctrl-c.
pub async fn serve(state: AppState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Query parameters as raw strings; parsing errors become `invalid_parameter`.
struct Params(HashMap<String, String>);

impl Params {
    fn from_uri(uri: &Uri) -> Result<Self, ApiError> {
        Query::<HashMap<String, String>>::try_from_uri(uri)
            .map(|q| Params(q.0))
            .map_err(|e| ApiError::param(e.body_text()))
    }

    fn opt(&self, key: &str) -> Option<&str> {
        self.0
            .get(key)
            .map(String::as_str)
            .filter(|s| !s.trim().is_empty())
    }

    fn req(&self, key: &str) -> Result<&str, ApiError> {
        self.opt(key)
            .ok_or_else(|| ApiError::param(format!("missing query parameter `{key}`")))
    }

    fn date(&self, key: &str) -> Result<DateKey, ApiError> {
        self.req(key)?
            .parse()
            .map_err(|e: String| ApiError::param(format!("`{key}`: {e}")))
    }

    fn region(&self, key: &str) -> Result<Region, ApiError> {
        self.req(key)?
            .parse::<Region>()
            .map_err(|e| ApiError::param(format!("`{key}`: {e}")))
    }

    fn f64_or(&self, key: &str, default: f64) -> Result<f64, ApiError> {
        self.opt(key).map_or(Ok(default), |s| {
            s.trim()
                .parse()
                .map_err(|_| ApiError::param(format!("`{key}` is not a number: {s:?}")))
        })
    }

    fn bool_or(&self, key: &str, default: bool) -> Result<bool, ApiError> {
        match self.opt(key) {
            None => Ok(default),
            Some("true" | "1") => Ok(true),
            Some("false" | "0") => Ok(false),
            Some(s) => Err(ApiError::param(format!(
                "`{key}` must be true or false, got {s:?}"
            ))),
        }
    }
}

/// Runs a store computation off the async workers.
async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(ErrorCode::StoreCorrupt, format!("query task failed: {e}")))?
}

async fn not_found(uri: Uri) -> ApiError {
    ApiError::new(ErrorCode::NotFound, format!("no route for {}", uri.path()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub first_date: Option<DateKey>,
    pub last_date: Option<DateKey>,
    pub grid: GridConfig,
    pub trip_count: u64,
    pub vacant_count: u64,
    pub poi_count: u64,
}

pub fn meta_of(store: &Store) -> Meta {
    let m = store.manifest();
    Meta {
        first_date: m.first_date,
        last_date: m.last_date,
        grid: m.grid,
        trip_count: m.trip_count,
        vacant_count: m.vacant_count,
        poi_count: m.poi_count,
    }
}

async fn meta(State(st): State<AppState>) -> Json<Meta> {
    Json(meta_of(st.store()))
}

async fn calendar(State(st): State<AppState>, uri: Uri) -> ApiResult<Vec<CalendarCell>> {
    let p = Params::from_uri(&uri)?;
    let (from, to) = (p.date("from")?, p.date("to")?);
    Ok(Json(aggregate::calendar(st.store(), from, to)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolveRequest {
    pub polygon: Vec<LonLat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolveResponse {
    pub cells: Vec<HexIndex>,
}

fn json_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::param(format!("request body: {e}")))
}

async fn resolve(State(st): State<AppState>, body: Bytes) -> ApiResult<ResolveResponse> {
    let req: ResolveRequest = json_body(&body)?;
    let cells = st
        .store()
        .grid()
        .hexes_in_polygon(&req.polygon)
        .map_err(|e| ApiError::new(ErrorCode::InvalidPolygon, e.to_string()))?;
    Ok(Json(ResolveResponse {
        cells: cells.into_iter().collect(),
    }))
}

async fn temporal(State(st): State<AppState>, uri: Uri) -> ApiResult<DaySummary> {
    let p = Params::from_uri(&uri)?;
    let date = p.date("date")?;
    let region = p.opt("region").map(|_| p.region("region")).transpose()?;
    blocking(move || Ok(aggregate::day_summary(st.store(), region.as_ref(), date)))
        .await
        .map(Json)
}

async fn heatmap(State(st): State<AppState>, uri: Uri) -> ApiResult<Vec<HeatCell>> {
    let date = Params::from_uri(&uri)?.date("date")?;
    blocking(move || Ok(aggregate::heatmap(st.store(), date)))
        .await
        .map(Json)
}

async fn glyphs(State(st): State<AppState>, uri: Uri) -> ApiResult<Vec<CellGlyph>> {
    let p = Params::from_uri(&uri)?;
    let (date, cells) = (p.date("date")?, p.region("cells")?);
    blocking(move || Ok(aggregate::cell_glyphs(st.store(), date, &cells)?))
        .await
        .map(Json)
}

/// Parses `minlon,minlat,maxlon,maxlat`.
pub fn parse_bbox(s: &str) -> Result<BBox, ApiError> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| {
            ApiError::param(format!(
                "`bbox` must be minlon,minlat,maxlon,maxlat, got {s:?}"
            ))
        })?;
    let [a, b, c, d] = v[..] else {
        return Err(ApiError::param(format!(
            "`bbox` needs 4 numbers, got {}",
            v.len()
        )));
    };
    Ok(BBox::new(LonLat::new(a, b), LonLat::new(c, d))?)
}

async fn pois(State(st): State<AppState>, uri: Uri) -> ApiResult<Vec<PoiDonut>> {
    let p = Params::from_uri(&uri)?;
    let bbox = parse_bbox(p.req("bbox")?)?;
    let date = p.date("date")?;
    let radius = p.f64_or("radius", DEFAULT_DONUT_RADIUS_M)?;
    blocking(move || Ok(aggregate::poi_donuts(st.store(), &bbox, date, radius)?))
        .await
        .map(Json)
}

/// One side of a comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionPanel {
    pub glyph: RegionGlyph,
    pub beeswarm: BeeswarmMatrix,
    pub stacked: StackedBars,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareResponse {
    pub date: DateKey,
    pub a: RegionPanel,
    pub b: RegionPanel,
}

pub fn region_panel(
    store: &Store,
    region: &Region,
    date: DateKey,
    filter: &[PoiCategory],
) -> Result<RegionPanel, ApiError> {
    Ok(RegionPanel {
        glyph: aggregate::region_glyph(store, region, date),
        beeswarm: aggregate::beeswarm(store, region, date, filter)?,
        stacked: aggregate::stacked_bars(store, region, date),
    })
}

fn parse_filter(s: Option<&str>) -> Result<Vec<PoiCategory>, ApiError> {
    match s {
        None => Ok(PoiCategory::ALL.to_vec()),
        Some(s) => s
            .split(',')
            .filter(|c| !c.trim().is_empty())
            .map(|c| {
                c.parse::<PoiCategory>()
                    .map_err(|e| ApiError::param(format!("`filter`: {e}")))
            })
            .collect(),
    }
}

async fn compare(State(st): State<AppState>, uri: Uri) -> ApiResult<CompareResponse> {
    let p = Params::from_uri(&uri)?;
    let (a, b) = (p.region("regionA")?, p.region("regionB")?);
    let date = p.date("date")?;
    let filter = parse_filter(p.opt("filter"))?;
    blocking(move || {
        Ok(CompareResponse {
            date,
            a: region_panel(st.store(), &a, date, &filter)?,
            b: region_panel(st.store(), &b, date, &filter)?,
        })
    })
    .await
    .map(Json)
}

/// Parses `H-H` into whole local hours.
pub fn parse_window(s: &str) -> Result<(u32, u32), ApiError> {
    let bad = || {
        ApiError::param(format!(
            "`window` must be H-H with 0 <= H < H <= 24, got {s:?}"
        ))
    };
    let (a, b) = s.trim().split_once('-').ok_or_else(bad)?;
    let (a, b): (u32, u32) = (
        a.trim().parse().map_err(|_| bad())?,
        b.trim().parse().map_err(|_| bad())?,
    );
    if a >= b || b > 24 {
        return Err(bad());
    }
    Ok((a, b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankResponse {
    pub by: Criterion,
    pub descending: bool,
    pub params: ScoreParams,
    pub candidates: Vec<CandidateScore>,
    pub violin: Option<ViolinStats>,
}

/// Parsed `/api/rank` query.
#[derive(Debug, Clone)]
pub struct RankQuery {
    pub region: Region,
    pub params: ScoreParams,
    pub by: Criterion,
    pub descending: bool,
}

impl RankQuery {
    fn parse(p: &Params, store: &Store) -> Result<Self, ApiError> {
        let region = p.region("region")?;
        let date = p.date("date")?;
        let radius = p.f64_or("D", DEFAULT_RADIUS_M)?;
        let (h0, h1) = p.opt("window").map_or(Ok((0, 24)), parse_window)?;
        let by = p.opt("by").unwrap_or("AD").parse::<Criterion>()?;
        let descending = p.bool_or("desc", true)?;
        let params = ScoreParams::for_date(&store.clock(), date, radius, h0, h1)?;
        Ok(Self {
            region,
            params,
            by,
            descending,
        })
    }
}

/// Scores, ranks and summarizes a region's candidates plus `extra` points.
pub fn rank_response(
    store: &Store,
    q: &RankQuery,
    extra: &[(LonLat, String)],
) -> Result<RankResponse, ApiError> {
    let ev = scoring::evaluate_region(store, &q.region, &q.params, extra)?;
    Ok(RankResponse {
        by: q.by,
        descending: q.descending,
        params: q.params,
        candidates: scoring::rank(ev.candidates, q.by, q.descending),
        violin: ev.violin,
    })
}

fn session_token(headers: &HeaderMap) -> Result<Option<String>, ApiError> {
    headers
        .get(SESSION_HEADER)
        .map(|v| {
            v.to_str()
                .ok()
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .ok_or_else(|| {
                    ApiError::param(format!("`{SESSION_HEADER}` header is empty or not ASCII"))
                })
        })
        .transpose()
}

async fn rank(State(st): State<AppState>, headers: HeaderMap, uri: Uri) -> ApiResult<RankResponse> {
    let p = Params::from_uri(&uri)?;
    let q = RankQuery::parse(&p, st.store())?;
    let extra = st.session_points(session_token(&headers)?.as_deref());
    blocking(move || rank_response(st.store(), &q, &extra))
        .await
        .map(Json)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRequest {
    pub lon: f64,
    pub lat: f64,
    #[serde(default)]
    pub label: String,
}

/// Appends a user point to the session and re-ranks the region with it.
async fn candidates(
    State(st): State<AppState>,
    headers: HeaderMap,
    uri: Uri,
    body: Bytes,
) -> ApiResult<RankResponse> {
    let token = session_token(&headers)?
        .ok_or_else(|| ApiError::param(format!("missing `{SESSION_HEADER}` header")))?;
    let p = Params::from_uri(&uri)?;
    let q = RankQuery::parse(&p, st.store())?;
    let req: CandidateRequest = json_body(&body)?;
    let point = LonLat::new(req.lon, req.lat);
    if !point.is_finite() || !st.store().grid().bbox.contains(&point) {
        return Err(ApiError::param(format!(
            "candidate ({}, {}) lies outside the study area",
            req.lon, req.lat
        )));
    }
    let extra = {
        let mut sessions = st.sessions.lock().unwrap();
        let list = sessions.entry(token).or_default();
        list.push((point, req.label));
        list.clone()
    };
    blocking(move || rank_response(st.store(), &q, &extra))
        .await
        .map(Json)
}
