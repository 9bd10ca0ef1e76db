//! Prints a Markdown API reference whose example payloads come from a small
//! synthetic fixture served through the real router.
//!
//! cargo run -p hexpick-api --example api_reference > docs/api.md

use axum::body::Body;
use axum::http::Request;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

use hexpick_api::{router, AppState, ErrorCode, SESSION_HEADER};
use hexpick_core::aggregate;
use hexpick_core::config::Config;
use hexpick_core::ingest::ingest_dir;
use hexpick_core::poi::load_pois;
use hexpick_core::synth::{synth, SynthPaths, SynthSpec};

/// Keeps the first two items of every array.
fn abridge(v: &mut Value) {
    match v {
        Value::Array(items) => {
            let n = items.len();
            items.truncate(2);
            items.iter_mut().for_each(abridge);
            if n > 2 {
                items.push(Value::String(format!("... {} more", n - 2)));
            }
        }
        Value::Object(map) => map.values_mut().for_each(abridge),
        _ => {}
    }
}

struct Endpoint {
    title: &'static str,
    notes: &'static str,
    method: &'static str,
    uri: String,
    body: Option<Value>,
}

#[tokio::main]
async fn main() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        days: 2,
        taxis: 30,
        trips_per_day: 600,
        poi_count: 2000,
        shards: 1,
        ..SynthSpec::default()
    };
    synth(&spec, dir.path()).unwrap();
    let paths = SynthPaths::new(dir.path());
    let cfg = Config::load(&paths.config).unwrap();
    let grid = cfg.grid().unwrap();
    let (pois, _) = load_pois(&paths.pois, &paths.category_map, &grid).unwrap();
    let store = ingest_dir(
        &paths.gps_dir,
        pois,
        &cfg.rules().unwrap(),
        &grid,
        cfg.clock(),
    )
    .unwrap()
    .store;

    let date = store.date_range().unwrap().0;
    let mut heat = aggregate::heatmap(&store, date);
    heat.sort_by(|a, b| b.pickups.cmp(&a.pickups).then(a.hex.cmp(&b.hex)));
    let cells = |n: usize| {
        heat.iter()
            .take(n)
            .map(|c| c.hex.to_string())
            .collect::<Vec<_>>()
            .join(",")
    };
    let (r3, r6) = (cells(3), cells(6));
    let c = store.grid().hex_center(heat[0].hex);
    let tri = serde_json::json!({ "polygon": [
        { "lon": c.lon - 0.0004, "lat": c.lat - 0.0003 },
        { "lon": c.lon + 0.0004, "lat": c.lat - 0.0003 },
        { "lon": c.lon, "lat": c.lat + 0.0004 },
    ]});

    let endpoints = vec![
        Endpoint { title: "Store metadata", notes: "Date range, grid and record counts.", method: "GET", uri: "/api/meta".into(), body: None },
        Endpoint {
            title: "Calendar",
            notes: "Daily pick-up totals for `from..=to` (ISO dates). `from > to` is `invalid_range`.",
            method: "GET",
            uri: format!("/api/calendar?from={date}&to={}", date.succ()),
            body: None,
        },
        Endpoint {
            title: "Resolve a lasso",
            notes: "Cells whose centers lie inside the polygon. Fewer than 3 vertices or a vertex outside WGS84 is `invalid_polygon`.",
            method: "POST",
            uri: "/api/region/resolve".into(),
            body: Some(tri),
        },
        Endpoint {
            title: "Hourly series",
            notes: "24 hourly pick-up counts and peak hours (count above the daily mean). `region` is optional.",
            method: "GET",
            uri: format!("/api/temporal?date={date}&region={r3}"),
            body: None,
        },
        Endpoint { title: "Heatmap", notes: "Pick-ups per cell.", method: "GET", uri: format!("/api/heatmap?date={date}"), body: None },
        Endpoint {
            title: "Cell glyphs",
            notes: "Per cell: pick-up/drop-off counts and 8 flow-direction sectors per side (sector 0 is centred on north, clockwise).",
            method: "GET",
            uri: format!("/api/glyphs?date={date}&cells={r3}"),
            body: None,
        },
        Endpoint {
            title: "POI donuts",
            notes: "POIs inside `bbox=minlon,minlat,maxlon,maxlat` with pick-ups/drop-offs within `radius` meters (default 200).",
            method: "GET",
            uri: format!("/api/pois?bbox={},{},{},{}&date={date}&radius=200", c.lon - 0.01, c.lat - 0.01, c.lon + 0.01, c.lat + 0.01),
            body: None,
        },
        Endpoint {
            title: "Region comparison",
            notes: "Glyph, beeswarm matrix and stacked bars for two regions. `filter` is a comma list of categories (default all).",
            method: "GET",
            uri: format!("/api/compare?regionA={r3}&regionB={r6}&date={date}&filter=living,traffic"),
            body: None,
        },
        Endpoint {
            title: "Candidate ranking",
            notes: "Scores for every POI in the region plus the session's points. `D` meters (default 500), `window=H-H` local hours (default 0-24), `by` criterion (default AD), `desc` (default true).",
            method: "GET",
            uri: format!("/api/rank?region={r3}&date={date}&D=500&window=7-10&by=AD"),
            body: None,
        },
        Endpoint {
            title: "Add a candidate",
            notes: "Requires the `x-session-token` header. Appends the point to the session and returns the re-ranked list; query parameters as for ranking.",
            method: "POST",
            uri: format!("/api/candidates?region={r3}&date={date}&window=7-10"),
            body: Some(serde_json::json!({ "lon": c.lon, "lat": c.lat, "label": "new stand" })),
        },
        Endpoint {
            title: "Error body",
            notes: "Every failure returns this shape.",
            method: "GET",
            uri: format!("/api/rank?region={r3}&date={date}&by=XX"),
            body: None,
        },
    ];

    let app = router(AppState::new(store));
    println!("# HTTP API\n");
    println!("All responses are JSON. Regions are comma-separated `q:r` axial cell ids. Example payloads below come from a");
    println!("small synthetic store; arrays are cut to two items.\n");
    println!("| code | status |\n|---|---|");
    for code in ErrorCode::ALL {
        println!(
            "| `{}` | {} |",
            serde_json::to_value(code).unwrap().as_str().unwrap(),
            code.status().as_u16()
        );
    }
    for e in endpoints {
        let mut req = Request::builder()
            .method(e.method)
            .uri(&e.uri)
            .header(SESSION_HEADER, "docs");
        if e.body.is_some() {
            req = req.header("content-type", "application/json");
        }
        let req = req
            .body(
                e.body
                    .as_ref()
                    .map_or(Body::empty(), |b| Body::from(b.to_string())),
            )
            .unwrap();
        let resp = app.clone().oneshot(req).await.unwrap();
        let status = resp.status().as_u16();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        let mut v: Value = serde_json::from_slice(&bytes).unwrap();
        abridge(&mut v);
        println!(
            "\n## {}\n\n{}\n\n```\n{} {}\n```",
            e.title, e.notes, e.method, e.uri
        );
        if let Some(b) = &e.body {
            println!(
                "\nRequest body:\n\n```json\n{}\n```",
                serde_json::to_string_pretty(b).unwrap()
            );
        }
        println!(
            "\nResponse ({status}):\n\n```json\n{}\n```",
            serde_json::to_string_pretty(&v).unwrap()
        );
    }
}
