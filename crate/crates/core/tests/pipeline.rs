use std::collections::BTreeMap;

use hexpick_core::aggregate;
use hexpick_core::config::Config;
use hexpick_core::ingest::{ingest_dir, RejectReason};
use hexpick_core::poi::{load_pois, PoiCategory};
use hexpick_core::store::{Region, Store, TripRole};
use hexpick_core::synth::{read_truth, synth, SynthPaths, SynthSpec};

fn spec() -> SynthSpec {
    SynthSpec {
        days: 3,
        taxis: 40,
        trips_per_day: 800,
        poi_count: 5000,
        shards: 2,
        short_trip_rate: 0.03,
        short_distance_rate: 0.03,
        long_trip_rate: 0.02,
        open_run_rate: 0.3,
        ..SynthSpec::default()
    }
}

type Key = (u32, i64, i64);

#[test]
fn ingest_recovers_planted_trips() {
    let dir = tempfile::tempdir().unwrap();
    let report = synth(&spec(), dir.path()).unwrap();
    let paths = SynthPaths::new(dir.path());
    let cfg = Config::load(&paths.config).unwrap();
    let grid = cfg.grid().unwrap();
    let (pois, poi_report) = load_pois(&paths.pois, &paths.category_map, &grid).unwrap();
    assert_eq!(poi_report.loaded, 5000);
    let out = ingest_dir(
        &paths.gps_dir,
        pois,
        &cfg.rules().unwrap(),
        &grid,
        cfg.clock(),
    )
    .unwrap();
    assert_eq!(out.report.records_read, report.records);
    assert_eq!(out.report.dropped.dropped(), 0);

    let truth = read_truth(&paths.truth).unwrap();
    let mut kept: BTreeMap<Key, _> = BTreeMap::new();
    let mut excluded: BTreeMap<Key, RejectReason> = BTreeMap::new();
    for t in &truth {
        match t.status {
            None => {
                kept.insert((t.taxi_id, t.stime, t.etime), (t.slocation, t.elocation));
            }
            Some(r) => {
                excluded.insert((t.taxi_id, t.stime, t.etime), r);
            }
        }
    }
    assert!(excluded.values().any(|r| *r == RejectReason::LongTrip));
    assert!(excluded.values().any(|r| *r == RejectReason::ShortDistance));

    let mut got = BTreeMap::new();
    for d in out.store.dates() {
        for t in out.store.trips_on(d, TripRole::Pickup) {
            got.insert((t.taxi_id, t.stime, t.etime), (t.slocation, t.elocation));
            let brute = out
                .store
                .pois()
                .pois()
                .iter()
                .min_by(|a, b| {
                    let da = grid.distance_m(a.location, t.slocation).unwrap();
                    let db = grid.distance_m(b.location, t.slocation).unwrap();
                    da.total_cmp(&db).then(a.id.cmp(&b.id))
                })
                .unwrap();
            assert_eq!(brute.category, t.c_o);
        }
    }
    assert_eq!(got, kept);
    let rejected: BTreeMap<Key, RejectReason> = out
        .rejected
        .iter()
        .map(|r| ((r.taxi_id, r.stime, r.etime), r.reason))
        .collect();
    assert_eq!(rejected, excluded);

    // Conservation on the ingested fixture.
    let all = Region::covering(&grid);
    for d in out.store.dates() {
        let total = aggregate::calendar(&out.store, d, d).unwrap()[0].total_trips;
        let day = aggregate::day_summary(&out.store, None, d);
        let heat: u64 = aggregate::heatmap(&out.store, d)
            .iter()
            .map(|c| c.pickups)
            .sum();
        let bees = aggregate::beeswarm(&out.store, &all, d, &PoiCategory::ALL).unwrap();
        let circles = |side| {
            bees.circles
                .iter()
                .filter(|c| c.side == side)
                .map(|c| c.count)
                .sum::<u64>()
        };
        assert_eq!(
            (day.total, heat, circles(TripRole::Pickup)),
            (total, total, total)
        );
        let drops = out.store.trips_on(d, TripRole::Dropoff).len() as u64;
        assert_eq!(circles(TripRole::Dropoff), drops);
    }

    // Idempotent store output.
    let s1 = tempfile::tempdir().unwrap();
    out.store.write(s1.path()).unwrap();
    let reopened = Store::open(s1.path()).unwrap();
    assert_eq!(reopened.manifest(), out.store.manifest());
}
