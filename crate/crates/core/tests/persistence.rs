use chrono::{Duration, TimeZone, Utc};
use serde_json::Map;

use castorlite_core::forecast::NewForecast;
use castorlite_core::registry::{Manifest, ManifestEntry, VersionSelector};
use castorlite_core::semantic::{ContextFilter, NewEntity};
use castorlite_core::time::{DataPoint, Timestamp};
use castorlite_core::{ContextKey, Error, Platform, PlatformOptions};

fn t0() -> Timestamp {
    Utc.with_ymd_and_hms(2019, 3, 1, 0, 0, 0).unwrap()
}

fn options() -> PlatformOptions {
    let mut manifest = Manifest::default();
    manifest.insert(
        "d",
        "1",
        ManifestEntry {
            command: "true".into(),
            args: vec![],
        },
    );
    PlatformOptions {
        manifest,
        ..Default::default()
    }
}

const DEPLOYMENT: &str = r#"{
    "context": {"entity": "S1", "signal": "LOAD"},
    "model_name": "m", "dist_name": "d", "dist_ver": "1", "module": "m",
    "scoring_deployment": {"time": "2019-03-01T00:00:00+00:00", "repeatEvery": "1_hours"}
}"#;

#[test]
fn state_survives_reopen() {
    let dir = tempfile::tempdir().unwrap();
    let ctx = ContextKey::new("S1", "LOAD");
    let (model, series) = {
        let p = Platform::open(dir.path(), options()).unwrap();
        p.semantic
            .register_entity(NewEntity::new("F1", "FEEDER"))
            .unwrap();
        p.semantic
            .register_entity(NewEntity::new("S1", "SUBSTATION").at(34.9, 33.6))
            .unwrap();
        p.semantic.register_signal("LOAD", "kW", "power").unwrap();
        p.semantic.add_topology_edge("F1", "S1", "feeds").unwrap();
        let series = p.semantic.bind_timeseries("S1", "LOAD").unwrap();
        let points: Vec<DataPoint> = (0..48)
            .map(|h| DataPoint::new(t0() + Duration::hours(h), h as f64))
            .collect();
        p.timeseries.ingest(series, &points).unwrap();
        // overwrite one reading; the later value must win after replay
        p.timeseries
            .ingest(series, &[DataPoint::new(t0(), -1.0)])
            .unwrap();
        let model = p.registry.register_deployment_json(DEPLOYMENT).unwrap();
        p.registry
            .save_model_version(model, b"first".to_vec(), Map::new())
            .unwrap();
        p.registry
            .save_model_version(model, b"second".to_vec(), Map::new())
            .unwrap();
        p.forecasts
            .save_forecast(NewForecast {
                model_id: model,
                model_version: Some(2),
                issued_at: t0(),
                points: vec![DataPoint::new(t0() + Duration::hours(1), 5.0)],
            })
            .unwrap();
        assert_eq!(p.scheduler.tick(t0() + Duration::minutes(30)).len(), 1);
        (model, series)
    };

    let p = Platform::open(dir.path(), options()).unwrap();
    assert_eq!(p.semantic.resolve_context(&ctx).unwrap().series, series);
    let under = p.semantic.query_contexts(&ContextFilter {
        under_entity: Some("F1".into()),
        ..Default::default()
    });
    assert_eq!(under.len(), 1);
    assert_eq!(p.semantic.entity("S1").unwrap().coordinates(), Some((34.9, 33.6)));
    assert_eq!(p.timeseries.point_count(series), 48);
    assert_eq!(p.timeseries.all_points(series)[0].value, -1.0);
    let latest = p
        .registry
        .get_model_version(model, VersionSelector::Latest)
        .unwrap();
    assert_eq!((latest.version, latest.blob.as_slice()), (2, &b"second"[..]));
    assert_eq!(p.forecasts.total_rows(), 1);
    // the ledger remembers the 00:00 firing
    assert!(p.scheduler.tick(t0() + Duration::minutes(45)).is_empty());
    assert_eq!(p.scheduler.tick(t0() + Duration::minutes(60)).len(), 1);
    // a re-deployment gets a fresh id
    assert_ne!(p.registry.register_deployment_json(DEPLOYMENT).unwrap(), model);
}

#[test]
fn second_open_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let first = Platform::open(dir.path(), options()).unwrap();
    match Platform::open(dir.path(), options()) {
        Err(Error::BadConfig { field, .. }) => assert_eq!(field, "data_dir"),
        Err(other) => panic!("unexpected error {other}"),
        Ok(_) => panic!("second open succeeded"),
    }
    drop(first);
    Platform::open(dir.path(), options()).unwrap();
}
