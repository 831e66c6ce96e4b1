//! Property tests against brute-force oracles.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};

use chrono::{Duration, TimeZone, Utc};
use proptest::prelude::*;
use serde_json::{json, Map};

use castorlite_core::forecast::{mape, HorizonPolicy, NewForecast};
use castorlite_core::registry::{
    DeploymentConfig, Manifest, ManifestEntry, ScheduleSpec, VersionSelector,
};
use castorlite_core::scheduler::{latest_due, Task};
use castorlite_core::semantic::{ContextFilter, NewEntity};
use castorlite_core::time::{DataPoint, FrequencySpec, Timestamp};
use castorlite_core::timeseries::{
    align, lag_column_name, lagged_features, resample_integrate, Aggregation, TimeSeriesWindow,
};
use castorlite_core::{ContextKey, ModelId, Platform, PlatformOptions};

fn t0() -> Timestamp {
    Utc.with_ymd_and_hms(2019, 3, 1, 0, 0, 0).unwrap()
}

fn secs(s: i64) -> Timestamp {
    t0() + Duration::seconds(s)
}

fn platform() -> Platform {
    let mut manifest = Manifest::default();
    manifest.insert(
        "d",
        "1",
        ManifestEntry {
            command: "true".into(),
            args: vec![],
        },
    );
    Platform::in_memory(PlatformOptions {
        manifest,
        ..Default::default()
    })
    .unwrap()
}

fn with_context(p: &Platform) -> ContextKey {
    p.semantic.register_entity(NewEntity::new("S1", "SUBSTATION")).unwrap();
    p.semantic.register_signal("LOAD", "kW", "power").unwrap();
    p.semantic.bind_timeseries("S1", "LOAD").unwrap();
    ContextKey::new("S1", "LOAD")
}

fn deploy(p: &Platform, name: &str, score_every: Option<&str>, train_every: Option<&str>) -> ModelId {
    let schedule = |every: Option<&str>| {
        every.map(|e| ScheduleSpec {
            start_time: t0(),
            repeat_every: Some(e.parse().unwrap()),
        })
    };
    p.registry
        .register_deployment(DeploymentConfig {
            context: ContextKey::new("S1", "LOAD"),
            model_name: name.into(),
            dist_name: "d".into(),
            dist_ver: "1".into(),
            module: "m".into(),
            training_schedule: schedule(train_every),
            scoring_schedule: schedule(score_every).or(Some(ScheduleSpec {
                start_time: t0(),
                repeat_every: None,
            })),
            user_parameters: Map::new(),
        })
        .unwrap()
}

/// Distinct second offsets, sorted, each with a value.
fn irregular(max_len: usize, span: i64) -> impl Strategy<Value = Vec<(i64, f64)>> {
    prop::collection::btree_map(0..span, 0.1f64..100.0, 1..max_len)
        .prop_map(|m| m.into_iter().collect())
}

fn window_of(raw: &[(i64, f64)]) -> TimeSeriesWindow {
    let points: Vec<DataPoint> = raw.iter().map(|&(s, v)| DataPoint::new(secs(s), v)).collect();
    let end = points.last().unwrap().timestamp + Duration::seconds(1);
    TimeSeriesWindow::from_points(secs(0), end, &points)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn query_contexts_matches_brute_force(
        kinds in prop::collection::vec(0..2usize, 2..8),
        parents in prop::collection::vec(any::<prop::sample::Index>(), 8),
        link in prop::collection::vec(any::<bool>(), 8),
        bound in prop::collection::vec((any::<bool>(), any::<bool>()), 8),
        kind_filter in prop::option::of(0..2usize),
        signal_filter in prop::option::of(0..2usize),
        under in prop::option::of(any::<prop::sample::Index>()),
    ) {
        let kind_names = ["FEEDER", "PROSUMER"];
        let signal_names = ["LOAD", "PV"];
        let p = platform();
        for s in signal_names {
            p.semantic.register_signal(s, "kW", "power").unwrap();
        }
        let n = kinds.len();
        let name = |i: usize| format!("E{i}");
        for (i, k) in kinds.iter().enumerate() {
            p.semantic.register_entity(NewEntity::new(name(i), kind_names[*k])).unwrap();
        }
        // edges only from lower to higher index, so the graph stays acyclic
        let mut children: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for child in 1..n {
            if link[child] {
                let parent = parents[child].index(child);
                p.semantic.add_topology_edge(&name(parent), &name(child), "feeds").unwrap();
                children.entry(parent).or_default().push(child);
            }
        }
        let mut pairs = Vec::new();
        for (i, pair) in bound.iter().enumerate().take(n) {
            for (s, on) in [pair.0, pair.1].into_iter().enumerate() {
                if on {
                    p.semantic.bind_timeseries(&name(i), signal_names[s]).unwrap();
                    pairs.push((i, s));
                }
            }
        }
        let root = under.map(|ix| ix.index(n));
        let descendants: HashSet<usize> = match root {
            None => HashSet::new(),
            Some(r) => {
                let mut seen = HashSet::new();
                let mut queue = VecDeque::from([r]);
                while let Some(x) = queue.pop_front() {
                    for c in children.get(&x).into_iter().flatten() {
                        if seen.insert(*c) {
                            queue.push_back(*c);
                        }
                    }
                }
                seen
            }
        };
        let expected: BTreeSet<ContextKey> = pairs
            .iter()
            .filter(|(i, s)| {
                kind_filter.is_none_or(|k| kinds[*i] == k)
                    && signal_filter.is_none_or(|f| *s == f)
                    && (root.is_none() || descendants.contains(i))
            })
            .map(|(i, s)| ContextKey::new(name(*i), signal_names[*s]))
            .collect();
        let filter = ContextFilter {
            entity_kind: kind_filter.map(|k| kind_names[k].to_string()),
            signal_name: signal_filter.map(|s| signal_names[s].to_string()),
            under_entity: root.map(name),
        };
        let got: BTreeSet<ContextKey> = p
            .semantic
            .query_contexts(&filter)
            .into_iter()
            .map(|b| b.context.key())
            .collect();
        prop_assert_eq!(got, expected);
    }

    #[test]
    fn align_sum_conserves_mass(raw in irregular(60, 7200), minutes in 1u32..90) {
        let w = window_of(&raw);
        let f = FrequencySpec::minutes(minutes);
        let summed = align(&w, f, Aggregation::Sum);
        let total: f64 = raw.iter().map(|(_, v)| v).sum();
        let aligned: f64 = summed.points.iter().map(|p| p.value).sum();
        prop_assert!((total - aligned).abs() <= 1e-9 * total.max(1.0));
        let buckets: BTreeSet<Timestamp> = raw.iter().map(|(s, _)| f.bucket_start(secs(*s))).collect();
        prop_assert_eq!(summed.points.iter().map(|p| p.timestamp).collect::<BTreeSet<_>>(), buckets);
        let mean = align(&w, f, Aggregation::Mean);
        for (m, s) in mean.points.iter().zip(&summed.points) {
            let n = raw.iter().filter(|(t, _)| f.bucket_start(secs(*t)) == m.timestamp).count();
            prop_assert!((m.value * n as f64 - s.value).abs() <= 1e-9 * s.value.max(1.0));
        }
    }

    #[test]
    fn integrate_matches_second_sampling(raw in irregular(40, 5400), scale in 0.1f64..3.0) {
        let got = resample_integrate(&window_of(&raw), FrequencySpec::minutes(15), scale).unwrap();
        // zero-order hold, one sample per second, clipped at the sample's bucket end
        let mut oracle: BTreeMap<i64, f64> = BTreeMap::new();
        for (i, &(s, v)) in raw.iter().enumerate() {
            let bucket_end = (s.div_euclid(900) + 1) * 900;
            let until = raw.get(i + 1).map_or(bucket_end, |n| n.0.min(bucket_end));
            for _ in s..until {
                *oracle.entry(s.div_euclid(900) * 900).or_insert(0.0) += v;
            }
        }
        prop_assert_eq!(got.points.len(), oracle.len());
        for (p, (b, ws)) in got.points.iter().zip(oracle) {
            prop_assert_eq!(p.timestamp, secs(b));
            let expected = scale * ws / 3600.0;
            prop_assert!((p.value - expected).abs() <= 1e-9 * expected.abs().max(1e-12));
        }
    }

    #[test]
    fn lags_look_only_backwards(
        keep in prop::collection::vec(any::<bool>(), 4..60),
        lag_hours in prop::collection::btree_set(1i64..6, 1..3),
    ) {
        let values: BTreeMap<Timestamp, f64> = keep
            .iter()
            .enumerate()
            .filter(|(_, k)| **k)
            .map(|(i, _)| (t0() + Duration::hours(i as i64), i as f64))
            .collect();
        prop_assume!(values.len() >= 2);
        let points: Vec<DataPoint> = values.iter().map(|(t, v)| DataPoint::new(*t, *v)).collect();
        let w = TimeSeriesWindow::from_points(t0(), t0() + Duration::days(10), &points);
        let lags: Vec<Duration> = lag_hours.iter().map(|h| Duration::hours(*h)).collect();
        match lagged_features(&w, &lags) {
            Ok(m) => {
                let expected_rows: Vec<Timestamp> = values
                    .keys()
                    .filter(|t| lags.iter().all(|l| values.contains_key(&(**t - *l))))
                    .copied()
                    .collect();
                prop_assert_eq!(&m.timestamps, &expected_rows);
                for l in &lags {
                    let col = m.column(&lag_column_name(*l)).unwrap();
                    for (t, v) in m.timestamps.iter().zip(col) {
                        prop_assert!(*t - *l < *t);
                        prop_assert_eq!(*v, values[&(*t - *l)]);
                    }
                }
            }
            // a lag that is not a multiple of the smallest gap is refused
            Err(_) => {
                let step = values.keys().zip(values.keys().skip(1)).map(|(a, b)| *b - *a).min().unwrap();
                let step_h = step.num_hours();
                let gaps_ok = values.keys().zip(values.keys().skip(1)).all(|(a, b)| (*b - *a).num_hours() % step_h == 0);
                prop_assert!(!gaps_ok || lag_hours.iter().any(|h| h % step_h != 0));
            }
        }
    }

    #[test]
    fn freshest_issue_wins(
        issues in prop::collection::btree_map(0i64..48, prop::collection::btree_set(1i64..12, 1..6), 1..10),
    ) {
        let p = platform();
        let ctx = with_context(&p);
        let model = deploy(&p, "m", Some("1_hours"), None);
        let mut oracle: BTreeMap<Timestamp, (Timestamp, f64)> = BTreeMap::new();
        for (issue_h, horizons) in &issues {
            let issued = t0() + Duration::hours(*issue_h);
            let points: Vec<DataPoint> = horizons
                .iter()
                .map(|h| DataPoint::new(issued + Duration::hours(*h), (*issue_h * 100 + *h) as f64))
                .collect();
            for pt in &points {
                let e = oracle.entry(pt.timestamp).or_insert((issued, pt.value));
                if issued >= e.0 {
                    *e = (issued, pt.value);
                }
            }
            p.forecasts
                .save_forecast(NewForecast { model_id: model, model_version: None, issued_at: issued, points })
                .unwrap();
        }
        let served = p.forecasts.get_forecasts(&ctx, Timestamp::MIN_UTC, Timestamp::MAX_UTC, None).unwrap();
        let got: BTreeMap<Timestamp, (Timestamp, f64)> =
            served.iter().map(|r| (r.target_time, (r.issued_at, r.value))).collect();
        prop_assert_eq!(got, oracle);
    }

    #[test]
    fn horizon_slices_partition_rows(
        issues in prop::collection::btree_map(0i64..48, prop::collection::btree_set(1i64..12, 1..6), 1..10),
    ) {
        let p = platform();
        let ctx = with_context(&p);
        let model = deploy(&p, "m", Some("1_hours"), None);
        for (issue_h, horizons) in &issues {
            let issued = t0() + Duration::hours(*issue_h);
            let points = horizons.iter().map(|h| DataPoint::new(issued + Duration::hours(*h), 1.0)).collect();
            p.forecasts
                .save_forecast(NewForecast { model_id: model, model_version: None, issued_at: issued, points })
                .unwrap();
        }
        let total: usize = issues.values().map(|h| h.len()).sum();
        let mut seen = HashSet::new();
        for h in 1..12 {
            let slice = p.forecasts
                .get_by_horizon(&ctx, model, Duration::hours(h), Timestamp::MIN_UTC, Timestamp::MAX_UTC, HorizonPolicy::Exact)
                .unwrap();
            for r in slice.points {
                prop_assert_eq!(r.target_time - r.issued_at, Duration::hours(h));
                prop_assert!(seen.insert((r.issued_at, r.target_time)));
            }
        }
        prop_assert_eq!(seen.len(), total);
    }

    #[test]
    fn ticks_fire_each_occurrence_at_most_once(
        gaps in prop::collection::vec(1i64..400, 1..60),
    ) {
        let p = platform();
        with_context(&p);
        let model = deploy(&p, "m", Some("1_hours"), Some("1_days"));
        let deployment = p.registry.deployment(model).unwrap();
        let mut now = t0() - Duration::minutes(30);
        let mut fired = HashSet::new();
        let mut last_due: BTreeMap<Task, Timestamp> = BTreeMap::new();
        for g in gaps {
            now += Duration::minutes(g);
            for r in p.scheduler.tick(now) {
                let spec = match r.task {
                    Task::Score => deployment.config.scoring_schedule.as_ref().unwrap(),
                    Task::Train => deployment.config.training_schedule.as_ref().unwrap(),
                };
                prop_assert_eq!(Some(r.due_time), latest_due(spec, now));
                prop_assert!(fired.insert((r.task, r.due_time)));
                if let Some(prev) = last_due.insert(r.task, r.due_time) {
                    prop_assert!(prev < r.due_time);
                }
            }
            for (task, spec) in [
                (Task::Score, deployment.config.scoring_schedule.as_ref().unwrap()),
                (Task::Train, deployment.config.training_schedule.as_ref().unwrap()),
            ] {
                if let Some(due) = latest_due(spec, now) {
                    prop_assert!(fired.contains(&(task, due)));
                }
            }
        }
    }

    #[test]
    fn versions_count_up_from_one(n in 1usize..20) {
        let p = platform();
        with_context(&p);
        let model = deploy(&p, "m", Some("1_hours"), None);
        for i in 0..n {
            let v = p.registry.save_model_version(model, vec![i as u8], Map::new()).unwrap();
            prop_assert_eq!(v as usize, i + 1);
        }
        prop_assert_eq!(p.registry.latest_version_number(model).unwrap(), Some(n as u32));
        let latest = p.registry.get_model_version(model, VersionSelector::Latest).unwrap();
        prop_assert_eq!(latest.blob.clone(), vec![(n - 1) as u8]);
        prop_assert_eq!(p.registry.version_numbers(model).unwrap(), (1..=n as u32).collect::<Vec<_>>());
    }

    #[test]
    fn ingest_keeps_last_write_per_timestamp(
        batches in prop::collection::vec(prop::collection::vec((0i64..500, -50.0f64..50.0), 0..40), 1..5),
    ) {
        let p = platform();
        with_context(&p);
        let series = p.semantic.resolve_context(&ContextKey::new("S1", "LOAD")).unwrap().series;
        let mut oracle: BTreeMap<Timestamp, f64> = BTreeMap::new();
        for batch in &batches {
            let points: Vec<DataPoint> = batch.iter().map(|&(s, v)| DataPoint::new(secs(s * 60), v)).collect();
            for pt in &points {
                oracle.insert(pt.timestamp, pt.value);
            }
            prop_assert_eq!(p.timeseries.ingest(series, &points).unwrap(), points.len());
        }
        let stored: BTreeMap<Timestamp, f64> =
            p.timeseries.all_points(series).into_iter().map(|d| (d.timestamp, d.value)).collect();
        prop_assert_eq!(&stored, &oracle);
        prop_assert_eq!(p.timeseries.point_count(series), oracle.len());

        let stats = p.timeseries.ingestion_stats(None, FrequencySpec::hours(1));
        let mut recount: BTreeMap<Timestamp, u64> = BTreeMap::new();
        for t in oracle.keys() {
            *recount.entry(FrequencySpec::hours(1).bucket_start(*t)).or_insert(0) += 1;
        }
        prop_assert_eq!(stats.into_iter().collect::<BTreeMap<_, _>>(), recount);
    }

    #[test]
    fn mape_of_relative_errors(
        rows in prop::collection::vec((1.0f64..1000.0, -0.9f64..0.9, any::<bool>()), 1..50),
    ) {
        let actuals: Vec<f64> = rows.iter().map(|(a, _, neg)| if *neg { -a } else { *a }).collect();
        let predictions: Vec<f64> = rows.iter().zip(&actuals).map(|((_, r, _), a)| a * (1.0 + r)).collect();
        let expected = 100.0 * rows.iter().map(|(_, r, _)| r.abs()).sum::<f64>() / rows.len() as f64;
        let got = mape(&predictions, &actuals).unwrap();
        prop_assert!((got - expected).abs() <= 1e-9 * expected.max(1.0));
    }

    #[test]
    fn deployment_config_round_trips(
        name in "[A-Za-z][A-Za-z0-9_]{0,12}",
        hours in prop::option::of(1u32..48),
        weeks in prop::option::of(1u32..4),
        freq in 1u32..60,
    ) {
        let mut params = Map::new();
        params.insert("frequency".into(), json!(format!("{freq}T")));
        let config = DeploymentConfig {
            context: ContextKey::new("S1", "LOAD"),
            model_name: name,
            dist_name: "d".into(),
            dist_ver: "1".into(),
            module: "m".into(),
            training_schedule: weeks.map(|w| ScheduleSpec {
                start_time: t0(),
                repeat_every: Some(format!("{w}_week").parse().unwrap()),
            }),
            scoring_schedule: Some(ScheduleSpec {
                start_time: t0() + Duration::minutes(i64::from(freq)),
                repeat_every: hours.map(|h| format!("{h}_hours").parse().unwrap()),
            }),
            user_parameters: params,
        };
        let text = serde_json::to_string(&config).unwrap();
        prop_assert_eq!(DeploymentConfig::parse(&text).unwrap(), config);
    }

    #[test]
    fn frequency_text_round_trips(count in 1u32..500, unit in 0..3usize) {
        let spec = match unit {
            0 => FrequencySpec::minutes(count),
            1 => FrequencySpec::hours(count),
            _ => FrequencySpec::days(count),
        };
        let back: FrequencySpec = spec.to_string().parse().unwrap();
        prop_assert_eq!(back.duration(), spec.duration());
    }
}
