//! Time-series ingestion, retrieval, alignment and feature engineering.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex, RwLock};

use chrono::{Datelike, Duration, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::journal::Journal;
use crate::semantic::{ContextKey, Entity, SemanticStore, SeriesId};
use crate::throttle::StoreThrottle;
use crate::time::{format_duration, format_ts, DataPoint, FrequencySpec, Timestamp};
use crate::weather::{WeatherData, WeatherProvider};

/// Points of one series in `[start, end)`, strictly increasing in time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesWindow {
    pub series: Option<SeriesId>,
    #[serde(with = "crate::time::rfc3339")]
    pub start: Timestamp,
    #[serde(with = "crate::time::rfc3339")]
    pub end: Timestamp,
    pub points: Vec<DataPoint>,
}

impl TimeSeriesWindow {
    /// Builds a window from arbitrary points, keeping those in range and sorting them.
    /// Later duplicates of a timestamp win.
    pub fn from_points(start: Timestamp, end: Timestamp, points: &[DataPoint]) -> Self {
        let deduped: BTreeMap<Timestamp, f64> = points
            .iter()
            .filter(|p| p.timestamp >= start && p.timestamp < end)
            .map(|p| (p.timestamp, p.value))
            .collect();
        Self {
            series: None,
            start,
            end,
            points: deduped.into_iter().map(|(t, v)| DataPoint::new(t, v)).collect(),
        }
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.value).collect()
    }

    pub fn timestamps(&self) -> Vec<Timestamp> {
        self.points.iter().map(|p| p.timestamp).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Mean,
    Sum,
    Last,
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Self::Mean),
            "sum" => Ok(Self::Sum),
            "last" => Ok(Self::Last),
            other => Err(Error::MalformedConfig {
                path: "aggregation".into(),
                message: format!("unknown aggregation `{other}`"),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureColumn {
    pub name: String,
    pub values: Vec<f64>,
}

/// Named feature columns over a shared timestamp index.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub timestamps: Vec<Timestamp>,
    pub columns: Vec<FeatureColumn>,
}

impl FeatureMatrix {
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.values.as_slice())
    }

    pub fn rows(&self) -> usize {
        self.timestamps.len()
    }
}

pub fn lag_column_name(lag: Duration) -> String {
    format!("lag_{}", format_duration(lag))
}

/// Buckets points onto the frequency grid; empty buckets are omitted.
pub fn align(
    window: &TimeSeriesWindow,
    frequency: FrequencySpec,
    aggregation: Aggregation,
) -> TimeSeriesWindow {
    let mut buckets: BTreeMap<Timestamp, (f64, usize, f64)> = BTreeMap::new();
    for p in &window.points {
        let slot = buckets
            .entry(frequency.bucket_start(p.timestamp))
            .or_insert((0.0, 0, 0.0));
        slot.0 += p.value;
        slot.1 += 1;
        slot.2 = p.value;
    }
    let points = buckets
        .into_iter()
        .map(|(t, (sum, n, last))| {
            let value = match aggregation {
                Aggregation::Mean => sum / n as f64,
                Aggregation::Sum => sum,
                Aggregation::Last => last,
            };
            DataPoint::new(t, value)
        })
        .collect();
    TimeSeriesWindow {
        series: window.series,
        start: frequency.bucket_start(window.start),
        end: window.end,
        points,
    }
}

/// Integrates an instantaneous signal into per-bucket energy.
///
/// Each sample holds `scale * value` until the next sample, clipped at the
/// end of its own bucket; durations are in hours, so kW in gives kWh out.
pub fn resample_integrate(
    window: &TimeSeriesWindow,
    frequency: FrequencySpec,
    scale: f64,
) -> Result<TimeSeriesWindow> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::NonPositiveScale(scale));
    }
    let step = frequency.duration();
    let mut buckets: BTreeMap<Timestamp, f64> = BTreeMap::new();
    for (i, p) in window.points.iter().enumerate() {
        let bucket = frequency.bucket_start(p.timestamp);
        let bucket_end = bucket + step;
        let next = window
            .points
            .get(i + 1)
            .map_or(bucket_end, |n| n.timestamp.min(bucket_end));
        // accumulate value x microseconds and convert to hours once per bucket
        let micros = (next - p.timestamp).num_microseconds().unwrap_or(0) as f64;
        *buckets.entry(bucket).or_insert(0.0) += p.value * micros;
    }
    Ok(TimeSeriesWindow {
        series: window.series,
        start: frequency.bucket_start(window.start),
        end: window.end,
        points: buckets
            .into_iter()
            .map(|(t, v)| DataPoint::new(t, scale * v / 3.6e9))
            .collect(),
    })
}

/// `lag_<k>` at row `t` holds the value at `t - k`; rows missing any lag are dropped.
pub fn lagged_features(window: &TimeSeriesWindow, lags: &[Duration]) -> Result<FeatureMatrix> {
    let by_time: HashMap<Timestamp, f64> =
        window.points.iter().map(|p| (p.timestamp, p.value)).collect();
    let gaps: Vec<Duration> = window
        .points
        .windows(2)
        .map(|w| w[1].timestamp - w[0].timestamp)
        .collect();
    if let Some(step) = gaps.iter().min().copied() {
        if step <= Duration::zero() {
            return Err(Error::UnalignedInput("points are not strictly increasing".into()));
        }
        let step_us = step.num_microseconds().unwrap_or(i64::MAX);
        if let Some(bad) = gaps
            .iter()
            .find(|g| g.num_microseconds().unwrap_or(1) % step_us != 0)
        {
            return Err(Error::UnalignedInput(format!(
                "gap {} is not a multiple of step {}",
                format_duration(*bad),
                format_duration(step)
            )));
        }
        if let Some(bad) = lags
            .iter()
            .find(|l| **l <= Duration::zero() || l.num_microseconds().unwrap_or(1) % step_us != 0)
        {
            return Err(Error::UnalignedInput(format!(
                "lag {} is not a positive multiple of step {}",
                format_duration(*bad),
                format_duration(step)
            )));
        }
    }
    let mut matrix = FeatureMatrix {
        timestamps: Vec::new(),
        columns: lags
            .iter()
            .map(|l| FeatureColumn {
                name: lag_column_name(*l),
                values: Vec::new(),
            })
            .collect(),
    };
    for p in &window.points {
        let row: Option<Vec<f64>> = lags
            .iter()
            .map(|l| by_time.get(&(p.timestamp - *l)).copied())
            .collect();
        if let Some(row) = row {
            matrix.timestamps.push(p.timestamp);
            for (col, v) in matrix.columns.iter_mut().zip(row) {
                col.values.push(v);
            }
        }
    }
    Ok(matrix)
}

/// Hour of day and day of week (Monday = 0), in UTC.
pub fn calendar_features(timestamps: &[Timestamp]) -> FeatureMatrix {
    FeatureMatrix {
        timestamps: timestamps.to_vec(),
        columns: vec![
            FeatureColumn {
                name: "hour_of_day".into(),
                values: timestamps.iter().map(|t| f64::from(t.hour())).collect(),
            },
            FeatureColumn {
                name: "day_of_week".into(),
                values: timestamps
                    .iter()
                    .map(|t| f64::from(t.weekday().num_days_from_monday()))
                    .collect(),
            },
        ],
    }
}

struct SeriesData {
    points: RwLock<BTreeMap<Timestamp, f64>>,
    journal: Mutex<Option<Journal<DataPoint>>>,
}

/// Stores series data with per-series locking; there is no lock across series.
pub struct TimeSeriesEngine {
    semantic: Arc<SemanticStore>,
    throttle: Arc<StoreThrottle>,
    weather: Option<Arc<dyn WeatherProvider>>,
    dir: Option<PathBuf>,
    series: RwLock<HashMap<SeriesId, Arc<SeriesData>>>,
}

impl TimeSeriesEngine {
    pub fn new(semantic: Arc<SemanticStore>, throttle: Arc<StoreThrottle>) -> Self {
        Self {
            semantic,
            throttle,
            weather: None,
            dir: None,
            series: RwLock::new(HashMap::new()),
        }
    }

    /// Opens persisted series under `dir`, one journal file per series.
    pub fn open(
        semantic: Arc<SemanticStore>,
        throttle: Arc<StoreThrottle>,
        dir: impl AsRef<Path>,
    ) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut series = HashMap::new();
        for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let path = entry.map_err(|e| Error::io(&dir, e))?.path();
            let Some(id) = path
                .file_stem()
                .and_then(|s| s.to_str())
                .and_then(|s| s.parse::<u64>().ok())
            else {
                continue;
            };
            let (journal, points) = Journal::<DataPoint>::open(&path)?;
            let map: BTreeMap<_, _> = points.into_iter().map(|p| (p.timestamp, p.value)).collect();
            series.insert(
                SeriesId(id),
                Arc::new(SeriesData {
                    points: RwLock::new(map),
                    journal: Mutex::new(Some(journal)),
                }),
            );
        }
        Ok(Self {
            semantic,
            throttle,
            weather: None,
            dir: Some(dir),
            series: RwLock::new(series),
        })
    }

    pub fn with_weather(mut self, provider: Arc<dyn WeatherProvider>) -> Self {
        self.weather = Some(provider);
        self
    }

    fn series_data(&self, id: SeriesId) -> Result<Arc<SeriesData>> {
        if let Some(data) = self.series.read().expect("series map poisoned").get(&id) {
            return Ok(Arc::clone(data));
        }
        if self.semantic.context_of_series(id).is_none() {
            return Err(Error::UnknownSeries(id.0));
        }
        let mut map = self.series.write().expect("series map poisoned");
        if let Some(data) = map.get(&id) {
            return Ok(Arc::clone(data));
        }
        let journal = match &self.dir {
            Some(dir) => Some(Journal::open(dir.join(format!("{}.jsonl", id.0)))?.0),
            None => None,
        };
        let data = Arc::new(SeriesData {
            points: RwLock::new(BTreeMap::new()),
            journal: Mutex::new(journal),
        });
        map.insert(id, Arc::clone(&data));
        Ok(data)
    }

    /// Stores `points`; exact duplicates are counted but stored once and a new
    /// value at an existing timestamp replaces the old one. The whole batch is
    /// rejected if any value is non-finite.
    pub fn ingest(&self, series: SeriesId, points: &[DataPoint]) -> Result<usize> {
        if let Some(bad) = points.iter().find(|p| !p.value.is_finite()) {
            return Err(Error::NonFiniteValue(format_ts(&bad.timestamp)));
        }
        let data = self.series_data(series)?;
        let mut journal = data.journal.lock().expect("series journal poisoned");
        let changed: Vec<DataPoint> = {
            let stored = data.points.read().expect("series poisoned");
            let mut batch: BTreeMap<Timestamp, f64> = BTreeMap::new();
            for p in points {
                batch.insert(p.timestamp, p.value);
            }
            batch
                .into_iter()
                .filter(|(t, v)| stored.get(t) != Some(v))
                .map(|(t, v)| DataPoint::new(t, v))
                .collect()
        };
        if let Some(journal) = journal.as_mut() {
            journal.append_all(&changed)?;
        }
        let mut stored = data.points.write().expect("series poisoned");
        for p in changed {
            stored.insert(p.timestamp, p.value);
        }
        Ok(points.len())
    }

    pub fn window(&self, series: SeriesId, start: Timestamp, end: Timestamp) -> Result<TimeSeriesWindow> {
        if start >= end {
            return Err(Error::EmptyRange);
        }
        let data = self.series_data(series)?;
        let stored = data.points.read().expect("series poisoned");
        Ok(TimeSeriesWindow {
            series: Some(series),
            start,
            end,
            points: stored
                .range(start..end)
                .map(|(t, v)| DataPoint::new(*t, *v))
                .collect(),
        })
    }

    /// Stored points of a context in `[start, end)`.
    pub fn get_timeseries(
        &self,
        context: &ContextKey,
        start: Timestamp,
        end: Timestamp,
    ) -> Result<TimeSeriesWindow> {
        let bound = self.semantic.resolve_context(context)?;
        if start >= end {
            return Err(Error::EmptyRange);
        }
        self.throttle.query(|| self.window(bound.series, start, end))
    }

    pub fn point_count(&self, series: SeriesId) -> usize {
        self.series
            .read()
            .expect("series map poisoned")
            .get(&series)
            .map_or(0, |d| d.points.read().expect("series poisoned").len())
    }

    pub fn all_points(&self, series: SeriesId) -> Vec<DataPoint> {
        self.series
            .read()
            .expect("series map poisoned")
            .get(&series)
            .map(|d| {
                d.points
                    .read()
                    .expect("series poisoned")
                    .iter()
                    .map(|(t, v)| DataPoint::new(*t, *v))
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Stored readings per bucket across all series, keyed by reading timestamp.
    pub fn ingestion_stats(
        &self,
        period: Option<(Timestamp, Timestamp)>,
        bucket: FrequencySpec,
    ) -> Vec<(Timestamp, u64)> {
        let mut counts: BTreeMap<Timestamp, u64> = BTreeMap::new();
        let all: Vec<Arc<SeriesData>> = self
            .series
            .read()
            .expect("series map poisoned")
            .values()
            .cloned()
            .collect();
        for data in all {
            let stored = data.points.read().expect("series poisoned");
            let iter: Box<dyn Iterator<Item = (&Timestamp, &f64)>> = match period {
                Some((start, end)) if start < end => Box::new(stored.range(start..end)),
                Some(_) => Box::new(std::iter::empty()),
                None => Box::new(stored.iter()),
            };
            for (t, _) in iter {
                *counts.entry(bucket.bucket_start(*t)).or_insert(0) += 1;
            }
        }
        counts.into_iter().collect()
    }

    pub fn get_weather(
        &self,
        latitude: f64,
        longitude: f64,
        start: Timestamp,
        end: Timestamp,
    ) -> Result<WeatherData> {
        let provider = self.weather.as_ref().ok_or(Error::NoProvider)?;
        if !(-90.0..=90.0).contains(&latitude) || !(-180.0..=180.0).contains(&longitude) {
            return Err(Error::InvalidCoordinates(format!("({latitude}, {longitude})")));
        }
        if start >= end {
            return Err(Error::EmptyRange);
        }
        provider.fetch(latitude, longitude, start, end)
    }

    pub fn weather_for_entity(
        &self,
        entity: &Entity,
        start: Timestamp,
        end: Timestamp,
    ) -> Result<WeatherData> {
        let (lat, lon) = entity
            .coordinates()
            .ok_or_else(|| Error::MissingCoordinates(entity.name.clone()))?;
        self.get_weather(lat, lon, start, end)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semantic::NewEntity;
    use crate::weather::SyntheticWeather;
    use chrono::{TimeZone, Utc};

    fn t0() -> Timestamp {
        Utc.with_ymd_and_hms(2019, 3, 1, 0, 0, 0).unwrap()
    }

    fn mins(m: i64) -> Timestamp {
        t0() + Duration::minutes(m)
    }

    fn hours(h: i64) -> Timestamp {
        t0() + Duration::hours(h)
    }

    fn engine() -> (TimeSeriesEngine, SeriesId) {
        let semantic = Arc::new(SemanticStore::in_memory());
        semantic
            .register_entity(NewEntity::new("S1", "SUBSTATION").at(34.9, 33.6))
            .unwrap();
        semantic.register_entity(NewEntity::new("M", "MARKET")).unwrap();
        semantic.register_signal("ENERGY_LOAD", "kWh", "energy").unwrap();
        let sid = semantic.bind_timeseries("S1", "ENERGY_LOAD").unwrap();
        let engine = TimeSeriesEngine::new(semantic, Arc::new(StoreThrottle::disabled()))
            .with_weather(Arc::new(SyntheticWeather));
        (engine, sid)
    }

    fn key() -> ContextKey {
        ContextKey::new("S1", "ENERGY_LOAD")
    }

    #[test]
    fn duplicate_points_stored_once() {
        let (engine, sid) = engine();
        let p = DataPoint::new(t0(), 1.0);
        assert_eq!(engine.ingest(sid, &[p]).unwrap(), 1);
        assert_eq!(engine.ingest(sid, &[p]).unwrap(), 1);
        assert_eq!(engine.point_count(sid), 1);
        engine.ingest(sid, &[DataPoint::new(t0(), 2.0)]).unwrap();
        assert_eq!(engine.all_points(sid), vec![DataPoint::new(t0(), 2.0)]);
    }

    #[test]
    fn non_finite_rejects_whole_batch() {
        let (engine, sid) = engine();
        let err = engine
            .ingest(sid, &[DataPoint::new(t0(), 1.0), DataPoint::new(mins(1), f64::NAN)])
            .unwrap_err();
        assert!(matches!(err, Error::NonFiniteValue(_)));
        assert_eq!(engine.point_count(sid), 0);
        assert!(matches!(
            engine.ingest(SeriesId(99), &[DataPoint::new(t0(), 1.0)]),
            Err(Error::UnknownSeries(99))
        ));
    }

    #[test]
    fn window_end_is_exclusive() {
        let (engine, sid) = engine();
        engine
            .ingest(sid, &[DataPoint::new(mins(0), 1.0), DataPoint::new(mins(1), 2.0)])
            .unwrap();
        let w = engine.get_timeseries(&key(), mins(0), mins(1)).unwrap();
        assert_eq!(w.points.len(), 1);
        let empty = engine.get_timeseries(&key(), hours(5), hours(6)).unwrap();
        assert!(empty.points.is_empty());
        assert!(matches!(
            engine.get_timeseries(&key(), mins(1), mins(1)),
            Err(Error::EmptyRange)
        ));
        assert!(matches!(
            engine.get_timeseries(&ContextKey::new("S1", "X"), mins(0), mins(1)),
            Err(Error::UnknownContext { .. })
        ));
    }

    #[test]
    fn half_open_query_returns_first_two() {
        let (engine, sid) = engine();
        let pts = [
            DataPoint::new(hours(1), 1.0),
            DataPoint::new(hours(2), 2.0),
            DataPoint::new(hours(3), 3.0),
        ];
        engine.ingest(sid, &pts).unwrap();
        let w = engine.get_timeseries(&key(), hours(1), hours(3)).unwrap();
        assert_eq!(w.values(), vec![1.0, 2.0]);
    }

    #[test]
    fn align_mean_of_two() {
        let w = TimeSeriesWindow::from_points(
            t0(),
            hours(1),
            &[DataPoint::new(mins(3), 1.0), DataPoint::new(mins(7), 3.0)],
        );
        let out = align(&w, FrequencySpec::minutes(15), Aggregation::Mean);
        assert_eq!(out.points, vec![DataPoint::new(t0(), 2.0)]);
    }

    #[test]
    fn align_identity_on_aligned_hourly() {
        let pts: Vec<_> = (0..10).map(|h| DataPoint::new(hours(h), h as f64 * 1.5)).collect();
        let w = TimeSeriesWindow::from_points(t0(), hours(10), &pts);
        let out = align(&w, FrequencySpec::hours(1), Aggregation::Last);
        assert_eq!(out.points, w.points);
    }

    #[test]
    fn align_omits_empty_buckets() {
        let w = TimeSeriesWindow::from_points(
            t0(),
            hours(2),
            &[DataPoint::new(mins(1), 1.0), DataPoint::new(mins(50), 5.0)],
        );
        let out = align(&w, FrequencySpec::minutes(15), Aggregation::Sum);
        assert_eq!(out.timestamps(), vec![t0(), mins(45)]);
    }

    #[test]
    fn integrates_constant_power() {
        let pts: Vec<_> = (0..15).map(|m| DataPoint::new(mins(m), 4.0)).collect();
        let w = TimeSeriesWindow::from_points(t0(), mins(15), &pts);
        let out = resample_integrate(&w, FrequencySpec::minutes(15), 1.0).unwrap();
        assert_eq!(out.points, vec![DataPoint::new(t0(), 1.0)]);
    }

    #[test]
    fn integrates_scaled_current() {
        let pts: Vec<_> = (0..15).map(|m| DataPoint::new(mins(m), 10.0)).collect();
        let w = TimeSeriesWindow::from_points(t0(), mins(15), &pts);
        let out = resample_integrate(&w, FrequencySpec::minutes(15), 0.23).unwrap();
        assert!((out.points[0].value - 0.575).abs() < 1e-12);
        assert!(matches!(
            resample_integrate(&w, FrequencySpec::minutes(15), 0.0),
            Err(Error::NonPositiveScale(_))
        ));
    }

    #[test]
    fn single_lag_rows() {
        let w = TimeSeriesWindow::from_points(
            t0(),
            hours(3),
            &[
                DataPoint::new(hours(0), 1.0),
                DataPoint::new(hours(1), 2.0),
                DataPoint::new(hours(2), 3.0),
            ],
        );
        let m = lagged_features(&w, &[Duration::hours(1)]).unwrap();
        assert_eq!(m.timestamps, vec![hours(1), hours(2)]);
        assert_eq!(m.column("lag_1H").unwrap(), &[1.0, 2.0]);
        let m = lagged_features(&w, &[Duration::hours(1), Duration::hours(2)]).unwrap();
        assert_eq!(m.timestamps, vec![hours(2)]);
        assert_eq!(m.column("lag_1H").unwrap(), &[2.0]);
        assert_eq!(m.column("lag_2H").unwrap(), &[1.0]);
    }

    #[test]
    fn unaligned_inputs_are_rejected() {
        let w = TimeSeriesWindow::from_points(
            t0(),
            hours(3),
            &[
                DataPoint::new(hours(0), 1.0),
                DataPoint::new(hours(1), 2.0),
                DataPoint::new(hours(1) + Duration::minutes(30), 3.0),
                DataPoint::new(hours(2) + Duration::minutes(10), 3.0),
            ],
        );
        assert!(matches!(
            lagged_features(&w, &[Duration::hours(1)]),
            Err(Error::UnalignedInput(_))
        ));
        let hourly = TimeSeriesWindow::from_points(
            t0(),
            hours(3),
            &[DataPoint::new(hours(0), 1.0), DataPoint::new(hours(1), 2.0)],
        );
        assert!(matches!(
            lagged_features(&hourly, &[Duration::minutes(30)]),
            Err(Error::UnalignedInput(_))
        ));
    }

    #[test]
    fn calendar_columns() {
        let friday = t0();
        let m = calendar_features(&[
            friday,
            crate::time::parse_ts("2019-03-01T02:00:00+02:00").unwrap(),
            friday + Duration::days(3) + Duration::hours(13),
        ]);
        assert_eq!(m.column("hour_of_day").unwrap(), &[0.0, 0.0, 13.0]);
        assert_eq!(m.column("day_of_week").unwrap(), &[4.0, 4.0, 0.0]);
    }

    #[test]
    fn ingestion_stats_counts() {
        let (engine, sid) = engine();
        assert!(engine.ingestion_stats(None, FrequencySpec::hours(1)).is_empty());
        let pts: Vec<_> = (0..10).map(|i| DataPoint::new(mins(i * 5), 1.0)).collect();
        engine.ingest(sid, &pts).unwrap();
        assert_eq!(
            engine.ingestion_stats(None, FrequencySpec::hours(1)),
            vec![(t0(), 10)]
        );
        assert_eq!(
            engine
                .ingestion_stats(Some((mins(10), hours(1))), FrequencySpec::minutes(15))
                .iter()
                .map(|(_, c)| c)
                .sum::<u64>(),
            8
        );
    }

    #[test]
    fn weather_needs_coordinates_and_provider() {
        let (engine, _) = engine();
        let s1 = engine.semantic.entity("S1").unwrap();
        let market = engine.semantic.entity("M").unwrap();
        let a = engine.weather_for_entity(&s1, t0(), hours(24)).unwrap();
        assert_eq!(a["temperature"].len(), 24);
        assert!(matches!(
            engine.weather_for_entity(&market, t0(), hours(24)),
            Err(Error::MissingCoordinates(_))
        ));
        let bare = TimeSeriesEngine::new(
            Arc::new(SemanticStore::in_memory()),
            Arc::new(StoreThrottle::disabled()),
        );
        assert!(matches!(
            bare.get_weather(1.0, 1.0, t0(), hours(1)),
            Err(Error::NoProvider)
        ));
    }

    #[test]
    fn persisted_series_replay() {
        let dir = tempfile::tempdir().unwrap();
        let semantic = Arc::new(SemanticStore::open(dir.path().join("graph.jsonl")).unwrap());
        semantic.register_entity(NewEntity::new("S1", "SUBSTATION")).unwrap();
        semantic.register_signal("ENERGY_LOAD", "kWh", "energy").unwrap();
        let sid = semantic.bind_timeseries("S1", "ENERGY_LOAD").unwrap();
        let throttle = Arc::new(StoreThrottle::disabled());
        {
            let engine =
                TimeSeriesEngine::open(semantic.clone(), throttle.clone(), dir.path().join("series"))
                    .unwrap();
            engine
                .ingest(sid, &[DataPoint::new(t0(), 1.0), DataPoint::new(mins(1), 2.0)])
                .unwrap();
            engine.ingest(sid, &[DataPoint::new(t0(), 5.0)]).unwrap();
        }
        let engine = TimeSeriesEngine::open(semantic, throttle, dir.path().join("series")).unwrap();
        assert_eq!(
            engine.all_points(sid),
            vec![DataPoint::new(t0(), 5.0), DataPoint::new(mins(1), 2.0)]
        );
    }
}
