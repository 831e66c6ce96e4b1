//! Pluggable weather providers.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use chrono::{Datelike, Duration, Timelike};

use crate::error::{Error, Result};
use crate::time::{bucket_floor, parse_ts, DataPoint, Timestamp};

/// Variable name → hourly observations in `[start, end)`.
pub type WeatherData = BTreeMap<String, Vec<DataPoint>>;

pub trait WeatherProvider: Send + Sync {
    fn fetch(&self, latitude: f64, longitude: f64, start: Timestamp, end: Timestamp)
        -> Result<WeatherData>;
}

/// Deterministic seasonal + diurnal temperature on an hourly grid.
#[derive(Debug, Clone, Copy, Default)]
pub struct SyntheticWeather;

impl SyntheticWeather {
    pub fn temperature(latitude: f64, longitude: f64, t: Timestamp) -> f64 {
        let base = 28.0 - 0.35 * latitude.abs();
        let hemisphere = if latitude < 0.0 { -1.0 } else { 1.0 };
        let day = f64::from(t.ordinal0()) + f64::from(t.hour()) / 24.0;
        let seasonal = 9.0 * hemisphere * (2.0 * PI * (day - 105.0) / 365.25).sin();
        let local_hour = (f64::from(t.hour()) + f64::from(t.minute()) / 60.0 + longitude / 15.0)
            .rem_euclid(24.0);
        let diurnal = 5.0 * (2.0 * PI * (local_hour - 9.0) / 24.0).sin();
        base + seasonal + diurnal
    }
}

impl WeatherProvider for SyntheticWeather {
    fn fetch(
        &self,
        latitude: f64,
        longitude: f64,
        start: Timestamp,
        end: Timestamp,
    ) -> Result<WeatherData> {
        let step = Duration::hours(1);
        let mut t = bucket_floor(start, step);
        if t < start {
            t += step;
        }
        let mut points = Vec::new();
        while t < end {
            points.push(DataPoint::new(t, Self::temperature(latitude, longitude, t)));
            t += step;
        }
        Ok(BTreeMap::from([("temperature".to_string(), points)]))
    }
}

/// Weather read from a CSV file with a `timestamp` column followed by one
/// column per variable. Coordinates are ignored: the file describes one site.
#[derive(Debug, Clone)]
pub struct FileWeather {
    path: PathBuf,
    variables: Vec<String>,
    rows: Vec<(Timestamp, Vec<f64>)>,
}

impl FileWeather {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let bad = |message: String| Error::BadConfig {
            field: "weather_file".into(),
            message: format!("{}: {message}", path.display()),
        };
        let mut reader = csv::Reader::from_path(&path).map_err(|e| bad(e.to_string()))?;
        let headers = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
        if headers.get(0) != Some("timestamp") || headers.len() < 2 {
            return Err(bad("header must be `timestamp,<variable>...`".into()));
        }
        let variables: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
        let mut rows = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record.map_err(|e| bad(e.to_string()))?;
            let ts = parse_ts(&record[0]).map_err(|e| bad(format!("row {}: {e}", i + 1)))?;
            let values = record
                .iter()
                .skip(1)
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| bad(format!("row {}: {e}", i + 1)))?;
            rows.push((ts, values));
        }
        rows.sort_by_key(|(ts, _)| *ts);
        Ok(Self {
            path,
            variables,
            rows,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl WeatherProvider for FileWeather {
    fn fetch(&self, _lat: f64, _lon: f64, start: Timestamp, end: Timestamp) -> Result<WeatherData> {
        let mut out: WeatherData = self
            .variables
            .iter()
            .map(|v| (v.clone(), Vec::new()))
            .collect();
        for (ts, values) in self.rows.iter().filter(|(ts, _)| *ts >= start && *ts < end) {
            for (name, value) in self.variables.iter().zip(values) {
                out.get_mut(name)
                    .expect("variable present")
                    .push(DataPoint::new(*ts, *value));
            }
        }
        Ok(out)
    }
}
