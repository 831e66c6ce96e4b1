//! Append-only forecast history keyed by (model, issued_at, target_time).

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};

use chrono::Duration;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::journal::Journal;
use crate::registry::{ModelId, ModelRegistry};
use crate::semantic::{ContextKey, SemanticStore};
use crate::throttle::StoreThrottle;
use crate::time::{format_ts, DataPoint, Timestamp};
use crate::timeseries::TimeSeriesEngine;

/// A forecast as submitted; the context comes from the model's deployment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewForecast {
    pub model_id: ModelId,
    #[serde(default)]
    pub model_version: Option<u32>,
    #[serde(with = "crate::time::rfc3339")]
    pub issued_at: Timestamp,
    pub points: Vec<DataPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forecast {
    pub model_id: ModelId,
    pub model_version: Option<u32>,
    pub context: ContextKey,
    #[serde(with = "crate::time::rfc3339")]
    pub issued_at: Timestamp,
    pub points: Vec<DataPoint>,
}

/// One stored prediction row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastPoint {
    #[serde(with = "crate::time::rfc3339")]
    pub target_time: Timestamp,
    pub value: f64,
    #[serde(with = "crate::time::rfc3339")]
    pub issued_at: Timestamp,
    pub model_id: ModelId,
}

impl ForecastPoint {
    pub fn horizon(&self) -> Duration {
        self.target_time - self.issued_at
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HorizonPolicy {
    /// Only points exactly `horizon` after their issue.
    #[default]
    Exact,
    /// Per target, the point with the largest horizon not exceeding the request.
    NearestBelow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonSlice {
    #[serde(with = "horizon_seconds")]
    pub horizon: Duration,
    pub points: Vec<ForecastPoint>,
}

mod horizon_seconds {
    use chrono::Duration;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_i64(d.num_seconds())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::seconds(i64::deserialize(d)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub mape: f64,
    pub n: usize,
}

/// Mean absolute percentage error, in percent.
pub fn mape(predictions: &[f64], actuals: &[f64]) -> Result<f64> {
    if predictions.len() != actuals.len() || actuals.is_empty() {
        return Err(Error::LengthMismatch(predictions.len(), actuals.len()));
    }
    if let Some(i) = actuals.iter().position(|a| *a == 0.0) {
        return Err(Error::ZeroActual(i));
    }
    let total: f64 = predictions
        .iter()
        .zip(actuals)
        .map(|(p, a)| ((a - p) / a).abs())
        .sum();
    Ok(100.0 * total / actuals.len() as f64)
}

type ModelHistory = BTreeMap<Timestamp, Arc<Forecast>>;

pub struct ForecastStore {
    semantic: Arc<SemanticStore>,
    registry: Arc<ModelRegistry>,
    timeseries: Arc<TimeSeriesEngine>,
    throttle: Arc<StoreThrottle>,
    history: RwLock<HashMap<ModelId, ModelHistory>>,
    journal: Option<Mutex<Journal<Forecast>>>,
}

impl ForecastStore {
    pub fn new(
        semantic: Arc<SemanticStore>,
        registry: Arc<ModelRegistry>,
        timeseries: Arc<TimeSeriesEngine>,
        throttle: Arc<StoreThrottle>,
    ) -> Self {
        Self {
            semantic,
            registry,
            timeseries,
            throttle,
            history: RwLock::new(HashMap::new()),
            journal: None,
        }
    }

    pub fn open(
        semantic: Arc<SemanticStore>,
        registry: Arc<ModelRegistry>,
        timeseries: Arc<TimeSeriesEngine>,
        throttle: Arc<StoreThrottle>,
        path: impl AsRef<Path>,
    ) -> Result<Self> {
        let (journal, records) = Journal::<Forecast>::open(path)?;
        let mut history: HashMap<ModelId, ModelHistory> = HashMap::new();
        for f in records {
            history
                .entry(f.model_id)
                .or_default()
                .insert(f.issued_at, Arc::new(f));
        }
        Ok(Self {
            semantic,
            registry,
            timeseries,
            throttle,
            history: RwLock::new(history),
            journal: Some(Mutex::new(journal)),
        })
    }

    /// Persists every point of the forecast, or none of them.
    pub fn save_forecast(&self, new: NewForecast) -> Result<usize> {
        let deployment = self.registry.deployment(new.model_id)?;
        for p in &new.points {
            if p.timestamp <= new.issued_at {
                return Err(Error::NonCausalPoint {
                    target: format_ts(&p.timestamp),
                    issued: format_ts(&new.issued_at),
                });
            }
            if !p.value.is_finite() {
                return Err(Error::NonFiniteValue(format_ts(&p.timestamp)));
            }
        }
        if new.points.windows(2).any(|w| w[1].timestamp <= w[0].timestamp) {
            return Err(Error::UnorderedPoints);
        }
        let forecast = Forecast {
            model_id: new.model_id,
            model_version: new.model_version,
            context: deployment.config.context,
            issued_at: new.issued_at,
            points: new.points,
        };
        self.throttle.query(|| {
            let mut history = self.history.write().expect("forecast history poisoned");
            let per_model = history.entry(forecast.model_id).or_default();
            if per_model.contains_key(&forecast.issued_at) {
                return Err(Error::DuplicateIssue {
                    model: forecast.model_id.0,
                    issued: format_ts(&forecast.issued_at),
                });
            }
            if let Some(journal) = &self.journal {
                journal.lock().expect("journal poisoned").append(&forecast)?;
            }
            let n = forecast.points.len();
            per_model.insert(forecast.issued_at, Arc::new(forecast));
            Ok(n)
        })
    }

    fn rows(&self, model: ModelId) -> Vec<ForecastPoint> {
        let history = self.history.read().expect("forecast history poisoned");
        history
            .get(&model)
            .into_iter()
            .flat_map(|m| m.values())
            .flat_map(|f| {
                f.points.iter().map(|p| ForecastPoint {
                    target_time: p.timestamp,
                    value: p.value,
                    issued_at: f.issued_at,
                    model_id: f.model_id,
                })
            })
            .collect()
    }

    /// Every stored row of one model, ordered by issue then target.
    pub fn all_rows(&self, model: ModelId) -> Vec<ForecastPoint> {
        self.rows(model)
    }

    pub fn forecasts(&self, model: ModelId) -> Vec<Forecast> {
        let history = self.history.read().expect("forecast history poisoned");
        history
            .get(&model)
            .map(|m| m.values().map(|f| (**f).clone()).collect())
            .unwrap_or_default()
    }

    pub fn total_rows(&self) -> usize {
        let history = self.history.read().expect("forecast history poisoned");
        history
            .values()
            .flat_map(|m| m.values())
            .map(|f| f.points.len())
            .sum()
    }

    /// Freshest prediction per target in `[from, to)`. Without a pinned model the
    /// context's best-ranked model serves.
    pub fn get_forecasts(
        &self,
        context: &ContextKey,
        from: Timestamp,
        to: Timestamp,
        model: Option<ModelId>,
    ) -> Result<Vec<ForecastPoint>> {
        self.semantic.resolve_context(context)?;
        let model = match model {
            Some(m) => {
                self.registry.deployment(m)?;
                m
            }
            None => match self.registry.best_model(context)? {
                Some(m) => m,
                None => return Ok(Vec::new()),
            },
        };
        let mut freshest: BTreeMap<Timestamp, ForecastPoint> = BTreeMap::new();
        for row in self.rows(model) {
            if row.target_time < from || row.target_time >= to {
                continue;
            }
            match freshest.get(&row.target_time) {
                Some(seen) if seen.issued_at >= row.issued_at => {}
                _ => {
                    freshest.insert(row.target_time, row);
                }
            }
        }
        Ok(freshest.into_values().collect())
    }

    /// Points whose lead time equals `horizon`, with targets in `[from, to)`.
    pub fn get_by_horizon(
        &self,
        context: &ContextKey,
        model: ModelId,
        horizon: Duration,
        from: Timestamp,
        to: Timestamp,
        policy: HorizonPolicy,
    ) -> Result<HorizonSlice> {
        if horizon <= Duration::zero() {
            return Err(Error::MalformedConfig {
                path: "horizon".into(),
                message: "must be positive".into(),
            });
        }
        self.semantic.resolve_context(context)?;
        self.registry.deployment(model)?;
        let in_range = |r: &ForecastPoint| r.target_time >= from && r.target_time < to;
        let points = match policy {
            HorizonPolicy::Exact => self
                .rows(model)
                .into_iter()
                .filter(|r| in_range(r) && r.horizon() == horizon)
                .collect(),
            HorizonPolicy::NearestBelow => {
                let mut best: BTreeMap<Timestamp, ForecastPoint> = BTreeMap::new();
                for r in self
                    .rows(model)
                    .into_iter()
                    .filter(|r| in_range(r) && r.horizon() <= horizon)
                {
                    match best.get(&r.target_time) {
                        Some(b) if b.horizon() >= r.horizon() => {}
                        _ => {
                            best.insert(r.target_time, r);
                        }
                    }
                }
                best.into_values().collect::<Vec<_>>()
            }
        };
        let mut points: Vec<ForecastPoint> = points;
        points.sort_by_key(|p| (p.target_time, p.issued_at));
        Ok(HorizonSlice { horizon, points })
    }

    /// Joins the horizon slice with observed actuals on target time and scores it.
    pub fn evaluate(
        &self,
        context: &ContextKey,
        model: ModelId,
        horizon: Duration,
        from: Timestamp,
        to: Timestamp,
    ) -> Result<Evaluation> {
        let slice = self.get_by_horizon(context, model, horizon, from, to, HorizonPolicy::Exact)?;
        let actuals = self.timeseries.get_timeseries(context, from, to)?;
        let observed: HashMap<Timestamp, f64> =
            actuals.points.iter().map(|p| (p.timestamp, p.value)).collect();
        let (predicted, actual): (Vec<f64>, Vec<f64>) = slice
            .points
            .iter()
            .filter_map(|p| observed.get(&p.target_time).map(|a| (p.value, *a)))
            .unzip();
        if actual.is_empty() {
            return Err(Error::NoOverlap);
        }
        Ok(Evaluation {
            mape: mape(&predicted, &actual)?,
            n: actual.len(),
        })
    }
}
