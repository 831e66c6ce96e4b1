//! HTTP API over a [`Platform`].
//!
//! Every route is mounted at the root. The same routes are also grouped under
//! `/timeseries-suite` (semantic and series data) and `/model-suite` (models,
//! forecasts, jobs).

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use castorlite_core::executor::{Executor, JobFilter, JobOutcome};
use castorlite_core::forecast::{HorizonPolicy, NewForecast};
use castorlite_core::registry::{ModelId, VersionSelector};
use castorlite_core::scheduler::Task;
use castorlite_core::semantic::{ContextFilter, NewEntity, SeriesId};
use castorlite_core::time::{parse_ts, DataPoint, FrequencySpec, Timestamp};
use castorlite_core::{ContextKey, Error, Platform};

#[derive(Clone)]
pub struct AppState {
    pub platform: Arc<Platform>,
    pub executor: Option<Arc<Executor>>,
    pub token: Option<Arc<str>>,
}

impl AppState {
    pub fn new(platform: Arc<Platform>) -> Self {
        Self {
            platform,
            executor: None,
            token: None,
        }
    }
}

pub struct ApiError(pub Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        Self(e)
    }
}

pub fn status_for(error: &Error) -> StatusCode {
    use Error::*;
    match error {
        UnknownEntity(_) | UnknownSignal(_) | UnknownContext { .. } | UnknownSeries(_)
        | UnknownModel(_) | NoVersions(_) | UnknownVersion { .. } | UnknownJob(_) => {
            StatusCode::NOT_FOUND
        }
        DuplicateName(_) | AlreadyBound { .. } | DuplicateIssue { .. } => StatusCode::CONFLICT,
        BlobTooLarge { .. } => StatusCode::PAYLOAD_TOO_LARGE,
        UnresolvableImplementation { .. } | NoOverlap => StatusCode::UNPROCESSABLE_ENTITY,
        NoProvider | ServiceUnavailable(_) | ExecutorClosed => StatusCode::SERVICE_UNAVAILABLE,
        Io { .. } | CorruptJournal { .. } | RunnerCrashed(_) | RunnerFailed(_) | Timeout(_)
        | MalformedResult(_) | Weather(_) | PortInUse(_) => StatusCode::INTERNAL_SERVER_ERROR,
        _ => StatusCode::BAD_REQUEST,
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"error": self.0.kind(), "message": self.0.to_string()});
        (status_for(&self.0), Json(body)).into_response()
    }
}

type ApiResult<T> = std::result::Result<Json<T>, ApiError>;
type Params = Query<HashMap<String, String>>;

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> castorlite_core::Result<T> + Send + 'static,
) -> std::result::Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(Error::ServiceUnavailable(e.to_string())))?
        .map_err(ApiError)
}

fn body<T: DeserializeOwned>(bytes: &[u8]) -> std::result::Result<T, ApiError> {
    serde_json::from_slice(bytes).map_err(|e| {
        ApiError(Error::MalformedConfig {
            path: "body".into(),
            message: e.to_string(),
        })
    })
}

fn required<'a>(q: &'a HashMap<String, String>, key: &str) -> std::result::Result<&'a str, ApiError> {
    q.get(key).map(String::as_str).ok_or_else(|| {
        ApiError(Error::MalformedConfig {
            path: key.into(),
            message: "missing query parameter".into(),
        })
    })
}

fn ts(q: &HashMap<String, String>, key: &str) -> std::result::Result<Option<Timestamp>, ApiError> {
    q.get(key).map(|v| parse_ts(v)).transpose().map_err(ApiError)
}

fn parsed<T: std::str::FromStr>(
    q: &HashMap<String, String>,
    key: &str,
) -> std::result::Result<Option<T>, ApiError>
where
    T::Err: std::fmt::Display,
{
    q.get(key)
        .map(|v| {
            v.parse::<T>().map_err(|e| {
                ApiError(Error::MalformedConfig {
                    path: key.into(),
                    message: e.to_string(),
                })
            })
        })
        .transpose()
}

fn context_of(q: &HashMap<String, String>) -> std::result::Result<ContextKey, ApiError> {
    Ok(ContextKey::new(required(q, "entity")?, required(q, "signal")?))
}

/// `[from, to)` defaulting to all time.
fn range(q: &HashMap<String, String>, from: &str, to: &str) -> std::result::Result<(Timestamp, Timestamp), ApiError> {
    Ok((
        ts(q, from)?.unwrap_or(Timestamp::MIN_UTC),
        ts(q, to)?.unwrap_or(Timestamp::MAX_UTC),
    ))
}

pub fn router(state: AppState) -> Router {
    let timeseries_suite = Router::new()
        .route("/entities", put(put_entity).get(list_entities))
        .route("/signals", put(put_signal).get(list_signals))
        .route("/series", put(put_series))
        .route("/topology", put(put_topology).get(list_topology))
        .route("/contexts", get(get_contexts))
        .route("/series/{id}/points", post(post_points))
        .route("/timeseries", get(get_timeseries))
        .route("/weather", get(get_weather))
        .route("/stats/ingestion", get(get_ingestion_stats));
    let model_suite = Router::new()
        .route("/models", post(post_model).get(list_models))
        .route("/models/{id}", get(get_model))
        .route("/models/{id}/versions/{version}", get(get_version))
        .route("/contexts/{entity}/{signal}/ranking", put(put_ranking).get(get_ranking))
        .route("/forecasts", post(post_forecast).get(get_forecasts))
        .route("/evaluate", get(get_evaluate))
        .route("/jobs", get(list_jobs))
        .route("/jobs/metrics", get(get_job_metrics))
        .route("/jobs/{id}", get(get_job));
    let api = Router::new()
        .merge(timeseries_suite.clone())
        .merge(model_suite.clone())
        .nest("/timeseries-suite", timeseries_suite)
        .nest("/model-suite", model_suite)
        .route_layer(middleware::from_fn_with_state(state.clone(), authorize));
    Router::new()
        .route("/health", get(health))
        .merge(api)
        .with_state(state)
}

async fn authorize(State(state): State<AppState>, request: Request, next: Next) -> Response {
    if let Some(token) = &state.token {
        let presented = request
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(token.as_ref()) {
            let body = json!({"error": "Unauthorized", "message": "missing or wrong bearer token"});
            return (StatusCode::UNAUTHORIZED, Json(body)).into_response();
        }
    }
    next.run(request).await
}

async fn health() -> Json<Value> {
    Json(json!({"status": "ok"}))
}

async fn put_entity(State(s): State<AppState>, bytes: Bytes) -> ApiResult<Value> {
    let new: NewEntity = body(&bytes)?;
    let id = blocking(move || s.platform.semantic.register_entity(new)).await?;
    Ok(Json(json!({"id": id})))
}

async fn list_entities(State(s): State<AppState>) -> ApiResult<Value> {
    Ok(Json(json!(s.platform.semantic.entities())))
}

#[derive(Deserialize)]
struct NewSignal {
    name: String,
    #[serde(default)]
    unit: String,
    #[serde(default)]
    quantity: String,
}

async fn put_signal(State(s): State<AppState>, bytes: Bytes) -> ApiResult<Value> {
    let new: NewSignal = body(&bytes)?;
    let id = blocking(move || {
        s.platform
            .semantic
            .register_signal(&new.name, &new.unit, &new.quantity)
    })
    .await?;
    Ok(Json(json!({"id": id})))
}

async fn list_signals(State(s): State<AppState>) -> ApiResult<Value> {
    Ok(Json(json!(s.platform.semantic.signals())))
}

async fn put_series(State(s): State<AppState>, bytes: Bytes) -> ApiResult<Value> {
    let key: ContextKey = body(&bytes)?;
    let series =
        blocking(move || s.platform.semantic.bind_timeseries(&key.entity, &key.signal)).await?;
    Ok(Json(json!({"series": series})))
}

#[derive(Deserialize)]
struct NewEdge {
    parent: String,
    child: String,
    #[serde(default = "default_relation")]
    relation: String,
}

fn default_relation() -> String {
    "feeds".into()
}

async fn put_topology(State(s): State<AppState>, bytes: Bytes) -> ApiResult<Value> {
    let e: NewEdge = body(&bytes)?;
    let id = blocking(move || {
        s.platform
            .semantic
            .add_topology_edge(&e.parent, &e.child, &e.relation)
    })
    .await?;
    Ok(Json(json!({"id": id})))
}

async fn list_topology(State(s): State<AppState>) -> ApiResult<Value> {
    Ok(Json(json!(s.platform.semantic.edges())))
}

async fn get_contexts(State(s): State<AppState>, Query(q): Params) -> ApiResult<Value> {
    let filter = ContextFilter {
        entity_kind: q.get("kind").cloned(),
        signal_name: q.get("signal").cloned(),
        under_entity: q.get("under").cloned(),
    };
    Ok(Json(json!(s.platform.semantic.query_contexts(&filter))))
}

async fn post_points(
    State(s): State<AppState>,
    Path(id): Path<u64>,
    bytes: Bytes,
) -> ApiResult<Value> {
    let points: Vec<DataPoint> = body(&bytes)?;
    let accepted =
        blocking(move || s.platform.timeseries.ingest(SeriesId(id), &points)).await?;
    Ok(Json(json!({"accepted": accepted})))
}

async fn get_timeseries(State(s): State<AppState>, Query(q): Params) -> ApiResult<Value> {
    let key = context_of(&q)?;
    let (start, end) = range(&q, "start", "end")?;
    let window = blocking(move || s.platform.timeseries.get_timeseries(&key, start, end)).await?;
    Ok(Json(json!(window)))
}

async fn get_weather(State(s): State<AppState>, Query(q): Params) -> ApiResult<Value> {
    let start = ts(&q, "start")?;
    let end = ts(&q, "end")?;
    let (Some(start), Some(end)) = (start, end) else {
        return Err(ApiError(Error::MalformedConfig {
            path: "start/end".into(),
            message: "both are required".into(),
        }));
    };
    let data = if let Some(entity) = q.get("entity").cloned() {
        blocking(move || {
            let e = s.platform.semantic.entity(&entity)?;
            s.platform.timeseries.weather_for_entity(&e, start, end)
        })
        .await?
    } else {
        let lat: f64 = parsed(&q, "lat")?.ok_or_else(|| missing("lat"))?;
        let lon: f64 = parsed(&q, "lon")?.ok_or_else(|| missing("lon"))?;
        blocking(move || s.platform.timeseries.get_weather(lat, lon, start, end)).await?
    };
    Ok(Json(json!(data)))
}

fn missing(key: &str) -> ApiError {
    ApiError(Error::MalformedConfig {
        path: key.into(),
        message: "missing query parameter".into(),
    })
}

#[derive(Serialize)]
struct BucketCount {
    #[serde(with = "castorlite_core::time::rfc3339")]
    bucket_start: Timestamp,
    count: u64,
}

async fn get_ingestion_stats(State(s): State<AppState>, Query(q): Params) -> ApiResult<Value> {
    let bucket: FrequencySpec = parsed(&q, "bucket")?.unwrap_or(FrequencySpec::hours(1));
    let period = match (ts(&q, "start")?, ts(&q, "end")?) {
        (None, None) => None,
        (s, e) => Some((s.unwrap_or(Timestamp::MIN_UTC), e.unwrap_or(Timestamp::MAX_UTC))),
    };
    let counts = blocking(move || Ok(s.platform.timeseries.ingestion_stats(period, bucket))).await?;
    let rows: Vec<BucketCount> = counts
        .into_iter()
        .map(|(bucket_start, count)| BucketCount { bucket_start, count })
        .collect();
    Ok(Json(json!(rows)))
}

async fn post_model(State(s): State<AppState>, bytes: Bytes) -> ApiResult<Value> {
    let text = String::from_utf8(bytes.to_vec()).map_err(|e| {
        ApiError(Error::MalformedConfig {
            path: "body".into(),
            message: e.to_string(),
        })
    })?;
    let id = blocking(move || s.platform.registry.register_deployment_json(&text)).await?;
    Ok(Json(json!({"model_id": id})))
}

async fn list_models(State(s): State<AppState>, Query(q): Params) -> ApiResult<Value> {
    let registry = &s.platform.registry;
    if q.contains_key("entity") || q.contains_key("signal") {
        let key = context_of(&q)?;
        let ranked = registry.list_deployed_models(&key)?;
        let rows: Vec<Value> = ranked
            .into_iter()
            .map(|(id, rank)| {
                let d = registry.deployment(id)?;
                Ok(json!({"model_id": id, "rank": rank, "deployment": d}))
            })
            .collect::<castorlite_core::Result<_>>()?;
        return Ok(Json(json!(rows)));
    }
    let mut all = registry.deployments();
    all.sort_by_key(|d| d.model_id);
    Ok(Json(json!(all)))
}

async fn get_model(State(s): State<AppState>, Path(id): Path<u64>) -> ApiResult<Value> {
    let d = s.platform.registry.deployment(ModelId(id))?;
    let versions = s.platform.registry.version_numbers(ModelId(id))?;
    Ok(Json(json!({"deployment": d, "versions": versions})))
}

async fn get_version(
    State(s): State<AppState>,
    Path((id, version)): Path<(u64, String)>,
) -> ApiResult<Value> {
    let selector: VersionSelector = version.parse()?;
    let v = blocking(move || s.platform.registry.get_model_version(ModelId(id), selector)).await?;
    Ok(Json(json!(*v)))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RankingBody {
    Wrapped { models: Vec<ModelId> },
    Bare(Vec<ModelId>),
}

async fn put_ranking(
    State(s): State<AppState>,
    Path((entity, signal)): Path<(String, String)>,
    bytes: Bytes,
) -> ApiResult<Value> {
    let models = match body::<RankingBody>(&bytes)? {
        RankingBody::Wrapped { models } | RankingBody::Bare(models) => models,
    };
    let key = ContextKey::new(entity, signal);
    let best = blocking(move || {
        s.platform.registry.set_ranking(&key, &models)?;
        s.platform.registry.best_model(&key)
    })
    .await?;
    Ok(Json(json!({"best_model": best})))
}

async fn get_ranking(
    State(s): State<AppState>,
    Path((entity, signal)): Path<(String, String)>,
) -> ApiResult<Value> {
    let key = ContextKey::new(entity, signal);
    let ranked = s.platform.registry.list_deployed_models(&key)?;
    let best = s.platform.registry.best_model(&key)?;
    let ids: Vec<ModelId> = ranked.into_iter().map(|(id, _)| id).collect();
    Ok(Json(json!({"models": ids, "best_model": best})))
}

async fn post_forecast(State(s): State<AppState>, bytes: Bytes) -> ApiResult<Value> {
    let new: NewForecast = body(&bytes)?;
    let n = blocking(move || s.platform.forecasts.save_forecast(new)).await?;
    Ok(Json(json!({"points": n})))
}

async fn get_forecasts(State(s): State<AppState>, Query(q): Params) -> ApiResult<Value> {
    let key = context_of(&q)?;
    let (from, to) = range(&q, "from", "to")?;
    let model: Option<ModelId> = parsed(&q, "model")?;
    let horizon: Option<FrequencySpec> = parsed(&q, "horizon")?;
    let policy = match q.get("policy").map(String::as_str) {
        None | Some("exact") => HorizonPolicy::Exact,
        Some("nearest_below") => HorizonPolicy::NearestBelow,
        Some(other) => {
            return Err(ApiError(Error::MalformedConfig {
                path: "policy".into(),
                message: format!("unknown policy `{other}`"),
            }))
        }
    };
    let points = blocking(move || {
        let forecasts = &s.platform.forecasts;
        match horizon {
            None => forecasts.get_forecasts(&key, from, to, model),
            Some(h) => {
                let model = match model {
                    Some(m) => m,
                    None => match s.platform.registry.best_model(&key)? {
                        Some(m) => m,
                        None => return Ok(Vec::new()),
                    },
                };
                Ok(forecasts
                    .get_by_horizon(&key, model, h.duration(), from, to, policy)?
                    .points)
            }
        }
    })
    .await?;
    Ok(Json(json!(points)))
}

async fn get_evaluate(State(s): State<AppState>, Query(q): Params) -> ApiResult<Value> {
    let key = context_of(&q)?;
    let (from, to) = range(&q, "from", "to")?;
    let model: ModelId = parsed(&q, "model")?.ok_or_else(|| missing("model"))?;
    let horizon: FrequencySpec = parsed(&q, "horizon")?.ok_or_else(|| missing("horizon"))?;
    let e = blocking(move || {
        s.platform
            .forecasts
            .evaluate(&key, model, horizon.duration(), from, to)
    })
    .await?;
    Ok(Json(json!(e)))
}

fn job_filter(q: &HashMap<String, String>) -> std::result::Result<JobFilter, ApiError> {
    let outcome = match q.get("outcome").map(String::as_str) {
        None => None,
        Some("ok") => Some(JobOutcome::Ok),
        Some("failed") => Some(JobOutcome::Failed),
        Some("timeout") => Some(JobOutcome::Timeout),
        Some(other) => {
            return Err(ApiError(Error::MalformedConfig {
                path: "outcome".into(),
                message: format!("unknown outcome `{other}`"),
            }))
        }
    };
    Ok(JobFilter {
        model_id: parsed(q, "model")?,
        task: parsed::<Task>(q, "task")?,
        outcome,
    })
}

fn executor(s: &AppState) -> std::result::Result<&Arc<Executor>, ApiError> {
    s.executor
        .as_ref()
        .ok_or_else(|| ApiError(Error::ServiceUnavailable("no executor in this process".into())))
}

async fn list_jobs(State(s): State<AppState>, Query(q): Params) -> ApiResult<Value> {
    let filter = job_filter(&q)?;
    Ok(Json(json!(executor(&s)?.records(&filter))))
}

async fn get_job_metrics(State(s): State<AppState>, Query(q): Params) -> ApiResult<Value> {
    let filter = job_filter(&q)?;
    Ok(Json(json!(executor(&s)?.job_metrics(&filter))))
}

async fn get_job(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Value> {
    let record = executor(&s)?
        .record(&id)
        .ok_or(ApiError(Error::UnknownJob(id)))?;
    Ok(Json(json!(record)))
}

/// A server task bound to a local address.
pub struct RunningServer {
    pub addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    task: JoinHandle<std::io::Result<()>>,
}

impl RunningServer {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub async fn shutdown(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        let _ = (&mut self.task).await;
    }

    /// Resolves when the server stops on its own.
    pub async fn join(self) -> std::io::Result<()> {
        self.task
            .await
            .unwrap_or_else(|e| Err(std::io::Error::other(e)))
    }
}

pub fn spawn(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<RunningServer> {
    let addr = listener.local_addr()?;
    let (tx, rx) = oneshot::channel::<()>();
    let app = router(state);
    let task = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await
    });
    Ok(RunningServer {
        addr,
        shutdown: Some(tx),
        task,
    })
}
