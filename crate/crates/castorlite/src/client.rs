//! Blocking HTTP client for the service API, used by runners and tests.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use castorlite_core::executor::TOKEN_ENV;
use castorlite_core::registry::{ModelId, ModelVersion, VersionSelector};
use castorlite_core::time::{format_ts, DataPoint, Timestamp};
use castorlite_core::timeseries::TimeSeriesWindow;
use castorlite_core::weather::WeatherData;
use castorlite_core::{ContextKey, SeriesId};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("request to {url} failed: {message}")]
    Transport { url: String, message: String },
    #[error("{kind} ({status}): {message}")]
    Api {
        status: u16,
        kind: String,
        message: String,
    },
}

impl ClientError {
    /// The service's error kind, e.g. `UnknownContext`.
    pub fn kind(&self) -> &str {
        match self {
            ClientError::Transport { .. } => "Transport",
            ClientError::Api { kind, .. } => kind,
        }
    }
}

pub type ClientResult<T> = std::result::Result<T, ClientError>;

#[derive(Clone)]
pub struct ServiceClient {
    base: String,
    token: Option<String>,
    agent: ureq::Agent,
}

impl ServiceClient {
    pub fn new(base: impl Into<String>, token: Option<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        Self {
            base: base.into().trim_end_matches('/').to_string(),
            token,
            agent,
        }
    }

    /// Token taken from the environment, as runners receive it.
    pub fn from_env(base: impl Into<String>) -> Self {
        Self::new(base, std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty()))
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    fn auth(&self) -> Option<String> {
        self.token.as_ref().map(|t| format!("Bearer {t}"))
    }

    fn finish<T: DeserializeOwned>(
        url: &str,
        result: std::result::Result<ureq::http::Response<ureq::Body>, ureq::Error>,
    ) -> ClientResult<T> {
        let transport = |message: String| ClientError::Transport {
            url: url.to_string(),
            message,
        };
        let mut response = result.map_err(|e| transport(e.to_string()))?;
        let status = response.status();
        let body: Value = response
            .body_mut()
            .read_json()
            .map_err(|e| transport(format!("unreadable body (status {status}): {e}")))?;
        if !status.is_success() {
            return Err(ClientError::Api {
                status: status.as_u16(),
                kind: body["error"].as_str().unwrap_or("Unknown").to_string(),
                message: body["message"].as_str().unwrap_or_default().to_string(),
            });
        }
        serde_json::from_value(body).map_err(|e| transport(format!("unexpected body: {e}")))
    }

    pub fn get<T: DeserializeOwned>(&self, path: &str, query: &[(&str, String)]) -> ClientResult<T> {
        let url = self.url(path);
        let mut req = self.agent.get(&url);
        if let Some(auth) = self.auth() {
            req = req.header("Authorization", auth);
        }
        for (k, v) in query {
            req = req.query(*k, v);
        }
        Self::finish(&url, req.call())
    }

    pub fn post<T: DeserializeOwned>(&self, path: &str, body: &impl Serialize) -> ClientResult<T> {
        let url = self.url(path);
        let mut req = self.agent.post(&url);
        if let Some(auth) = self.auth() {
            req = req.header("Authorization", auth);
        }
        Self::finish(&url, req.send_json(body))
    }

    pub fn put<T: DeserializeOwned>(&self, path: &str, body: &impl Serialize) -> ClientResult<T> {
        let url = self.url(path);
        let mut req = self.agent.put(&url);
        if let Some(auth) = self.auth() {
            req = req.header("Authorization", auth);
        }
        Self::finish(&url, req.send_json(body))
    }

    pub fn health(&self) -> bool {
        self.get::<Value>("/health", &[])
            .is_ok_and(|v| v["status"] == "ok")
    }

    pub fn timeseries(
        &self,
        context: &ContextKey,
        start: Timestamp,
        end: Timestamp,
    ) -> ClientResult<TimeSeriesWindow> {
        self.get(
            "/timeseries",
            &[
                ("entity", context.entity.clone()),
                ("signal", context.signal.clone()),
                ("start", format_ts(&start)),
                ("end", format_ts(&end)),
            ],
        )
    }

    pub fn weather(
        &self,
        latitude: f64,
        longitude: f64,
        start: Timestamp,
        end: Timestamp,
    ) -> ClientResult<WeatherData> {
        self.get(
            "/weather",
            &[
                ("lat", latitude.to_string()),
                ("lon", longitude.to_string()),
                ("start", format_ts(&start)),
                ("end", format_ts(&end)),
            ],
        )
    }

    pub fn model_version(&self, model: ModelId, selector: VersionSelector) -> ClientResult<ModelVersion> {
        let v = match selector {
            VersionSelector::Latest => "latest".to_string(),
            VersionSelector::Version(n) => n.to_string(),
        };
        self.get(&format!("/models/{model}/versions/{v}"), &[])
    }

    pub fn ingest(&self, series: SeriesId, points: &[DataPoint]) -> ClientResult<usize> {
        let v: Value = self.post(&format!("/series/{}/points", series.0), &points)?;
        Ok(v["accepted"].as_u64().unwrap_or(0) as usize)
    }
}
