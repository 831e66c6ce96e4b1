//! A running service: HTTP API, executor pool and optional scheduler loop.

use std::sync::Arc;
use std::time::Duration;

use chrono::Utc;

use castorlite_core::executor::{Executor, ExecutorConfig};
use castorlite_core::time::Timestamp;
use castorlite_core::{Error, Platform, Result};

use crate::api::{self, AppState, RunningServer};
use crate::config::ServiceConfig;

pub struct Service {
    pub platform: Arc<Platform>,
    pub executor: Arc<Executor>,
    server: RunningServer,
}

impl Service {
    /// Binds the configured address, then starts the API and the executor.
    pub async fn start(platform: Arc<Platform>, config: &ServiceConfig) -> Result<Self> {
        config.validate()?;
        let listener = config.bind_listener().await?;
        let addr = listener
            .local_addr()
            .map_err(|e| Error::io(config.socket_addr().to_string(), e))?;
        let executor_config = ExecutorConfig {
            max_parallel: config.max_parallel,
            timeout: config.runner_timeout,
            service_url: format!("http://{addr}"),
            token: config.token.clone(),
        };
        let executor = Arc::new(Executor::start(
            Arc::clone(&platform.semantic),
            Arc::clone(&platform.registry),
            Arc::clone(&platform.forecasts),
            executor_config,
            platform.jobs_path().as_deref(),
        )?);
        let state = AppState {
            platform: Arc::clone(&platform),
            executor: Some(Arc::clone(&executor)),
            token: config.token.as_deref().map(Arc::from),
        };
        let server = api::spawn(listener, state).map_err(|e| Error::io(addr.to_string(), e))?;
        tracing::info!(url = %server.url(), "service listening");
        Ok(Self {
            platform,
            executor,
            server,
        })
    }

    pub fn url(&self) -> String {
        self.server.url()
    }

    /// One scheduler tick at `now`; due jobs are queued, not awaited.
    pub async fn tick(&self, now: Timestamp) -> Result<Vec<String>> {
        let scheduler = Arc::clone(&self.platform.scheduler);
        let requests = tokio::task::spawn_blocking(move || scheduler.tick(now))
            .await
            .map_err(|e| Error::ServiceUnavailable(e.to_string()))?;
        let mut ids = Vec::with_capacity(requests.len());
        for request in requests {
            tracing::info!(model = %request.model_id, task = %request.task, due = %request.due_time, "job due");
            match self.executor.submit(request) {
                Ok(id) => ids.push(id),
                Err(error) => tracing::warn!(%error, "job not submitted"),
            }
        }
        Ok(ids)
    }

    /// Ticks on the wall clock every `period` until ctrl-c.
    pub async fn run_scheduler(&self, period: Duration) -> Result<()> {
        let mut interval = tokio::time::interval(period);
        interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
        loop {
            tokio::select! {
                _ = interval.tick() => {
                    self.tick(Utc::now()).await?;
                }
                _ = tokio::signal::ctrl_c() => {
                    tracing::info!("shutting down");
                    return Ok(());
                }
            }
        }
    }

    pub async fn wait_idle(&self) {
        self.executor.wait_idle().await;
    }

    pub async fn shutdown(self) {
        self.executor.wait_idle().await;
        self.server.shutdown().await;
    }
}
