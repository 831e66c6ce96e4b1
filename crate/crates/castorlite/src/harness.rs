//! Self-contained throughput sweep with stub jobs against an in-memory service.

use std::net::{IpAddr, Ipv4Addr};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use chrono::Duration as ChronoDuration;
use serde_json::{json, Map};

use castorlite_core::executor::ExecutorConfig;
use castorlite_core::registry::{DeploymentConfig, ScheduleSpec};
use castorlite_core::scale::{run_experiment, ScaleReport};
use castorlite_core::scheduler::{JobRequest, Task};
use castorlite_core::semantic::NewEntity;
use castorlite_core::time::{parse_ts, DataPoint};
use castorlite_core::{ContextKey, Error, Result};

use crate::config::{ServiceConfig, WeatherSource, BUILTIN_DIST, BUILTIN_VERSION};
use crate::service::Service;

#[derive(Debug, Clone)]
pub struct StubExperiment {
    pub levels: Vec<usize>,
    /// None runs three jobs per unit of parallelism.
    pub jobs_per_level: Option<usize>,
    pub sleep: Duration,
    pub store_latency: Duration,
    pub store_connections: usize,
    pub runner_path: Option<PathBuf>,
}

impl Default for StubExperiment {
    fn default() -> Self {
        Self {
            levels: vec![10, 50, 100, 150, 175, 200],
            jobs_per_level: None,
            sleep: Duration::from_millis(200),
            store_latency: Duration::ZERO,
            store_connections: 2,
            runner_path: None,
        }
    }
}

const FIRST_ISSUE: &str = "2019-03-01T00:00:00+00:00";

pub async fn run_stub_experiment(experiment: &StubExperiment) -> Result<ScaleReport> {
    if experiment.levels.is_empty() || experiment.levels.contains(&0) {
        return Err(Error::BadConfig {
            field: "levels".into(),
            message: "need at least one level, each at least 1".into(),
        });
    }
    let config = ServiceConfig {
        bind: IpAddr::V4(Ipv4Addr::LOCALHOST),
        port: 0,
        weather: WeatherSource::Disabled,
        store_latency: experiment.store_latency,
        store_connections: experiment.store_connections,
        runner_path: experiment.runner_path.clone(),
        max_parallel: 1,
        ..Default::default()
    };
    let platform = Arc::new(config.open_platform()?);
    let context = ContextKey::new("SCALE", "ENERGY_LOAD");
    let start = parse_ts(FIRST_ISSUE)?;
    {
        let p = Arc::clone(&platform);
        let context = context.clone();
        tokio::task::spawn_blocking(move || -> Result<()> {
            p.semantic.register_entity(NewEntity::new(&context.entity, "SUBSTATION"))?;
            p.semantic.register_signal(&context.signal, "kWh", "energy")?;
            let series = p.semantic.bind_timeseries(&context.entity, &context.signal)?;
            let points: Vec<DataPoint> = (-24..0)
                .map(|h| DataPoint::new(start + ChronoDuration::hours(h), 100.0))
                .collect();
            p.timeseries.ingest(series, &points)?;
            Ok(())
        })
        .await
        .map_err(|e| Error::ServiceUnavailable(e.to_string()))??;
    }
    let deployment = DeploymentConfig {
        context: context.clone(),
        model_name: "stub".into(),
        dist_name: BUILTIN_DIST.into(),
        dist_ver: BUILTIN_VERSION.into(),
        module: "stub".into(),
        training_schedule: None,
        scoring_schedule: Some(ScheduleSpec {
            start_time: start,
            repeat_every: Some("1_hours".parse()?),
        }),
        user_parameters: Map::new(),
    };
    let model_id = platform.registry.register_deployment(deployment)?;
    let service = Service::start(Arc::clone(&platform), &config).await?;
    let mut params = Map::new();
    params.insert("sleep_ms".into(), json!(experiment.sleep.as_millis() as u64));
    let template = JobRequest {
        model_id,
        task: Task::Score,
        due_time: start,
        context,
        user_parameters: params,
    };
    let base = ExecutorConfig::new(service.url(), 1);
    let report = run_experiment(
        &platform,
        &base,
        &experiment.levels,
        &template,
        experiment.jobs_per_level,
    )
    .await;
    service.shutdown().await;
    report
}
