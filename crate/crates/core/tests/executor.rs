//! Executor behavior against shell-script runners.

use std::path::Path;
use std::sync::Arc;
use std::time::{Duration as StdDuration, Instant};

use chrono::{Duration, TimeZone, Utc};
use serde_json::Map;

use castorlite_core::executor::{Executor, ExecutorConfig, JobFilter, JobOutcome, JobRecord};
use castorlite_core::registry::{Manifest, ManifestEntry};
use castorlite_core::scheduler::{JobRequest, Task};
use castorlite_core::semantic::NewEntity;
use castorlite_core::time::Timestamp;
use castorlite_core::{ContextKey, Error, ModelId, Platform, PlatformOptions};

const SCRIPT: &str = r#"read line
case "$2" in
  ok) echo '{"status":"ok","points":[["2100-01-01T00:00:00Z",1.0]]}' ;;
  slow) sleep 0.2; echo '{"status":"ok","points":[["2100-01-01T00:00:00Z",1.0]]}' ;;
  crash) echo "boom" >&2; exit 1 ;;
  fail) echo '{"status":"error","message":"NoData: nothing"}'; exit 1 ;;
  garbage) echo 'this is not json' ;;
  hang) sleep 30 ;;
  echo) printf '%s\n' "$line" > "$(dirname "$0")/spec.json"; echo '{"status":"ok","points":[["2100-01-01T00:00:00Z",1.0]]}' ;;
esac
"#;

fn t0() -> Timestamp {
    Utc.with_ymd_and_hms(2019, 3, 1, 0, 0, 0).unwrap()
}

struct Fixture {
    platform: Platform,
    _dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let script = dir.path().join("runner.sh");
        std::fs::write(&script, SCRIPT).unwrap();
        let mut manifest = Manifest::default();
        manifest.insert(
            "t",
            "1",
            ManifestEntry {
                command: "/bin/sh".into(),
                args: vec![script.display().to_string()],
            },
        );
        let platform = Platform::in_memory(PlatformOptions {
            manifest,
            ..Default::default()
        })
        .unwrap();
        platform.semantic.register_entity(NewEntity::new("S1", "SUBSTATION")).unwrap();
        platform.semantic.register_signal("LOAD", "kW", "power").unwrap();
        platform.semantic.bind_timeseries("S1", "LOAD").unwrap();
        Self { platform, _dir: dir }
    }

    fn deploy(&self, module: &str) -> ModelId {
        let config = format!(
            r#"{{"context": {{"entity": "S1", "signal": "LOAD"}}, "model_name": "{module}",
                "dist_name": "t", "dist_ver": "1", "module": "{module}",
                "scoring_deployment": {{"time": "2019-03-01T00:00:00+00:00"}}}}"#
        );
        self.platform.registry.register_deployment_json(&config).unwrap()
    }

    fn executor(&self, max_parallel: usize, timeout: StdDuration) -> Executor {
        let mut config = ExecutorConfig::new("http://127.0.0.1:9", max_parallel);
        config.timeout = timeout;
        Executor::start(
            Arc::clone(&self.platform.semantic),
            Arc::clone(&self.platform.registry),
            Arc::clone(&self.platform.forecasts),
            config,
            None,
        )
        .unwrap()
    }
}

fn request(model: ModelId, due: Timestamp) -> JobRequest {
    JobRequest {
        model_id: model,
        task: Task::Score,
        due_time: due,
        context: ContextKey::new("S1", "LOAD"),
        user_parameters: Map::new(),
    }
}

async fn run_one(fx: &Fixture, module: &str, timeout: StdDuration) -> JobRecord {
    let model = fx.deploy(module);
    let exec = fx.executor(1, timeout);
    let id = exec.submit(request(model, t0())).unwrap();
    exec.wait(&id).await
}

#[tokio::test(flavor = "multi_thread")]
async fn successful_score_persists_forecast() {
    let fx = Fixture::new();
    let record = run_one(&fx, "ok", StdDuration::from_secs(10)).await;
    assert_eq!(record.outcome, JobOutcome::Ok, "{record:?}");
    assert_eq!(record.points, Some(1));
    assert_eq!(record.due_time, t0());
    assert_eq!(fx.platform.forecasts.total_rows(), 1);
    let forecast = &fx.platform.forecasts.forecasts(record.model_id)[0];
    assert_eq!(forecast.issued_at, t0());
}

#[tokio::test(flavor = "multi_thread")]
async fn crash_is_recorded_without_forecast() {
    let fx = Fixture::new();
    let record = run_one(&fx, "crash", StdDuration::from_secs(10)).await;
    assert_eq!(record.outcome, JobOutcome::Failed);
    let message = record.message.unwrap();
    assert!(message.starts_with("runner crashed"), "{message}");
    assert!(message.contains("boom"), "{message}");
    assert_eq!(fx.platform.forecasts.total_rows(), 0);
}

#[tokio::test(flavor = "multi_thread")]
async fn reported_error_is_runner_failed() {
    let fx = Fixture::new();
    let record = run_one(&fx, "fail", StdDuration::from_secs(10)).await;
    assert_eq!(record.outcome, JobOutcome::Failed);
    let message = record.message.unwrap();
    assert!(message.starts_with("runner reported an error"), "{message}");
    assert!(message.contains("NoData"), "{message}");
}

#[tokio::test(flavor = "multi_thread")]
async fn garbage_output_is_malformed_result() {
    let fx = Fixture::new();
    let record = run_one(&fx, "garbage", StdDuration::from_secs(10)).await;
    assert_eq!(record.outcome, JobOutcome::Failed);
    assert!(record.message.unwrap().starts_with("malformed runner result"));
    assert_eq!(fx.platform.forecasts.total_rows(), 0);
}

#[tokio::test(flavor = "multi_thread")]
async fn hung_runner_times_out() {
    let fx = Fixture::new();
    let began = Instant::now();
    let record = run_one(&fx, "hang", StdDuration::from_millis(300)).await;
    assert_eq!(record.outcome, JobOutcome::Timeout);
    assert!(began.elapsed() < StdDuration::from_secs(10));
    assert_eq!(fx.platform.forecasts.total_rows(), 0);
}

#[tokio::test(flavor = "multi_thread")]
async fn spec_line_carries_issue_time() {
    let fx = Fixture::new();
    let model = fx.deploy("echo");
    let exec = fx.executor(1, StdDuration::from_secs(10));
    let due = t0() + Duration::hours(3);
    let id = exec.submit(request(model, due)).unwrap();
    let record = exec.wait(&id).await;
    assert_eq!(record.outcome, JobOutcome::Ok, "{record:?}");
    let line = std::fs::read_to_string(fx._dir.path().join("spec.json")).unwrap();
    let spec: castorlite_core::protocol::JobSpec = serde_json::from_str(&line).unwrap();
    assert_eq!(spec.job_id, id);
    assert_eq!(spec.model_id, model);
    assert_eq!(spec.task, Task::Score);
    assert_eq!(spec.service_url, "http://127.0.0.1:9");
    assert_eq!(spec.context.key(), ContextKey::new("S1", "LOAD"));
    let issue = spec.user_params["issue_time"].as_str().unwrap();
    assert_eq!(castorlite_core::parse_ts(issue).unwrap(), due);
}

#[tokio::test(flavor = "multi_thread")]
async fn pool_bounds_live_processes() {
    let fx = Fixture::new();
    let model = fx.deploy("slow");
    let exec = fx.executor(3, StdDuration::from_secs(10));
    for i in 0..12 {
        exec.submit(request(model, t0() + Duration::hours(i))).unwrap();
    }
    exec.wait_idle().await;
    assert_eq!(exec.gauge().live(), 0);
    assert!(exec.gauge().peak() <= 3, "peak {}", exec.gauge().peak());
    assert_eq!(exec.gauge().peak(), 3);
    let ok = JobFilter {
        outcome: Some(JobOutcome::Ok),
        ..Default::default()
    };
    assert_eq!(exec.records(&ok).len(), 12);
}

#[tokio::test(flavor = "multi_thread")]
async fn wall_time_matches_two_waves() {
    let fx = Fixture::new();
    let model = fx.deploy("slow");
    let exec = fx.executor(10, StdDuration::from_secs(10));
    let began = Instant::now();
    for i in 0..20 {
        exec.submit(request(model, t0() + Duration::hours(i))).unwrap();
    }
    exec.wait_idle().await;
    let elapsed = began.elapsed();
    assert!(elapsed >= StdDuration::from_millis(400), "{elapsed:?}");
    assert!(elapsed < StdDuration::from_millis(2000), "{elapsed:?}");
    let metrics = exec.job_metrics(&JobFilter::default());
    assert_eq!(metrics.count, 20);
    assert!(metrics.mean_duration.unwrap() >= 0.2);
}

#[tokio::test(flavor = "multi_thread")]
async fn single_slot_preserves_submission_order() {
    let fx = Fixture::new();
    let model = fx.deploy("ok");
    let exec = fx.executor(1, StdDuration::from_secs(10));
    let ids: Vec<String> = (0..8)
        .map(|i| exec.submit(request(model, t0() + Duration::hours(i))).unwrap())
        .collect();
    exec.wait_idle().await;
    let mut records: Vec<JobRecord> = ids.iter().map(|id| exec.record(id).unwrap()).collect();
    let submitted: Vec<String> = records.iter().map(|r| r.job_id.clone()).collect();
    records.sort_by_key(|r| r.finished_at);
    let finished: Vec<String> = records.iter().map(|r| r.job_id.clone()).collect();
    assert_eq!(submitted, finished);
    assert!(records.windows(2).all(|w| w[0].finished_at <= w[1].started_at));
}

#[tokio::test(flavor = "multi_thread")]
async fn unknown_model_is_rejected_at_submit() {
    let fx = Fixture::new();
    let exec = fx.executor(1, StdDuration::from_secs(10));
    let err = exec.submit(request(ModelId(99), t0())).unwrap_err();
    assert!(matches!(err, Error::UnknownModel(99)), "{err}");
    assert_eq!(exec.outstanding(), 0);
}

#[tokio::test(flavor = "multi_thread")]
async fn zero_parallelism_is_bad_config() {
    let fx = Fixture::new();
    let result = Executor::start(
        Arc::clone(&fx.platform.semantic),
        Arc::clone(&fx.platform.registry),
        Arc::clone(&fx.platform.forecasts),
        ExecutorConfig::new("http://127.0.0.1:9", 0),
        None,
    );
    assert!(matches!(result, Err(Error::BadConfig { ref field, .. }) if field == "max_parallel"));
}

#[tokio::test(flavor = "multi_thread")]
async fn journal_survives_restart() {
    let fx = Fixture::new();
    let model = fx.deploy("ok");
    let path = fx._dir.path().join("jobs.jsonl");
    let start = |p: &Path| {
        Executor::start(
            Arc::clone(&fx.platform.semantic),
            Arc::clone(&fx.platform.registry),
            Arc::clone(&fx.platform.forecasts),
            ExecutorConfig::new("http://127.0.0.1:9", 2),
            Some(p),
        )
        .unwrap()
    };
    let exec = start(&path);
    let id = exec.submit(request(model, t0())).unwrap();
    exec.wait(&id).await;
    drop(exec);
    let reopened = start(&path);
    assert_eq!(reopened.record(&id).unwrap().outcome, JobOutcome::Ok);
    let loaded = castorlite_core::executor::load_job_records(&path).unwrap();
    assert_eq!(loaded.len(), 1);
}
