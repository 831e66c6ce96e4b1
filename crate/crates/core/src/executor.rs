//! Bounded pool running jobs as runner subprocesses.
//!
//! Jobs start in submission order; at most `max_parallel` runners are alive
//! at any moment. Results are persisted through the registry (train) or the
//! forecast store (score), and every job leaves a [`JobRecord`].

use std::collections::HashMap;
use std::path::Path;
use std::process::Stdio;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration as StdDuration;

use chrono::Utc;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::process::Command;
use tokio::sync::{mpsc, Notify, Semaphore};

use crate::error::{Error, Result};
use crate::forecast::{ForecastStore, NewForecast};
use crate::journal::Journal;
use crate::protocol::{JobResult, JobSpec, RunnerOutput, ISSUE_TIME_PARAM};
use crate::registry::{ModelId, ModelRegistry, RunnerSpec};
use crate::scheduler::{JobRequest, Task};
use crate::semantic::SemanticStore;
use crate::time::{format_ts, Timestamp};

pub const DEFAULT_RUNNER_TIMEOUT: StdDuration = StdDuration::from_secs(300);
pub const TOKEN_ENV: &str = "CASTORLITE_TOKEN";

#[derive(Debug, Clone)]
pub struct ExecutorConfig {
    pub max_parallel: usize,
    pub timeout: StdDuration,
    pub service_url: String,
    pub token: Option<String>,
}

impl ExecutorConfig {
    pub fn new(service_url: impl Into<String>, max_parallel: usize) -> Self {
        Self {
            max_parallel,
            timeout: DEFAULT_RUNNER_TIMEOUT,
            service_url: service_url.into(),
            token: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobOutcome {
    Ok,
    Failed,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub job_id: String,
    pub model_id: ModelId,
    pub task: Task,
    #[serde(with = "crate::time::rfc3339")]
    pub due_time: Timestamp,
    #[serde(with = "crate::time::rfc3339")]
    pub submitted_at: Timestamp,
    #[serde(with = "crate::time::rfc3339")]
    pub started_at: Timestamp,
    #[serde(with = "crate::time::rfc3339")]
    pub finished_at: Timestamp,
    /// `finished_at - started_at`, in seconds.
    pub duration: f64,
    pub outcome: JobOutcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    /// Version written by a train job, or version used by a score job.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_version: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobFilter {
    pub model_id: Option<ModelId>,
    pub task: Option<Task>,
    pub outcome: Option<JobOutcome>,
}

impl JobFilter {
    pub fn matches(&self, r: &JobRecord) -> bool {
        self.model_id.is_none_or(|m| m == r.model_id)
            && self.task.is_none_or(|t| t == r.task)
            && self.outcome.is_none_or(|o| o == r.outcome)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JobMetrics {
    pub count: usize,
    pub mean_duration: Option<f64>,
    pub p95_duration: Option<f64>,
}

/// Count, mean and nearest-rank 95th percentile of durations.
pub fn duration_metrics(durations: &[f64]) -> JobMetrics {
    if durations.is_empty() {
        return JobMetrics {
            count: 0,
            mean_duration: None,
            p95_duration: None,
        };
    }
    let mut sorted = durations.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
    JobMetrics {
        count: n,
        mean_duration: Some(sorted.iter().sum::<f64>() / n as f64),
        p95_duration: Some(sorted[rank - 1]),
    }
}

/// Reads a job journal written by an executor.
pub fn load_job_records(path: &Path) -> Result<Vec<JobRecord>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    Ok(Journal::open(path)?.1)
}

/// Tracks how many runner processes are alive and the peak seen.
#[derive(Debug, Default)]
pub struct ProcessGauge {
    live: AtomicUsize,
    peak: AtomicUsize,
}

impl ProcessGauge {
    fn enter(&self) {
        let now = self.live.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
    }

    fn exit(&self) {
        self.live.fetch_sub(1, Ordering::SeqCst);
    }

    pub fn live(&self) -> usize {
        self.live.load(Ordering::SeqCst)
    }

    pub fn peak(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }

    pub fn reset_peak(&self) {
        self.peak.store(self.live(), Ordering::SeqCst);
    }
}

#[derive(Debug, Clone, Default)]
pub struct InvokeOptions {
    pub timeout: Option<StdDuration>,
    pub env: Vec<(String, String)>,
}

/// Runs one runner process: request on stdin, result from stdout.
pub async fn invoke_runner(
    runner: &RunnerSpec,
    spec: &JobSpec,
    options: &InvokeOptions,
    gauge: Option<&ProcessGauge>,
) -> Result<RunnerOutput> {
    let mut cmd = Command::new(&runner.command);
    cmd.args(&runner.args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .kill_on_drop(true);
    for (k, v) in &options.env {
        cmd.env(k, v);
    }
    let mut child = cmd.spawn().map_err(|e| {
        Error::RunnerCrashed(format!("cannot start {}: {e}", runner.command.display()))
    })?;
    if let Some(g) = gauge {
        g.enter();
    }
    let _alive = scopeguard(gauge);

    let mut stdin = child.stdin.take().expect("stdin piped");
    let mut stdout = child.stdout.take().expect("stdout piped");
    let mut stderr = child.stderr.take().expect("stderr piped");
    let line = spec.to_line()?;
    let stdout_task = tokio::spawn(async move {
        let mut buf = Vec::new();
        let _ = stdout.read_to_end(&mut buf).await;
        buf
    });
    let stderr_task = tokio::spawn(async move {
        let mut buf = Vec::new();
        let _ = stderr.read_to_end(&mut buf).await;
        buf
    });
    // a runner that exits without reading stdin closes the pipe; that is not an error here
    let _ = stdin.write_all(line.as_bytes()).await;
    drop(stdin);

    let timeout = options.timeout.unwrap_or(DEFAULT_RUNNER_TIMEOUT);
    let status = match tokio::time::timeout(timeout, child.wait()).await {
        Ok(status) => status.map_err(|e| Error::RunnerCrashed(e.to_string()))?,
        Err(_) => {
            let _ = child.kill().await;
            stdout_task.abort();
            stderr_task.abort();
            return Err(Error::Timeout(timeout));
        }
    };
    drop(_alive);
    let stdout = stdout_task.await.unwrap_or_default();
    let stderr = stderr_task.await.unwrap_or_default();
    let stdout = String::from_utf8_lossy(&stdout);

    if !status.success() {
        if let Ok(result) = JobResult::parse(&stdout) {
            if let Some(message) = result.message {
                return Err(Error::RunnerFailed(message));
            }
        }
        let stderr = String::from_utf8_lossy(&stderr);
        let tail: String = stderr.lines().rev().take(5).collect::<Vec<_>>().join(" | ");
        return Err(Error::RunnerCrashed(format!("{status}: {tail}")));
    }
    JobResult::parse(&stdout)?.into_output(spec.task)
}

struct GaugeGuard<'a>(Option<&'a ProcessGauge>);

impl Drop for GaugeGuard<'_> {
    fn drop(&mut self) {
        if let Some(g) = self.0 {
            g.exit();
        }
    }
}

fn scopeguard(gauge: Option<&ProcessGauge>) -> GaugeGuard<'_> {
    GaugeGuard(gauge)
}

struct Queued {
    job_id: String,
    request: JobRequest,
    runner: RunnerSpec,
    submitted_at: Timestamp,
}

struct Inner {
    semantic: Arc<SemanticStore>,
    registry: Arc<ModelRegistry>,
    forecasts: Arc<ForecastStore>,
    config: ExecutorConfig,
    gauge: ProcessGauge,
    records: RwLock<Vec<JobRecord>>,
    index: RwLock<HashMap<String, usize>>,
    journal: Option<Mutex<Journal<JobRecord>>>,
    outstanding: AtomicUsize,
    completed: Notify,
}

/// Handle to the job pool. Must be created inside a tokio runtime.
pub struct Executor {
    inner: Arc<Inner>,
    queue: mpsc::UnboundedSender<Queued>,
}

impl Executor {
    pub fn start(
        semantic: Arc<SemanticStore>,
        registry: Arc<ModelRegistry>,
        forecasts: Arc<ForecastStore>,
        config: ExecutorConfig,
        journal_path: Option<&Path>,
    ) -> Result<Self> {
        if config.max_parallel == 0 {
            return Err(Error::BadConfig {
                field: "max_parallel".into(),
                message: "must be at least 1".into(),
            });
        }
        let (journal, history) = match journal_path {
            Some(path) => {
                let (j, records) = Journal::open(path)?;
                (Some(Mutex::new(j)), records)
            }
            None => (None, Vec::new()),
        };
        let index = history
            .iter()
            .enumerate()
            .map(|(i, r): (usize, &JobRecord)| (r.job_id.clone(), i))
            .collect();
        let inner = Arc::new(Inner {
            semantic,
            registry,
            forecasts,
            gauge: ProcessGauge::default(),
            records: RwLock::new(history),
            index: RwLock::new(index),
            journal,
            outstanding: AtomicUsize::new(0),
            completed: Notify::new(),
            config,
        });
        let (tx, rx) = mpsc::unbounded_channel();
        tokio::spawn(dispatch(Arc::clone(&inner), rx));
        Ok(Self { inner, queue: tx })
    }

    pub fn config(&self) -> &ExecutorConfig {
        &self.inner.config
    }

    /// Queues a job and returns its id without waiting for it.
    pub fn submit(&self, request: JobRequest) -> Result<String> {
        let runner = self.inner.registry.runner_for(request.model_id)?;
        let job_id = uuid::Uuid::new_v4().to_string();
        self.inner.outstanding.fetch_add(1, Ordering::SeqCst);
        let queued = Queued {
            job_id: job_id.clone(),
            request,
            runner,
            submitted_at: Utc::now(),
        };
        if self.queue.send(queued).is_err() {
            self.inner.outstanding.fetch_sub(1, Ordering::SeqCst);
            return Err(Error::ExecutorClosed);
        }
        Ok(job_id)
    }

    pub fn record(&self, job_id: &str) -> Option<JobRecord> {
        let index = self.inner.index.read().expect("job index poisoned");
        let i = *index.get(job_id)?;
        self.inner.records.read().expect("job records poisoned").get(i).cloned()
    }

    pub fn records(&self, filter: &JobFilter) -> Vec<JobRecord> {
        self.inner
            .records
            .read()
            .expect("job records poisoned")
            .iter()
            .filter(|r| filter.matches(r))
            .cloned()
            .collect()
    }

    pub async fn wait(&self, job_id: &str) -> JobRecord {
        loop {
            let notified = self.inner.completed.notified();
            tokio::pin!(notified);
            notified.as_mut().enable();
            if let Some(r) = self.record(job_id) {
                return r;
            }
            notified.await;
        }
    }

    /// Resolves once no submitted job is queued or running.
    pub async fn wait_idle(&self) {
        loop {
            let notified = self.inner.completed.notified();
            tokio::pin!(notified);
            notified.as_mut().enable();
            if self.inner.outstanding.load(Ordering::SeqCst) == 0 {
                return;
            }
            notified.await;
        }
    }

    pub fn outstanding(&self) -> usize {
        self.inner.outstanding.load(Ordering::SeqCst)
    }

    pub fn gauge(&self) -> &ProcessGauge {
        &self.inner.gauge
    }

    pub fn job_metrics(&self, filter: &JobFilter) -> JobMetrics {
        let durations: Vec<f64> = self.records(filter).iter().map(|r| r.duration).collect();
        duration_metrics(&durations)
    }
}

async fn dispatch(inner: Arc<Inner>, mut rx: mpsc::UnboundedReceiver<Queued>) {
    let slots = Arc::new(Semaphore::new(inner.config.max_parallel));
    while let Some(job) = rx.recv().await {
        let Ok(permit) = Arc::clone(&slots).acquire_owned().await else {
            break;
        };
        let inner = Arc::clone(&inner);
        tokio::spawn(async move {
            run_job(&inner, job).await;
            drop(permit);
        });
    }
}

async fn run_job(inner: &Arc<Inner>, job: Queued) {
    let started_at = Utc::now();
    let result = execute(inner, &job).await;
    let finished_at = Utc::now();
    let duration = (finished_at - started_at).num_microseconds().unwrap_or(0) as f64 / 1e6;
    let (outcome, message, model_version, points) = match result {
        Ok(done) => (JobOutcome::Ok, None, done.version, done.points),
        Err(Error::Timeout(t)) => (JobOutcome::Timeout, Some(Error::Timeout(t).to_string()), None, None),
        Err(e) => (JobOutcome::Failed, Some(e.to_string()), None, None),
    };
    if let Some(m) = &message {
        tracing::warn!(job = %job.job_id, model = %job.request.model_id, task = %job.request.task, "{m}");
    }
    let record = JobRecord {
        job_id: job.job_id,
        model_id: job.request.model_id,
        task: job.request.task,
        due_time: job.request.due_time,
        submitted_at: job.submitted_at,
        started_at,
        finished_at,
        duration,
        outcome,
        message,
        model_version,
        points,
    };
    if let Some(journal) = &inner.journal {
        if let Err(error) = journal.lock().expect("journal poisoned").append(&record) {
            tracing::error!(%error, "job journal write failed");
        }
    }
    {
        let mut records = inner.records.write().expect("job records poisoned");
        inner
            .index
            .write()
            .expect("job index poisoned")
            .insert(record.job_id.clone(), records.len());
        records.push(record);
    }
    inner.outstanding.fetch_sub(1, Ordering::SeqCst);
    inner.completed.notify_waiters();
}

struct Done {
    version: Option<u32>,
    points: Option<usize>,
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T> + Send + 'static) -> Result<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| Error::RunnerCrashed(format!("store task failed: {e}")))?
}

async fn execute(inner: &Arc<Inner>, job: &Queued) -> Result<Done> {
    let request = job.request.clone();
    let spec = {
        let inner = Arc::clone(inner);
        let job_id = job.job_id.clone();
        blocking(move || build_spec(&inner, &request, job_id)).await?
    };
    let mut env = vec![("CASTORLITE_SERVICE_URL".to_string(), inner.config.service_url.clone())];
    if let Some(token) = &inner.config.token {
        env.push((TOKEN_ENV.to_string(), token.clone()));
    }
    let options = InvokeOptions {
        timeout: Some(inner.config.timeout),
        env,
    };
    let train_started = Utc::now();
    let output = invoke_runner(&job.runner, &spec, &options, Some(&inner.gauge)).await?;
    let model_id = job.request.model_id;
    let due = job.request.due_time;
    let inner = Arc::clone(inner);
    match output {
        RunnerOutput::Trained { blob, mut metadata } => {
            let took = (Utc::now() - train_started).num_milliseconds() as f64 / 1e3;
            metadata.insert("train_time".into(), Value::String(format_ts(&due)));
            metadata.insert("training_duration_s".into(), Value::from(took));
            metadata.insert("job_id".into(), Value::String(job.job_id.clone()));
            let version =
                blocking(move || inner.registry.save_model_version(model_id, blob, metadata)).await?;
            Ok(Done {
                version: Some(version),
                points: None,
            })
        }
        RunnerOutput::Scored(points) => {
            let version = spec.model_version;
            let n = blocking(move || {
                inner.forecasts.save_forecast(NewForecast {
                    model_id,
                    model_version: version,
                    issued_at: due,
                    points,
                })
            })
            .await?;
            Ok(Done {
                version,
                points: Some(n),
            })
        }
    }
}

fn build_spec(inner: &Inner, request: &JobRequest, job_id: String) -> Result<JobSpec> {
    let bound = inner.semantic.resolve_context(&request.context)?;
    let model_version = match request.task {
        Task::Train => None,
        Task::Score => match pinned_version(&request.user_parameters) {
            Some(v) => Some(v),
            None => inner.registry.latest_version_number(request.model_id)?,
        },
    };
    let mut user_params: Map<String, Value> = request.user_parameters.clone();
    user_params.insert(
        ISSUE_TIME_PARAM.into(),
        Value::String(format_ts(&request.due_time)),
    );
    Ok(JobSpec {
        task: request.task,
        context: bound.context,
        model_id: request.model_id,
        model_version,
        user_params,
        service_url: inner.config.service_url.clone(),
        job_id,
    })
}

fn pinned_version(params: &Map<String, Value>) -> Option<u32> {
    params
        .get("model_version")
        .and_then(Value::as_u64)
        .and_then(|v| u32::try_from(v).ok())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_of_durations() {
        let m = duration_metrics(&[10.0, 20.0]);
        assert_eq!(m.count, 2);
        assert_eq!(m.mean_duration, Some(15.0));
        assert_eq!(m.p95_duration, Some(20.0));
        let empty = duration_metrics(&[]);
        assert_eq!(empty.count, 0);
        assert!(empty.mean_duration.is_none() && empty.p95_duration.is_none());
        let hundred: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(duration_metrics(&hundred).p95_duration, Some(95.0));
    }

    #[test]
    fn pinned_version_reads_user_param() {
        let mut p = Map::new();
        assert_eq!(pinned_version(&p), None);
        p.insert("model_version".into(), Value::from(2));
        assert_eq!(pinned_version(&p), Some(2));
    }

    #[test]
    fn gauge_tracks_peak() {
        let g = ProcessGauge::default();
        g.enter();
        g.enter();
        g.exit();
        g.enter();
        assert_eq!(g.live(), 2);
        assert_eq!(g.peak(), 2);
    }
}
