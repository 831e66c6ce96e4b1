//! The builtin runner: reads one job spec on stdin, writes one result on stdout.
//!
//! Modules:
//! - `naive`: persistence forecast. Train stores the last observation; score
//!   repeats the last observation at or before the issue time.
//! - `stub`: sleeps `sleep_ms`, makes one series query, returns a one-point
//!   forecast. Used by the throughput harness.

use std::io::{BufRead, Write};
use std::time::Duration as StdDuration;

use chrono::{Duration, NaiveDate};
use serde_json::{json, Map, Value};

use castorlite_core::protocol::{JobResult, JobSpec, ISSUE_TIME_PARAM};
use castorlite_core::scheduler::Task;
use castorlite_core::time::{format_ts, parse_ts, DataPoint, FrequencySpec, Timestamp};

use crate::client::ServiceClient;

pub const DEFAULT_FREQUENCY: &str = "1H";
pub const DEFAULT_HORIZON: &str = "24H";
pub const DEFAULT_LOOKBACK: &str = "7D";
pub const DEFAULT_STUB_SLEEP_MS: u64 = 200;

/// A failure reported back to the executor as an error result.
#[derive(Debug)]
pub struct RunnerError(pub String);

impl<E: std::fmt::Display> From<E> for RunnerError {
    fn from(e: E) -> Self {
        RunnerError(e.to_string())
    }
}

type Outcome = std::result::Result<JobResult, RunnerError>;

fn param<'a>(params: &'a Map<String, Value>, key: &str) -> Option<&'a str> {
    params.get(key).and_then(Value::as_str)
}

fn duration_param(params: &Map<String, Value>, key: &str, default: &str) -> Result<Duration, RunnerError> {
    let text = param(params, key).unwrap_or(default);
    let spec: FrequencySpec = text
        .parse()
        .map_err(|e| RunnerError(format!("user parameter `{key}`: {e}")))?;
    Ok(spec.duration())
}

/// Accepts RFC 3339 or a bare `YYYY-MM-DD` date (midnight UTC).
fn parse_instant(text: &str) -> Result<Timestamp, RunnerError> {
    if let Ok(t) = parse_ts(text) {
        return Ok(t);
    }
    NaiveDate::parse_from_str(text, "%Y-%m-%d")
        .map(|d| d.and_hms_opt(0, 0, 0).expect("midnight").and_utc())
        .map_err(|_| RunnerError(format!("not a timestamp: `{text}`")))
}

fn issue_time(spec: &JobSpec) -> Result<Timestamp, RunnerError> {
    let text = param(&spec.user_params, ISSUE_TIME_PARAM)
        .ok_or_else(|| RunnerError(format!("user parameter `{ISSUE_TIME_PARAM}` is missing")))?;
    parse_instant(text)
}

/// Observations in `[start, until]`, inclusive of `until`.
fn history(
    client: &ServiceClient,
    spec: &JobSpec,
    start: Timestamp,
    until: Timestamp,
) -> Result<Vec<DataPoint>, RunnerError> {
    let window = client.timeseries(&spec.context.key(), start, until + Duration::seconds(1))?;
    Ok(window
        .points
        .into_iter()
        .filter(|p| p.timestamp <= until)
        .collect())
}

fn no_data(spec: &JobSpec, until: Timestamp) -> RunnerError {
    RunnerError(format!(
        "NoData: no observations for {} at or before {}",
        spec.context.key(),
        format_ts(&until)
    ))
}

/// Flat forecast of `value` on `issue + k * frequency` for `k = 1..=horizon/frequency`.
pub fn flat_forecast(
    issue: Timestamp,
    value: f64,
    frequency: Duration,
    horizon: Duration,
) -> Result<Vec<DataPoint>, RunnerError> {
    let step = frequency.num_seconds();
    let span = horizon.num_seconds();
    if step <= 0 || span < step || span % step != 0 {
        return Err(RunnerError(format!(
            "horizon {span}s is not a positive multiple of frequency {step}s"
        )));
    }
    Ok((1..=span / step)
        .map(|k| DataPoint::new(issue + frequency * k as i32, value))
        .collect())
}

fn naive(spec: &JobSpec, client: &ServiceClient) -> Outcome {
    let issue = issue_time(spec)?;
    let params = &spec.user_params;
    match spec.task {
        Task::Train => {
            let (start, end) = match params.get("train_time").and_then(Value::as_array) {
                Some(bounds) if bounds.len() == 2 => {
                    let at = |i: usize| {
                        bounds[i]
                            .as_str()
                            .ok_or_else(|| RunnerError("train_time entries must be strings".into()))
                            .and_then(parse_instant)
                    };
                    (at(0)?, at(1)?.min(issue))
                }
                _ => (issue - duration_param(params, "lookback", DEFAULT_LOOKBACK)?, issue),
            };
            let points = history(client, spec, start, end)?;
            let last = points.last().ok_or_else(|| no_data(spec, end))?;
            let blob = serde_json::to_vec(&json!({
                "last_value": last.value,
                "last_time": format_ts(&last.timestamp),
            }))?;
            let mut metadata = Map::new();
            metadata.insert("n_rows".into(), json!(points.len()));
            Ok(JobResult::trained(&blob, metadata))
        }
        Task::Score => {
            let frequency = duration_param(params, "frequency", DEFAULT_FREQUENCY)?;
            let horizon = duration_param(params, "horizon", DEFAULT_HORIZON)?;
            let lookback = duration_param(params, "lookback", DEFAULT_LOOKBACK)?;
            let points = history(client, spec, issue - lookback, issue)?;
            let last = points.last().ok_or_else(|| no_data(spec, issue))?;
            Ok(JobResult::scored(flat_forecast(issue, last.value, frequency, horizon)?))
        }
    }
}

fn stub(spec: &JobSpec, client: &ServiceClient) -> Outcome {
    let issue = issue_time(spec)?;
    let sleep_ms = spec
        .user_params
        .get("sleep_ms")
        .and_then(Value::as_u64)
        .unwrap_or(DEFAULT_STUB_SLEEP_MS);
    std::thread::sleep(StdDuration::from_millis(sleep_ms));
    let points = history(client, spec, issue - Duration::hours(1), issue)?;
    let value = points.last().map_or(0.0, |p| p.value);
    match spec.task {
        Task::Train => Ok(JobResult::trained(&value.to_le_bytes(), Map::new())),
        Task::Score => Ok(JobResult::scored(vec![DataPoint::new(
            issue + Duration::hours(1),
            value,
        )])),
    }
}

/// Runs one job. Returns the process exit code.
pub fn run(module: &str, input: impl BufRead, mut output: impl Write) -> i32 {
    let (result, code) = match execute(module, input) {
        Ok(result) => (result, 0),
        Err(RunnerError(message)) => {
            eprintln!("runner error: {message}");
            (JobResult::error(message), 1)
        }
    };
    let line = serde_json::to_string(&result).expect("results always serialize");
    if writeln!(output, "{line}").and_then(|_| output.flush()).is_err() {
        return 1;
    }
    code
}

fn execute(module: &str, mut input: impl BufRead) -> Outcome {
    let mut line = String::new();
    input.read_line(&mut line)?;
    let spec: JobSpec =
        serde_json::from_str(line.trim()).map_err(|e| RunnerError(format!("malformed job spec: {e}")))?;
    let client = ServiceClient::from_env(&spec.service_url);
    match module {
        "naive" => naive(&spec, &client),
        "stub" => stub(&spec, &client),
        other => Err(RunnerError(format!("unknown module `{other}`"))),
    }
}
