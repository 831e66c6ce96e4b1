//! Parallel-level sweep producing a jobs/hour table.

use std::io::Write;
use std::net::{TcpStream, ToSocketAddrs};
use std::time::{Duration as StdDuration, Instant};

use chrono::Duration;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::executor::{duration_metrics, Executor, ExecutorConfig, JobOutcome};
use crate::platform::Platform;
use crate::scheduler::JobRequest;

/// `round(parallel * 3600 / mean_duration)`.
pub fn jobs_per_hour(parallel: usize, mean_duration: f64) -> Result<u64> {
    if !mean_duration.is_finite() || mean_duration <= 0.0 {
        return Err(Error::NonPositiveDuration(mean_duration));
    }
    Ok((parallel as f64 * 3600.0 / mean_duration).round() as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleRow {
    pub parallel_jobs: usize,
    pub jobs_per_hour: u64,
    /// Mean duration of successful jobs, seconds.
    pub mean_duration: f64,
    pub jobs: usize,
    pub failed: usize,
    /// Time from first submission to last completion, seconds.
    pub wall_clock: f64,
}

impl ScaleRow {
    /// Completed jobs per hour over the level's wall-clock span.
    pub fn observed_jobs_per_hour(&self) -> f64 {
        (self.jobs - self.failed) as f64 * 3600.0 / self.wall_clock
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScaleReport {
    pub rows: Vec<ScaleRow>,
}

impl ScaleReport {
    pub fn row(&self, parallel: usize) -> Option<&ScaleRow> {
        self.rows.iter().find(|r| r.parallel_jobs == parallel)
    }

    /// Writes `parallel_jobs,jobs_per_hour,mean_duration_s`.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::BadConfig {
            field: "output".into(),
            message: e.to_string(),
        };
        w.write_record(["parallel_jobs", "jobs_per_hour", "mean_duration_s"])
            .map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([
                r.parallel_jobs.to_string(),
                r.jobs_per_hour.to_string(),
                format!("{:.3}", r.mean_duration),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io("output", e))
    }
}

/// Default jobs per level when none is given.
pub fn default_jobs_per_level(parallel: usize) -> usize {
    3 * parallel
}

/// For each level, runs `jobs_per_level` copies of `template` through a pool
/// bounded at that level. Copies get distinct due times, one minute apart,
/// starting at the template's.
pub async fn run_experiment(
    platform: &Platform,
    base: &ExecutorConfig,
    levels: &[usize],
    template: &JobRequest,
    jobs_per_level: Option<usize>,
) -> Result<ScaleReport> {
    check_service(&base.service_url)?;
    let mut report = ScaleReport::default();
    let mut offset = 0i64;
    for &level in levels {
        let config = ExecutorConfig {
            max_parallel: level,
            ..base.clone()
        };
        let executor = Executor::start(
            platform.semantic.clone(),
            platform.registry.clone(),
            platform.forecasts.clone(),
            config,
            None,
        )?;
        let n = jobs_per_level.unwrap_or_else(|| default_jobs_per_level(level));
        let began = Instant::now();
        let mut ids = Vec::with_capacity(n);
        for _ in 0..n {
            let mut job = template.clone();
            job.due_time = template.due_time + Duration::minutes(offset);
            offset += 1;
            ids.push(executor.submit(job)?);
        }
        executor.wait_idle().await;
        let wall_clock = began.elapsed().as_secs_f64();
        let records: Vec<_> = ids.iter().filter_map(|id| executor.record(id)).collect();
        let ok: Vec<f64> = records
            .iter()
            .filter(|r| r.outcome == JobOutcome::Ok)
            .map(|r| r.duration)
            .collect();
        let failed = n - ok.len();
        let Some(mean) = duration_metrics(&ok).mean_duration else {
            let reason = records
                .iter()
                .find_map(|r| r.message.clone())
                .unwrap_or_else(|| "no job completed".into());
            return Err(Error::RunnerFailed(format!("level {level}: {reason}")));
        };
        if failed > 0 {
            tracing::warn!(level, failed, "some jobs failed");
        }
        report.rows.push(ScaleRow {
            parallel_jobs: level,
            jobs_per_hour: jobs_per_hour(level, mean)?,
            mean_duration: mean,
            jobs: n,
            failed,
            wall_clock,
        });
    }
    Ok(report)
}

fn check_service(url: &str) -> Result<()> {
    let unavailable = || Error::ServiceUnavailable(url.to_string());
    let rest = url.split_once("://").map_or(url, |(_, r)| r);
    let authority = rest.split('/').next().unwrap_or_default();
    let addr = authority
        .to_socket_addrs()
        .map_err(|_| unavailable())?
        .next()
        .ok_or_else(unavailable)?;
    TcpStream::connect_timeout(&addr, StdDuration::from_secs(2))
        .map(drop)
        .map_err(|_| unavailable())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jobs_per_hour_arithmetic() {
        assert_eq!(jobs_per_hour(10, 6.4).unwrap(), 5625);
        assert_eq!(jobs_per_hour(50, 9.5).unwrap(), 18947);
        assert_eq!(jobs_per_hour(200, 27.0).unwrap(), 26667);
        assert_eq!(jobs_per_hour(1, 3600.0).unwrap(), 1);
        for bad in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            assert!(matches!(jobs_per_hour(1, bad), Err(Error::NonPositiveDuration(_))));
        }
    }

    #[test]
    fn csv_columns() {
        let report = ScaleReport {
            rows: vec![ScaleRow {
                parallel_jobs: 10,
                jobs_per_hour: 5625,
                mean_duration: 6.4,
                jobs: 30,
                failed: 0,
                wall_clock: 20.0,
            }],
        };
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "parallel_jobs,jobs_per_hour,mean_duration_s\n10,5625,6.400\n"
        );
    }

    #[test]
    fn unreachable_service() {
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let port = listener.local_addr().unwrap().port();
        assert!(check_service(&format!("http://127.0.0.1:{port}")).is_ok());
        drop(listener);
        assert!(matches!(
            check_service(&format!("http://127.0.0.1:{port}/")),
            Err(Error::ServiceUnavailable(_))
        ));
    }
}
