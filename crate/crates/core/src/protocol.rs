//! Runner wire protocol.
//!
//! The executor writes one single-line JSON [`JobSpec`] to the runner's
//! stdin and reads one JSON [`JobResult`] from its stdout. Runners log to
//! stderr only.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::registry::{decode_blob, encode_blob, ModelId};
use crate::scheduler::Task;
use crate::semantic::Context;
use crate::time::DataPoint;

/// The user parameter carrying the job's due time, which is the forecast issue time.
pub const ISSUE_TIME_PARAM: &str = "issue_time";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobSpec {
    pub task: Task,
    pub context: Context,
    pub model_id: ModelId,
    pub model_version: Option<u32>,
    pub user_params: Map<String, Value>,
    pub service_url: String,
    pub job_id: String,
}

impl JobSpec {
    /// The request line written to the runner, newline-terminated.
    pub fn to_line(&self) -> Result<String> {
        let mut line = serde_json::to_string(self)?;
        line.push('\n');
        Ok(line)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobResult {
    pub status: JobStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_blob: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<Map<String, Value>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<DataPoint>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

impl JobResult {
    pub fn trained(blob: &[u8], metadata: Map<String, Value>) -> Self {
        Self {
            status: JobStatus::Ok,
            model_blob: Some(encode_blob(blob)),
            metadata: Some(metadata),
            points: None,
            message: None,
        }
    }

    pub fn scored(points: Vec<DataPoint>) -> Self {
        Self {
            status: JobStatus::Ok,
            model_blob: None,
            metadata: None,
            points: Some(points),
            message: None,
        }
    }

    pub fn error(message: impl Into<String>) -> Self {
        Self {
            status: JobStatus::Error,
            model_blob: None,
            metadata: None,
            points: None,
            message: Some(message.into()),
        }
    }

    /// Parses a runner's complete stdout.
    pub fn parse(stdout: &str) -> Result<Self> {
        let trimmed = stdout.trim();
        if trimmed.is_empty() {
            return Err(Error::MalformedResult("runner wrote nothing to stdout".into()));
        }
        serde_json::from_str(trimmed).map_err(|e| Error::MalformedResult(e.to_string()))
    }

    /// Checks the result against the task it answers.
    pub fn into_output(self, task: Task) -> Result<RunnerOutput> {
        if self.status == JobStatus::Error {
            return Err(Error::RunnerFailed(
                self.message.unwrap_or_else(|| "runner reported an error".into()),
            ));
        }
        match task {
            Task::Train => {
                let blob = self
                    .model_blob
                    .ok_or_else(|| Error::MalformedResult("train result lacks model_blob".into()))?;
                Ok(RunnerOutput::Trained {
                    blob: decode_blob(&blob)?,
                    metadata: self.metadata.unwrap_or_default(),
                })
            }
            Task::Score => {
                let points = self
                    .points
                    .ok_or_else(|| Error::MalformedResult("score result lacks points".into()))?;
                if points.iter().any(|p| !p.value.is_finite()) {
                    return Err(Error::MalformedResult("non-finite forecast value".into()));
                }
                if points.windows(2).any(|w| w[1].timestamp <= w[0].timestamp) {
                    return Err(Error::MalformedResult("points are not strictly time-ordered".into()));
                }
                Ok(RunnerOutput::Scored(points))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunnerOutput {
    Trained {
        blob: Vec<u8>,
        metadata: Map<String, Value>,
    },
    Scored(Vec<DataPoint>),
}
