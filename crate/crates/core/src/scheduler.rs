//! Due-job computation over registered schedules, with an exactly-once ledger.
//!
//! Occurrences of a schedule are `start + k * repeat` for `k >= 0`. A tick
//! emits at most one request per (model, task): the latest occurrence not
//! after `now`, if it has not fired yet. Older missed occurrences are skipped.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::{Arc, Mutex};
use std::time::Duration as StdDuration;

use chrono::Duration;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::journal::Journal;
use crate::registry::{ModelId, ModelRegistry, ScheduleSpec};
use crate::semantic::ContextKey;
use crate::time::Timestamp;

pub const DEFAULT_TICK_PERIOD: StdDuration = StdDuration::from_secs(60);

/// Parses `<N>_<unit>` with unit in minutes, hours, days or weeks (singular accepted).
pub fn parse_repeat_every(text: &str) -> Result<Duration> {
    let bad = || Error::MalformedSchedule(text.to_string());
    let (count, unit) = text.split_once('_').ok_or_else(bad)?;
    if count.is_empty() || !count.bytes().all(|b| b.is_ascii_digit()) {
        return Err(bad());
    }
    let n: i64 = count.parse().map_err(|_| bad())?;
    if n == 0 {
        return Err(bad());
    }
    let unit_secs: i64 = match unit {
        "minute" | "minutes" => 60,
        "hour" | "hours" => 3_600,
        "day" | "days" => 86_400,
        "week" | "weeks" => 604_800,
        _ => return Err(bad()),
    };
    n.checked_mul(unit_secs)
        .and_then(Duration::try_seconds)
        .ok_or_else(bad)
}

/// A repeat interval that keeps the text it was written with.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RepeatEvery {
    text: String,
    duration: Duration,
}

impl RepeatEvery {
    pub fn duration(&self) -> Duration {
        self.duration
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }
}

impl FromStr for RepeatEvery {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        Ok(Self {
            duration: parse_repeat_every(text)?,
            text: text.to_string(),
        })
    }
}

impl fmt::Display for RepeatEvery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

impl Serialize for RepeatEvery {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.text)
    }
}

impl<'de> Deserialize<'de> for RepeatEvery {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// Smallest occurrence at or after `after`.
pub fn next_due(spec: &ScheduleSpec, after: Timestamp) -> Option<Timestamp> {
    if after <= spec.start_time {
        return Some(spec.start_time);
    }
    let step = spec.repeat_every.as_ref()?.duration().num_microseconds()?;
    let elapsed = (after - spec.start_time).num_microseconds()?;
    let k = (elapsed + step - 1) / step;
    Some(spec.start_time + Duration::microseconds(k.checked_mul(step)?))
}

/// Largest occurrence at or before `now`.
pub fn latest_due(spec: &ScheduleSpec, now: Timestamp) -> Option<Timestamp> {
    if now < spec.start_time {
        return None;
    }
    let Some(repeat) = &spec.repeat_every else {
        return Some(spec.start_time);
    };
    let step = repeat.duration().num_microseconds()?;
    let elapsed = (now - spec.start_time).num_microseconds()?;
    Some(spec.start_time + Duration::microseconds((elapsed / step) * step))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Train,
    Score,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Train => "train",
            Task::Score => "score",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Task::Train),
            "score" => Ok(Task::Score),
            other => Err(Error::MalformedConfig {
                path: "task".into(),
                message: format!("unknown task `{other}`"),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRequest {
    pub model_id: ModelId,
    pub task: Task,
    #[serde(with = "crate::time::rfc3339")]
    pub due_time: Timestamp,
    pub context: ContextKey,
    pub user_parameters: Map<String, Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
struct Firing(ModelId, Task, #[serde(with = "crate::time::rfc3339")] Timestamp);

/// Append-only set of (model, task, due_time) triples already handed out.
pub struct FiringLedger {
    entries: HashSet<Firing>,
    journal: Option<Journal<Firing>>,
}

impl FiringLedger {
    pub fn in_memory() -> Self {
        Self {
            entries: HashSet::new(),
            journal: None,
        }
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let (journal, records) = Journal::open(path)?;
        Ok(Self {
            entries: records.into_iter().collect(),
            journal: Some(journal.with_sync(true)),
        })
    }

    pub fn contains(&self, model: ModelId, task: Task, due: Timestamp) -> bool {
        self.entries.contains(&Firing(model, task, due))
    }

    /// Returns false when the triple was already present.
    pub fn insert(&mut self, model: ModelId, task: Task, due: Timestamp) -> Result<bool> {
        let firing = Firing(model, task, due);
        if self.entries.contains(&firing) {
            return Ok(false);
        }
        if let Some(journal) = &mut self.journal {
            journal.append(&firing)?;
        }
        self.entries.insert(firing);
        Ok(true)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub struct Scheduler {
    registry: Arc<ModelRegistry>,
    ledger: Mutex<FiringLedger>,
}

impl Scheduler {
    pub fn new(registry: Arc<ModelRegistry>, ledger: FiringLedger) -> Self {
        Self {
            registry,
            ledger: Mutex::new(ledger),
        }
    }

    pub fn mark_fired(&self, model: ModelId, task: Task, due: Timestamp) -> Result<()> {
        self.ledger
            .lock()
            .expect("ledger poisoned")
            .insert(model, task, due)
            .map(|_| ())
    }

    pub fn ledger_len(&self) -> usize {
        self.ledger.lock().expect("ledger poisoned").len()
    }

    /// Emits every (model, task) whose latest occurrence `<= now` has not fired.
    /// Deployments whose implementation no longer resolves are skipped.
    pub fn tick(&self, now: Timestamp) -> Vec<JobRequest> {
        let mut ledger = self.ledger.lock().expect("ledger poisoned");
        let mut out = Vec::new();
        for deployment in self.registry.deployments() {
            let schedules = [
                (Task::Train, &deployment.config.training_schedule),
                (Task::Score, &deployment.config.scoring_schedule),
            ];
            let mut resolvable = None;
            for (task, spec) in schedules {
                let Some(due) = spec.as_ref().and_then(|s| latest_due(s, now)) else {
                    continue;
                };
                if ledger.contains(deployment.model_id, task, due) {
                    continue;
                }
                let ok = *resolvable.get_or_insert_with(|| {
                    match self.registry.runner_for(deployment.model_id) {
                        Ok(_) => true,
                        Err(error) => {
                            tracing::warn!(model = %deployment.model_id, %error, "skipping deployment");
                            false
                        }
                    }
                });
                if !ok {
                    continue;
                }
                if let Err(error) = ledger.insert(deployment.model_id, task, due) {
                    tracing::error!(model = %deployment.model_id, %error, "ledger write failed");
                    continue;
                }
                out.push(JobRequest {
                    model_id: deployment.model_id,
                    task,
                    due_time: due,
                    context: deployment.config.context.clone(),
                    user_parameters: deployment.config.user_parameters.clone(),
                });
            }
        }
        out
    }
}
