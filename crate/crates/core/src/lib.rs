//! Time-series model lifecycle platform.
//!
//! Data is keyed by a *context*, an (entity, signal) pair held in the
//! [`semantic`] store. Raw series live in [`timeseries`]; model deployments and
//! trained versions in [`registry`]; [`scheduler`] turns deployment schedules
//! into job requests that [`executor`] runs as runner subprocesses; scoring
//! output lands in [`forecast`].

pub mod error;
pub mod executor;
pub mod forecast;
mod journal;
pub mod platform;
pub mod protocol;
pub mod registry;
pub mod scale;
pub mod scheduler;
pub mod semantic;
pub mod synth;
pub mod throttle;
pub mod time;
pub mod timeseries;
pub mod weather;

pub use error::{Error, Result};
pub use platform::{Platform, PlatformOptions};
pub use registry::ModelId;
pub use semantic::{ContextKey, SeriesId};
pub use time::{format_ts, parse_ts, DataPoint, FrequencySpec, Timestamp};
