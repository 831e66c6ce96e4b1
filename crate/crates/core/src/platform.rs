//! All stores wired together over one data directory.

use std::fs::{File, TryLockError};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::forecast::ForecastStore;
use crate::registry::{Manifest, ModelRegistry};
use crate::scheduler::{FiringLedger, Scheduler};
use crate::semantic::SemanticStore;
use crate::throttle::StoreThrottle;
use crate::timeseries::TimeSeriesEngine;
use crate::weather::WeatherProvider;

#[derive(Default)]
pub struct PlatformOptions {
    pub manifest: Manifest,
    pub throttle: StoreThrottle,
    pub weather: Option<Arc<dyn WeatherProvider>>,
    /// Scheduler ledger location; defaults to `<data_dir>/ledger.jsonl`.
    pub ledger_path: Option<PathBuf>,
}

pub struct Platform {
    pub semantic: Arc<SemanticStore>,
    pub timeseries: Arc<TimeSeriesEngine>,
    pub registry: Arc<ModelRegistry>,
    pub forecasts: Arc<ForecastStore>,
    pub scheduler: Arc<Scheduler>,
    pub throttle: Arc<StoreThrottle>,
    data_dir: Option<PathBuf>,
    _lock: Option<File>,
}

impl Platform {
    pub fn in_memory(options: PlatformOptions) -> Result<Self> {
        let throttle = Arc::new(options.throttle);
        let semantic = Arc::new(SemanticStore::in_memory());
        let mut timeseries = TimeSeriesEngine::new(Arc::clone(&semantic), Arc::clone(&throttle));
        if let Some(w) = options.weather {
            timeseries = timeseries.with_weather(w);
        }
        let timeseries = Arc::new(timeseries);
        let registry = Arc::new(ModelRegistry::new(
            Arc::clone(&semantic),
            Arc::clone(&throttle),
            options.manifest,
        ));
        let forecasts = Arc::new(ForecastStore::new(
            Arc::clone(&semantic),
            Arc::clone(&registry),
            Arc::clone(&timeseries),
            Arc::clone(&throttle),
        ));
        let ledger = match options.ledger_path {
            Some(path) => FiringLedger::open(path)?,
            None => FiringLedger::in_memory(),
        };
        let scheduler = Arc::new(Scheduler::new(Arc::clone(&registry), ledger));
        Ok(Self {
            semantic,
            timeseries,
            registry,
            forecasts,
            scheduler,
            throttle,
            data_dir: None,
            _lock: None,
        })
    }

    /// Opens (or creates) a persistent platform under `data_dir`.
    pub fn open(data_dir: impl AsRef<Path>, options: PlatformOptions) -> Result<Self> {
        let dir = data_dir.as_ref().to_path_buf();
        if dir.exists() && !dir.is_dir() {
            return Err(Error::BadConfig {
                field: "data_dir".into(),
                message: format!("{} is not a directory", dir.display()),
            });
        }
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let lock = lock_dir(&dir)?;
        let throttle = Arc::new(options.throttle);
        let semantic = Arc::new(SemanticStore::open(dir.join("semantic.jsonl"))?);
        let mut timeseries =
            TimeSeriesEngine::open(Arc::clone(&semantic), Arc::clone(&throttle), dir.join("series"))?;
        if let Some(w) = options.weather {
            timeseries = timeseries.with_weather(w);
        }
        let timeseries = Arc::new(timeseries);
        let registry = Arc::new(ModelRegistry::open(
            Arc::clone(&semantic),
            Arc::clone(&throttle),
            options.manifest,
            dir.join("registry"),
        )?);
        let forecasts = Arc::new(ForecastStore::open(
            Arc::clone(&semantic),
            Arc::clone(&registry),
            Arc::clone(&timeseries),
            Arc::clone(&throttle),
            dir.join("forecasts.jsonl"),
        )?);
        let ledger_path = options.ledger_path.unwrap_or_else(|| dir.join("ledger.jsonl"));
        let scheduler = Arc::new(Scheduler::new(
            Arc::clone(&registry),
            FiringLedger::open(ledger_path)?,
        ));
        Ok(Self {
            semantic,
            timeseries,
            registry,
            forecasts,
            scheduler,
            throttle,
            data_dir: Some(dir),
            _lock: Some(lock),
        })
    }

    pub fn data_dir(&self) -> Option<&Path> {
        self.data_dir.as_deref()
    }

    /// Where the executor journals job records, if persistent.
    pub fn jobs_path(&self) -> Option<PathBuf> {
        self.data_dir.as_ref().map(|d| d.join("jobs.jsonl"))
    }
}

/// Journals assume a single writer, so one process owns a data directory at a time.
fn lock_dir(dir: &Path) -> Result<File> {
    let path = dir.join(".lock");
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    match file.try_lock() {
        Ok(()) => Ok(file),
        Err(TryLockError::WouldBlock) => Err(Error::BadConfig {
            field: "data_dir".into(),
            message: format!("{} is in use by another process", dir.display()),
        }),
        Err(TryLockError::Error(e)) => Err(Error::io(&path, e)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn data_dir_has_one_owner() {
        let dir = tempfile::tempdir().unwrap();
        let first = Platform::open(dir.path(), PlatformOptions::default()).unwrap();
        assert!(matches!(
            Platform::open(dir.path(), PlatformOptions::default()),
            Err(Error::BadConfig { field, .. }) if field == "data_dir"
        ));
        drop(first);
        Platform::open(dir.path(), PlatformOptions::default()).unwrap();
    }
}
