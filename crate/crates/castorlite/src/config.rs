//! Service configuration, validated before anything starts.

use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use castorlite_core::registry::{Manifest, ManifestEntry};
use castorlite_core::throttle::StoreThrottle;
use castorlite_core::weather::{FileWeather, SyntheticWeather, WeatherProvider};
use castorlite_core::{Error, Platform, PlatformOptions, Result};

/// Dist name of the runners shipped with this crate.
pub const BUILTIN_DIST: &str = "castorlite-builtin";
pub const BUILTIN_VERSION: &str = "1.0.0";
pub const NAIVE_RUNNER_BIN: &str = "castorlite-naive-runner";

#[derive(Debug, Clone, PartialEq)]
pub enum WeatherSource {
    Synthetic,
    File(PathBuf),
    Disabled,
}

impl WeatherSource {
    /// Parses the provider name plus optional fixture path.
    pub fn from_parts(kind: &str, file: Option<PathBuf>) -> Result<Self> {
        match (kind, file) {
            ("synthetic", _) => Ok(Self::Synthetic),
            ("none", _) => Ok(Self::Disabled),
            ("file", Some(path)) => Ok(Self::File(path)),
            ("file", None) => Err(bad("weather_file", "required when weather is `file`")),
            (other, _) => Err(bad(
                "weather",
                &format!("unknown provider `{other}`; expected synthetic, file or none"),
            )),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub bind: IpAddr,
    /// 0 picks an ephemeral port.
    pub port: u16,
    /// None keeps everything in memory.
    pub data_dir: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub weather: WeatherSource,
    pub ledger: Option<PathBuf>,
    pub token: Option<String>,
    pub tick_period: Duration,
    pub max_parallel: usize,
    pub runner_timeout: Duration,
    pub store_latency: Duration,
    pub store_connections: usize,
    /// Overrides where the builtin runner executable is looked up.
    pub runner_path: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: IpAddr::V4(Ipv4Addr::LOCALHOST),
            port: 8080,
            data_dir: None,
            manifest: None,
            weather: WeatherSource::Synthetic,
            ledger: None,
            token: None,
            tick_period: castorlite_core::scheduler::DEFAULT_TICK_PERIOD,
            max_parallel: 4,
            runner_timeout: castorlite_core::executor::DEFAULT_RUNNER_TIMEOUT,
            store_latency: Duration::ZERO,
            store_connections: 2,
            runner_path: None,
        }
    }
}

fn bad(field: &str, message: &str) -> Error {
    Error::BadConfig {
        field: field.into(),
        message: message.into(),
    }
}

impl ServiceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tick_period.is_zero() {
            return Err(bad("tick_period", "must be positive"));
        }
        if self.max_parallel == 0 {
            return Err(bad("max_parallel", "must be at least 1"));
        }
        if self.runner_timeout.is_zero() {
            return Err(bad("runner_timeout", "must be positive"));
        }
        if self.store_connections == 0 {
            return Err(bad("store_connections", "must be at least 1"));
        }
        if let Some(path) = &self.manifest {
            if !path.is_file() {
                return Err(bad("manifest", &format!("{} does not exist", path.display())));
            }
        }
        if let WeatherSource::File(path) = &self.weather {
            if !path.is_file() {
                return Err(bad("weather_file", &format!("{} does not exist", path.display())));
            }
        }
        if let Some(dir) = &self.data_dir {
            if dir.exists() && !dir.is_dir() {
                return Err(bad("data_dir", &format!("{} is not a directory", dir.display())));
            }
        }
        if let Some(token) = &self.token {
            if token.is_empty() {
                return Err(bad("token", "must not be empty when set"));
            }
        }
        Ok(())
    }

    /// Builtin runners, overlaid with the manifest file if one is configured.
    pub fn load_manifest(&self) -> Result<Manifest> {
        let mut manifest = builtin_manifest(self.runner_path.as_deref());
        if let Some(path) = &self.manifest {
            for (dist, versions) in Manifest::load(path)?.dists {
                for (version, entry) in versions {
                    manifest.insert(&dist, &version, entry);
                }
            }
        }
        Ok(manifest)
    }

    pub fn weather_provider(&self) -> Result<Option<Arc<dyn WeatherProvider>>> {
        Ok(match &self.weather {
            WeatherSource::Synthetic => Some(Arc::new(SyntheticWeather)),
            WeatherSource::File(path) => Some(Arc::new(FileWeather::load(path)?)),
            WeatherSource::Disabled => None,
        })
    }

    pub fn open_platform(&self) -> Result<Platform> {
        self.validate()?;
        let options = PlatformOptions {
            manifest: self.load_manifest()?,
            throttle: StoreThrottle::new(self.store_latency, self.store_connections),
            weather: self.weather_provider()?,
            ledger_path: self.ledger.clone(),
        };
        match &self.data_dir {
            Some(dir) => Platform::open(dir, options),
            None => Platform::in_memory(options),
        }
    }

    pub fn socket_addr(&self) -> SocketAddr {
        SocketAddr::new(self.bind, self.port)
    }

    pub async fn bind_listener(&self) -> Result<tokio::net::TcpListener> {
        let addr = self.socket_addr();
        tokio::net::TcpListener::bind(addr).await.map_err(|e| {
            if e.kind() == std::io::ErrorKind::AddrInUse {
                Error::PortInUse(self.port)
            } else {
                Error::io(addr.to_string(), e)
            }
        })
    }
}

/// Locates the naive runner next to the running executable. Test binaries
/// live one directory below the binaries, so the parent is tried too.
pub fn find_naive_runner() -> Option<PathBuf> {
    let exe = std::env::current_exe().ok()?;
    let name = format!("{NAIVE_RUNNER_BIN}{}", std::env::consts::EXE_SUFFIX);
    exe.ancestors()
        .skip(1)
        .take(2)
        .map(|dir| dir.join(&name))
        .find(|p| p.is_file())
}

/// `castorlite-builtin 1.0.0` mapped to the naive runner, when it can be found.
pub fn builtin_manifest(runner: Option<&Path>) -> Manifest {
    let mut manifest = Manifest::default();
    if let Some(command) = runner.map(Path::to_path_buf).or_else(find_naive_runner) {
        manifest.insert(
            BUILTIN_DIST,
            BUILTIN_VERSION,
            ManifestEntry {
                command,
                args: Vec::new(),
            },
        );
    }
    manifest
}
