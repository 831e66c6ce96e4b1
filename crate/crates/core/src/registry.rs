//! Model deployments, implementation resolution, versions and ranking.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex, RwLock};

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::journal::Journal;
use crate::scheduler::RepeatEvery;
use crate::semantic::{ContextKey, SemanticStore};
use crate::throttle::StoreThrottle;
use crate::time::Timestamp;

pub const DEFAULT_BLOB_CAP: usize = 64 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelId(pub u64);

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for ModelId {
    type Err = std::num::ParseIntError;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        s.parse().map(ModelId)
    }
}

/// When a task first runs and how often it repeats. No `repeatEvery` means run once.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    #[serde(rename = "time", with = "crate::time::rfc3339")]
    pub start_time: Timestamp,
    #[serde(
        rename = "repeatEvery",
        default,
        skip_serializing_if = "Option::is_none"
    )]
    pub repeat_every: Option<RepeatEvery>,
}

/// A deployment document as submitted by users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeploymentConfig {
    pub context: ContextKey,
    pub model_name: String,
    pub dist_name: String,
    pub dist_ver: String,
    pub module: String,
    #[serde(
        rename = "training_deployment",
        default,
        skip_serializing_if = "Option::is_none"
    )]
    pub training_schedule: Option<ScheduleSpec>,
    #[serde(
        rename = "scoring_deployment",
        default,
        skip_serializing_if = "Option::is_none"
    )]
    pub scoring_schedule: Option<ScheduleSpec>,
    #[serde(default)]
    pub user_parameters: Map<String, Value>,
}

impl DeploymentConfig {
    /// Parses and validates a deployment document, reporting the failing field path.
    pub fn parse(json: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(json);
        let config: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::MalformedConfig {
                path,
                message: e.into_inner().to_string(),
            }
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_value(value: Value) -> Result<Self> {
        let config: Self = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            Error::MalformedConfig {
                path,
                message: e.into_inner().to_string(),
            }
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let required = [
            ("context.entity", &self.context.entity),
            ("context.signal", &self.context.signal),
            ("model_name", &self.model_name),
            ("dist_name", &self.dist_name),
            ("dist_ver", &self.dist_ver),
            ("module", &self.module),
        ];
        for (path, value) in required {
            if value.is_empty() {
                return Err(Error::MalformedConfig {
                    path: path.into(),
                    message: "must not be empty".into(),
                });
            }
        }
        if self.training_schedule.is_none() && self.scoring_schedule.is_none() {
            return Err(Error::MalformedConfig {
                path: "training_deployment|scoring_deployment".into(),
                message: "at least one schedule is required".into(),
            });
        }
        Ok(())
    }
}

/// A registered deployment: the submitted config plus its assigned identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deployment {
    pub model_id: ModelId,
    #[serde(flatten)]
    pub config: DeploymentConfig,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunnerSpec {
    pub command: PathBuf,
    pub args: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub command: PathBuf,
    #[serde(default)]
    pub args: Vec<String>,
}

/// Local stand-in for a package index: `dist_name → dist_ver → runner`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Manifest {
    pub dists: BTreeMap<String, BTreeMap<String, ManifestEntry>>,
}

impl Manifest {
    /// Loads a manifest file. Relative commands that exist next to the
    /// manifest are resolved against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::BadConfig {
            field: "manifest".into(),
            message: format!("{}: {e}", path.display()),
        })?;
        let mut manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::BadConfig {
            field: "manifest".into(),
            message: format!("{}: {e}", path.display()),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for entry in manifest.dists.values_mut().flat_map(|v| v.values_mut()) {
            if entry.command.is_relative() && base.join(&entry.command).exists() {
                entry.command = base.join(&entry.command);
            }
        }
        Ok(manifest)
    }

    pub fn insert(&mut self, dist_name: &str, dist_ver: &str, entry: ManifestEntry) {
        self.dists
            .entry(dist_name.to_string())
            .or_default()
            .insert(dist_ver.to_string(), entry);
    }

    /// The runner command for a module; modules of one dist share the
    /// executable and are told apart by a trailing `--module <module>`.
    pub fn resolve(&self, dist_name: &str, dist_ver: &str, module: &str) -> Result<RunnerSpec> {
        let entry = self
            .dists
            .get(dist_name)
            .and_then(|v| v.get(dist_ver))
            .ok_or_else(|| Error::UnresolvableImplementation {
                dist_name: dist_name.to_string(),
                dist_ver: dist_ver.to_string(),
            })?;
        let mut args = entry.args.clone();
        args.push("--module".into());
        args.push(module.to_string());
        Ok(RunnerSpec {
            command: entry.command.clone(),
            args,
        })
    }
}

mod blob_base64 {
    use base64::Engine as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&base64::engine::general_purpose::STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        base64::engine::general_purpose::STANDARD
            .decode(text)
            .map_err(serde::de::Error::custom)
    }
}

/// A trained model: immutable parameter blob plus training metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelVersion {
    pub model_id: ModelId,
    pub version: u32,
    #[serde(with = "blob_base64")]
    pub blob: Vec<u8>,
    pub metadata: Map<String, Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VersionSelector {
    Latest,
    Version(u32),
}

impl FromStr for VersionSelector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "latest" {
            return Ok(Self::Latest);
        }
        s.parse().map(Self::Version).map_err(|_| Error::MalformedConfig {
            path: "version".into(),
            message: format!("expected a version number or `latest`, got `{s}`"),
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum RegistryEvent {
    Deployed(Box<Deployment>),
    Ranked { context: ContextKey, models: Vec<ModelId> },
}

#[derive(Debug, Serialize, Deserialize)]
struct VersionRecord {
    model_id: ModelId,
    version: u32,
    metadata: Map<String, Value>,
}

struct ModelEntry {
    deployment: Deployment,
    versions: Mutex<Vec<Arc<ModelVersion>>>,
}

#[derive(Default)]
struct Catalog {
    models: BTreeMap<ModelId, Arc<ModelEntry>>,
    rankings: HashMap<ContextKey, Vec<ModelId>>,
}

struct Persistence {
    events: Mutex<Journal<RegistryEvent>>,
    versions: Mutex<Journal<VersionRecord>>,
    blob_dir: PathBuf,
}

pub struct ModelRegistry {
    semantic: Arc<SemanticStore>,
    throttle: Arc<StoreThrottle>,
    manifest: RwLock<Manifest>,
    blob_cap: usize,
    catalog: RwLock<Catalog>,
    persistence: Option<Persistence>,
}

impl ModelRegistry {
    pub fn new(semantic: Arc<SemanticStore>, throttle: Arc<StoreThrottle>, manifest: Manifest) -> Self {
        Self {
            semantic,
            throttle,
            manifest: RwLock::new(manifest),
            blob_cap: DEFAULT_BLOB_CAP,
            catalog: RwLock::new(Catalog::default()),
            persistence: None,
        }
    }

    pub fn open(
        semantic: Arc<SemanticStore>,
        throttle: Arc<StoreThrottle>,
        manifest: Manifest,
        dir: impl AsRef<Path>,
    ) -> Result<Self> {
        let dir = dir.as_ref();
        let (events_journal, events) = Journal::<RegistryEvent>::open(dir.join("deployments.jsonl"))?;
        let (versions_journal, versions) = Journal::<VersionRecord>::open(dir.join("versions.jsonl"))?;
        let blob_dir = dir.join("blobs");
        let mut catalog = Catalog::default();
        for event in events {
            match event {
                RegistryEvent::Deployed(d) => {
                    catalog
                        .rankings
                        .entry(d.config.context.clone())
                        .or_default()
                        .push(d.model_id);
                    catalog.models.insert(
                        d.model_id,
                        Arc::new(ModelEntry {
                            deployment: *d,
                            versions: Mutex::new(Vec::new()),
                        }),
                    );
                }
                RegistryEvent::Ranked { context, models } => {
                    catalog.rankings.insert(context, models);
                }
            }
        }
        for record in versions {
            let path = blob_path(&blob_dir, record.model_id, record.version);
            let blob = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            if let Some(entry) = catalog.models.get(&record.model_id) {
                entry.versions.lock().expect("versions poisoned").push(Arc::new(ModelVersion {
                    model_id: record.model_id,
                    version: record.version,
                    blob,
                    metadata: record.metadata,
                }));
            }
        }
        Ok(Self {
            semantic,
            throttle,
            manifest: RwLock::new(manifest),
            blob_cap: DEFAULT_BLOB_CAP,
            catalog: RwLock::new(catalog),
            persistence: Some(Persistence {
                events: Mutex::new(events_journal),
                versions: Mutex::new(versions_journal.with_sync(true)),
                blob_dir,
            }),
        })
    }

    pub fn with_blob_cap(mut self, cap: usize) -> Self {
        self.blob_cap = cap;
        self
    }

    pub fn set_manifest(&self, manifest: Manifest) {
        *self.manifest.write().expect("manifest poisoned") = manifest;
    }

    pub fn resolve_implementation(&self, dist_name: &str, dist_ver: &str, module: &str) -> Result<RunnerSpec> {
        self.manifest
            .read()
            .expect("manifest poisoned")
            .resolve(dist_name, dist_ver, module)
    }

    pub fn runner_for(&self, model_id: ModelId) -> Result<RunnerSpec> {
        let d = self.deployment(model_id)?;
        self.resolve_implementation(&d.config.dist_name, &d.config.dist_ver, &d.config.module)
    }

    pub fn register_deployment_json(&self, json: &str) -> Result<ModelId> {
        self.register_deployment(DeploymentConfig::parse(json)?)
    }

    /// Persists the deployment with a fresh id at the lowest rank of its context.
    pub fn register_deployment(&self, config: DeploymentConfig) -> Result<ModelId> {
        config.validate()?;
        self.semantic.resolve_context(&config.context)?;
        self.resolve_implementation(&config.dist_name, &config.dist_ver, &config.module)?;
        let mut catalog = self.catalog.write().expect("catalog poisoned");
        let model_id = ModelId(catalog.models.keys().next_back().map_or(1, |m| m.0 + 1));
        let deployment = Deployment { model_id, config };
        if let Some(p) = &self.persistence {
            p.events
                .lock()
                .expect("journal poisoned")
                .append(&RegistryEvent::Deployed(Box::new(deployment.clone())))?;
        }
        catalog
            .rankings
            .entry(deployment.config.context.clone())
            .or_default()
            .push(model_id);
        catalog.models.insert(
            model_id,
            Arc::new(ModelEntry {
                deployment,
                versions: Mutex::new(Vec::new()),
            }),
        );
        Ok(model_id)
    }

    fn entry(&self, model_id: ModelId) -> Result<Arc<ModelEntry>> {
        self.catalog
            .read()
            .expect("catalog poisoned")
            .models
            .get(&model_id)
            .cloned()
            .ok_or(Error::UnknownModel(model_id.0))
    }

    pub fn deployment(&self, model_id: ModelId) -> Result<Deployment> {
        Ok(self.entry(model_id)?.deployment.clone())
    }

    pub fn deployments(&self) -> Vec<Deployment> {
        self.catalog
            .read()
            .expect("catalog poisoned")
            .models
            .values()
            .map(|e| e.deployment.clone())
            .collect()
    }

    pub fn deployments_for(&self, context: &ContextKey) -> Vec<Deployment> {
        let catalog = self.catalog.read().expect("catalog poisoned");
        catalog
            .rankings
            .get(context)
            .into_iter()
            .flatten()
            .filter_map(|id| catalog.models.get(id))
            .map(|e| e.deployment.clone())
            .collect()
    }

    /// Deployments of a context with their 1-based rank.
    pub fn list_deployed_models(&self, context: &ContextKey) -> Result<Vec<(ModelId, usize)>> {
        self.semantic.resolve_context(context)?;
        let catalog = self.catalog.read().expect("catalog poisoned");
        Ok(catalog
            .rankings
            .get(context)
            .map(|ids| ids.iter().enumerate().map(|(i, id)| (*id, i + 1)).collect())
            .unwrap_or_default())
    }

    pub fn set_ranking(&self, context: &ContextKey, ordered: &[ModelId]) -> Result<()> {
        self.semantic.resolve_context(context)?;
        let mut catalog = self.catalog.write().expect("catalog poisoned");
        let deployed: HashSet<ModelId> = catalog
            .rankings
            .get(context)
            .into_iter()
            .flatten()
            .copied()
            .collect();
        let given: HashSet<ModelId> = ordered.iter().copied().collect();
        if given.len() != ordered.len() || given != deployed {
            let missing: Vec<String> = deployed.difference(&given).map(|m| m.to_string()).collect();
            let extra: Vec<String> = given.difference(&deployed).map(|m| m.to_string()).collect();
            return Err(Error::IncompleteRanking(format!(
                "missing [{}], not deployed here [{}], {} duplicates",
                missing.join(", "),
                extra.join(", "),
                ordered.len() - given.len()
            )));
        }
        if let Some(p) = &self.persistence {
            p.events.lock().expect("journal poisoned").append(&RegistryEvent::Ranked {
                context: context.clone(),
                models: ordered.to_vec(),
            })?;
        }
        catalog.rankings.insert(context.clone(), ordered.to_vec());
        Ok(())
    }

    /// Highest-ranked model of the context, if any is deployed.
    pub fn best_model(&self, context: &ContextKey) -> Result<Option<ModelId>> {
        Ok(self.list_deployed_models(context)?.first().map(|(id, _)| *id))
    }

    /// Appends the next version number atomically and returns it.
    pub fn save_model_version(
        &self,
        model_id: ModelId,
        blob: Vec<u8>,
        metadata: Map<String, Value>,
    ) -> Result<u32> {
        if blob.len() > self.blob_cap {
            return Err(Error::BlobTooLarge {
                size: blob.len(),
                cap: self.blob_cap,
            });
        }
        let entry = self.entry(model_id)?;
        self.throttle.query(|| {
            let mut versions = entry.versions.lock().expect("versions poisoned");
            let version = versions.len() as u32 + 1;
            if let Some(p) = &self.persistence {
                let path = blob_path(&p.blob_dir, model_id, version);
                if let Some(parent) = path.parent() {
                    fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
                }
                fs::write(&path, &blob).map_err(|e| Error::io(&path, e))?;
                p.versions.lock().expect("journal poisoned").append(&VersionRecord {
                    model_id,
                    version,
                    metadata: metadata.clone(),
                })?;
            }
            versions.push(Arc::new(ModelVersion {
                model_id,
                version,
                blob,
                metadata,
            }));
            Ok(version)
        })
    }

    pub fn get_model_version(&self, model_id: ModelId, selector: VersionSelector) -> Result<Arc<ModelVersion>> {
        let entry = self.entry(model_id)?;
        self.throttle.query(|| {
            let versions = entry.versions.lock().expect("versions poisoned");
            match selector {
                VersionSelector::Latest => versions.last().cloned().ok_or(Error::NoVersions(model_id.0)),
                VersionSelector::Version(v) => {
                    if versions.is_empty() {
                        return Err(Error::NoVersions(model_id.0));
                    }
                    v.checked_sub(1)
                        .and_then(|i| versions.get(i as usize))
                        .cloned()
                        .ok_or(Error::UnknownVersion { model: model_id.0, version: v })
                }
            }
        })
    }

    pub fn latest_version_number(&self, model_id: ModelId) -> Result<Option<u32>> {
        let entry = self.entry(model_id)?;
        let n = self
            .throttle
            .query(|| entry.versions.lock().expect("versions poisoned").len() as u32);
        Ok((n > 0).then_some(n))
    }

    pub fn version_numbers(&self, model_id: ModelId) -> Result<Vec<u32>> {
        let entry = self.entry(model_id)?;
        let versions = entry.versions.lock().expect("versions poisoned");
        Ok(versions.iter().map(|v| v.version).collect())
    }
}

fn blob_path(dir: &Path, model: ModelId, version: u32) -> PathBuf {
    dir.join(model.0.to_string()).join(format!("{version}.bin"))
}

/// Encodes a blob the way runners put it on the wire.
pub fn encode_blob(bytes: &[u8]) -> String {
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

pub fn decode_blob(text: &str) -> Result<Vec<u8>> {
    base64::engine::general_purpose::STANDARD
        .decode(text)
        .map_err(|e| Error::MalformedResult(format!("model_blob is not base64: {e}")))
}
