//! Operator CLI. Commands act directly on the data directory.

use std::io::Write;
use std::net::IpAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use castorlite_core::executor::{duration_metrics, load_job_records, JobFilter, JobOutcome, JobRecord};
use castorlite_core::forecast::{ForecastPoint, HorizonPolicy};
use castorlite_core::registry::ModelId;
use castorlite_core::scheduler::Task;
use castorlite_core::semantic::{ContextFilter, NewEntity, SeriesId};
use castorlite_core::synth::{generate, SynthConfig, SynthShape};
use castorlite_core::time::{format_ts, parse_ts, DataPoint, FrequencySpec, Timestamp};
use castorlite_core::{ContextKey, Error, Platform, Result};

use crate::config::{ServiceConfig, WeatherSource};
use crate::harness::{run_stub_experiment, StubExperiment};
use crate::service::Service;

#[derive(Parser, Debug)]
#[command(name = "castorlite", version, about = "Time-series model lifecycle platform")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Directory holding all persistent state.
    #[arg(long, global = true, env = "CASTORLITE_DATA_DIR", default_value = "castorlite-data")]
    pub data_dir: PathBuf,
    /// JSON manifest mapping dist name and version to runner commands.
    #[arg(long, global = true, env = "CASTORLITE_MANIFEST")]
    pub manifest: Option<PathBuf>,
    /// Weather provider: synthetic, file or none.
    #[arg(long, global = true, env = "CASTORLITE_WEATHER", default_value = "synthetic")]
    pub weather: String,
    /// CSV fixture for the file weather provider.
    #[arg(long, global = true, env = "CASTORLITE_WEATHER_FILE")]
    pub weather_file: Option<PathBuf>,
    /// Scheduler ledger path (default: inside the data directory).
    #[arg(long, global = true, env = "CASTORLITE_LEDGER")]
    pub ledger: Option<PathBuf>,
    /// Shared bearer token for the HTTP API.
    #[arg(long, global = true, env = "CASTORLITE_TOKEN", hide_env_values = true)]
    pub token: Option<String>,
    /// Artificial latency added to each store query.
    #[arg(long, global = true, default_value_t = 0)]
    pub store_latency_ms: u64,
    /// Concurrent store queries allowed when latency is set.
    #[arg(long, global = true, default_value_t = 2)]
    pub store_connections: usize,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Args, Debug, Clone)]
pub struct Listen {
    #[arg(long, default_value = "127.0.0.1")]
    pub bind: IpAddr,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
}

#[derive(Args, Debug, Clone)]
pub struct Pool {
    #[arg(long, default_value_t = 4)]
    pub max_parallel: usize,
    /// Seconds before a runner is killed.
    #[arg(long, default_value_t = 300)]
    pub runner_timeout: u64,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Serve the HTTP API.
    Serve {
        #[command(flatten)]
        listen: Listen,
    },
    /// Serve the HTTP API and run the scheduler on the wall clock.
    Run {
        #[command(flatten)]
        listen: Listen,
        #[command(flatten)]
        pool: Pool,
        #[arg(long, default_value_t = 60)]
        tick_seconds: u64,
    },
    /// Ingest a CSV of timestamp,value into a series.
    Ingest {
        #[arg(long, conflicts_with_all = ["entity", "signal"])]
        series: Option<u64>,
        #[arg(long, requires = "signal")]
        entity: Option<String>,
        #[arg(long, requires = "entity")]
        signal: Option<String>,
        #[arg(long)]
        file: PathBuf,
    },
    /// Entities, signals, bindings and topology.
    #[command(subcommand)]
    Context(ContextCommand),
    /// Register a deployment from a JSON config file.
    Deploy {
        #[arg(long)]
        file: PathBuf,
    },
    /// List, rank and inspect deployed models.
    #[command(subcommand)]
    Models(ModelsCommand),
    /// Run one scheduler tick at the given instant and wait for its jobs.
    Tick {
        #[arg(long)]
        now: String,
        #[command(flatten)]
        pool: Pool,
    },
    /// Inspect recorded jobs and their duration metrics.
    #[command(subcommand)]
    Jobs(JobsCommand),
    /// Export forecasts; with --horizon only points of that lead time.
    Forecasts {
        #[arg(long)]
        entity: String,
        #[arg(long)]
        signal: String,
        #[arg(long)]
        horizon: Option<FrequencySpec>,
        #[arg(long)]
        model: Option<ModelId>,
        #[arg(long)]
        from: Option<String>,
        #[arg(long)]
        to: Option<String>,
        #[arg(long)]
        nearest_below: bool,
    },
    /// MAPE of one model at one horizon against stored actuals.
    Evaluate {
        #[arg(long)]
        entity: String,
        #[arg(long)]
        signal: String,
        #[arg(long)]
        model: ModelId,
        #[arg(long)]
        horizon: FrequencySpec,
        #[arg(long)]
        from: Option<String>,
        #[arg(long)]
        to: Option<String>,
    },
    /// Stub-job throughput sweep.
    ScaleTest {
        #[arg(long, value_delimiter = ',', default_value = "10,50,100,150,175,200")]
        levels: Vec<usize>,
        #[arg(long)]
        jobs_per_level: Option<usize>,
        #[arg(long, default_value_t = 200)]
        sleep_ms: u64,
    },
    /// Generate a seeded synthetic series as timestamp,value.
    Synth {
        #[arg(long, default_value_t = 30)]
        days: u32,
        #[arg(long, default_value = "1H")]
        frequency: FrequencySpec,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = ShapeArg::Daily)]
        shape: ShapeArg,
        #[arg(long, default_value = "2019-01-01T00:00:00+00:00")]
        start: String,
        #[arg(long, default_value_t = 100.0)]
        base: f64,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum ShapeArg {
    Daily,
    Linear,
    Constant,
}

#[derive(Subcommand, Debug)]
pub enum ContextCommand {
    /// Register an entity, a signal, or both.
    Register {
        #[arg(long, requires = "kind")]
        entity: Option<String>,
        #[arg(long)]
        kind: Option<String>,
        #[arg(long, requires = "lon")]
        lat: Option<f64>,
        #[arg(long, requires = "lat")]
        lon: Option<f64>,
        #[arg(long)]
        signal: Option<String>,
        #[arg(long, default_value = "")]
        unit: String,
        #[arg(long, default_value = "")]
        quantity: String,
    },
    /// Bind a time series to an (entity, signal) pair.
    Bind {
        #[arg(long)]
        entity: String,
        #[arg(long)]
        signal: String,
    },
    /// Add a topology edge between two entities.
    Link {
        #[arg(long)]
        parent: String,
        #[arg(long)]
        child: String,
        #[arg(long, default_value = "feeds")]
        relation: String,
    },
    /// List bound contexts matching all given filters.
    Query {
        #[arg(long)]
        signal: Option<String>,
        #[arg(long)]
        kind: Option<String>,
        #[arg(long)]
        under: Option<String>,
    },
}

#[derive(Subcommand, Debug)]
pub enum ModelsCommand {
    List {
        #[arg(long, requires = "signal")]
        entity: Option<String>,
        #[arg(long, requires = "entity")]
        signal: Option<String>,
    },
    /// Set the model ranking of a context, best first.
    Rank {
        #[arg(long)]
        entity: String,
        #[arg(long)]
        signal: String,
        #[arg(long, value_delimiter = ',')]
        order: Vec<ModelId>,
    },
    Versions {
        #[arg(long)]
        model: ModelId,
    },
}

#[derive(Args, Debug, Clone)]
pub struct JobArgs {
    #[arg(long)]
    pub model: Option<ModelId>,
    #[arg(long)]
    pub task: Option<Task>,
    #[arg(long, value_parser = parse_outcome)]
    pub outcome: Option<JobOutcome>,
}

fn parse_outcome(s: &str) -> std::result::Result<JobOutcome, String> {
    match s {
        "ok" => Ok(JobOutcome::Ok),
        "failed" => Ok(JobOutcome::Failed),
        "timeout" => Ok(JobOutcome::Timeout),
        other => Err(format!("unknown outcome `{other}`")),
    }
}

impl From<JobArgs> for JobFilter {
    fn from(a: JobArgs) -> Self {
        JobFilter {
            model_id: a.model,
            task: a.task,
            outcome: a.outcome,
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum JobsCommand {
    List {
        #[command(flatten)]
        filter: JobArgs,
    },
    Show {
        job_id: String,
    },
    /// Count, mean and p95 duration of matching jobs.
    Metrics {
        #[command(flatten)]
        filter: JobArgs,
    },
}

impl Global {
    pub fn service_config(&self) -> Result<ServiceConfig> {
        Ok(ServiceConfig {
            data_dir: Some(self.data_dir.clone()),
            manifest: self.manifest.clone(),
            weather: WeatherSource::from_parts(&self.weather, self.weather_file.clone())?,
            ledger: self.ledger.clone(),
            token: self.token.clone(),
            store_latency: Duration::from_millis(self.store_latency_ms),
            store_connections: self.store_connections,
            ..ServiceConfig::default()
        })
    }
}

fn opt_ts(text: &Option<String>) -> Result<Option<Timestamp>> {
    text.as_deref().map(parse_ts).transpose()
}

/// Parses and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = match cli.command {
        Command::Serve { .. } | Command::Run { .. } => "info",
        _ => "warn",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(level));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
    let stdout = std::io::stdout();
    match run(cli, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::io("tokio runtime", e))
}

pub fn run(cli: Cli, out: &mut impl Write) -> Result<()> {
    let format = cli.global.format;
    let config = cli.global.service_config()?;
    match cli.command {
        Command::Serve { listen } => {
            let config = ServiceConfig {
                bind: listen.bind,
                port: listen.port,
                ..config
            };
            let platform = Arc::new(config.open_platform()?);
            runtime()?.block_on(async {
                let service = Service::start(platform, &config).await?;
                tokio::signal::ctrl_c()
                    .await
                    .map_err(|e| Error::io("signal", e))?;
                service.shutdown().await;
                Ok(())
            })
        }
        Command::Run {
            listen,
            pool,
            tick_seconds,
        } => {
            let config = ServiceConfig {
                bind: listen.bind,
                port: listen.port,
                max_parallel: pool.max_parallel,
                runner_timeout: Duration::from_secs(pool.runner_timeout),
                tick_period: Duration::from_secs(tick_seconds),
                ..config
            };
            config.validate()?;
            let platform = Arc::new(config.open_platform()?);
            runtime()?.block_on(async {
                let service = Service::start(platform, &config).await?;
                service.run_scheduler(config.tick_period).await?;
                service.shutdown().await;
                Ok(())
            })
        }
        Command::Ingest {
            series,
            entity,
            signal,
            file,
        } => {
            let platform = config.open_platform()?;
            let series = match (series, entity, signal) {
                (Some(id), _, _) => SeriesId(id),
                (None, Some(e), Some(s)) => {
                    platform.semantic.resolve_context(&ContextKey::new(e, s))?.series
                }
                _ => {
                    return Err(Error::BadConfig {
                        field: "series".into(),
                        message: "give --series or --entity with --signal".into(),
                    })
                }
            };
            let points = read_points_csv(&file)?;
            let accepted = platform.timeseries.ingest(series, &points)?;
            emit(out, format, &json!({"series": series, "accepted": accepted}))
        }
        Command::Context(cmd) => context_command(&config.open_platform()?, cmd, out, format),
        Command::Deploy { file } => {
            let platform = config.open_platform()?;
            let text = std::fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
            let id = platform.registry.register_deployment_json(&text)?;
            emit(out, format, &json!({"model_id": id}))
        }
        Command::Models(cmd) => models_command(&config.open_platform()?, cmd, out, format),
        Command::Tick { now, pool } => {
            let now = parse_ts(&now)?;
            let config = ServiceConfig {
                port: 0,
                max_parallel: pool.max_parallel,
                runner_timeout: Duration::from_secs(pool.runner_timeout),
                ..config
            };
            let platform = Arc::new(config.open_platform()?);
            let records = runtime()?.block_on(async {
                let service = Service::start(platform, &config).await?;
                let ids = service.tick(now).await?;
                service.wait_idle().await;
                let records: Vec<JobRecord> =
                    ids.iter().filter_map(|id| service.executor.record(id)).collect();
                service.shutdown().await;
                Ok::<_, Error>(records)
            })?;
            emit(out, format, &records)
        }
        Command::Jobs(cmd) => {
            let platform = config.open_platform()?;
            let path = platform.jobs_path().expect("persistent platform");
            let records = load_job_records(&path)?;
            match cmd {
                JobsCommand::List { filter } => {
                    let filter = JobFilter::from(filter);
                    let rows: Vec<&JobRecord> =
                        records.iter().filter(|r| filter.matches(r)).collect();
                    emit(out, format, &rows)
                }
                JobsCommand::Show { job_id } => {
                    let r = records
                        .iter()
                        .find(|r| r.job_id == job_id)
                        .ok_or(Error::UnknownJob(job_id))?;
                    emit(out, format, r)
                }
                JobsCommand::Metrics { filter } => {
                    let filter = JobFilter::from(filter);
                    let durations: Vec<f64> = records
                        .iter()
                        .filter(|r| filter.matches(r))
                        .map(|r| r.duration)
                        .collect();
                    emit(out, format, &duration_metrics(&durations))
                }
            }
        }
        Command::Forecasts {
            entity,
            signal,
            horizon,
            model,
            from,
            to,
            nearest_below,
        } => {
            let platform = config.open_platform()?;
            let key = ContextKey::new(entity, signal);
            let from = opt_ts(&from)?.unwrap_or(Timestamp::MIN_UTC);
            let to = opt_ts(&to)?.unwrap_or(Timestamp::MAX_UTC);
            let points: Vec<ForecastPoint> = match horizon {
                None => platform.forecasts.get_forecasts(&key, from, to, model)?,
                Some(h) => {
                    let model = match model {
                        Some(m) => Some(m),
                        None => platform.registry.best_model(&key)?,
                    };
                    match model {
                        None => Vec::new(),
                        Some(m) => {
                            let policy = if nearest_below {
                                HorizonPolicy::NearestBelow
                            } else {
                                HorizonPolicy::Exact
                            };
                            platform
                                .forecasts
                                .get_by_horizon(&key, m, h.duration(), from, to, policy)?
                                .points
                        }
                    }
                }
            };
            match format {
                Format::Json => emit(out, format, &points),
                Format::Csv => write_forecast_csv(out, &points),
            }
        }
        Command::Evaluate {
            entity,
            signal,
            model,
            horizon,
            from,
            to,
        } => {
            let platform = config.open_platform()?;
            let e = platform.forecasts.evaluate(
                &ContextKey::new(entity, signal),
                model,
                horizon.duration(),
                opt_ts(&from)?.unwrap_or(Timestamp::MIN_UTC),
                opt_ts(&to)?.unwrap_or(Timestamp::MAX_UTC),
            )?;
            emit(out, format, &e)
        }
        Command::ScaleTest {
            levels,
            jobs_per_level,
            sleep_ms,
        } => {
            let experiment = StubExperiment {
                levels,
                jobs_per_level,
                sleep: Duration::from_millis(sleep_ms),
                store_latency: config.store_latency,
                store_connections: config.store_connections,
                runner_path: None,
            };
            let report = runtime()?.block_on(run_stub_experiment(&experiment))?;
            match format {
                Format::Csv => report.write_csv(out),
                Format::Json => emit(out, format, &report.rows),
            }
        }
        Command::Synth {
            days,
            frequency,
            seed,
            shape,
            start,
            base,
        } => {
            let mut synth = SynthConfig::new(parse_ts(&start)?, days, frequency);
            synth.seed = seed;
            synth.base = base;
            synth.shape = match shape {
                ShapeArg::Daily => SynthShape::Daily,
                ShapeArg::Linear => SynthShape::Linear,
                ShapeArg::Constant => SynthShape::Constant,
            };
            let points = generate(&synth)?;
            match format {
                Format::Csv => write_points_csv(out, &points),
                Format::Json => emit(out, format, &points),
            }
        }
    }
}

fn context_command(
    platform: &Platform,
    cmd: ContextCommand,
    out: &mut impl Write,
    format: Format,
) -> Result<()> {
    let semantic = &platform.semantic;
    match cmd {
        ContextCommand::Register {
            entity,
            kind,
            lat,
            lon,
            signal,
            unit,
            quantity,
        } => {
            if entity.is_none() && signal.is_none() {
                return Err(Error::BadConfig {
                    field: "entity".into(),
                    message: "give --entity and/or --signal".into(),
                });
            }
            let mut result = serde_json::Map::new();
            if let Some(name) = entity {
                let mut new = NewEntity::new(name, kind.unwrap_or_default());
                if let (Some(lat), Some(lon)) = (lat, lon) {
                    new = new.at(lat, lon);
                }
                result.insert("entity_id".into(), json!(semantic.register_entity(new)?));
            }
            if let Some(name) = signal {
                result.insert(
                    "signal_id".into(),
                    json!(semantic.register_signal(&name, &unit, &quantity)?),
                );
            }
            emit(out, format, &Value::Object(result))
        }
        ContextCommand::Bind { entity, signal } => {
            let series = semantic.bind_timeseries(&entity, &signal)?;
            emit(out, format, &json!({"series": series}))
        }
        ContextCommand::Link {
            parent,
            child,
            relation,
        } => {
            let id = semantic.add_topology_edge(&parent, &child, &relation)?;
            emit(out, format, &json!({"edge_id": id}))
        }
        ContextCommand::Query {
            signal,
            kind,
            under,
        } => {
            let filter = ContextFilter {
                entity_kind: kind,
                signal_name: signal,
                under_entity: under,
            };
            let rows: Vec<Value> = semantic
                .query_contexts(&filter)
                .into_iter()
                .map(|b| {
                    json!({
                        "series": b.series,
                        "entity": b.context.entity.name,
                        "kind": b.context.entity.kind,
                        "signal": b.context.signal.name,
                        "unit": b.context.signal.unit,
                    })
                })
                .collect();
            emit(out, format, &rows)
        }
    }
}

fn models_command(
    platform: &Platform,
    cmd: ModelsCommand,
    out: &mut impl Write,
    format: Format,
) -> Result<()> {
    let registry = &platform.registry;
    match cmd {
        ModelsCommand::List { entity, signal } => {
            let mut deployments = match (entity, signal) {
                (Some(e), Some(s)) => registry.deployments_for(&ContextKey::new(e, s)),
                _ => {
                    let mut all = registry.deployments();
                    all.sort_by_key(|d| d.model_id);
                    all
                }
            };
            let rows: Vec<Value> = deployments
                .drain(..)
                .map(|d| {
                    let rank = registry
                        .list_deployed_models(&d.config.context)
                        .ok()
                        .and_then(|r| r.into_iter().find(|(id, _)| *id == d.model_id))
                        .map(|(_, rank)| rank);
                    json!({
                        "model_id": d.model_id,
                        "model_name": d.config.model_name,
                        "entity": d.config.context.entity,
                        "signal": d.config.context.signal,
                        "dist_name": d.config.dist_name,
                        "dist_ver": d.config.dist_ver,
                        "module": d.config.module,
                        "rank": rank,
                        "latest_version": registry.latest_version_number(d.model_id).ok().flatten(),
                    })
                })
                .collect();
            emit(out, format, &rows)
        }
        ModelsCommand::Rank {
            entity,
            signal,
            order,
        } => {
            let key = ContextKey::new(entity, signal);
            registry.set_ranking(&key, &order)?;
            emit(out, format, &json!({"best_model": registry.best_model(&key)?}))
        }
        ModelsCommand::Versions { model } => {
            let rows: Vec<Value> = registry
                .version_numbers(model)?
                .into_iter()
                .map(|v| {
                    let mv = registry.get_model_version(model, castorlite_core::registry::VersionSelector::Version(v))?;
                    Ok(json!({
                        "model_id": model,
                        "version": v,
                        "blob_bytes": mv.blob.len(),
                        "metadata": mv.metadata,
                    }))
                })
                .collect::<Result<_>>()?;
            emit(out, format, &rows)
        }
    }
}

fn read_points_csv(path: &Path) -> Result<Vec<DataPoint>> {
    let bad = |message: String| Error::BadConfig {
        field: "file".into(),
        message: format!("{}: {message}", path.display()),
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let mut points = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| bad(e.to_string()))?;
        let (Some(t), Some(v)) = (record.get(0), record.get(1)) else {
            return Err(bad(format!("row {} needs timestamp,value", i + 2)));
        };
        let value: f64 = v
            .trim()
            .parse()
            .map_err(|_| bad(format!("row {}: bad value `{v}`", i + 2)))?;
        points.push(DataPoint::new(parse_ts(t.trim())?, value));
    }
    Ok(points)
}

fn csv_error(e: impl std::fmt::Display) -> Error {
    Error::BadConfig {
        field: "output".into(),
        message: e.to_string(),
    }
}

fn write_points_csv(out: &mut impl Write, points: &[DataPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["timestamp", "value"]).map_err(csv_error)?;
    for p in points {
        w.write_record([format_ts(&p.timestamp), p.value.to_string()])
            .map_err(csv_error)?;
    }
    w.flush().map_err(csv_error)
}

fn write_forecast_csv(out: &mut impl Write, points: &[ForecastPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["target_time", "value", "issued_at", "model_id"])
        .map_err(csv_error)?;
    for p in points {
        w.write_record([
            format_ts(&p.target_time),
            p.value.to_string(),
            format_ts(&p.issued_at),
            p.model_id.to_string(),
        ])
        .map_err(csv_error)?;
    }
    w.flush().map_err(csv_error)
}

/// JSON as-is; CSV flattens an object or an array of objects into rows.
fn emit(out: &mut impl Write, format: Format, value: &impl Serialize) -> Result<()> {
    let value = serde_json::to_value(value)?;
    match format {
        Format::Json => {
            serde_json::to_writer_pretty(&mut *out, &value)?;
            writeln!(out).map_err(|e| Error::io("stdout", e))
        }
        Format::Csv => {
            let rows = match value {
                Value::Array(rows) => rows,
                other => vec![other],
            };
            let mut w = csv::Writer::from_writer(out);
            let header: Vec<String> = match rows.first() {
                Some(Value::Object(_)) => rows
                    .iter()
                    .filter_map(Value::as_object)
                    .flat_map(|m| m.keys().cloned())
                    .collect::<std::collections::BTreeSet<_>>()
                    .into_iter()
                    .collect(),
                Some(_) => vec!["value".into()],
                None => Vec::new(),
            };
            if !header.is_empty() {
                w.write_record(&header).map_err(csv_error)?;
            }
            for row in rows {
                let cells: Vec<String> = match &row {
                    Value::Object(m) => header.iter().map(|k| cell(m.get(k))).collect(),
                    other => vec![cell(Some(other))],
                };
                w.write_record(&cells).map_err(csv_error)?;
            }
            w.flush().map_err(csv_error)
        }
    }
}

fn cell(v: Option<&Value>) -> String {
    match v {
        None | Some(Value::Null) => String::new(),
        Some(Value::String(s)) => s.clone(),
        Some(other) => other.to_string(),
    }
}
