use std::io::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use ptfa_core::analytics::compute_metrics;
use ptfa_core::clock::SystemClock;
use ptfa_core::config::ServiceConfig;
use ptfa_core::llm::{ContextBudget, Gateway, ScriptedProvider};
use ptfa_core::model::{Author, FacilitationModel, TopicId};
use ptfa_core::simulate::{parse_responses, parse_script, simulate, SimulationError, SimulationSpec};
use ptfa_core::store::Store;
use ptfa_server::{AppState, Hub};

const ADMIN_TOKEN_ENV: &str = "PTFA_ADMIN_TOKEN";

#[derive(Parser)]
#[command(name = "ptfa", version, about = "Six-hat discussion facilitation service and tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the realtime service.
    Serve {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `server.bind`.
        #[arg(long)]
        bind: Option<String>,
        /// Overrides `server.data_dir`.
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Run one scripted session on a simulated clock.
    Simulate {
        /// JSON-lines participant script.
        #[arg(long)]
        script: PathBuf,
        /// JSON-lines file of scripted model replies; overrides the configured provider.
        #[arg(long)]
        responses: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_parser = parse_model)]
        model: FacilitationModel,
        #[arg(long, default_value = "0", value_parser = parse_topic)]
        topic: TopicId,
        /// Clock speed-up, or `inf` for no pacing. Defaults to `scheduler.clock_scale`.
        #[arg(long, value_parser = parse_scale)]
        scale: Option<f64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long, default_value = "sim")]
        session_id: String,
    },
    /// Compute transcript metrics over dataset exports.
    Metrics {
        /// Export files, or directories holding `session_*.jsonl` files.
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Table,
}

fn parse_model(s: &str) -> Result<FacilitationModel, String> {
    s.parse().map_err(|_| "expected 0 or 1".to_string())
}

fn parse_topic(s: &str) -> Result<TopicId, String> {
    match s {
        "0" => Ok(TopicId::Topic0),
        "1" => Ok(TopicId::Topic1),
        _ => Err("expected 0 or 1".into()),
    }
}

fn parse_scale(s: &str) -> Result<f64, String> {
    if s.eq_ignore_ascii_case("inf") {
        return Ok(f64::INFINITY);
    }
    match s.parse::<f64>() {
        Ok(k) if k > 0.0 => Ok(k),
        _ => Err("expected a positive number or `inf`".into()),
    }
}

/// Failure with its process exit code: 1 data, 2 usage or config, 3 environment.
struct Failure {
    code: u8,
    message: String,
}

fn data(message: impl std::fmt::Display) -> Failure {
    Failure { code: 1, message: message.to_string() }
}

fn usage(message: impl std::fmt::Display) -> Failure {
    Failure { code: 2, message: message.to_string() }
}

fn environment(message: impl std::fmt::Display) -> Failure {
    Failure { code: 3, message: message.to_string() }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: cannot start async runtime: {e}");
            return ExitCode::from(3);
        }
    };
    let result = runtime.block_on(async {
        match cli.command {
            Command::Serve { config, bind, data_dir } => serve(&config, bind, data_dir).await,
            Command::Simulate {
                script,
                responses,
                config,
                model,
                topic,
                scale,
                out,
                session_id,
            } => {
                let args = SimulateArgs {
                    script,
                    responses,
                    config,
                    model,
                    topic,
                    scale,
                    out,
                    session_id,
                };
                run_simulate(args).await
            }
            Command::Metrics { paths, format } => metrics(&paths, format),
        }
    });
    // Lingering connection tasks must not hold the process open.
    runtime.shutdown_timeout(Duration::from_secs(1));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load_config(path: &Path) -> Result<ServiceConfig, Failure> {
    ServiceConfig::load(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
    tracing::info!("shutdown requested");
}

async fn serve(config: &Path, bind: Option<String>, data_dir: Option<PathBuf>) -> Result<(), Failure> {
    let cfg = load_config(config)?;
    let bind = bind.unwrap_or_else(|| cfg.server.bind.clone());
    let addr: SocketAddr = bind
        .parse()
        .map_err(|e| usage(format!("server.bind `{bind}`: {e}")))?;
    let data_dir = data_dir.unwrap_or_else(|| cfg.server.data_dir.clone());
    let store = Store::open(&data_dir).map_err(|e| environment(format!("data dir {}: {e}", data_dir.display())))?;
    let gateway = cfg.gateway().map_err(usage)?;
    let hats = cfg.hat_registry().map_err(usage)?;

    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| {
        if e.kind() == std::io::ErrorKind::AddrInUse {
            environment(format!("port in use: {addr}"))
        } else {
            environment(format!("cannot bind {addr}: {e}"))
        }
    })?;
    let local = listener.local_addr().map_err(environment)?;

    let clock = Arc::new(SystemClock::new(cfg.scheduler.clock_scale));
    let hub = Hub::new(store, clock, gateway, cfg.scheduler.clone(), hats);
    let recovered = hub.recover().await.map_err(environment)?;
    let admin_token = std::env::var(ADMIN_TOKEN_ENV).ok().filter(|t| !t.is_empty());
    if admin_token.is_none() {
        tracing::warn!("{ADMIN_TOKEN_ENV} is not set; admin routes are disabled");
    }
    let state = AppState {
        hub,
        admin_token: admin_token.map(Into::into),
        default_group_size: cfg.session.group_size,
    };
    tracing::info!(sessions = recovered, data_dir = %data_dir.display(), "store loaded");

    println!("ptfa listening on http://{local}");
    let _ = std::io::stdout().flush();

    ptfa_server::serve(listener, state, shutdown_signal())
        .await
        .map_err(environment)
}

struct SimulateArgs {
    script: PathBuf,
    responses: Option<PathBuf>,
    config: Option<PathBuf>,
    model: FacilitationModel,
    topic: TopicId,
    scale: Option<f64>,
    out: PathBuf,
    session_id: String,
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| environment(format!("{}: {e}", path.display())))
}

async fn run_simulate(args: SimulateArgs) -> Result<(), Failure> {
    let cfg = match &args.config {
        Some(path) => load_config(path)?,
        None => ServiceConfig::default(),
    };
    let group_size = cfg.session.group_size;
    let duration = cfg.scheduler.session_duration_ms;
    let script = parse_script(&read(&args.script)?, group_size, duration)
        .map_err(|e| data(format!("{}: {e}", args.script.display())))?;
    let gateway = match &args.responses {
        Some(path) => {
            let replies = parse_responses(&read(path)?).map_err(|e| data(format!("{}: {e}", path.display())))?;
            let provider = ScriptedProvider::new(replies).map_err(|e| data(format!("{}: {e}", path.display())))?;
            Gateway::new(Arc::new(provider), ContextBudget::default())
        }
        None => cfg.gateway().map_err(usage)?,
    };
    let scale = args.scale.unwrap_or(cfg.scheduler.clock_scale);
    let spec = SimulationSpec {
        session_id: args.session_id,
        topic: args.topic,
        model: args.model,
        group_size,
        scheduler: cfg.scheduler.clone(),
        hats: cfg.hat_registry().map_err(usage)?,
        pacing: scale.is_finite().then_some(scale),
    };
    let outcome = simulate(&spec, &script, &gateway).await.map_err(|e| match e {
        SimulationError::Runtime(e) => usage(e),
        other => data(other),
    })?;
    let (export, ticks) = outcome.write_to(&args.out).map_err(environment)?;
    let facilitator = outcome
        .session
        .posts()
        .iter()
        .filter(|p| p.author == Author::Facilitator)
        .count();
    println!(
        "session {}: {} tick reports, {} records, {} facilitator posts",
        outcome.session.id(),
        outcome.reports.len(),
        outcome.session.posts().len(),
        facilitator
    );
    println!("wrote {}", export.display());
    println!("wrote {}", ticks.display());
    Ok(())
}

fn expand(paths: &[PathBuf]) -> Result<Vec<PathBuf>, Failure> {
    let mut files = Vec::new();
    for path in paths {
        if path.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(path)
                .map_err(|e| environment(format!("{}: {e}", path.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    p.file_name()
                        .and_then(|n| n.to_str())
                        .is_some_and(|n| n.starts_with("session_") && n.ends_with(".jsonl"))
                })
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(path.clone());
        }
    }
    Ok(files)
}

fn metrics(paths: &[PathBuf], format: Format) -> Result<(), Failure> {
    let files = expand(paths)?;
    if files.is_empty() {
        return Err(usage("no dataset files found"));
    }
    let mut inputs = Vec::with_capacity(files.len());
    for f in &files {
        let bytes = std::fs::read(f).map_err(|e| environment(format!("{}: {e}", f.display())))?;
        inputs.push((f.display().to_string(), bytes));
    }
    let m = compute_metrics(&inputs).map_err(data)?;
    match format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&m).expect("metrics serialize")),
        Format::Table => print!("{}", m.to_table()),
    }
    Ok(())
}
