use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use posewarden::config::ServiceConfig;
use posewarden::service::{router, AppState};
use posewarden_core::harness::{
    generate_synthetic, occlude_table, replay, sweep_cases, DegradationLevel, LabeledTrace, Posture, ReplayConfig,
};
use posewarden_core::perspective::Perspective;
use posewarden_core::rules::RuleThresholds;
use posewarden_core::store::Store;
use posewarden_core::temporal::TimeRange;

#[derive(Parser)]
#[command(name = "posewarden", version, about = "Seated posture monitoring from pose landmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the configured port and PW_PORT.
        #[arg(long)]
        port: Option<u16>,
    },
    /// Replay labeled traces and report per-cell accuracy.
    Eval {
        /// Directory of .pw1 trace files.
        #[arg(long)]
        traces: PathBuf,
        /// A degradation level, or `all` to sweep every level.
        #[arg(long)]
        degrade: Option<String>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// TOML file of rule thresholds.
        #[arg(long)]
        thresholds: Option<PathBuf>,
        /// Hide knees and ankles before replay.
        #[arg(long)]
        occlude_table: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic labeled trace. Without --posture and --perspective,
    /// writes every combination into the --out directory.
    Gen {
        #[arg(long)]
        posture: Option<Posture>,
        #[arg(long)]
        perspective: Option<Perspective>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a user's stored incidents that intersect a range, as JSON.
    Incidents {
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        user: String,
        /// START..END in epoch milliseconds.
        #[arg(long)]
        range: TimeRange,
    },
    /// Rewrite the data logs without deleted accounts.
    Compact {
        #[arg(long)]
        data_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    let result = match Cli::parse().command {
        Command::Serve { config, port } => serve(config.as_deref(), port),
        Command::Eval {
            traces,
            degrade,
            seed,
            thresholds,
            occlude_table,
            out,
        } => eval(&traces, degrade.as_deref(), seed, thresholds.as_deref(), occlude_table, &out),
        Command::Gen {
            posture,
            perspective,
            seed,
            out,
        } => gen(posture, perspective, seed, &out),
        Command::Incidents { data_dir, user, range } => Store::open(&data_dir)
            .and_then(|s| s.query_incidents(&user, range))
            .map_err(|e| e.to_string())
            .and_then(|records| serde_json::to_string(&records).map_err(|e| e.to_string()))
            .map(|json| println!("{json}")),
        Command::Compact { data_dir } => Store::open(&data_dir)
            .and_then(|s| s.compact())
            .map_err(|e| e.to_string()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn serve(config_path: Option<&Path>, port: Option<u16>) -> Result<(), String> {
    let mut config = ServiceConfig::load(config_path, |k| std::env::var(k).ok()).map_err(|e| e.to_string())?;
    if let Some(p) = port {
        config.port = p;
        config.validate().map_err(|e| e.to_string())?;
    }
    let store = Store::open(&config.data_dir).map_err(|e| format!("opening {}: {e}", config.data_dir.display()))?;
    let addr = (config.bind, config.port);
    let state = Arc::new(AppState::new(config, Arc::new(store)));

    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| format!("binding {}:{}: {e}", addr.0, addr.1))?;
        tracing::info!("listening on {}", listener.local_addr().map_err(|e| e.to_string())?);
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| e.to_string())
    })
}

fn load_traces(dir: &Path) -> Result<Vec<LabeledTrace>, String> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| format!("{}: {e}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "pw1"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(format!("no .pw1 traces in {}", dir.display()));
    }
    paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            LabeledTrace::from_pw1(&text).map_err(|e| format!("{}: {e}", p.display()))
        })
        .collect()
}

fn eval(
    dir: &Path,
    degrade: Option<&str>,
    seed: u64,
    thresholds: Option<&Path>,
    occlude: bool,
    out: &Path,
) -> Result<(), String> {
    let mut config = ReplayConfig::default();
    if let Some(path) = thresholds {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let t: RuleThresholds = toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        t.validate().map_err(|e| e.to_string())?;
        config.thresholds = t;
    }
    let levels: Vec<DegradationLevel> = match degrade {
        None => vec![],
        Some("all") => DegradationLevel::ALL.to_vec(),
        Some(name) => vec![name.parse()?],
    };
    let mut traces = load_traces(dir)?;
    if occlude {
        traces = traces.iter().map(occlude_table).collect();
    }
    let report = replay(&sweep_cases(&traces, &levels, seed), &config).map_err(|e| e.to_string())?;
    fs::write(out, report.to_pw1()).map_err(|e| format!("{}: {e}", out.display()))?;
    print!("{}", report.grid());
    Ok(())
}

fn gen(posture: Option<Posture>, perspective: Option<Perspective>, seed: u64, out: &Path) -> Result<(), String> {
    let write = |path: &Path, trace: &LabeledTrace| {
        fs::write(path, trace.to_pw1(Some(seed))).map_err(|e| format!("{}: {e}", path.display()))
    };
    match (posture, perspective) {
        (Some(posture), Some(perspective)) => write(out, &generate_synthetic(posture, perspective, seed)),
        (None, None) => {
            fs::create_dir_all(out).map_err(|e| format!("{}: {e}", out.display()))?;
            for posture in Posture::ALL {
                for perspective in Perspective::ALL {
                    let path = out.join(format!("{posture}_{perspective}.pw1"));
                    write(&path, &generate_synthetic(posture, perspective, seed))?;
                }
            }
            Ok(())
        }
        _ => Err("give both --posture and --perspective, or neither".into()),
    }
}
