//! `calibrant`: client CLI for the calibration service.
//!
//! `calibrant serve` runs the service; every other subcommand talks to a
//! running instance over HTTP and prints the JSON response. Exit codes:
//! 0 success, 1 config/schema error, 2 backend/transport failure, 3 metric
//! precondition failure.

use std::path::PathBuf;

use calibrant_client::CalibrantClient;
use calibrant_core::api::{
    CascadeRequest, CorrectnessRequest, DatasetSource, ElicitRequest, GenerateRequest,
    IngestRequest, MetricsRequest, ReportRequest, SweepTempRequest,
};
use calibrant_core::pipeline::config::Config;
use calibrant_core::Error;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "calibrant",
    version,
    about = "Distribution-based calibration of long-form LLM outputs"
)]
struct Cli {
    /// Config file (TOML); used by `serve`, ignored by client commands.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Service base URL (or CALIBRANT_SERVER_URL).
    #[arg(long, global = true)]
    server: Option<String>,

    /// Response-cache directory override (serve only).
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,

    /// Default backend id for commands that generate (generate, sweep-temp).
    #[arg(long, global = true)]
    backend: Option<String>,

    /// Comma-separated score levels, e.g. "0,0.2,0.4,0.6,0.8,1".
    #[arg(long, global = true)]
    grid: Option<String>,

    /// Base seed for mock backends and cascade randomization (serve only).
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the calibration service.
    Serve {
        /// Listen address, e.g. 127.0.0.1:8089.
        #[arg(long)]
        addr: Option<String>,
    },
    /// Validate a JSONL dataset and report its split sizes.
    Ingest {
        #[arg(long)]
        dataset: PathBuf,
        /// Skip malformed lines instead of aborting.
        #[arg(long)]
        lenient: bool,
    },
    /// Generate one primary answer per example into a run.
    Generate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        temperature: Option<f64>,
        #[arg(long)]
        lenient: bool,
    },
    /// Fill in correctness distributions for a run.
    Correctness {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Derive confidence distributions for a run.
    Elicit {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated methods: cse,psc,sl,bse,asc,psc-f1,hybrid.
        #[arg(long, value_delimiter = ',')]
        methods: Vec<String>,
    },
    /// Compute the calibration report (ECE-M, correlation, Selective F1).
    Metrics {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
        #[arg(long)]
        tau_s: Option<f64>,
    },
    /// Evaluate the budget-constrained two-model cascade.
    Cascade {
        /// Run with the weak model's answers, confidence, and correctness.
        #[arg(long)]
        weak_run: String,
        /// Run with precomputed strong-model correctness (offline mode).
        #[arg(long)]
        strong_run: Option<String>,
        /// Strong backend id (live mode: only escalated queries call it).
        #[arg(long)]
        strong_backend: Option<String>,
        #[arg(long)]
        task: String,
        #[arg(long)]
        method: String,
        /// Comma-separated strong-model call counts.
        #[arg(long, value_delimiter = ',')]
        budgets: Option<Vec<usize>>,
        /// Budgets as fractions of the dataset size.
        #[arg(long, value_delimiter = ',')]
        budget_fractions: Option<Vec<f64>>,
        #[arg(long)]
        tau_s: Option<f64>,
        #[arg(long)]
        success_threshold: Option<f64>,
        /// Comma-separated seeds for the random baseline.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Sweep the generation temperature and report calibration per value.
    SweepTemp {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_delimiter = ',')]
        temps: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        methods: Vec<String>,
    },
    /// Recompute and print a run's report from its persisted records.
    Report {
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Run id (subdirectory of the server's runs dir) or absolute path.
    #[arg(long)]
    run: String,
    /// Task name from the server config (e.g. asqa, qampari, eli5, cnndm).
    #[arg(long)]
    task: String,
}

/// The service resolves relative paths against its own working directory,
/// so dataset paths are made absolute client-side.
fn dataset_source(path: &std::path::Path) -> DatasetSource {
    let absolute = std::fs::canonicalize(path).unwrap_or_else(|_| path.to_path_buf());
    DatasetSource::from_path(absolute.to_string_lossy())
}

fn parse_grid(levels: &str) -> Result<Vec<f64>, Error> {
    levels
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("bad grid level '{s}': {e}")))
        })
        .collect()
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<(), Error> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

async fn run(cli: Cli) -> Result<(), Error> {
    if let Command::Serve { addr } = &cli.command {
        let mut config = match &cli.config {
            Some(path) => Config::from_file(path)?,
            None => Config::default(),
        };
        if let Some(dir) = &cli.cache_dir {
            config.paths.cache_dir = dir.clone();
        }
        if let Some(grid) = &cli.grid {
            config.grid = parse_grid(grid)?;
        }
        if let Some(seed) = cli.seed {
            config.seed = seed;
        }
        return calibrant_server::serve(config, addr.clone()).await;
    }

    let client = match &cli.server {
        Some(url) => CalibrantClient::new(url.clone())?,
        None => CalibrantClient::from_env()?,
    };
    let grid = cli.grid.as_deref().map(parse_grid).transpose()?;
    let backend = cli.backend.clone();
    let need_backend = || {
        backend
            .clone()
            .ok_or_else(|| Error::Config("no backend given; pass --backend <id>".into()))
    };

    match cli.command {
        Command::Serve { .. } => unreachable!("handled above"),
        Command::Ingest { dataset, lenient } => {
            let resp = client
                .ingest(&IngestRequest {
                    dataset: dataset_source(&dataset),
                    lenient,
                })
                .await?;
            print_json(&resp)
        }
        Command::Generate {
            run,
            dataset,
            temperature,
            lenient,
        } => {
            let resp = client
                .generate(&GenerateRequest {
                    run: run.run,
                    task: run.task,
                    dataset: dataset_source(&dataset),
                    backend: need_backend()?,
                    temperature,
                    grid,
                    lenient,
                })
                .await?;
            print_json(&resp)
        }
        Command::Correctness { run } => {
            let resp = client
                .correctness(&CorrectnessRequest {
                    run: run.run,
                    task: run.task,
                })
                .await?;
            print_json(&resp)
        }
        Command::Elicit { run, methods } => {
            let resp = client
                .elicit(&ElicitRequest {
                    run: run.run,
                    task: run.task,
                    methods,
                })
                .await?;
            print_json(&resp)
        }
        Command::Metrics {
            run,
            methods,
            tau_s,
        } => {
            let resp = client
                .metrics(&MetricsRequest {
                    run: run.run,
                    task: run.task,
                    methods,
                    tau_s,
                })
                .await?;
            print_json(&resp)
        }
        Command::Cascade {
            weak_run,
            strong_run,
            strong_backend,
            task,
            method,
            budgets,
            budget_fractions,
            tau_s,
            success_threshold,
            seeds,
        } => {
            let resp = client
                .cascade(&CascadeRequest {
                    weak_run,
                    strong_run,
                    task,
                    method,
                    budgets,
                    budget_fractions,
                    tau_s,
                    success_threshold,
                    seeds,
                    strong_backend,
                })
                .await?;
            print_json(&resp)
        }
        Command::SweepTemp {
            run,
            dataset,
            temps,
            methods,
        } => {
            let resp = client
                .sweep_temp(&SweepTempRequest {
                    run: run.run,
                    task: run.task,
                    dataset: dataset_source(&dataset),
                    backend: need_backend()?,
                    temperatures: temps,
                    methods,
                })
                .await?;
            print_json(&resp)
        }
        Command::Report { run } => {
            let resp = client
                .report(&ReportRequest {
                    run: run.run,
                    task: run.task,
                })
                .await?;
            print_json(&resp)
        }
    }
}

#[tokio::main]
async fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    if let Err(e) = run(cli).await {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
