use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fmea_bn::{Evidence, FailureState};
use fmea_rca::records::ParameterSource;
use fmea_rca::service::NetworkView;
use fmea_rca::{CellTable, CompileRequest, Service, ServiceConfig, ServiceError};
use serde::Serialize;

/// Root cause analysis on FMEA failure networks.
#[derive(Debug, Parser)]
#[command(name = "fmea-rca", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Directory holding the event logs.
    #[arg(
        long,
        global = true,
        env = "FMEA_RCA_DATA_DIR",
        default_value = "rca-data"
    )]
    data_dir: PathBuf,
    /// Seed for inference and recommendation; random when omitted.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Likelihood-weighting samples per query.
    #[arg(long, global = true, default_value_t = fmea_bn::inference::DEFAULT_SAMPLES)]
    samples: usize,
    /// Largest number of parents per node after aggregation.
    #[arg(long, global = true, default_value_t = fmea_bn::noisy_or::DEFAULT_MAX_GROUP_SIZE)]
    group_size: usize,
    /// Penalty per inconsistency in the recommendation loss.
    #[arg(long, global = true)]
    alpha: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate, audit and store a network document; prints the new record.
    Ingest { file: PathBuf },
    /// Print the inconsistency report of a stored network.
    Audit { network_id: String },
    /// Run the parameter recommendation to completion and print the job.
    Recommend {
        network_id: String,
        /// JSON file with GA settings; missing fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Compile a stored network into its Bayesian network.
    Compile {
        network_id: String,
        /// Compile despite inconsistencies, clamping negative leaks to zero.
        #[arg(long)]
        force: bool,
        /// Use the parameters of the latest recommendation.
        #[arg(long)]
        recommended: bool,
    },
    /// Posteriors and cause/effect rankings for one set of observations.
    Infer {
        network_id: String,
        /// Observation as ID=occurred or ID=absent; repeatable.
        #[arg(long = "evidence", short = 'e', value_parser = parse_observation)]
        evidence: Vec<(String, FailureState)>,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        bind: String,
        /// Static bearer token required on every request.
        #[arg(long, env = "FMEA_RCA_TOKEN", hide_env_values = true)]
        token: Option<String>,
        /// CSV with columns cell_id,failure_id,state for session prefill.
        #[arg(long)]
        cells: Option<PathBuf>,
        /// Concurrent recommendation jobs.
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
}

fn parse_observation(text: &str) -> Result<(String, FailureState), String> {
    let (id, state) = text
        .split_once('=')
        .ok_or_else(|| format!("expected ID=STATE, got {text:?}"))?;
    Ok((id.trim().to_string(), state.parse()?))
}

fn print_json(value: &impl Serialize) -> Result<(), ServiceError> {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| ServiceError::Invalid(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn run(cli: Cli) -> Result<(), ServiceError> {
    let g = cli.global;
    let mut config = ServiceConfig::new(&g.data_dir);
    config.seed = g.seed;
    config.samples = g.samples;
    config.group_size = g.group_size;
    config.alpha = g.alpha;
    config.workers = 0;

    match cli.command {
        Command::Ingest { file } => {
            let document = std::fs::read_to_string(&file)?;
            let record = Service::open(config)?.ingest(&document)?;
            print_json(&NetworkView::from(&record))
        }
        Command::Audit { network_id } => print_json(&Service::open(config)?.audit(&network_id)?),
        Command::Recommend {
            network_id,
            config: file,
        } => {
            let service = Service::open(config)?;
            let overrides = match file {
                Some(path) => Some(
                    serde_json::from_str(&std::fs::read_to_string(&path)?)
                        .map_err(|e| ServiceError::Invalid(format!("{}: {e}", path.display())))?,
                ),
                None => None,
            };
            let ga = service.ga_config(overrides)?;
            let job = service.run_recommendation(&network_id, ga)?;
            print_json(&job)
        }
        Command::Compile {
            network_id,
            force,
            recommended,
        } => {
            let request = CompileRequest {
                force,
                parameters: if recommended {
                    ParameterSource::Recommended
                } else {
                    ParameterSource::Expert
                },
                group_size: None,
            };
            let record = Service::open(config)?.compile(&network_id, &request)?;
            print_json(&NetworkView::from(&record))
        }
        Command::Infer {
            network_id,
            evidence,
        } => {
            let evidence = Evidence::from_observations(evidence)?;
            let result =
                Service::open(config)?.infer(&network_id, &evidence, g.seed, Some(g.samples))?;
            print_json(&result)
        }
        Command::Serve {
            port,
            bind,
            token,
            cells,
            workers,
        } => {
            config.workers = workers;
            if let Some(path) = cells {
                config.cells = Some(CellTable::from_path(path)?);
            }
            let service = Service::open(config)?;
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::bind((bind.as_str(), port)).await?;
                let shutdown = async {
                    let _ = tokio::signal::ctrl_c().await;
                };
                fmea_rca::http::serve(listener, service, token, shutdown).await
            })?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
