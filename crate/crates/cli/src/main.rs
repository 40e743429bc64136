use std::io::{self, Write};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use dptradeoff::front::CurveKind;
use dptradeoff::session::Arm;
use dptradeoff_cli::commands::{self, write_file};
use dptradeoff_cli::server::{self, AppState};

/// Elicit a privacy-accuracy trade-off: simulate, batch, fit and serve.
#[derive(Parser)]
#[command(name = "dptradeoff", version)]
struct Cli {
    /// Experiment config (JSON). Built-in defaults when absent.
    #[arg(long, global = true, env = "DPTRADEOFF_CONFIG")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one session against a simulated decision-maker and write its record.
    Simulate {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Overrides `loop.arm`.
        #[arg(long)]
        arm: Option<Arm>,
        #[arg(long, default_value = "run_record.json")]
        out: PathBuf,
    },
    /// Run every arm on every seed and aggregate metrics per step.
    Batch {
        /// First seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of seeds; `loop.seeds` from the config by default.
        #[arg(long, conflicts_with = "seed_file")]
        seeds: Option<usize>,
        /// File of seeds separated by whitespace or commas.
        #[arg(long)]
        seed_file: Option<PathBuf>,
        /// Comma-separated arms; `loop.arms` (or `loop.arm`) by default.
        #[arg(long, value_delimiter = ',')]
        arms: Vec<Arm>,
        /// Report CSV; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Directory for per-run record JSON files.
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Fit a front curve to an `epsilon,accuracy` CSV.
    Fit {
        data: PathBuf,
        #[arg(long, default_value = "sigmoid")]
        kind: CurveKind,
        /// Points in the fitted grid.
        #[arg(long, default_value_t = 101)]
        grid: usize,
        /// Also write the fit as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the closed-form logistic accuracy with Monte Carlo.
    OracleCheck {
        #[arg(long = "c", default_value_t = 5.0)]
        c: f64,
        #[arg(long, value_delimiter = ',', default_values_t = [0.05, 0.1, 0.2, 0.5])]
        eps: Vec<f64>,
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Serve the HTTP session API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        /// Seed of the first session; later sessions count up from it.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Restore sessions from here at startup and snapshot them on shutdown.
        #[arg(long)]
        snapshot_dir: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let stdout = &mut io::stdout();
    let stderr = &mut io::stderr();
    match cli.command {
        Command::Simulate { seed, arm, out } => {
            let cfg = commands::load_config(cli.config.as_deref())?;
            let arm = arm.unwrap_or(cfg.loop_.arm);
            commands::simulate(&cfg, arm, seed, &out, stdout)?;
        }
        Command::Batch { seed, seeds, seed_file, arms, out, records } => {
            let cfg = commands::load_config(cli.config.as_deref())?;
            let seeds = match seed_file {
                Some(path) => commands::read_seed_file(&path)?,
                None => {
                    let n = seeds.unwrap_or(cfg.loop_.seeds) as u64;
                    (seed..seed + n).collect()
                }
            };
            let arms = if arms.is_empty() { cfg.loop_.arm_list() } else { arms };
            let report = commands::batch(&cfg, &seeds, &arms, records.as_deref(), stderr)?;
            let csv = report.to_csv();
            match out {
                Some(path) => {
                    write_file(&path, &csv)?;
                    eprintln!("report written to {}", path.display());
                }
                None => stdout.write_all(csv.as_bytes())?,
            }
            if !report.failures.is_empty() {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Fit { data, kind, grid, out } => {
            let fit = commands::fit(&data, kind, grid)?;
            commands::print_fit(&fit, stdout)?;
            if let Some(path) = out {
                write_file(&path, &serde_json::to_string_pretty(&fit)?)?;
            }
        }
        Command::OracleCheck { c, eps, samples, seed } => {
            let rows = commands::check_oracle(c, &eps, samples, seed)?;
            commands::print_oracle_check(&rows, stdout)?;
            if rows.iter().any(|r| !r.pass) {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Serve { bind, seed, snapshot_dir } => {
            let cfg = commands::load_config(cli.config.as_deref())?;
            let app = Arc::new(AppState::new(cfg, seed));
            tokio::runtime::Runtime::new()
                .context("starting runtime")?
                .block_on(server::serve(bind, app, snapshot_dir))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}
