use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use hometwin::ingestion::ReplaySpeed;
use hometwin_cli::commands::{self, LiveOptions};
use hometwin_cli::{Config, Platform};

const DEFAULT_CONFIG: &str = "hometwin.toml";

#[derive(Parser)]
#[command(
    name = "hometwin",
    version,
    about = "Residential digital twin platform"
)]
struct Cli {
    /// Config file; `hometwin.toml` is used when present, else built-in defaults.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate every room and load the heating traces into the log.
    Simulate,
    /// Use case 1: appliance replay, consumption service and gateway.
    Uc1 {
        /// Replay speed factor (default: the batch speed, unpaced).
        #[arg(long)]
        speed: Option<f64>,
        /// Exit after the replay has been processed.
        #[arg(long)]
        once: bool,
    },
    /// Use case 2: heater routine for one room and month.
    Uc2 {
        #[arg(long)]
        room: String,
        #[arg(long)]
        month: u32,
    },
    /// Run all scenarios against the fixed-time baseline and write the report.
    Evaluate,
    /// Demo mode: use case 1 at the demo replay speed until ctrl-c.
    Serve {
        /// Replay speed factor (default: the demo speed).
        #[arg(long)]
        speed: Option<f64>,
    },
    /// Print the effective configuration as TOML.
    Config,
}

fn load_config(path: Option<PathBuf>) -> Result<Config> {
    Ok(match path {
        Some(p) => Config::load(&p)?,
        None if std::path::Path::new(DEFAULT_CONFIG).exists() => {
            Config::load(std::path::Path::new(DEFAULT_CONFIG))?
        }
        None => Config::default(),
    })
}

fn run(cli: Cli) -> Result<()> {
    let config = load_config(cli.config)?;
    let speed = |s: Option<f64>, default: f64| ReplaySpeed(s.unwrap_or(default));
    match cli.command {
        Command::Config => print!("{}", config.to_toml()),
        Command::Simulate => {
            let p = Platform::open(config)?;
            let report = commands::simulate(&p)?;
            println!("traces written to {}", report.csv.display());
            for (topic, n) in report.topics {
                println!("{topic}: {n} events");
            }
        }
        Command::Uc1 { speed: s, once } => {
            let default = config.replay.batch_speed;
            let p = Platform::open(config)?;
            let opts = LiveOptions {
                speed: speed(s, default),
                once,
            };
            let status = commands::run_live(&p, opts)?;
            println!("{}", serde_json::to_string_pretty(&status)?);
        }
        Command::Serve { speed: s } => {
            let default = config.replay.demo_speed;
            let p = Platform::open(config)?;
            let opts = LiveOptions {
                speed: speed(s, default),
                once: false,
            };
            commands::run_live(&p, opts)?;
        }
        Command::Uc2 { room, month } => {
            let p = Platform::open(config)?;
            let path = commands::uc2(&p, &room, month)?;
            println!("{}", path.display());
        }
        Command::Evaluate => {
            let p = Platform::open(config)?;
            let summary = commands::evaluate(&p)?;
            print!("{}", commands::evaluate_text(&p, &summary));
            println!("report written to {}", p.config.output_dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
