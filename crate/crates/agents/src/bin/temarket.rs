use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use temarket_agents::config::{BusMode, ScenarioConfig};
use temarket_agents::oracle_cli;
use temarket_agents::report::{summary, write_artifacts};
use temarket_agents::runtime::{run_scenario, RunOptions};

#[derive(Parser)]
#[command(
    name = "temarket",
    about = "Bilateral transactive retail electricity market simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Deterministic,
    Tcp,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its report artifacts.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Bus transport; defaults to the scenario's bus.mode.
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Seed for the deterministic agent scheduling order.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for report.csv, messages.ndjson, audit.ndjson.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write auction_<asker>.svg bar charts of the final round.
        #[arg(long, default_value_t = false)]
        charts: bool,
    },
    /// Validate a scenario file and exit.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Run a brute-force reference computation on an instance file.
    Oracle {
        #[command(subcommand)]
        which: OracleCommand,
    },
}

#[derive(Subcommand)]
enum OracleCommand {
    /// Exhaustive second-price clearing of an offers/demand instance.
    Auction { instance: PathBuf },
    /// Simplex-grid portfolio search on return statistics.
    Mpo { instance: PathBuf },
    /// Grid search over a horizon scheduling instance.
    Mpc { instance: PathBuf },
}

fn load_scenario(path: &PathBuf) -> Result<ScenarioConfig, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    ScenarioConfig::from_json(&text).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Run {
            scenario,
            mode,
            seed,
            out,
            charts,
        } => {
            let cfg = load_scenario(&scenario)?;
            let opts = RunOptions {
                mode: mode.map(|m| match m {
                    ModeArg::Deterministic => BusMode::Deterministic,
                    ModeArg::Tcp => BusMode::Tcp,
                }),
                seed,
            };
            let artifacts = run_scenario(&cfg, &opts).map_err(|e| e.to_string())?;
            print!("{}", summary(&artifacts.report));
            if let Some(dir) = out {
                write_artifacts(&artifacts, &dir, charts).map_err(|e| e.to_string())?;
                println!("artifacts written to {}", dir.display());
            }
            Ok(())
        }
        Command::Validate { scenario } => {
            let cfg = load_scenario(&scenario)?;
            cfg.validate().map_err(|e| e.to_string())?;
            println!(
                "{}: ok ({} askers, {} bidders, {} rounds, {} bus)",
                scenario.display(),
                cfg.askers.len(),
                cfg.bidders.len(),
                cfg.rounds,
                cfg.bus.mode
            );
            Ok(())
        }
        Command::Oracle { which } => {
            let (path, result) = match which {
                OracleCommand::Auction { instance } => {
                    let text = fs::read_to_string(&instance)
                        .map_err(|e| format!("{}: {e}", instance.display()))?;
                    (instance, oracle_cli::run_auction_oracle(&text))
                }
                OracleCommand::Mpo { instance } => {
                    let text = fs::read_to_string(&instance)
                        .map_err(|e| format!("{}: {e}", instance.display()))?;
                    (instance, oracle_cli::run_mpo_oracle(&text))
                }
                OracleCommand::Mpc { instance } => {
                    let text = fs::read_to_string(&instance)
                        .map_err(|e| format!("{}: {e}", instance.display()))?;
                    (instance, oracle_cli::run_mpc_oracle(&text))
                }
            };
            let output = result.map_err(|e| format!("{}: {e}", path.display()))?;
            println!("{output}");
            Ok(())
        }
    }
}
