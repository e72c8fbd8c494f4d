use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use stc_cli::commands;
use stc_cli::config::ExperimentConfig;
use stc_cli::error::CliError;

/// Self-triggered sparse feedback control: runs, sweeps, and plot data.
#[derive(Parser)]
#[command(name = "stc", version, about)]
struct Cli {
    /// Path to the experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (overrides the config's output.directory).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Network seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Also emit per-seed raw rows for sweeps.
    #[arg(long, global = true)]
    raw: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a single run and write records, trajectory, and metrics.
    Run,
    /// Execute a parameter sweep and write the aggregated table.
    Sweep,
    /// Convert result files in the output directory into plot-ready CSVs.
    Plotdata,
    /// Generate and save the network instance without running control.
    GenNetwork,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config PATH is required".into()))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut config = ExperimentConfig::from_json_str(&text)?;
    if let Some(seed) = cli.seed {
        config.network.seed = seed;
    }
    Ok(config)
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run => {
            let config = load_config(cli)?;
            let out_dir = commands::resolve_out_dir(&config, cli.out.as_deref());
            commands::run_single(&config, &out_dir)
        }
        Command::Sweep => {
            let config = load_config(cli)?;
            let out_dir = commands::resolve_out_dir(&config, cli.out.as_deref());
            commands::run_sweep(&config, &out_dir, cli.raw)
        }
        Command::GenNetwork => {
            let config = load_config(cli)?;
            let out_dir = commands::resolve_out_dir(&config, cli.out.as_deref());
            commands::gen_network(&config, &out_dir)
        }
        Command::Plotdata => {
            let dir = match (&cli.out, &cli.config) {
                (Some(dir), _) => dir.clone(),
                (None, Some(path)) => {
                    let text = std::fs::read_to_string(path).map_err(|e| {
                        CliError::Config(format!("cannot read {}: {e}", path.display()))
                    })?;
                    PathBuf::from(ExperimentConfig::from_json_str(&text)?.output.directory)
                }
                (None, None) => {
                    return Err(CliError::Config(
                        "plotdata needs --out DIR (or --config with output.directory)".into(),
                    ))
                }
            };
            let produced = commands::emit_plot_data(&dir)?;
            println!("wrote {}", produced.join(", "));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("stc: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
