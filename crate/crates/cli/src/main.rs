use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sgl_cli::presets::{preset, PRESETS};
use sgl_cli::{all_caps, prepare, run_experiment, ExperimentConfig};

#[derive(Parser)]
#[command(name = "sgl", version, about = "Subgradient Langevin sampling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate and run an experiment, writing results to its output directory.
    Run {
        config: PathBuf,
        /// Override the config's output directory.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Check a config without sampling.
    Validate { config: PathBuf },
    /// Print every step-size cap of the configured model.
    Caps { config: PathBuf },
    /// Built-in experiment configs.
    Presets {
        #[command(subcommand)]
        command: PresetCommand,
    },
}

#[derive(Subcommand)]
enum PresetCommand {
    /// List preset names.
    List,
    /// Print a preset's config as JSON.
    Show { name: String },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run { config, output_dir } => {
            let mut c = ExperimentConfig::from_path(&config)?;
            if let Some(dir) = output_dir {
                c.output_dir = dir;
            }
            let report = run_experiment(&c)?;
            for s in &report.summary.samplers {
                println!("{:<28} {:>10.4} s/1000 iters", s.label, s.seconds_per_1000_iters);
            }
            println!("results written to {}", c.output_dir.display());
        }
        Command::Validate { config } => {
            let c = ExperimentConfig::from_path(&config)?;
            let p = prepare(&c)?;
            println!("ok: {} sampler(s), dimension {}", p.samplers.len(), p.model.dim());
        }
        Command::Caps { config } => {
            let c = ExperimentConfig::from_path(&config)?;
            for cap in all_caps(&c)? {
                let value = cap.cap.map_or("unbounded".to_string(), |v| format!("{v:e}"));
                println!("{:<32} {:<36} {value}", cap.name, cap.inequality);
            }
        }
        Command::Presets { command: PresetCommand::List } => {
            for p in PRESETS {
                println!("{:<16} {}", p.name, p.description);
            }
        }
        Command::Presets { command: PresetCommand::Show { name } } => {
            let c = preset(&name).ok_or_else(|| anyhow::anyhow!("unknown preset {name:?}"))?;
            println!("{}", c.to_json());
        }
    }
    Ok(())
}
