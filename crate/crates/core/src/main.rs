use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use poreflow::experiment::{self, ExperimentConfig, Report};

#[derive(Parser)]
#[command(name = "poreflow", version, about = "Pore-scale flow, reactive transport and rate identification")]
struct Cli {
    /// Experiment configuration (JSON); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config value.
    #[arg(long, global = true, env = "POREFLOW_OUTPUT_DIR")]
    output: Option<PathBuf>,
    /// Maximum concurrent evaluations; overrides the config value.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Noise seed; replaces the configured seed list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the mesh ladder.
    Mesh,
    /// Solve Stokes on every ladder level.
    Flow,
    /// Breakthrough curve, snapshots and sensitivity sweeps.
    Transport,
    /// Residual sweeps and admissible sets.
    Identify,
    /// Write synthesized noisy measurements.
    Synthesize,
    /// Print the effective configuration.
    Config,
}

fn load_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(dir) = &cli.output {
        cfg.output_dir = dir.clone();
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if let Some(s) = cli.seed {
        cfg.identification.seeds = vec![s];
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let cfg = load_config(cli)?;
    let report: Report = match cli.command {
        Command::Mesh => experiment::cmd_mesh(&cfg)?,
        Command::Flow => experiment::cmd_flow(&cfg)?,
        Command::Transport => experiment::cmd_transport(&cfg)?,
        Command::Identify => experiment::cmd_identify(&cfg)?,
        Command::Synthesize => experiment::cmd_synthesize(&cfg)?,
        Command::Config => {
            println!("{}", cfg.to_json());
            return Ok(());
        }
    };
    for line in &report.lines {
        println!("{line}");
    }
    println!("output: {}", cfg.output_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli).context("poreflow failed") {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e
                .chain()
                .find_map(|c| c.downcast_ref::<poreflow::Error>())
                .map_or(1, poreflow::Error::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
