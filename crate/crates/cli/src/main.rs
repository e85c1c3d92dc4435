use clap::{Parser, Subcommand};
use gbpcal::{execute, output_dir, CliError, ExperimentConfig, ScenarioKind, SweepAxis, SweepConfig};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "gbpcal", version, about = "Multi-robot GBP localisation and auto-calibration experiments")]
struct Cli {
    /// Suppress per-run progress on stderr.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run { config: PathBuf },
    /// Run a parameter sweep, overriding the config's kind and sweep section.
    Sweep {
        config: PathBuf,
        #[arg(long, value_enum)]
        axis: SweepAxis,
        /// Comma-separated values; `inf` is an unlimited communication range.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Evaluate on MR.CLAM datasets listed in the config's `[mrclam]` section.
    Mrclam { config: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("gbpcal: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<Vec<String>, CliError> {
    let cfg = match cli.command {
        Command::Run { config } => ExperimentConfig::load(&config)?,
        Command::Sweep { config, axis, values } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if cfg.kind == ScenarioKind::Mrclam {
                return Err(CliError::Config("kind: mrclam configs cannot be swept".into()));
            }
            if cfg.kind != axis.kind() {
                cfg.solvers = None;
            }
            cfg.kind = axis.kind();
            cfg.sweep = Some(SweepConfig { axis, values });
            cfg.validate()?;
            cfg
        }
        Command::Mrclam { config } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            cfg.kind = ScenarioKind::Mrclam;
            cfg.validate()?;
            cfg
        }
    };
    execute(&cfg, &output_dir(&cfg), !cli.quiet)
}
